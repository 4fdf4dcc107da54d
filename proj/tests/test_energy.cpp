#include <algorithm>
#include <cmath>
#include <vector>

#include "mft/rng.h"

#include "doctest.h"
#include "mft/energy.h"
#include "util.h"

using namespace mft;
using namespace mft::testing;

namespace {

/// Returns the scripted percentages in order, repeating the last one.
class Scripted final : public PowerSource {
public:
    explicit Scripted(std::vector<float> p) : p_(std::move(p)) {}
    PowerState read() override {
        ++reads;
        const float v = p_[std::min(i_++, p_.size() - 1)];
        return {v, 0.0, false};
    }
    int reads = 0;

private:
    std::vector<float> p_;
    size_t i_ = 0;
};

}  // namespace

TEST_CASE("the battery is sampled only every K steps") {
    Scripted src({100});
    ThrottlePolicy p;
    p.k = 3;
    Throttle t(p, src);
    for (int64_t s = 1; s <= 10; ++s) t.check(s);
    CHECK(src.reads == 3);
    CHECK(t.samples() == 3);
    CHECK(code_of([&] { t.check(0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("below mu each step is stretched by rho / (1 - rho) of the EMA step time") {
    for (float rho : {0.25f, 0.5f, 0.75f}) {
        Scripted src({50});
        ThrottlePolicy p;
        p.rho = rho;
        Throttle t(p, src);
        t.record_compute(0.1);
        const double d = t.check(1);
        CHECK(t.throttled());
        CHECK(d == doctest::Approx(0.1 * rho / (1.0 - rho)));
        // Frequency scales by 1 - rho.
        CHECK(1.0 / (0.1 + d) == doctest::Approx((1.0 - rho) / 0.1));
    }
}

TEST_CASE("a throttled step keeps the derated period when compute slows down") {
    Scripted src({70, 70, 50, 50, 50, 50});
    Throttle t(ThrottlePolicy{}, src);
    t.record_compute(0.1);
    CHECK(t.check(1) == 0.0);
    t.record_compute(0.1);
    CHECK(t.check(2) == 0.0);
    t.record_compute(0.1);
    CHECK(t.check(3) == doctest::Approx(0.1));
    // Slower compute between sleeps neither moves the reference nor the period.
    t.record_compute(0.13);
    CHECK(t.ema_step_time() == doctest::Approx(0.1));
    CHECK(0.13 + t.check(4) == doctest::Approx(0.2));
    t.record_compute(0.25);
    CHECK(t.check(5) == 0.0);
}

TEST_CASE("overruns and oversleeps are repaid on the next throttled steps") {
    Scripted src({50, 50, 50, 50, 80});
    ThrottlePolicy p;
    p.hysteresis = 0.0f;
    Throttle t(p, src);
    t.record_compute(0.1);
    CHECK(t.check(1) == doctest::Approx(0.1));
    t.record_sleep(0.12);
    t.record_compute(0.1);
    CHECK(t.check(2) == doctest::Approx(0.08));
    t.record_sleep(0.08);
    // A step that takes 2.5 periods owes at most one period.
    t.record_compute(0.5);
    CHECK(t.check(3) == 0.0);
    t.record_sleep(0.0);
    t.record_compute(0.1);
    CHECK(t.check(4) == 0.0);
    t.record_sleep(0.0);
    t.record_compute(0.1);
    CHECK(t.check(5) == 0.0);
    CHECK_FALSE(t.throttled());
}

TEST_CASE("the EMA is a running mean for 1/alpha samples and then moves by alpha") {
    Scripted src({100});
    Throttle t(ThrottlePolicy{}, src);
    t.record_compute(1.0);
    CHECK(t.ema_step_time() == 1.0);
    t.record_compute(2.0);
    CHECK(t.ema_step_time() == doctest::Approx(1.5));
    for (int i = 0; i < 3; ++i) t.record_compute(2.0);
    CHECK(t.ema_step_time() == doctest::Approx(1.8));
    t.record_compute(3.0);
    CHECK(t.ema_step_time() == doctest::Approx(0.2 * 3.0 + 0.8 * 1.8));
}

TEST_CASE("hysteresis keeps throttling until the battery recovers past mu + h") {
    Scripted src({70, 59, 61, 61.9f, 62, 61, 59.5f});
    Throttle t(ThrottlePolicy{}, src);
    std::vector<bool> seen;
    for (int64_t s = 1; s <= 7; ++s) {
        t.record_compute(0.01);
        t.check(s);
        seen.push_back(t.throttled());
    }
    CHECK(seen == std::vector<bool>{false, true, true, true, false, false, true});
}

TEST_CASE("without hysteresis the delay is zero exactly when the battery is at or above mu") {
    Rng rng(4);
    std::vector<float> pct(500);
    for (auto& v : pct) v = rng.uniform(40.0f, 80.0f);
    pct[7] = 60.0f;
    Scripted src(pct);
    ThrottlePolicy p;
    p.hysteresis = 0.0f;
    Throttle t(p, src);
    for (int64_t s = 1; s <= 500; ++s) {
        t.record_compute(rng.uniform(0.001f, 0.01f));
        const double d = t.check(s);
        const float b = pct[static_cast<size_t>(s - 1)];
        INFO("step " << s << " battery " << b);
        if (b >= 60.0f) {
            CHECK(d == 0.0);
        } else {
            CHECK(d == doctest::Approx(std::max(0.0, 2.0 * t.ema_step_time() - t.last_compute())));
        }
    }
}

TEST_CASE("stale readings keep the previous decision") {
    ScratchDir dir("battery");
    spit(dir / "capacity", "55\n");
    FileProbe probe(dir / "capacity");
    Throttle t(ThrottlePolicy{}, probe);
    t.record_compute(0.01);
    t.check(1);
    CHECK(t.throttled());
    spit(dir / "capacity", "garbage");
    CHECK(probe.read().stale);
    t.check(2);
    CHECK(t.throttled());
    CHECK(t.last_percent() == 55.0f);
    spit(dir / "capacity", "140");
    t.check(3);
    CHECK_FALSE(t.throttled());
    CHECK(t.last_percent() == 100.0f);
}

TEST_CASE("simulated battery drains by active and idle time") {
    SimulatedBattery b(80, 20, 2);
    b.on_step(1800, 0);
    CHECK(b.percent() == doctest::Approx(70));
    b.on_step(0, 3600);
    CHECK(b.percent() == doctest::Approx(68));
    b.on_step(1e7, 0);
    CHECK(b.percent() == 0.0f);
    Throttle t(ThrottlePolicy{}, b);
    t.record_compute(0.5);
    t.record_sleep(0.25);
    CHECK(FixedSource(130).read().battery_percent == 100.0f);
}

TEST_CASE("policy validation") {
    ThrottlePolicy p;
    p.k = 0;
    CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidConfig);
    p = {};
    p.rho = 1.0f;
    CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidConfig);
    p = {};
    p.mu = 0.0f;
    CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidConfig);
    p = {};
    p.rho = 0.0f;
    Scripted src({10});
    Throttle t(p, src);
    t.record_compute(1.0);
    CHECK(t.check(1) == 0.0);
}

TEST_CASE("sleeping and energy accounting") {
    CHECK(apply_throttle(0.0) == 0.0);
    CHECK(apply_throttle(-1.0) == 0.0);
    CHECK(apply_throttle(0.02) >= 0.02);
    CHECK(estimate_energy(PowerModel{}, 2.0, 4.0) == doctest::Approx(12.0));
    CHECK(estimate_energy(PowerModel{10.0, 1.0}, 0.5, 0.0) == doctest::Approx(5.0));
}
