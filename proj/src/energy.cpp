/**
 * @file energy.cpp
 */
#include "mft/energy.h"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

#include "mft/error.h"

namespace mft {

double monotonic_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

namespace {
float clamp_percent(float p) { return std::clamp(p, 0.0f, 100.0f); }
}  // namespace

SimulatedBattery::SimulatedBattery(float initial_percent, float drain_per_active_hour, float drain_per_idle_hour)
    : percent_(clamp_percent(initial_percent)), drain_active_(drain_per_active_hour), drain_idle_(drain_per_idle_hour) {}

PowerState SimulatedBattery::read() { return {percent_, monotonic_seconds(), false}; }

void SimulatedBattery::on_step(double active_seconds, double idle_seconds) {
    double drained = (drain_active_ * active_seconds + drain_idle_ * idle_seconds) / 3600.0;
    percent_ = clamp_percent(static_cast<float>(percent_ - drained));
}

PowerState FileProbe::read() {
    std::ifstream in(path_);
    long value = 0;
    if (in && (in >> value)) {
        last_ = {clamp_percent(static_cast<float>(value)), monotonic_seconds(), false};
        return last_;
    }
    PowerState s = last_;
    s.stale = true;
    return s;
}

FixedSource::FixedSource(float percent) : percent_(clamp_percent(percent)) {}

PowerState FixedSource::read() { return {percent_, monotonic_seconds(), false}; }

void ThrottlePolicy::validate() const {
    if (k < 1) fail(ErrorCode::InvalidConfig, "throttle K must be at least 1");
    if (!(mu > 0.0f && mu < 100.0f)) fail(ErrorCode::InvalidConfig, "throttle mu must lie in (0, 100)");
    if (!(rho >= 0.0f && rho < 1.0f)) fail(ErrorCode::InvalidConfig, "throttle rho must lie in [0, 1)");
    if (!(hysteresis >= 0.0f)) fail(ErrorCode::InvalidConfig, "throttle hysteresis must be non-negative");
    if (!(ema_alpha > 0.0f && ema_alpha <= 1.0f)) fail(ErrorCode::InvalidConfig, "EMA factor must lie in (0, 1]");
}

Throttle::Throttle(ThrottlePolicy policy, PowerSource& source) : policy_(policy), source_(source) {
    policy_.validate();
}

double Throttle::check(int64_t step) {
    if (step < 1) fail(ErrorCode::InvalidArgument, "throttle steps are numbered from 1");
    if (step % policy_.k == 0) {
        PowerState s = source_.read();
        ++samples_;
        if (!s.stale) {
            last_ = s;
            have_sample_ = true;
            if (s.battery_percent < policy_.mu) {
                throttled_ = true;
            } else if (s.battery_percent >= policy_.mu + policy_.hysteresis) {
                throttled_ = false;
            }
        }
    }
    if (!throttled_ || policy_.rho <= 0.0f) {
        balance_ = 0.0;
        return 0.0;
    }
    return std::max(0.0, balance_ + target_period() - last_compute_);
}

double Throttle::target_period() const { return ema_ / (1.0 - policy_.rho); }

void Throttle::record_compute(double seconds) {
    last_compute_ = seconds;
    if (ema_count_ == 0 || !throttled_) {
        // Plain running mean until 1/alpha samples, so the first step does not dominate.
        ++ema_count_;
        const double w = std::max(static_cast<double>(policy_.ema_alpha), 1.0 / static_cast<double>(ema_count_));
        ema_ += w * (seconds - ema_);
    }
    pending_active_ += seconds;
}

void Throttle::record_sleep(double seconds) {
    if (throttled_ && policy_.rho > 0.0f) {
        // Overruns and oversleeps are paid back on later steps, at most one period's worth.
        const double target = target_period();
        balance_ = std::max(-target, balance_ + target - last_compute_ - seconds);
    }
    source_.on_step(pending_active_, seconds);
    pending_active_ = 0.0;
}

double apply_throttle(double delay_seconds) {
    if (delay_seconds <= 0.0) return 0.0;
    double start = monotonic_seconds();
    std::this_thread::sleep_for(std::chrono::duration<double>(delay_seconds));
    return monotonic_seconds() - start;
}

double estimate_energy(const PowerModel& model, double compute_seconds, double sleep_seconds) {
    return model.active_watts * compute_seconds + model.idle_watts * sleep_seconds;
}

}  // namespace mft
