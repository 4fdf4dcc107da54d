/**
 * @file energy.h
 * @brief Battery-driven throttling: sample every K steps, derate by rho below mu.
 *
 * Derating by rho means the step frequency becomes (1 - rho) of the
 * unthrottled one. ema_step_time is a moving average of compute-only step
 * durations taken while unthrottled; a throttled step sleeps
 * ema_step_time / (1 - rho) - its own compute time (never less than 0), which
 * is ema_step_time * rho / (1 - rho) when compute time is steady and still
 * holds the period if the machine computes slower between sleeps. Time by
 * which a step overran its period, or a sleep overslept, is taken off the
 * following delays.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

namespace mft {

struct PowerState {
    float battery_percent = 100.0f;
    double timestamp = 0.0;
    /// Set when the last read failed and this is the last known value.
    bool stale = false;
};

class PowerSource {
public:
    virtual ~PowerSource() = default;
    virtual PowerState read() = 0;
    /// Informs drain models of the time just spent computing and sleeping.
    virtual void on_step(double /*active_seconds*/, double /*idle_seconds*/) {}
};

/// Linear drain model driven by reported active and idle time.
class SimulatedBattery final : public PowerSource {
public:
    SimulatedBattery(float initial_percent, float drain_per_active_hour, float drain_per_idle_hour);
    PowerState read() override;
    void on_step(double active_seconds, double idle_seconds) override;
    float percent() const { return percent_; }

private:
    float percent_;
    float drain_active_;
    float drain_idle_;
};

/// Text file holding an integer percent (sysfs-style capacity file).
class FileProbe final : public PowerSource {
public:
    explicit FileProbe(std::filesystem::path path) : path_(std::move(path)) {}
    PowerState read() override;

private:
    std::filesystem::path path_;
    PowerState last_;
};

class FixedSource final : public PowerSource {
public:
    explicit FixedSource(float percent);
    PowerState read() override;

private:
    float percent_;
};

struct ThrottlePolicy {
    int64_t k = 1;
    float mu = 60.0f;
    float rho = 0.5f;
    /// Throttling lifts only once the battery is back at mu + hysteresis.
    float hysteresis = 2.0f;
    float ema_alpha = 0.2f;

    void validate() const;
};

class Throttle {
public:
    Throttle(ThrottlePolicy policy, PowerSource& source);

    /// Delay in seconds to insert after this step (step >= 1). Samples only when step % K == 0.
    double check(int64_t step);
    /// ema_step_time / (1 - rho): the step period while throttled.
    double target_period() const;
    /// Feeds the compute-only duration of the step just finished; the EMA holds while throttled.
    void record_compute(double seconds);
    void record_sleep(double seconds);

    bool throttled() const { return throttled_; }
    double ema_step_time() const { return ema_; }
    double last_compute() const { return last_compute_; }
    int64_t samples() const { return samples_; }
    float last_percent() const { return last_.battery_percent; }
    const ThrottlePolicy& policy() const { return policy_; }

private:
    ThrottlePolicy policy_;
    PowerSource& source_;
    PowerState last_;
    bool have_sample_ = false;
    bool throttled_ = false;
    double ema_ = 0.0;
    int64_t ema_count_ = 0;
    double last_compute_ = 0.0;
    double balance_ = 0.0;
    double pending_active_ = 0.0;
    int64_t samples_ = 0;
};

/// Sleeps the calling thread; returns the measured pause in seconds.
double apply_throttle(double delay_seconds);

struct PowerModel {
    double active_watts = 5.0;
    double idle_watts = 0.5;
};

/// Joules spent by one step.
double estimate_energy(const PowerModel& model, double compute_seconds, double sleep_seconds);

double monotonic_seconds();

}  // namespace mft
