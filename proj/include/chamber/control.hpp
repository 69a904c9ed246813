#pragma once

#include "chamber/plant.hpp"

#include <array>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>

namespace chamber::control {

inline constexpr double kNoIntegral = std::numeric_limits<double>::infinity();

struct PidGains {
    double kp = 0.0;
    double ti_s = kNoIntegral;  ///< integral time; infinity disables the integrator
    double td_s = 0.0;
    /// Derivative delay coefficient: the D term is low-passed with time constant td_filter * td_s. 0 = unfiltered.
    double td_filter = 0.0;
    double sample_time_s = 1.0;
    double out_min = -1.0;
    double out_max = 1.0;

    void validate() const;
    bool operator==(const PidGains&) const = default;
};

struct PidState {
    double integral = 0.0;  ///< integral contribution, in output units
    double prev_pv = 0.0;
    double derivative = 0.0;  ///< filtered derivative contribution, in output units
    double last_output = 0.0;
    bool initialized = false;
};

struct PidResult {
    double u = 0.0;
    PidState state;
    bool sensor_fault = false;  ///< pv was non-finite; output held
};

/// Positional PID, derivative on measurement, conditional-integration anti-windup.
/// `dt` must lie within [0.5, 2] x sample time.
PidResult pid_step(const PidGains& gains, const PidState& state, double sp, double pv, double dt);

struct SplitDuties {
    double heater = 0.0;
    double cool = 0.0;
};

/// Maps a signed temperature effort onto heater (u > 0) or chilled-water valve (u < 0).
SplitDuties split_range(double u, double deadband);

/// Time-proportioning output: on for the first duty*period of every window.
bool pwm_modulate(double duty, double period_s, double t_s);

/// SSR time-proportioning channel for a fixed simulation step. Duty is latched at
/// each window start and the on-time is rounded to whole steps, carrying the
/// rounding residue into the next window so the long-run on-fraction matches duty.
class PwmChannel {
public:
    PwmChannel(double period_s, double step_s);

    /// Output for the step starting at the channel's internal clock; advances one step.
    bool tick(double duty);
    void reset();
    double period() const { return period_s_; }

private:
    double period_s_;
    double step_s_;
    int steps_per_window_;
    int position_ = 0;
    int on_steps_ = 0;
    double carry_ = 0.0;
};

struct AnalogOutput {
    double current_ma = 4.0;
    double steam_a = 0.0;
};

/// 4-20 mA command to the steam power controller; 0..25 A heater current.
AnalogOutput analog_out(double u, double steam_max_a = 25.0);

enum class LoopKind { temperature, humidity };

std::string_view to_string(LoopKind kind);
LoopKind parse_loop_kind(std::string_view name);

struct LoopConfig {
    LoopKind kind = LoopKind::temperature;
    int feedback_sensor = 1;  ///< 1..7, or 0 for mean of all healthy sensors
    double setpoint = 25.0;
    double tolerance = 2.0;
    double pwm_period_s = 10.0;
    double deadband = 0.02;

    void validate() const;
};

/// Default tolerances: 2 C for temperature, 5 %RH for humidity.
LoopConfig default_loop(LoopKind kind, double setpoint);

struct LoopOutput {
    double u = 0.0;
    double pv = 0.0;
    // temperature loops
    SplitDuties duties;
    bool heater_on = false;
    bool cool_on = false;
    // humidity loops
    AnalogOutput analog;
    /// Feedback sensor reported bad quality; pv came from the healthy mean.
    bool feedback_degraded = false;
    bool sensor_fault = false;
};

/// Feedback selection with fallback to the mean of healthy sensors.
/// Returns NaN when no sensor is healthy.
double select_pv(LoopKind kind, int feedback_sensor, std::span<const plant::SensorReading> sensors, bool* degraded);

/// One control loop: pv selection, PID, and the actuator-specific output stage.
class LoopController {
public:
    LoopController(LoopConfig config, PidGains gains, double step_s = 1.0);

    LoopOutput tick(std::span<const plant::SensorReading> sensors, double dt);

    const LoopConfig& config() const { return config_; }
    const PidGains& gains() const { return gains_; }
    const PidState& state() const { return state_; }
    void set_setpoint(double sp) { config_.setpoint = sp; }
    void set_gains(const PidGains& gains);
    void reset();
    /// Bumpless hand-over: clears the state; the next tick outputs exactly `u` (clamped) and the
    /// integrator absorbs whatever the proportional term would have added.
    void preset_output(double u);

private:
    LoopConfig config_;
    PidGains gains_;
    PidState state_;
    std::optional<double> preset_;
    PwmChannel heater_pwm_;
    PwmChannel cool_pwm_;
};

/// Writes a loop's output fragment into plant inputs.
void apply(const LoopOutput& out, LoopKind kind, plant::PlantInputs& inputs);

}  // namespace chamber::control
