#include "chamber/control.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace chamber::control {

std::string_view to_string(LoopKind kind) {
    return kind == LoopKind::temperature ? "temperature" : "humidity";
}

LoopKind parse_loop_kind(std::string_view name) {
    if (name == "temperature" || name == "t") return LoopKind::temperature;
    if (name == "humidity" || name == "rh") return LoopKind::humidity;
    throw std::invalid_argument("unknown loop kind: " + std::string(name));
}

void LoopConfig::validate() const {
    if (feedback_sensor < 0 || feedback_sensor > plant::kSensorCount) {
        throw std::invalid_argument("feedback_sensor must be 0 (mean) or 1..7");
    }
    if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
    if (!(pwm_period_s > 0.0)) throw std::invalid_argument("pwm_period_s must be positive");
    if (!(deadband >= 0.0 && deadband < 1.0)) throw std::invalid_argument("deadband must be in [0, 1)");
    if (kind == LoopKind::temperature) {
        if (!(setpoint > plant::kGuardMinT && setpoint < plant::kGuardMaxT)) {
            throw std::invalid_argument("temperature setpoint outside plant guard range");
        }
    } else if (!(setpoint >= 0.0 && setpoint <= 100.0)) {
        throw std::invalid_argument("humidity setpoint outside [0, 100]");
    }
}

LoopConfig default_loop(LoopKind kind, double setpoint) {
    LoopConfig c;
    c.kind = kind;
    c.setpoint = setpoint;
    c.tolerance = kind == LoopKind::temperature ? 2.0 : 5.0;
    return c;
}

double select_pv(LoopKind kind, int feedback_sensor, std::span<const plant::SensorReading> sensors, bool* degraded) {
    const auto value = [kind](const plant::SensorReading& r) { return kind == LoopKind::temperature ? r.t_c : r.rh_pct; };
    if (degraded) *degraded = false;
    if (feedback_sensor >= 1 && feedback_sensor <= static_cast<int>(sensors.size())) {
        const auto& r = sensors[feedback_sensor - 1];
        if (!r.quality_bad && std::isfinite(value(r))) return value(r);
        if (degraded) *degraded = true;
    }
    double sum = 0.0;
    int n = 0;
    for (const auto& r : sensors) {
        if (r.quality_bad || !std::isfinite(value(r))) continue;
        sum += value(r);
        ++n;
    }
    if (n == 0) {
        if (degraded) *degraded = true;
        return std::nan("");
    }
    return sum / n;
}

LoopController::LoopController(LoopConfig config, PidGains gains, double step_s)
    : config_(config),
      gains_(gains),
      heater_pwm_(config.pwm_period_s, step_s),
      cool_pwm_(config.pwm_period_s, step_s) {
    config_.validate();
    gains_.validate();
}

void LoopController::set_gains(const PidGains& gains) {
    gains.validate();
    gains_ = gains;
    state_.integral = std::clamp(state_.integral, gains_.out_min, gains_.out_max);
}

void LoopController::reset() {
    state_ = {};
    preset_.reset();
    heater_pwm_.reset();
    cool_pwm_.reset();
}

void LoopController::preset_output(double u) {
    reset();
    preset_ = std::clamp(u, gains_.out_min, gains_.out_max);
    state_.integral = *preset_;
}

LoopOutput LoopController::tick(std::span<const plant::SensorReading> sensors, double dt) {
    LoopOutput out;
    out.pv = select_pv(config_.kind, config_.feedback_sensor, sensors, &out.feedback_degraded);
    const PidResult r = pid_step(gains_, state_, config_.setpoint, out.pv, dt);
    state_ = r.state;
    out.u = r.u;
    out.sensor_fault = r.sensor_fault;
    if (preset_ && !r.sensor_fault) {
        // First step after a hand-over: absorb the proportional term into the integrator so the
        // output continues from the preset value. The derivative is zero on a fresh state.
        state_.integral = *preset_ - gains_.kp * (config_.setpoint - out.pv);
        state_.last_output = *preset_;
        out.u = *preset_;
        preset_.reset();
    }
    if (config_.kind == LoopKind::temperature) {
        out.duties = split_range(out.u, config_.deadband);
        out.heater_on = heater_pwm_.tick(out.duties.heater);
        out.cool_on = cool_pwm_.tick(out.duties.cool);
    } else {
        out.analog = analog_out(out.u);
    }
    return out;
}

void apply(const LoopOutput& out, LoopKind kind, plant::PlantInputs& inputs) {
    if (kind == LoopKind::temperature) {
        inputs.heater_duty = out.heater_on ? 1.0 : 0.0;
        inputs.cool_duty = out.cool_on ? 1.0 : 0.0;
    } else {
        inputs.steam_current_a = out.analog.steam_a;
    }
}

}  // namespace chamber::control
