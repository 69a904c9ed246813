#include "chamber/control.hpp"

#include <algorithm>
#include <cmath>

namespace chamber::control {

SplitDuties split_range(double u, double deadband) {
    SplitDuties d;
    if (u > deadband) {
        d.heater = std::min(u, 1.0);
    } else if (u < -deadband) {
        d.cool = std::min(-u, 1.0);
    }
    return d;
}

bool pwm_modulate(double duty, double period_s, double t_s) {
    if (!(period_s > 0.0)) throw std::invalid_argument("pwm period must be positive");
    duty = std::clamp(duty, 0.0, 1.0);
    if (duty <= 0.0) return false;
    if (duty >= 1.0) return true;
    const double phase = t_s - std::floor(t_s / period_s) * period_s;
    return phase < duty * period_s;
}

PwmChannel::PwmChannel(double period_s, double step_s)
    : period_s_(period_s), step_s_(step_s) {
    if (!(period_s > 0.0) || !(step_s > 0.0)) throw std::invalid_argument("pwm period and step must be positive");
    steps_per_window_ = std::max(1, static_cast<int>(std::lround(period_s / step_s)));
}

void PwmChannel::reset() {
    position_ = 0;
    on_steps_ = 0;
    carry_ = 0.0;
}

bool PwmChannel::tick(double duty) {
    if (position_ == 0) {
        const double want = std::clamp(duty, 0.0, 1.0) * steps_per_window_ + carry_;
        on_steps_ = std::clamp(static_cast<int>(std::floor(want + 0.5)), 0, steps_per_window_);
        carry_ = std::clamp(want - on_steps_, -1.0, 1.0);
    }
    const bool on = position_ < on_steps_;
    position_ = (position_ + 1) % steps_per_window_;
    return on;
}

AnalogOutput analog_out(double u, double steam_max_a) {
    u = std::clamp(u, 0.0, 1.0);
    return {4.0 + 16.0 * u, steam_max_a * u};
}

}  // namespace chamber::control
