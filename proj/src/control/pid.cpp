#include "chamber/control.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace chamber::control {

void PidGains::validate() const {
    if (!(sample_time_s > 0.0)) throw std::invalid_argument("sample_time_s must be positive");
    if (!(out_min < out_max)) throw std::invalid_argument("out_min must be below out_max");
    if (!(kp >= 0.0) || !std::isfinite(kp)) throw std::invalid_argument("kp must be finite and >= 0");
    if (!(ti_s > 0.0)) throw std::invalid_argument("ti_s must be positive (infinity disables integral)");
    if (!(td_s >= 0.0) || !std::isfinite(td_s)) throw std::invalid_argument("td_s must be finite and >= 0");
    if (!(td_filter >= 0.0) || !std::isfinite(td_filter)) throw std::invalid_argument("td_filter must be finite and >= 0");
}

PidResult pid_step(const PidGains& g, const PidState& state, double sp, double pv, double dt) {
    if (!(dt >= 0.5 * g.sample_time_s && dt <= 2.0 * g.sample_time_s)) {
        throw std::invalid_argument("pid dt " + std::to_string(dt) + " outside 0.5x..2x sample time");
    }
    PidResult r;
    r.state = state;
    if (!std::isfinite(pv) || !std::isfinite(sp)) {
        r.u = state.last_output;
        r.sensor_fault = true;
        return r;
    }
    const double prev = state.initialized ? state.prev_pv : pv;
    const double e = sp - pv;
    const double p = g.kp * e;
    double d = 0.0;
    if (g.td_s > 0.0) {
        // Backward-Euler low pass; reduces to the plain difference when the filter is off.
        const double tf = g.td_filter * g.td_s;
        d = (tf * state.derivative - g.kp * g.td_s * (pv - prev)) / (tf + dt);
    }

    double integral = state.integral;
    if (std::isfinite(g.ti_s)) {
        const double candidate = integral + g.kp * dt / g.ti_s * e;
        const double trial = p + candidate + d;
        const bool push_high = trial > g.out_max && e > 0.0;
        const bool push_low = trial < g.out_min && e < 0.0;
        if (!push_high && !push_low) integral = candidate;
    }

    r.u = std::clamp(p + integral + d, g.out_min, g.out_max);
    r.state.integral = integral;
    r.state.prev_pv = pv;
    r.state.derivative = d;
    r.state.last_output = r.u;
    r.state.initialized = true;
    return r;
}

}  // namespace chamber::control
