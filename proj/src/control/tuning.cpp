#include "chamber/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace chamber::control {

FopdtPlant::FopdtPlant(FopdtModel model, double dt_s, double y0, double u0)
    : model_(model), dt_(dt_s), y_(y0), u_(u0) {
    if (!(dt_s > 0.0) || !(model.tau_s > 0.0) || !(model.dead_time_s >= 0.0)) {
        throw std::invalid_argument("invalid FOPDT parameters");
    }
    const auto n = static_cast<std::size_t>(std::lround(model.dead_time_s / dt_s));
    delay_.assign(n, u0);
}

void FopdtPlant::advance() {
    double delayed = u_;
    if (!delay_.empty()) {
        delayed = delay_.front();
        delay_.pop_front();
        delay_.push_back(u_);
    }
    const double a = std::exp(-dt_ / model_.tau_s);
    y_ = a * y_ + model_.gain * (1.0 - a) * delayed;
    t_ += dt_;
}

namespace {

double window_mean(const std::vector<double>& y, std::size_t end, std::size_t n) {
    const auto first = y.begin() + static_cast<std::ptrdiff_t>(end - n);
    return std::accumulate(first, y.begin() + static_cast<std::ptrdiff_t>(end), 0.0) / static_cast<double>(n);
}

std::vector<double> centered_average(const std::vector<double>& y, std::size_t half) {
    if (half == 0) return y;
    std::vector<double> prefix(y.size() + 1, 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) prefix[i + 1] = prefix[i] + y[i];
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(y.size(), i + half + 1);
        out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
    }
    return out;
}

// Time (relative to the step) at which the normalised response first reaches `level`.
double crossing_time(const std::vector<double>& y, double y0, double dy, double dt, double level) {
    const double target = y0 + level * dy;
    const double sign = dy > 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (sign * (y[i] - target) >= 0.0) {
            if (i == 0) return dt;
            const double prev = y[i - 1];
            const double frac = (target - prev) / (y[i] - prev);
            return dt * (static_cast<double>(i) + frac);
        }
    }
    throw TuningFailed("response never reached " + std::to_string(level * 100.0) + "% of its final value");
}

PidGains with_limits(const PidGains& limits, double kp, double ti, double td) {
    PidGains g = limits;
    g.kp = kp;
    g.ti_s = ti;
    g.td_s = td;
    return g;
}

}  // namespace

PidGains chr_gains(const FopdtModel& m, const PidGains& limits) {
    const double lag = std::max(m.dead_time_s, limits.sample_time_s);
    return with_limits(limits, 0.6 * m.tau_s / (std::abs(m.gain) * lag), m.tau_s, 0.5 * lag);
}

PidGains ziegler_nichols(double ku, double pu, const PidGains& limits) {
    return with_limits(limits, 0.6 * ku, 0.5 * pu, 0.125 * pu);
}

PretuneResult pretune(TuningPlant& plant, const PretuneOptions& opt, const PidGains& limits) {
    const double dt = plant.sample_time();
    const auto samples = [dt](double s) { return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s / dt))); };

    plant.apply(opt.u0);
    double y0 = 0.0;
    const std::size_t nb = samples(opt.baseline_s);
    for (std::size_t i = 0; i < nb; ++i) {
        plant.advance();
        y0 += plant.read_pv() / static_cast<double>(nb);
    }

    plant.apply(opt.u0 + opt.step);
    const std::size_t w = samples(opt.window_s);
    const std::size_t max_n = samples(opt.max_duration_s);
    std::vector<double> y;
    y.reserve(std::min<std::size_t>(max_n, 1 << 20));
    bool settled = false;
    double response = 0.0;
    while (y.size() < max_n) {
        plant.advance();
        const double v = plant.read_pv();
        if (!std::isfinite(v)) throw TuningFailed("non-finite process value during step test");
        if (std::abs(v - y0) > opt.max_excursion) throw TuningFailed("step response exceeded the excursion limit");
        y.push_back(v);
        if (y.size() >= 4 * w && y.size() % w == 0) {
            const double last = window_mean(y, y.size(), w);
            const double prev = window_mean(y, y.size() - w, w);
            response = last - y0;
            if (std::abs(response) > opt.min_response && std::abs(last - prev) < opt.settle_rel * std::abs(response)) {
                settled = true;
                break;
            }
        }
    }
    plant.apply(opt.u0);
    if (std::abs(response) <= opt.min_response) throw TuningFailed("process shows no response to the step (gain ~ 0)");
    if (!settled) throw TuningFailed("step response did not settle before the timeout");

    const std::vector<double> smooth = centered_average(y, w / 8);
    const double y_ss = window_mean(y, y.size(), w);
    const double dy = y_ss - y0;

    PretuneResult r;
    r.model.gain = dy / opt.step;
    r.t28_s = crossing_time(smooth, y0, dy, dt, 0.283);
    r.t63_s = crossing_time(smooth, y0, dy, dt, 0.632);
    r.model.tau_s = 1.5 * (r.t63_s - r.t28_s);
    r.model.dead_time_s = std::max(0.0, r.t63_s - r.model.tau_s);
    if (!(r.model.tau_s > 0.0)) throw TuningFailed("could not identify a time constant");
    r.gains = chr_gains(r.model, limits);
    return r;
}

FinetuneResult finetune(TuningPlant& plant, const FinetuneOptions& opt, const PidGains& base) {
    const double dt = plant.sample_time();
    const auto relay = [&](bool up) {
        return std::clamp(opt.bias + (up ? opt.amplitude : -opt.amplitude), base.out_min, base.out_max);
    };
    double pv = plant.read_pv();
    bool up = pv < opt.setpoint;
    std::vector<double> trace;
    std::vector<std::size_t> up_switches;
    const std::size_t needed = static_cast<std::size_t>(opt.discard_cycles + opt.measure_cycles + 1);
    const auto max_n = static_cast<std::size_t>(std::lround(opt.timeout_s / dt));

    plant.apply(relay(up));
    while (up_switches.size() < needed) {
        if (trace.size() >= max_n) throw TuningFailed("no limit cycle established within the relay timeout");
        plant.advance();
        pv = plant.read_pv();
        if (!std::isfinite(pv)) throw TuningFailed("non-finite process value during relay test");
        trace.push_back(pv);
        if (up && pv > opt.setpoint + opt.hysteresis) {
            up = false;
            plant.apply(relay(up));
        } else if (!up && pv < opt.setpoint - opt.hysteresis) {
            up = true;
            up_switches.push_back(trace.size());
            plant.apply(relay(up));
        }
    }
    plant.apply(opt.bias);

    const std::size_t first = static_cast<std::size_t>(opt.discard_cycles);
    double amp_sum = 0.0;
    double period_sum = 0.0;
    double mean_sum = 0.0;
    std::size_t mean_n = 0;
    for (std::size_t c = first; c + 1 < up_switches.size(); ++c) {
        const auto b = trace.begin() + static_cast<std::ptrdiff_t>(up_switches[c]);
        const auto e = trace.begin() + static_cast<std::ptrdiff_t>(up_switches[c + 1]);
        const auto [lo, hi] = std::minmax_element(b, e);
        amp_sum += (*hi - *lo) / 2.0;
        period_sum += static_cast<double>(up_switches[c + 1] - up_switches[c]) * dt;
        mean_sum += std::accumulate(b, e, 0.0);
        mean_n += static_cast<std::size_t>(e - b);
    }
    const double cycles = static_cast<double>(up_switches.size() - 1 - first);
    FinetuneResult r;
    r.amplitude = amp_sum / cycles;
    r.ultimate_period_s = period_sum / cycles;
    r.mean_pv = mean_sum / static_cast<double>(mean_n);
    if (!(r.amplitude > 0.0)) throw TuningFailed("relay test produced no oscillation amplitude");
    r.ultimate_gain = 4.0 * opt.amplitude / (std::numbers::pi * r.amplitude);
    r.gains = ziegler_nichols(r.ultimate_gain, r.ultimate_period_s, base);
    return r;
}

}  // namespace chamber::control
