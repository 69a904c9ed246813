#include "chamber/facility.hpp"

#include <cmath>
#include <numeric>

namespace chamber::facility {

using control::LoopKind;
using nlohmann::json;

json gains_json(const control::PidGains& g) {
    return {{"kp", g.kp}, {"ti_s", std::isfinite(g.ti_s) ? json(g.ti_s) : json()}, {"td_s", g.td_s}};
}

TuneReport run_tuning(ChamberTwin& twin, LoopKind kind, const TuneOptions& opt, Stepper step) {
    if (!step) step = [&twin] { return twin.tick(); };
    TuneReport r;
    r.chamber = twin.config().id;
    r.loop = kind;
    const double t0 = twin.sim_time();
    const auto u_of = [kind](const TickResult& t) { return kind == LoopKind::temperature ? t.t_u : t.rh_u; };

    // Regulate first so the experiments start from an equilibrium, and learn the holding output.
    const int warm = static_cast<int>(opt.warmup_s / ChamberTwin::kStep);
    const int avg_n = std::min(warm, 600);
    double u_sum = 0.0;
    for (int i = 0; i < warm; ++i) {
        const auto t = step();
        if (i >= warm - avg_n) u_sum += u_of(t);
    }
    r.bias_u = avg_n > 0 ? u_sum / avg_n : 0.0;
    const auto& base = twin.gains(kind);

    TwinTuningPlant plant(twin, kind, step);
    const double sp = twin.setpoint(kind);
    try {
        if (kind == LoopKind::temperature || opt.humidity_pretune) {
            control::PretuneOptions p;
            p.u0 = r.bias_u;
            p.step = kind == LoopKind::temperature ? opt.pretune_step_t : opt.pretune_step_rh;
            p.baseline_s = 120.0;
            p.window_s = 300.0;
            p.settle_rel = 0.002;
            p.max_duration_s = 10 * 3600.0;
            p.min_response = kind == LoopKind::temperature ? 0.05 : 0.2;
            p.max_excursion = kind == LoopKind::temperature ? opt.max_excursion_t : opt.max_excursion_rh;
            r.pretune = control::pretune(plant, p, base);

            // Back to the setpoint on the identified model's gains before the relay test.
            twin.set_override(kind, std::nullopt);
            twin.set_gains(kind, r.pretune->gains);
            for (int i = 0; i < 3600; ++i) step();
        }

        control::FinetuneOptions f;
        f.setpoint = sp;
        f.bias = r.bias_u;
        f.amplitude = kind == LoopKind::temperature ? opt.relay_amplitude_t : opt.relay_amplitude_rh;
        f.hysteresis = kind == LoopKind::temperature ? opt.relay_hysteresis_t : opt.relay_hysteresis_rh;
        f.timeout_s = 4 * 3600.0;
        r.finetune = control::finetune(plant, f, base);
    } catch (...) {
        twin.set_override(kind, std::nullopt);
        twin.set_gains(kind, base);
        throw;
    }
    r.gains = r.finetune.gains;
    twin.set_override(kind, std::nullopt);
    twin.set_gains(kind, r.gains);
    r.duration_s = twin.sim_time() - t0;
    return r;
}

json to_json(const TuneReport& r) {
    return {{"chamber", r.chamber},
            {"loop", std::string(control::to_string(r.loop))},
            {"bias_u", r.bias_u},
            {"pretune", r.pretune ? json{{"gain", r.pretune->model.gain},
                                         {"tau_s", r.pretune->model.tau_s},
                                         {"dead_time_s", r.pretune->model.dead_time_s},
                                         {"gains", gains_json(r.pretune->gains)}}
                                   : json()},
            {"finetune",
             {{"ultimate_gain", r.finetune.ultimate_gain},
              {"ultimate_period_s", r.finetune.ultimate_period_s},
              {"amplitude", r.finetune.amplitude},
              {"mean_pv", r.finetune.mean_pv}}},
            {"gains", gains_json(r.gains)},
            {"duration_s", r.duration_s}};
}

}  // namespace chamber::facility
