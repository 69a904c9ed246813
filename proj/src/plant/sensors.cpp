#include "chamber/plant.hpp"

#include "chamber/psychro.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace chamber::plant {

namespace {

// Counter-based noise: readings are a pure function of (seed, step, channel),
// so reading a sensor never perturbs the trajectory of other channels.
std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double unit_open(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double gaussian(std::uint64_t seed, std::uint64_t step, std::uint64_t channel) {
    const std::uint64_t base = mix(seed ^ mix(step * 0x100 + channel));
    const double u1 = unit_open(mix(base));
    const double u2 = unit_open(mix(base + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

PlantState initial_state(double t_c, double rh, std::uint64_t seed, const SensorModel& model) {
    PlantState s;
    s.t_c = t_c;
    s.w = psychro::humidity_ratio(t_c, rh);
    s.rng_seed = seed;
    s.sensor_model = model;
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (auto& off : s.sensor_offsets) {
        off.t_c = model.offset_t_max * unit(gen);
        off.rh_pct = model.offset_rh_max * unit(gen);
    }
    return s;
}

SensorReading sensor_read(const PlantState& state, int sensor_id) {
    if (sensor_id < 1 || sensor_id > kSensorCount) throw ConfigError("sensor id out of range");
    const int k = sensor_id - 1;
    if (state.faulted({FaultKind::sensor, sensor_id})) {
        SensorReading r = state.held_valid[k] ? state.held[k] : SensorReading{};
        r.quality_bad = true;
        return r;
    }
    const auto& m = state.sensor_model;
    const auto& off = state.sensor_offsets[k];
    SensorReading r;
    r.t_c = state.t_c + off.t_c;
    r.rh_pct = state.relative_humidity() + off.rh_pct;
    if (m.noise_t_sigma > 0.0) {
        r.t_c += m.noise_t_sigma * gaussian(state.rng_seed, state.step_count, 2 * k);
    }
    if (m.noise_rh_sigma > 0.0) {
        r.rh_pct += m.noise_rh_sigma * gaussian(state.rng_seed, state.step_count, 2 * k + 1);
    }
    r.rh_pct = std::clamp(r.rh_pct, 0.0, 100.0);
    return r;
}

double pressure_read(const PlantState& state) {
    double p = state.duct_pressure_inwc;
    if (state.sensor_model.noise_p_sigma > 0.0) {
        p += state.sensor_model.noise_p_sigma * gaussian(state.rng_seed, state.step_count, 0x40);
    }
    return std::clamp(p, 0.0, kTransmitterMaxInWc);
}

}  // namespace chamber::plant
