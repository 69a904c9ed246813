#include "chamber/plant.hpp"

#include "chamber/psychro.hpp"

#include <algorithm>
#include <cmath>

namespace chamber::plant {

namespace {

constexpr double kSteamSupplyT = 100.0;
constexpr double kPressureTau = 1.0;  // s

int fault_slot(FaultTarget target) {
    if (target.kind == FaultKind::sensor) return 7 + (target.sensor_id - 1);
    return static_cast<int>(target.kind);
}

// Integrated quantities. Ledgers ride along with the state so the RK4 weights
// apply identically to humidity ratio and the mass totals.
struct Vec {
    double t = 0, w = 0, p = 0, cond = 0, steam = 0, exch = 0;

    Vec operator+(const Vec& o) const { return {t + o.t, w + o.w, p + o.p, cond + o.cond, steam + o.steam, exch + o.exch}; }
    Vec operator*(double k) const { return {t * k, w * k, p * k, cond * k, steam * k, exch * k}; }
};

struct Drive {
    double heat_w = 0;
    double cool_w = 0;
    double cool_frac = 0;
    double steam_kg_s = 0;
    double blower_w = 0;
    double exchange_kg_s = 0;
    double p_target = 0;
    double w_amb = 0;
    double w_coil = 0;
};

Drive resolve(const PlantState& s, const ChamberGeometry& g, const ActuatorBank& b, const PlantInputs& in) {
    Drive d;
    const bool blower = in.blower_on && !s.faulted({FaultKind::blower});
    const auto healthy = [&](Actuator a) { return !s.unit_faulted(a, b.active(a)); };
    if (blower) {
        if (healthy(Actuator::heater)) d.heat_w = b.heater_w * in.heater_duty;
        if (healthy(Actuator::cooler)) {
            d.cool_frac = in.cool_duty;
            d.cool_w = b.cooling_w * in.cool_duty;
        }
        if (healthy(Actuator::steam)) {
            d.steam_kg_s = b.steam_max_kg_h / 3600.0 * (in.steam_current_a / b.steam_max_a);
        }
        d.blower_w = b.blower_power_w * g.blower_heat_fraction;
        d.p_target = b.rated_pressure_inwc();
    }
    double per_s = g.infiltration_ach / 3600.0;
    if (in.door_open) per_s += g.door_exchange_per_min / 60.0;
    d.exchange_kg_s = g.air_mass_kg * per_s;
    d.w_amb = psychro::humidity_ratio(g.ambient_t_c, g.ambient_rh);
    d.w_coil = psychro::saturation_humidity_ratio(b.coil_surface_t_c());
    return d;
}

Vec derivative(const Vec& x, const Drive& d, const ChamberGeometry& g, const ActuatorBank& b) {
    Vec r;
    const double steam_sensible = d.steam_kg_s * kVaporCp * (kSteamSupplyT - x.t);
    const double q = d.heat_w - d.cool_w - g.ua_wk * (x.t - g.ambient_t_c) + steam_sensible + d.blower_w -
                     d.exchange_kg_s * kAirCp * (x.t - g.ambient_t_c);
    r.t = q / g.thermal_capacity_jk();
    r.cond = b.k_dh * d.cool_frac * std::max(0.0, x.w - d.w_coil);
    r.steam = d.steam_kg_s;
    r.exch = d.exchange_kg_s * (d.w_amb - x.w);
    r.w = (r.steam - r.cond + r.exch) / g.air_mass_kg;
    r.p = (d.p_target - x.p) / kPressureTau;
    return r;
}

}  // namespace

double panel_ua(double width_m, double length_m, double height_m, double k_w_mk, double thickness_m) {
    const double area = 2.0 * (width_m * length_m + width_m * height_m + length_m * height_m);
    return k_w_mk / thickness_m * area;
}

void ChamberGeometry::validate() const {
    const auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive");
    };
    const auto non_negative = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be >= 0");
    };
    positive(volume_m3, "volume_m3");
    positive(air_mass_kg, "air_mass_kg");
    non_negative(extra_thermal_mass_jk, "extra_thermal_mass_jk");
    non_negative(ua_wk, "ua_wk");
    non_negative(infiltration_ach, "infiltration_ach");
    non_negative(door_exchange_per_min, "door_exchange_per_min");
    non_negative(blower_heat_fraction, "blower_heat_fraction");
    if (blower_heat_fraction > 1.0) throw ConfigError("blower_heat_fraction must be <= 1");
    if (std::abs(air_mass_kg - volume_m3 * 1.2) > 0.05 * volume_m3 * 1.2) {
        throw ConfigError("air_mass_kg inconsistent with volume_m3 * 1.2 kg/m3");
    }
    if (!(ambient_rh >= 0.0 && ambient_rh <= 100.0)) throw ConfigError("ambient_rh outside [0, 100]");
    if (!(ambient_t_c > kGuardMinT && ambient_t_c < kGuardMaxT)) throw ConfigError("ambient_t_c outside guard range");
}

void ActuatorBank::set_active(Actuator a, int unit) {
    if (unit != 1 && unit != 2) throw ConfigError("actuator unit must be 1 or 2");
    active_unit[static_cast<int>(a)] = unit;
}

void ActuatorBank::validate() const {
    for (double v : {heater_w, cooling_w, steam_max_kg_h, blower_flow_m3h, blower_static_pa, blower_power_w, k_dh}) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("actuator ratings must be >= 0");
    }
    if (!(steam_max_a > 0.0)) throw ConfigError("steam_max_a must be positive");
    for (int u : active_unit) {
        if (u != 1 && u != 2) throw ConfigError("actuator unit must be 1 or 2");
    }
}

FaultTarget FaultTarget::parse(std::string_view name) {
    static constexpr std::pair<std::string_view, FaultKind> kNames[] = {
        {"heater1", FaultKind::heater1}, {"heater2", FaultKind::heater2}, {"cool1", FaultKind::cool1},
        {"cool2", FaultKind::cool2},     {"steam1", FaultKind::steam1},   {"steam2", FaultKind::steam2},
        {"blower", FaultKind::blower},
    };
    for (const auto& [n, k] : kNames) {
        if (name == n) return {k, 0};
    }
    std::string_view rest = name;
    if (rest.starts_with("sensor_")) {
        rest.remove_prefix(7);
    } else if (rest.starts_with("sensor")) {
        rest.remove_prefix(6);
    } else {
        throw ConfigError("unknown fault target: " + std::string(name));
    }
    if (rest.size() == 1 && rest[0] >= '1' && rest[0] <= '7') return {FaultKind::sensor, rest[0] - '0'};
    throw ConfigError("unknown fault target: " + std::string(name));
}

std::string FaultTarget::name() const {
    switch (kind) {
        case FaultKind::heater1: return "heater1";
        case FaultKind::heater2: return "heater2";
        case FaultKind::cool1: return "cool1";
        case FaultKind::cool2: return "cool2";
        case FaultKind::steam1: return "steam1";
        case FaultKind::steam2: return "steam2";
        case FaultKind::blower: return "blower";
        case FaultKind::sensor: return "sensor" + std::to_string(sensor_id);
    }
    return "?";
}

double PlantState::relative_humidity() const {
    return psychro::relative_humidity({t_c, w, psychro::kStandardPressureKpa});
}

bool PlantState::faulted(FaultTarget target) const {
    if (target.kind == FaultKind::sensor && (target.sensor_id < 1 || target.sensor_id > kSensorCount)) {
        throw ConfigError("sensor id out of range");
    }
    return sim_time_s >= fault_at[fault_slot(target)];
}

bool PlantState::unit_faulted(Actuator a, int unit) const {
    const int base = 2 * static_cast<int>(a);
    return faulted({static_cast<FaultKind>(base + (unit - 1)), 0});
}

void PlantInputs::validate(const ActuatorBank& bank) const {
    const auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(heater_duty) || !unit(cool_duty)) throw ConfigError("duty outside [0, 1]");
    if (!(steam_current_a >= 0.0 && steam_current_a <= bank.steam_max_a)) {
        throw ConfigError("steam current outside [0, steam_max_a]");
    }
}

double temperature_rate(const PlantState& state, const ChamberGeometry& geom, const ActuatorBank& bank,
                        const PlantInputs& inputs) {
    const Drive d = resolve(state, geom, bank, inputs);
    const Vec x{state.t_c, state.w, state.duct_pressure_inwc, 0, 0, 0};
    return derivative(x, d, geom, bank).t;
}

PlantState step(const PlantState& state, const ChamberGeometry& geom, const ActuatorBank& bank,
                const PlantInputs& inputs, double dt_s) {
    if (!(dt_s > 0.0 && dt_s <= 5.0)) throw ConfigError("dt_s must be in (0, 5]");
    inputs.validate(bank);

    PlantState next = state;
    const double t_end = state.sim_time_s + dt_s;
    for (int k = 0; k < kSensorCount; ++k) {
        const FaultTarget sensor{FaultKind::sensor, k + 1};
        if (!next.held_valid[k] && t_end >= next.fault_at[fault_slot(sensor)]) {
            next.held[k] = sensor_read(state, k + 1);
            next.held[k].quality_bad = true;
            next.held_valid[k] = true;
        }
    }

    const Drive d = resolve(state, geom, bank, inputs);
    const Vec x{state.t_c, state.w, state.duct_pressure_inwc, 0, 0, 0};
    const Vec k1 = derivative(x, d, geom, bank);
    const Vec k2 = derivative(x + k1 * (dt_s / 2), d, geom, bank);
    const Vec k3 = derivative(x + k2 * (dt_s / 2), d, geom, bank);
    const Vec k4 = derivative(x + k3 * dt_s, d, geom, bank);
    const Vec dx = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt_s / 6.0);

    next.t_c = state.t_c + dx.t;
    next.w = state.w + dx.w;
    next.duct_pressure_inwc = std::clamp(state.duct_pressure_inwc + dx.p, 0.0, kTransmitterMaxInWc);
    next.condensate_total_kg = state.condensate_total_kg + dx.cond;
    next.steam_total_kg = state.steam_total_kg + dx.steam;
    next.exchange_total_kg = state.exchange_total_kg + dx.exch;
    next.sim_time_s = t_end;
    next.step_count = state.step_count + 1;

    if (!std::isfinite(next.t_c) || !std::isfinite(next.w) || !std::isfinite(next.duct_pressure_inwc)) {
        throw SimulationFault("non-finite plant state at t=" + std::to_string(t_end));
    }
    if (next.t_c < kGuardMinT || next.t_c > kGuardMaxT) {
        throw SimulationFault("chamber temperature left guard range: " + std::to_string(next.t_c));
    }
    if (next.w < 0.0) next.w = 0.0;
    return next;
}

PlantState inject_fault(const PlantState& state, FaultTarget target, double at_time) {
    if (target.kind == FaultKind::sensor && (target.sensor_id < 1 || target.sensor_id > kSensorCount)) {
        throw ConfigError("sensor id out of range");
    }
    PlantState next = state;
    next.fault_at[fault_slot(target)] = at_time;
    if (target.kind == FaultKind::sensor && at_time <= state.sim_time_s) {
        const int k = target.sensor_id - 1;
        next.held[k] = sensor_read(state, target.sensor_id);
        next.held[k].quality_bad = true;
        next.held_valid[k] = true;
    }
    return next;
}

PlantState clear_fault(const PlantState& state, FaultTarget target) {
    PlantState next = state;
    next.fault_at[fault_slot(target)] = std::numeric_limits<double>::infinity();
    if (target.kind == FaultKind::sensor) next.held_valid[target.sensor_id - 1] = false;
    return next;
}

}  // namespace chamber::plant
