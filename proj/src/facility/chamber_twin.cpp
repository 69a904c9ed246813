#include "chamber/facility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace chamber::facility {

using control::LoopKind;
using plant::Actuator;
namespace layout = regmap::layout;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::string actuator_name(Actuator a) {
    switch (a) {
        case Actuator::heater: return "heater";
        case Actuator::cooler: return "cool";
        case Actuator::steam: return "steam";
    }
    return "?";
}

ChamberTwin::ChamberTwin(ChamberConfig config, std::uint64_t seed, double failover_detect_s)
    : config_(std::move(config)),
      state_(plant::initial_state(config_.initial_t_c, config_.initial_rh, seed)),
      bank_(config_.bank),
      t_loop_(config_.t_loop, config_.t_gains, kStep),
      rh_loop_(config_.rh_loop, config_.rh_gains, kStep),
      override_heater_pwm_(config_.t_loop.pwm_period_s, kStep),
      override_cool_pwm_(config_.t_loop.pwm_period_s, kStep),
      failover_detect_s_(failover_detect_s) {
    config_.geometry.validate();
    bank_.validate();
    trip_since_.fill(kInf);
    // So the first publish carries real readings rather than zeros.
    for (int k = 1; k <= plant::kSensorCount; ++k) last_.readings[k - 1] = plant::sensor_read(state_, k);
    last_.pressure_inwc = plant::pressure_read(state_);
}

double ChamberTwin::setpoint(LoopKind k) const {
    return k == LoopKind::temperature ? t_loop_.config().setpoint : rh_loop_.config().setpoint;
}

void ChamberTwin::set_setpoint(LoopKind k, double sp) { loop(k).set_setpoint(sp); }

const control::PidGains& ChamberTwin::gains(LoopKind k) const {
    return k == LoopKind::temperature ? t_loop_.gains() : rh_loop_.gains();
}

void ChamberTwin::set_gains(LoopKind k, const control::PidGains& g) { loop(k).set_gains(g); }

control::LoopController& ChamberTwin::loop(LoopKind k) { return k == LoopKind::temperature ? t_loop_ : rh_loop_; }

void ChamberTwin::set_override(LoopKind k, std::optional<double> u) {
    if (k == LoopKind::temperature) {
        if (!t_override_ && u) {
            override_heater_pwm_.reset();
            override_cool_pwm_.reset();
        }
        t_override_ = u;
    } else {
        rh_override_ = u;
    }
    // Handing back control starts the loop from a clean state at the current output.
    if (!u) {
        loop(k).preset_output(k == LoopKind::temperature ? last_.t_u : last_.rh_u);
    }
}

bool ChamberTwin::overridden(LoopKind k) const {
    return k == LoopKind::temperature ? t_override_.has_value() : rh_override_.has_value();
}

void ChamberTwin::inject_fault(plant::FaultTarget target, double at_s) { state_ = plant::inject_fault(state_, target, at_s); }

TickResult ChamberTwin::tick() {
    TickResult r;
    for (int k = 1; k <= plant::kSensorCount; ++k) r.readings[k - 1] = plant::sensor_read(state_, k);
    r.pressure_inwc = plant::pressure_read(state_);

    plant::PlantInputs in;
    in.blower_on = true;

    if (t_override_) {
        const double u = std::clamp(*t_override_, -1.0, 1.0);
        const auto d = control::split_range(u, config_.t_loop.deadband);
        in.heater_duty = override_heater_pwm_.tick(d.heater) ? 1.0 : 0.0;
        in.cool_duty = override_cool_pwm_.tick(d.cool) ? 1.0 : 0.0;
        r.t_u = u;
        r.heater_duty = d.heater;
        r.cool_duty = d.cool;
        r.t_pv = control::select_pv(LoopKind::temperature, config_.t_loop.feedback_sensor, r.readings, nullptr);
    } else {
        const auto out = t_loop_.tick(r.readings, kStep);
        control::apply(out, LoopKind::temperature, in);
        r.t_u = out.u;
        r.heater_duty = out.duties.heater;
        r.cool_duty = out.duties.cool;
        r.t_pv = out.pv;
    }
    if (rh_override_) {
        const double u = std::clamp(*rh_override_, 0.0, 1.0);
        const auto a = control::analog_out(u, bank_.steam_max_a);
        in.steam_current_a = a.steam_a;
        r.rh_u = u;
        r.rh_pv = control::select_pv(LoopKind::humidity, config_.rh_loop.feedback_sensor, r.readings, nullptr);
    } else {
        const auto out = rh_loop_.tick(r.readings, kStep);
        control::apply(out, LoopKind::humidity, in);
        r.rh_u = out.u;
        r.rh_pv = out.pv;
    }
    r.steam_a = in.steam_current_a;

    // Unit trip contacts: a tripped unit that stays tripped for the detection time is swapped out.
    const double now = state_.sim_time_s;
    for (Actuator a : {Actuator::heater, Actuator::cooler, Actuator::steam}) {
        const int i = static_cast<int>(a);
        const int unit = bank_.active(a);
        if (!state_.unit_faulted(a, unit)) {
            trip_since_[i] = kInf;
            continue;
        }
        trip_since_[i] = std::min(trip_since_[i], now);
        const int other = unit == 1 ? 2 : 1;
        if (now - trip_since_[i] >= failover_detect_s_ && !state_.unit_faulted(a, other)) {
            bank_.set_active(a, other);
            trip_since_[i] = kInf;
            r.failover = FailoverEvent{config_.id, a, unit, other, now};
        }
    }

    state_ = plant::step(state_, config_.geometry, bank_, in, kStep);
    last_ = r;
    return r;
}

void ChamberTwin::publish(regmap::Block& b, std::int64_t ts_ms, std::uint16_t alarm_word, std::uint32_t sequence,
                          bool tuning) const {
    std::uint16_t status = regmap::status_bit::kBlowerOn;
    for (int k = 1; k <= plant::kSensorCount; ++k) {
        const auto& s = last_.readings[k - 1];
        regmap::put_f32(b, layout::sensor_t(k), static_cast<float>(s.t_c));
        regmap::put_f32(b, layout::sensor_rh(k), static_cast<float>(s.rh_pct));
        if (s.quality_bad) status |= regmap::status_bit::sensor_bad(k);
    }
    if (bank_.active(Actuator::heater) == 2) status |= regmap::status_bit::kHeaterUnit2;
    if (bank_.active(Actuator::cooler) == 2) status |= regmap::status_bit::kCoolerUnit2;
    if (bank_.active(Actuator::steam) == 2) status |= regmap::status_bit::kSteamUnit2;
    if (tuning) status |= regmap::status_bit::kTuning;
    regmap::put_f32(b, layout::kPressure, static_cast<float>(last_.pressure_inwc));
    regmap::put_f32(b, layout::kSetpointT, static_cast<float>(setpoint(LoopKind::temperature)));
    regmap::put_f32(b, layout::kSetpointRh, static_cast<float>(setpoint(LoopKind::humidity)));
    regmap::put_f32(b, layout::kHeaterDuty, static_cast<float>(last_.heater_duty));
    regmap::put_f32(b, layout::kCoolDuty, static_cast<float>(last_.cool_duty));
    regmap::put_f32(b, layout::kSteamCurrent, static_cast<float>(last_.steam_a));
    regmap::put_u16(b, layout::kAlarmWord, alarm_word);
    regmap::put_u16(b, layout::kStatusWord, status);
    const auto put_gains = [&](std::size_t at, const control::PidGains& g) {
        regmap::put_f32(b, at, static_cast<float>(g.kp));
        regmap::put_f32(b, at + 4, static_cast<float>(g.ti_s));
        regmap::put_f32(b, at + 8, static_cast<float>(g.td_s));
    };
    put_gains(layout::kTempKp, t_loop_.gains());
    put_gains(layout::kHumKp, rh_loop_.gains());
    regmap::put_u64(b, layout::kClockMs, static_cast<std::uint64_t>(ts_ms));
    regmap::put_u32(b, layout::kSequence, sequence);
}

void ChamberTwin::absorb(regmap::Block& b, std::span<const regmap::WriteCommand> writes) {
    // Only words an external client actually wrote count; everything else in the block is ours.
    const auto touched = [&](std::size_t at) {
        return std::any_of(writes.begin(), writes.end(), [at](const regmap::WriteCommand& w) {
            return w.offset < at + 4 && at < w.offset + w.data.size();
        });
    };
    const auto take_sp = [&](LoopKind k, std::size_t at, double lo, double hi) {
        if (!touched(at)) return;
        const float v = regmap::get_f32(b, at);
        if (std::isfinite(v) && v >= lo && v <= hi) {
            set_setpoint(k, static_cast<double>(v));
        } else {
            regmap::put_f32(b, at, static_cast<float>(setpoint(k)));
        }
    };
    take_sp(LoopKind::temperature, layout::kSetpointT, 5.0, 60.0);
    take_sp(LoopKind::humidity, layout::kSetpointRh, 10.0, 95.0);

    const auto take_gains = [&](LoopKind k, std::size_t at) {
        if (!touched(at) && !touched(at + 4) && !touched(at + 8)) return;
        const auto& cur = gains(k);
        control::PidGains g = cur;
        if (touched(at)) g.kp = regmap::get_f32(b, at);
        if (touched(at + 4)) g.ti_s = regmap::get_f32(b, at + 4);
        if (touched(at + 8)) g.td_s = regmap::get_f32(b, at + 8);
        const bool ok = std::isfinite(g.kp) && g.kp >= 0.0 && g.ti_s > 0.0 && std::isfinite(g.td_s) && g.td_s >= 0.0;
        if (ok) {
            set_gains(k, g);
        } else {
            regmap::put_f32(b, at, static_cast<float>(cur.kp));
            regmap::put_f32(b, at + 4, static_cast<float>(cur.ti_s));
            regmap::put_f32(b, at + 8, static_cast<float>(cur.td_s));
        }
    };
    take_gains(LoopKind::temperature, layout::kTempKp);
    take_gains(LoopKind::humidity, layout::kHumKp);
}

double TwinTuningPlant::read_pv() {
    std::array<plant::SensorReading, plant::kSensorCount> r;
    for (int k = 1; k <= plant::kSensorCount; ++k) r[k - 1] = plant::sensor_read(twin_.state(), k);
    const auto& cfg = kind_ == control::LoopKind::temperature ? twin_.config().t_loop : twin_.config().rh_loop;
    return control::select_pv(kind_, cfg.feedback_sensor, r, nullptr);
}

}  // namespace chamber::facility
