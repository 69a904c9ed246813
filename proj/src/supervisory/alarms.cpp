#include "chamber/supervisory.hpp"

#include "chamber/timefmt.hpp"

#include <algorithm>
#include <cmath>

namespace chamber::supervisory {

std::string to_string(AlarmKind k) {
    switch (k) {
        case AlarmKind::deviation_t: return "deviation_t";
        case AlarmKind::deviation_rh: return "deviation_rh";
        case AlarmKind::blower_fail: return "blower_fail";
        case AlarmKind::sensor_fail: return "sensor_fail";
        case AlarmKind::tuning_fail: return "tuning_fail";
        case AlarmKind::unit_failover: return "unit_failover";
    }
    return "?";
}

std::string to_string(AlarmState s) {
    switch (s) {
        case AlarmState::active: return "ACTIVE";
        case AlarmState::acked: return "ACKED";
        case AlarmState::cleared: return "CLEARED";
    }
    return "?";
}

AlarmKind parse_alarm_kind(const std::string& s) {
    for (auto k : {AlarmKind::deviation_t, AlarmKind::deviation_rh, AlarmKind::blower_fail, AlarmKind::sensor_fail,
                   AlarmKind::tuning_fail, AlarmKind::unit_failover}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown alarm kind '" + s + "'");
}

AlarmState parse_alarm_state(const std::string& s) {
    for (auto st : {AlarmState::active, AlarmState::acked, AlarmState::cleared}) {
        if (to_string(st) == s) return st;
    }
    throw std::invalid_argument("unknown alarm state '" + s + "'");
}

bool legal_transition(AlarmState from, AlarmState to) {
    return (from == AlarmState::active && to == AlarmState::acked) ||
           (from == AlarmState::active && to == AlarmState::cleared) ||
           (from == AlarmState::acked && to == AlarmState::cleared);
}

std::uint16_t alarm_word_bit(AlarmKind k) { return static_cast<std::uint16_t>(1u << static_cast<int>(k)); }

nlohmann::json to_json(const AlarmRecord& a) {
    nlohmann::json j{{"id", a.id},
                     {"kind", to_string(a.kind)},
                     {"chamber", a.chamber},
                     {"raised_ts", format_iso_ms(a.raised_ms)},
                     {"state", to_string(a.state)},
                     {"detail", a.detail},
                     {"acked_by", nullptr},
                     {"acked_ts", nullptr},
                     {"cleared_ts", nullptr}};
    if (a.acked_by) j["acked_by"] = *a.acked_by;
    if (a.acked_ms) j["acked_ts"] = format_iso_ms(*a.acked_ms);
    if (a.cleared_ms) j["cleared_ts"] = format_iso_ms(*a.cleared_ms);
    return j;
}

void AlarmManager::add_listener(Listener l) {
    std::lock_guard lock(mutex_);
    listeners_.push_back(std::move(l));
}

void AlarmManager::emit(const AlarmTransition& t) {
    std::vector<Listener> ls;
    {
        std::lock_guard lock(mutex_);
        ls = listeners_;
    }
    for (const auto& l : ls) l(t);
}

std::optional<AlarmRecord> AlarmManager::raise(AlarmKind kind, const std::string& chamber, std::int64_t ts_ms,
                                               std::string detail) {
    AlarmRecord rec;
    {
        std::lock_guard lock(mutex_);
        for (const auto& a : alarms_) {
            if (a.kind == kind && a.chamber == chamber && a.state != AlarmState::cleared) return std::nullopt;
        }
        rec.id = alarms_.size() + 1;
        rec.kind = kind;
        rec.chamber = chamber;
        rec.raised_ms = ts_ms;
        rec.detail = std::move(detail);
        alarms_.push_back(rec);
    }
    emit({rec, std::nullopt, AlarmState::active});
    return rec;
}

std::optional<AlarmRecord> AlarmManager::clear(AlarmKind kind, const std::string& chamber, std::int64_t ts_ms) {
    AlarmTransition t;
    {
        std::lock_guard lock(mutex_);
        auto it = std::find_if(alarms_.begin(), alarms_.end(), [&](const AlarmRecord& a) {
            return a.kind == kind && a.chamber == chamber && a.state != AlarmState::cleared;
        });
        if (it == alarms_.end()) return std::nullopt;
        t.from = it->state;
        it->state = AlarmState::cleared;
        it->cleared_ms = ts_ms;
        t.to = AlarmState::cleared;
        t.record = *it;
    }
    emit(t);
    return t.record;
}

AlarmRecord AlarmManager::ack(std::uint64_t id, const std::string& user, Role role, std::int64_t ts_ms) {
    if (!allowed(role, Action::ack_alarm)) throw Forbidden("role " + to_string(role) + " may not acknowledge alarms");
    AlarmTransition t;
    {
        std::lock_guard lock(mutex_);
        if (id == 0 || id > alarms_.size()) throw std::out_of_range("no alarm " + std::to_string(id));
        AlarmRecord& a = alarms_[id - 1];
        if (!legal_transition(a.state, AlarmState::acked)) {
            throw IllegalTransition("alarm " + std::to_string(id) + " is " + to_string(a.state) + ", cannot acknowledge");
        }
        t.from = a.state;
        a.state = AlarmState::acked;
        a.acked_by = user;
        a.acked_ms = ts_ms;
        t.to = AlarmState::acked;
        t.record = a;
    }
    emit(t);
    return t.record;
}

std::optional<AlarmRecord> AlarmManager::get(std::uint64_t id) const {
    std::lock_guard lock(mutex_);
    if (id == 0 || id > alarms_.size()) return std::nullopt;
    return alarms_[id - 1];
}

std::optional<AlarmRecord> AlarmManager::open(AlarmKind kind, const std::string& chamber) const {
    std::lock_guard lock(mutex_);
    for (const auto& a : alarms_) {
        if (a.kind == kind && a.chamber == chamber && a.state != AlarmState::cleared) return a;
    }
    return std::nullopt;
}

std::vector<AlarmRecord> AlarmManager::list(std::optional<AlarmState> state) const {
    std::lock_guard lock(mutex_);
    std::vector<AlarmRecord> out;
    for (const auto& a : alarms_) {
        if (!state || a.state == *state) out.push_back(a);
    }
    return out;
}

std::uint16_t AlarmManager::alarm_word(const std::string& chamber) const {
    std::lock_guard lock(mutex_);
    std::uint16_t w = 0;
    for (const auto& a : alarms_) {
        if (a.chamber == chamber && a.state != AlarmState::cleared) w |= alarm_word_bit(a.kind);
    }
    return w;
}

std::size_t AlarmManager::count(AlarmKind kind, const std::string& chamber) const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& a : alarms_) n += a.kind == kind && a.chamber == chamber;
    return n;
}

AlarmEvaluator::AlarmEvaluator(std::string chamber, AlarmConfig config) : chamber_(std::move(chamber)), cfg_(config) {}

void AlarmEvaluator::deviation(AlarmKind kind, bool armed, bool out, std::int64_t ts, Dwell& d, AlarmManager& alarms,
                               const std::string& detail) {
    if (!armed) return;
    const auto dwell_ms = static_cast<std::int64_t>(cfg_.deviation_dwell_s * 1000.0);
    if (out) {
        d.in_since.reset();
        if (!d.out_since) d.out_since = ts;
        if (ts - *d.out_since >= dwell_ms) alarms.raise(kind, chamber_, ts, detail);
    } else {
        d.out_since.reset();
        if (!d.in_since) d.in_since = ts;
        if (ts - *d.in_since >= dwell_ms) alarms.clear(kind, chamber_, ts);
    }
}

void AlarmEvaluator::evaluate(const AlarmInputs& in, AlarmManager& alarms) {
    const std::int64_t ts = in.ts_ms;

    // Sensor health: bad quality or a value that has not changed at all for frozen_s.
    const auto frozen_ms = static_cast<std::int64_t>(cfg_.frozen_s * 1000.0);
    std::string failed;
    double sum_t = 0.0, sum_rh = 0.0;
    int good = 0;
    for (int k = 0; k < 7; ++k) {
        if (!primed_ || in.t[k] != last_t_[k] || in.rh[k] != last_rh_[k]) changed_at_[k] = ts;
        last_t_[k] = in.t[k];
        last_rh_[k] = in.rh[k];
        const bool frozen = ts - changed_at_[k] >= frozen_ms;
        if (in.bad[k] || frozen) {
            failed += (failed.empty() ? "" : ",") + std::to_string(k + 1);
        } else {
            sum_t += in.t[k];
            sum_rh += in.rh[k];
            ++good;
        }
    }
    primed_ = true;
    if (!failed.empty()) {
        alarms.raise(AlarmKind::sensor_fail, chamber_, ts, "sensors " + failed);
    } else {
        alarms.clear(AlarmKind::sensor_fail, chamber_, ts);
    }

    if (good > 0) {
        const double t = sum_t / good, rh = sum_rh / good;
        const bool out_t = std::abs(t - in.sp_t) > cfg_.tol_t;
        const bool out_rh = std::abs(rh - in.sp_rh) > cfg_.tol_rh;
        // Startup inhibit: the band check arms once the chamber has reached its setpoint.
        armed_t_ = armed_t_ || !out_t;
        armed_rh_ = armed_rh_ || !out_rh;
        char buf[96];
        std::snprintf(buf, sizeof buf, "T=%.2f sp=%.2f", t, in.sp_t);
        deviation(AlarmKind::deviation_t, armed_t_, out_t, ts, dev_t_, alarms, buf);
        std::snprintf(buf, sizeof buf, "RH=%.2f sp=%.2f", rh, in.sp_rh);
        deviation(AlarmKind::deviation_rh, armed_rh_, out_rh, ts, dev_rh_, alarms, buf);
    }

    const auto blower_ms = static_cast<std::int64_t>(cfg_.blower_dwell_s * 1000.0);
    if (in.blower_commanded && in.pressure_inwc < cfg_.blower_threshold_inwc) {
        if (!low_pressure_since_) low_pressure_since_ = ts;
        if (ts - *low_pressure_since_ > blower_ms) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "duct pressure %.3f inWC", in.pressure_inwc);
            alarms.raise(AlarmKind::blower_fail, chamber_, ts, buf);
        }
    } else {
        low_pressure_since_.reset();
        if (in.blower_commanded) alarms.clear(AlarmKind::blower_fail, chamber_, ts);
    }
}

}  // namespace chamber::supervisory
