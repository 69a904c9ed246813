#include "chamber/facility.hpp"

#include "chamber/timefmt.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace chamber::facility {

using nlohmann::json;
using control::LoopKind;

control::PidGains default_gains(LoopKind kind) {
    control::PidGains g;
    g.td_filter = 0.5;
    if (kind == LoopKind::temperature) {
        g.kp = 0.5;
        g.ti_s = 900.0;
        g.td_s = 0.0;
        g.out_min = -1.0;
        g.out_max = 1.0;
    } else {
        g.kp = 0.05;
        g.ti_s = 600.0;
        g.td_s = 0.0;
        g.out_min = 0.0;
        g.out_max = 1.0;
    }
    return g;
}

ChamberConfig default_chamber(const std::string& id, double t_sp, double rh_sp) {
    ChamberConfig c;
    c.id = id;
    c.t_sp = t_sp;
    c.rh_sp = rh_sp;
    c.t_loop = control::default_loop(LoopKind::temperature, t_sp);
    c.rh_loop = control::default_loop(LoopKind::humidity, rh_sp);
    // Mean of healthy probes: a single probe's calibration offset would otherwise shift the whole room.
    c.t_loop.feedback_sensor = 0;
    c.rh_loop.feedback_sensor = 0;
    c.t_gains = default_gains(LoopKind::temperature);
    c.rh_gains = default_gains(LoopKind::humidity);
    return c;
}

ScenarioConfig default_scenario() {
    ScenarioConfig s;
    s.chambers["A"] = default_chamber("A", 25.0, 60.0);
    s.chambers["B"] = default_chamber("B", 30.0, 65.0);
    s.chambers["C"] = default_chamber("C", 30.0, 75.0);
    s.chambers["D"] = default_chamber("D", 40.0, 75.0);
    return s;
}

namespace {

// Field access with path-qualified errors.
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    void allow(std::initializer_list<const char*> keys) const {
        std::set<std::string> ok(keys.begin(), keys.end());
        for (const auto& [k, v] : j_.items()) {
            if (!ok.count(k)) throw ConfigError(sub(k), "unknown key");
        }
    }
    bool has(const char* k) const { return j_.contains(k); }
    std::string sub(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
    const json& raw(const char* k) const { return j_.at(k); }

    void num(const char* k, double& out, double lo, double hi) const {
        if (!has(k)) return;
        const auto& v = j_.at(k);
        if (!v.is_number()) throw ConfigError(sub(k), "expected a number");
        const double d = v.get<double>();
        if (!(d >= lo && d <= hi)) {
            throw ConfigError(sub(k), "must be within [" + fmt(lo) + ", " + fmt(hi) + "], got " + fmt(d));
        }
        out = d;
    }
    void str(const char* k, std::string& out) const {
        if (!has(k)) return;
        if (!j_.at(k).is_string()) throw ConfigError(sub(k), "expected a string");
        out = j_.at(k).get<std::string>();
    }
    template <class Int>
    void integer(const char* k, Int& out, long long lo, long long hi) const {
        if (!has(k)) return;
        const auto& v = j_.at(k);
        if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(sub(k), "expected an integer");
        const long long d = v.is_number_unsigned() ? static_cast<long long>(v.get<unsigned long long>()) : v.get<long long>();
        if (d < lo || d > hi) throw ConfigError(sub(k), "must be within [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        out = static_cast<Int>(d);
    }

private:
    static std::string fmt(double v) {
        char b[64];
        std::snprintf(b, sizeof b, "%g", v);
        return b;
    }
    const json& j_;
    std::string path_;
};

void parse_gains(const Obj& o, control::PidGains& g) {
    o.allow({"kp", "ti_s", "td_s"});
    o.num("kp", g.kp, 0.0, 1e6);
    if (o.has("ti_s")) {
        if (o.raw("ti_s").is_null()) g.ti_s = control::kNoIntegral;
        else o.num("ti_s", g.ti_s, 1e-3, 1e9);
    }
    o.num("td_s", g.td_s, 0.0, 1e6);
}

void parse_chamber(const Obj& o, ChamberConfig& c) {
    o.allow({"t_sp", "rh_sp", "initial", "feedback_sensor", "geometry", "actuators", "gains", "pwm_period_s", "deadband"});
    o.num("t_sp", c.t_sp, 5.0, 60.0);
    o.num("rh_sp", c.rh_sp, 10.0, 95.0);
    if (o.has("initial")) {
        const Obj i(o.raw("initial"), o.sub("initial"));
        i.allow({"t_c", "rh_pct"});
        i.num("t_c", c.initial_t_c, plant::kGuardMinT, plant::kGuardMaxT);
        i.num("rh_pct", c.initial_rh, 0.0, 100.0);
    }
    if (o.has("feedback_sensor")) {
        const auto& v = o.raw("feedback_sensor");
        int fb = 1;
        if (v.is_string() && v.get<std::string>() == "mean") fb = 0;
        else if (v.is_number_integer() && v.get<int>() >= 1 && v.get<int>() <= plant::kSensorCount) fb = v.get<int>();
        else throw ConfigError(o.sub("feedback_sensor"), "expected 1..7 or \"mean\"");
        c.t_loop.feedback_sensor = fb;
        c.rh_loop.feedback_sensor = fb;
    }
    o.num("pwm_period_s", c.t_loop.pwm_period_s, 1.0, 600.0);
    o.num("deadband", c.t_loop.deadband, 0.0, 0.5);
    if (o.has("geometry")) {
        const Obj g(o.raw("geometry"), o.sub("geometry"));
        g.allow({"volume_m3", "air_mass_kg", "extra_thermal_mass_jk", "ua_wk", "panel_thickness_m", "ambient_t_c",
                 "ambient_rh", "infiltration_ach", "door_exchange_per_min", "blower_heat_fraction"});
        auto& m = c.geometry;
        g.num("volume_m3", m.volume_m3, 0.1, 1000.0);
        g.num("air_mass_kg", m.air_mass_kg, 0.1, 1200.0);
        g.num("extra_thermal_mass_jk", m.extra_thermal_mass_jk, 0.0, 1e9);
        if (g.has("panel_thickness_m")) {
            double t = 0.075;
            g.num("panel_thickness_m", t, 0.005, 1.0);
            m.ua_wk = plant::panel_ua(1.47, 3.4, 2.74, 0.035, t);
        }
        g.num("ua_wk", m.ua_wk, 0.0, 1e5);
        g.num("ambient_t_c", m.ambient_t_c, -10.0, 50.0);
        g.num("ambient_rh", m.ambient_rh, 0.0, 100.0);
        g.num("infiltration_ach", m.infiltration_ach, 0.0, 100.0);
        g.num("door_exchange_per_min", m.door_exchange_per_min, 0.0, 10.0);
        g.num("blower_heat_fraction", m.blower_heat_fraction, 0.0, 1.0);
        try {
            m.validate();
        } catch (const std::exception& e) {
            throw ConfigError(o.sub("geometry"), e.what());
        }
    }
    if (o.has("actuators")) {
        const Obj a(o.raw("actuators"), o.sub("actuators"));
        a.allow({"heater_w", "cooling_w", "steam_max_kg_h", "blower_power_w", "coil_water_t_c", "coil_approach_k", "k_dh"});
        auto& b = c.bank;
        a.num("heater_w", b.heater_w, 0.0, 1e6);
        a.num("cooling_w", b.cooling_w, 0.0, 1e6);
        a.num("steam_max_kg_h", b.steam_max_kg_h, 0.0, 1000.0);
        a.num("blower_power_w", b.blower_power_w, 0.0, 1e5);
        a.num("coil_water_t_c", b.coil_water_t_c, -5.0, 30.0);
        a.num("coil_approach_k", b.coil_approach_k, 0.0, 30.0);
        a.num("k_dh", b.k_dh, 0.0, 10.0);
    }
    if (o.has("gains")) {
        const Obj g(o.raw("gains"), o.sub("gains"));
        g.allow({"temperature", "humidity"});
        if (g.has("temperature")) parse_gains(Obj(g.raw("temperature"), g.sub("temperature")), c.t_gains);
        if (g.has("humidity")) parse_gains(Obj(g.raw("humidity"), g.sub("humidity")), c.rh_gains);
    }
    c.t_loop.setpoint = c.t_sp;
    c.rh_loop.setpoint = c.rh_sp;
}

}  // namespace

ScenarioConfig parse_scenario(const json& j) {
    ScenarioConfig s = default_scenario();
    const Obj o(j, "");
    o.allow({"seed", "duration_s", "time_scale", "poll_interval_s", "start", "site", "output_dir", "failover_detect_s",
             "settle_hold_s", "network", "report_utc_offset_min", "auth", "chambers", "faults"});
    o.integer("seed", s.seed, 0, INT64_MAX);
    o.num("duration_s", s.duration_s, 1.0, 365.0 * 86400);
    o.num("time_scale", s.time_scale, 1.0, 1e9);
    o.num("poll_interval_s", s.poll_interval_s, 1.0, 3600.0);
    if (s.poll_interval_s != std::floor(s.poll_interval_s)) {
        throw ConfigError("poll_interval_s", "must be a whole number of 1 s control ticks");
    }
    if (o.has("start")) {
        std::string iso;
        o.str("start", iso);
        try {
            s.start_ms = parse_iso_ms(iso);
        } catch (const std::exception&) {
            throw ConfigError("start", "expected an ISO-8601 UTC time such as 2024-05-02T15:30:00Z");
        }
    }
    o.str("site", s.site);
    if (s.site.empty() || s.site.find_first_of("/+#") != std::string::npos) {
        throw ConfigError("site", "must be non-empty and free of '/', '+' and '#'");
    }
    if (o.has("output_dir")) {
        std::string d;
        o.str("output_dir", d);
        s.output_dir = d;
    }
    o.num("failover_detect_s", s.failover_detect_s, 0.0, 3600.0);
    o.num("settle_hold_s", s.settle_hold_s, 0.0, 86400.0);
    o.integer("report_utc_offset_min", s.report_utc_offset_min, -14 * 60, 14 * 60);
    if (o.has("network")) {
        const Obj n(o.raw("network"), "network");
        n.allow({"host", "regmap_port", "mqtt_port", "http_port"});
        n.str("host", s.bind_host);
        n.integer("regmap_port", s.regmap_port, 0, 65535);
        n.integer("mqtt_port", s.mqtt_port, 0, 65535);
        n.integer("http_port", s.http_port, 0, 65535);
    }
    if (o.has("auth")) {
        const Obj a(o.raw("auth"), "auth");
        a.allow({"service_token", "admin_user", "admin_password", "password_iterations"});
        a.str("service_token", s.service_token);
        a.str("admin_user", s.admin_user);
        a.str("admin_password", s.admin_password);
        a.integer("password_iterations", s.password_iterations, 1000, 10'000'000);
        if (s.service_token.size() < 16) throw ConfigError("auth.service_token", "must be at least 16 characters");
    }
    if (o.has("chambers")) {
        const Obj cs(o.raw("chambers"), "chambers");
        const auto defaults = default_scenario().chambers;
        s.chambers.clear();
        for (const auto& [id, v] : o.raw("chambers").items()) {
            if (!defaults.count(id)) throw ConfigError(cs.sub(id), "chamber id must be one of A, B, C, D");
            ChamberConfig c = defaults.at(id);
            parse_chamber(Obj(v, cs.sub(id)), c);
            s.chambers[id] = c;
        }
        if (s.chambers.empty()) throw ConfigError("chambers", "at least one chamber is required");
    }
    if (o.has("faults")) {
        const auto& arr = o.raw("faults");
        if (!arr.is_array()) throw ConfigError("faults", "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "faults[" + std::to_string(i) + "]";
            const Obj f(arr[i], path);
            f.allow({"chamber", "target", "at_s"});
            FaultSpec spec;
            f.str("chamber", spec.chamber);
            if (!s.chambers.count(spec.chamber)) throw ConfigError(f.sub("chamber"), "not a configured chamber");
            std::string target;
            f.str("target", target);
            try {
                spec.target = plant::FaultTarget::parse(target);
            } catch (const std::exception& e) {
                throw ConfigError(f.sub("target"), e.what());
            }
            if (!f.has("at_s")) throw ConfigError(f.sub("at_s"), "required");
            f.num("at_s", spec.at_s, 0.0, 1e12);
            s.faults.push_back(spec);
        }
    }
    return s;
}

ScenarioConfig load_scenario(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("<file>", "cannot open " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
    }
    return parse_scenario(j);
}

}  // namespace chamber::facility
