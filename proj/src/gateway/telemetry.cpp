#include "chamber/telemetry.hpp"

#include "chamber/regmap.hpp"
#include "chamber/timefmt.hpp"

#include <cmath>

namespace chamber::gateway {

namespace layout = regmap::layout;

int chamber_db(const std::string& chamber) {
    if (!valid_chamber(chamber)) throw std::invalid_argument("unknown chamber '" + chamber + "'");
    return chamber[0] - 'A' + 1;
}

std::string chamber_id(int db) {
    if (db < 1 || db > 4) throw std::invalid_argument("no chamber for data block " + std::to_string(db));
    return std::string(1, static_cast<char>('A' + db - 1));
}

bool valid_chamber(const std::string& chamber) { return chamber.size() == 1 && chamber[0] >= 'A' && chamber[0] <= 'D'; }

TelemetrySample sample_from_image(std::span<const std::uint8_t> image, const std::string& chamber) {
    if (image.size() < layout::kEnd) throw std::invalid_argument("process image too short");
    TelemetrySample s;
    s.chamber = chamber;
    s.ts_ms = static_cast<std::int64_t>(regmap::get_u64(image, layout::kClockMs));
    for (int id = 1; id <= kSensors; ++id) {
        s.sensors[id - 1] = {id, round2(regmap::get_f32(image, layout::sensor_t(id))),
                             round2(regmap::get_f32(image, layout::sensor_rh(id)))};
    }
    s.pressure_inwc = round2(regmap::get_f32(image, layout::kPressure));
    s.sp_t_c = round2(regmap::get_f32(image, layout::kSetpointT));
    s.sp_rh_pct = round2(regmap::get_f32(image, layout::kSetpointRh));
    s.heater = round2(regmap::get_f32(image, layout::kHeaterDuty));
    s.cool = round2(regmap::get_f32(image, layout::kCoolDuty));
    s.steam_a = round2(regmap::get_f32(image, layout::kSteamCurrent));
    s.alarm_word = regmap::get_u16(image, layout::kAlarmWord);
    return s;
}

nlohmann::json to_json(const TelemetrySample& s) {
    nlohmann::json sensors = nlohmann::json::array();
    for (const auto& v : s.sensors) sensors.push_back({{"id", v.id}, {"t_c", v.t_c}, {"rh_pct", v.rh_pct}});
    return {{"ts", format_iso_ms(s.ts_ms)},
            {"chamber", s.chamber},
            {"sensors", std::move(sensors)},
            {"pressure_inwc", s.pressure_inwc},
            {"setpoint", {{"t_c", s.sp_t_c}, {"rh_pct", s.sp_rh_pct}}},
            {"duties", {{"heater", s.heater}, {"cool", s.cool}, {"steam_a", s.steam_a}}},
            {"alarm_word", s.alarm_word}};
}

namespace {

const nlohmann::json& member(const nlohmann::json& j, const std::string& key, const std::string& path) {
    if (!j.is_object()) throw FieldError(path, "expected an object");
    const auto it = j.find(key);
    if (it == j.end()) throw FieldError(path.empty() ? key : path + "." + key, "missing");
    return *it;
}

double number(const nlohmann::json& j, const std::string& key, const std::string& path) {
    const auto& v = member(j, key, path);
    const std::string name = path.empty() ? key : path + "." + key;
    if (!v.is_number()) throw FieldError(name, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw FieldError(name, "not finite");
    return d;
}

}  // namespace

TelemetrySample sample_from_json(const nlohmann::json& j) {
    TelemetrySample s;
    const auto& ts = member(j, "ts", "");
    if (!ts.is_string()) throw FieldError("ts", "expected an ISO-8601 string");
    try {
        s.ts_ms = parse_iso_ms(ts.get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw FieldError("ts", e.what());
    }
    const auto& ch = member(j, "chamber", "");
    if (!ch.is_string() || !valid_chamber(ch.get<std::string>())) throw FieldError("chamber", "expected one of A, B, C, D");
    s.chamber = ch.get<std::string>();

    const auto& sensors = member(j, "sensors", "");
    if (!sensors.is_array()) throw FieldError("sensors", "expected an array");
    std::array<bool, kSensors> seen{};
    for (std::size_t i = 0; i < sensors.size(); ++i) {
        const std::string path = "sensors[" + std::to_string(i) + "]";
        const auto& idv = member(sensors[i], "id", path);
        if (!idv.is_number_integer() || idv.get<int>() < 1 || idv.get<int>() > kSensors) {
            throw FieldError(path + ".id", "expected an integer 1..7");
        }
        const int id = idv.get<int>();
        if (seen[id - 1]) throw FieldError(path + ".id", "duplicate sensor id");
        seen[id - 1] = true;
        s.sensors[id - 1] = {id, number(sensors[i], "t_c", path), number(sensors[i], "rh_pct", path)};
    }
    for (int id = 1; id <= kSensors; ++id) {
        if (!seen[id - 1]) throw FieldError("sensors[id=" + std::to_string(id) + "]", "missing sensor " + std::to_string(id));
    }

    s.pressure_inwc = number(j, "pressure_inwc", "");
    const auto& sp = member(j, "setpoint", "");
    s.sp_t_c = number(sp, "t_c", "setpoint");
    s.sp_rh_pct = number(sp, "rh_pct", "setpoint");
    const auto& du = member(j, "duties", "");
    s.heater = number(du, "heater", "duties");
    s.cool = number(du, "cool", "duties");
    s.steam_a = number(du, "steam_a", "duties");
    const auto& aw = member(j, "alarm_word", "");
    if (!aw.is_number_unsigned() || aw.get<std::uint64_t>() > 0xFFFF) throw FieldError("alarm_word", "expected an integer 0..65535");
    s.alarm_word = aw.get<std::uint16_t>();
    return s;
}

std::string telemetry_topic(const std::string& site, const std::string& chamber) {
    return "stability/" + site + "/" + chamber + "/telemetry";
}

}  // namespace chamber::gateway
