#pragma once

#include <array>
#include <cstdint>
#include "json.hpp"
#include <span>
#include <stdexcept>
#include <string>

namespace chamber::gateway {

inline constexpr int kSensors = 7;

struct SensorValue {
    int id = 0;
    double t_c = 0.0;
    double rh_pct = 0.0;
    bool operator==(const SensorValue&) const = default;
};

struct TelemetrySample {
    std::int64_t ts_ms = 0;
    std::string chamber;
    std::array<SensorValue, kSensors> sensors{};
    double pressure_inwc = 0.0;
    double sp_t_c = 0.0;
    double sp_rh_pct = 0.0;
    double heater = 0.0;
    double cool = 0.0;
    double steam_a = 0.0;
    std::uint16_t alarm_word = 0;
    bool operator==(const TelemetrySample&) const = default;
};

/// Raised for malformed sample JSON; field() names the offending key path.
class FieldError : public std::invalid_argument {
public:
    FieldError(std::string field, const std::string& why)
        : std::invalid_argument(field + ": " + why), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

double round2(double v);

/// "A".."D" <-> data block 1..4.
int chamber_db(const std::string& chamber);
std::string chamber_id(int db);
bool valid_chamber(const std::string& chamber);

/// Builds a sample from bytes [0, layout::kEnd) of a data block; ts comes from the block clock.
TelemetrySample sample_from_image(std::span<const std::uint8_t> image, const std::string& chamber);

nlohmann::json to_json(const TelemetrySample& s);
TelemetrySample sample_from_json(const nlohmann::json& j);

/// Sorted keys, no whitespace, floats fixed at 2 decimals, integers bare.
std::string canonical_dump(const nlohmann::json& j);
std::string canonical_json(const TelemetrySample& s);

std::string telemetry_topic(const std::string& site, const std::string& chamber);

}  // namespace chamber::gateway
