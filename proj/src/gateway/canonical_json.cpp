#include "chamber/telemetry.hpp"

#include <cmath>
#include <cstdio>

namespace chamber::gateway {

namespace {

void dump(const nlohmann::json& j, std::string& out) {
    switch (j.type()) {
        case nlohmann::json::value_t::object: {
            // nlohmann's default object type is an ordered std::map, so iteration is sorted by key.
            out += '{';
            bool first = true;
            for (const auto& [k, v] : j.items()) {
                if (!first) out += ',';
                first = false;
                out += nlohmann::json(k).dump();
                out += ':';
                dump(v, out);
            }
            out += '}';
            break;
        }
        case nlohmann::json::value_t::array: {
            out += '[';
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) out += ',';
                dump(j[i], out);
            }
            out += ']';
            break;
        }
        case nlohmann::json::value_t::number_float: {
            double v = j.get<double>();
            if (!std::isfinite(v)) throw std::invalid_argument("non-finite number in canonical JSON");
            v = round2(v);
            if (v == 0.0) v = 0.0;  // no "-0.00"
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.2f", v);
            out += buf;
            break;
        }
        default:
            out += j.dump();
    }
}

}  // namespace

double round2(double v) {
    const double r = std::round(v * 100.0) / 100.0;
    return r == 0.0 ? 0.0 : r;
}

std::string canonical_dump(const nlohmann::json& j) {
    std::string out;
    dump(j, out);
    return out;
}

std::string canonical_json(const TelemetrySample& s) { return canonical_dump(to_json(s)); }

}  // namespace chamber::gateway
