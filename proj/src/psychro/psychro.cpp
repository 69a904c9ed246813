#include "chamber/psychro.hpp"

#include <cmath>
#include <string>

namespace chamber::psychro {

namespace {

constexpr double kMagnusA = 0.61094;  // kPa
constexpr double kMagnusB = 17.625;
constexpr double kMagnusC = 243.04;   // °C
constexpr double kMinT = -40.0;
constexpr double kMaxT = 100.0;

void check_pressure(double p_kpa) {
    if (!(p_kpa > 0.0) || !std::isfinite(p_kpa)) {
        throw DomainError("total pressure must be positive, got " + std::to_string(p_kpa));
    }
}

}  // namespace

double saturation_vapor_pressure(double t_c) {
    if (!(t_c >= kMinT && t_c <= kMaxT)) {
        throw DomainError("temperature outside [-40, 100] C: " + std::to_string(t_c));
    }
    return kMagnusA * std::exp(kMagnusB * t_c / (t_c + kMagnusC));
}

double vapor_pressure(double w, double p_kpa) {
    check_pressure(p_kpa);
    if (!(w >= 0.0)) throw DomainError("humidity ratio must be >= 0");
    return w * p_kpa / (kEpsilon + w);
}

double relative_humidity(const MoistAir& air) {
    return 100.0 * vapor_pressure(air.w, air.p_kpa) / saturation_vapor_pressure(air.t_c);
}

double humidity_ratio(double t_c, double rh, double p_kpa) {
    if (!(rh >= 0.0 && rh <= 100.0)) {
        throw DomainError("relative humidity outside [0, 100]: " + std::to_string(rh));
    }
    check_pressure(p_kpa);
    const double pv = rh / 100.0 * saturation_vapor_pressure(t_c);
    if (pv >= p_kpa) throw DomainError("vapor pressure reaches total pressure");
    return kEpsilon * pv / (p_kpa - pv);
}

double saturation_humidity_ratio(double t_c, double p_kpa) {
    return humidity_ratio(t_c, 100.0, p_kpa);
}

double dew_point(double t_c, double rh) {
    if (!(rh > 0.0 && rh <= 100.0)) {
        throw DomainError("dew point undefined for rh outside (0, 100]: " + std::to_string(rh));
    }
    const double target = rh / 100.0 * saturation_vapor_pressure(t_c);
    if (rh == 100.0) return t_c;
    double lo = kMinT;
    double hi = t_c;
    if (saturation_vapor_pressure(lo) > target) return lo;
    while (hi - lo > 1e-4) {
        const double mid = 0.5 * (lo + hi);
        if (saturation_vapor_pressure(mid) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace chamber::psychro
