#pragma once

#include <stdexcept>

namespace chamber::psychro {

inline constexpr double kStandardPressureKpa = 101.325;
/// Ratio of molar masses of water vapor and dry air.
inline constexpr double kEpsilon = 0.622;

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Moist air at a given dry-bulb temperature, humidity ratio and total pressure.
struct MoistAir {
    double t_c = 25.0;
    double w = 0.0;  ///< kg vapor / kg dry air
    double p_kpa = kStandardPressureKpa;
};

/// Saturation vapor pressure over liquid water (Magnus form), kPa.
/// Throws DomainError outside [-40, 100] °C.
double saturation_vapor_pressure(double t_c);

/// Vapor partial pressure for humidity ratio `w` at total pressure `p_kpa`.
double vapor_pressure(double w, double p_kpa = kStandardPressureKpa);

/// Relative humidity in percent. Not clipped: supersaturated air reports > 100.
double relative_humidity(const MoistAir& air);

/// Humidity ratio that gives `rh` percent at (t_c, p_kpa). Inverse of relative_humidity.
double humidity_ratio(double t_c, double rh, double p_kpa = kStandardPressureKpa);

/// Humidity ratio of saturated air.
double saturation_humidity_ratio(double t_c, double p_kpa = kStandardPressureKpa);

/// Dew point by bisection on the saturation curve to 1e-4 °C. rh must be in (0, 100].
double dew_point(double t_c, double rh);

}  // namespace chamber::psychro
