#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace chamber::plant {

inline constexpr int kSensorCount = 7;
inline constexpr double kAirCp = 1006.0;           // J/(kg K)
inline constexpr double kVaporCp = 1860.0;         // J/(kg K)
inline constexpr double kPaPerInWc = 249.089;
inline constexpr double kWattsPerTon = 3516.9;
inline constexpr double kTransmitterMaxInWc = 10.0;
inline constexpr double kGuardMinT = -10.0;
inline constexpr double kGuardMaxT = 80.0;

/// Raised when the integrator produces non-finite values or leaves the guard range.
class SimulationFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Envelope conductance of an insulated box: k/thickness times outer surface area.
double panel_ua(double width_m, double length_m, double height_m, double k_w_mk, double thickness_m);

struct ChamberGeometry {
    double volume_m3 = 9.57;
    double air_mass_kg = 11.48;
    double extra_thermal_mass_jk = 50'000.0;
    double ua_wk = panel_ua(1.47, 3.4, 2.74, 0.035, 0.075);
    double ambient_t_c = 24.0;
    double ambient_rh = 50.0;
    /// Leakage exchange with ambient, air changes per hour (door closed).
    double infiltration_ach = 0.2;
    /// Exchange while the door is open, air masses per minute.
    double door_exchange_per_min = 0.1;
    /// Fraction of blower electrical power dissipated into the air stream.
    double blower_heat_fraction = 0.5;

    double thermal_capacity_jk() const { return air_mass_kg * kAirCp + extra_thermal_mass_jk; }
    void validate() const;
};

enum class Actuator : std::uint8_t { heater = 0, cooler = 1, steam = 2 };
inline constexpr int kActuatorCount = 3;

struct ActuatorBank {
    double heater_w = 4200.0;
    double cooling_w = 2.5 * kWattsPerTon;
    double steam_max_kg_h = 7.2;
    double steam_max_a = 25.0;
    double blower_flow_m3h = 2375.0;
    double blower_static_pa = 125.0;
    double blower_power_w = 300.0;
    /// Chilled-water mean temperature and coil approach define the coil surface.
    double coil_water_t_c = 7.5;
    double coil_approach_k = 3.0;
    /// Condensation coefficient, kg/s per unit humidity-ratio potential at full valve.
    double k_dh = 0.004;
    /// Unit in service per actuator, 1 or 2.
    std::array<int, kActuatorCount> active_unit{1, 1, 1};

    int active(Actuator a) const { return active_unit[static_cast<int>(a)]; }
    void set_active(Actuator a, int unit);
    double coil_surface_t_c() const { return coil_water_t_c + coil_approach_k; }
    double rated_pressure_inwc() const { return blower_static_pa / kPaPerInWc; }
    void validate() const;
};

/// Fault injection targets. Sensors are sensor1..sensor7.
enum class FaultKind : std::uint8_t { heater1, heater2, cool1, cool2, steam1, steam2, blower, sensor };

struct FaultTarget {
    FaultKind kind = FaultKind::blower;
    int sensor_id = 0;  ///< 1..7 when kind == sensor

    static FaultTarget parse(std::string_view name);
    std::string name() const;
    bool operator==(const FaultTarget&) const = default;
};

struct SensorOffset {
    double t_c = 0.0;
    double rh_pct = 0.0;
};

struct SensorReading {
    double t_c = 0.0;
    double rh_pct = 0.0;
    bool quality_bad = false;
};

struct SensorModel {
    double noise_t_sigma = 0.05;
    double noise_rh_sigma = 0.2;
    double offset_t_max = 0.7;
    double offset_rh_max = 1.3;
    double noise_p_sigma = 0.005;
};

inline constexpr int kFaultSlots = 7 + kSensorCount;

struct PlantState {
    double t_c = 24.0;
    double w = 0.0;
    double duct_pressure_inwc = 0.0;
    double condensate_total_kg = 0.0;
    double steam_total_kg = 0.0;
    /// Net vapor mass gained through ambient exchange (negative when losing).
    double exchange_total_kg = 0.0;
    double sim_time_s = 0.0;
    std::uint64_t step_count = 0;

    std::uint64_t rng_seed = 0;
    SensorModel sensor_model{};
    std::array<SensorOffset, kSensorCount> sensor_offsets{};
    /// Reading captured when a sensor fault activates; returned while faulted.
    std::array<SensorReading, kSensorCount> held{};
    std::array<bool, kSensorCount> held_valid{};
    /// Activation time per fault slot; +inf means healthy.
    std::array<double, kFaultSlots> fault_at;

    PlantState() { fault_at.fill(std::numeric_limits<double>::infinity()); }

    double relative_humidity() const;
    bool faulted(FaultTarget target) const;
    bool unit_faulted(Actuator a, int unit) const;
};

struct PlantInputs {
    double heater_duty = 0.0;
    double cool_duty = 0.0;
    double steam_current_a = 0.0;
    bool blower_on = false;
    bool door_open = false;

    void validate(const ActuatorBank& bank) const;
};

/// Fresh state at (t_c, rh) with sensor offsets drawn from `seed`.
PlantState initial_state(double t_c, double rh, std::uint64_t seed, const SensorModel& model = {});

/// One RK4 step of the chamber energy and moisture balance with zero-order-hold inputs.
/// Throws SimulationFault on non-finite or out-of-guard results.
PlantState step(const PlantState& state, const ChamberGeometry& geom, const ActuatorBank& bank,
                const PlantInputs& inputs, double dt_s);

/// Time derivative of temperature for the given state and inputs (K/s). Used by tests and tuning.
double temperature_rate(const PlantState& state, const ChamberGeometry& geom, const ActuatorBank& bank,
                        const PlantInputs& inputs);

/// Virtual Rotronic-style probe. Faulted probes return their held value with the quality bit set.
SensorReading sensor_read(const PlantState& state, int sensor_id);

/// Duct pressure transmitter, inches of water column, clamped to the 0..10 range.
double pressure_read(const PlantState& state);

/// Schedules a fault from `at_time` (simulation seconds).
PlantState inject_fault(const PlantState& state, FaultTarget target, double at_time);

/// Clears a fault (maintenance repair).
PlantState clear_fault(const PlantState& state, FaultTarget target);

}  // namespace chamber::plant
