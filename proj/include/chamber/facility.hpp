#pragma once

#include "chamber/control.hpp"
#include "chamber/historian.hpp"
#include "chamber/plant.hpp"
#include "chamber/regmap.hpp"
#include "chamber/supervisory.hpp"
#include "chamber/tuning.hpp"

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace chamber::facility {

/// Scenario validation failure; field() is a JSON path such as "chambers.B.t_sp".
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string& why)
        : std::invalid_argument(field + ": " + why), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

struct ChamberConfig {
    std::string id;
    double t_sp = 25.0;
    double rh_sp = 60.0;
    double initial_t_c = 24.0;
    double initial_rh = 50.0;
    plant::ChamberGeometry geometry;
    plant::ActuatorBank bank;
    control::LoopConfig t_loop;
    control::LoopConfig rh_loop;
    control::PidGains t_gains;
    control::PidGains rh_gains;
};

struct FaultSpec {
    std::string chamber;
    plant::FaultTarget target;
    double at_s = 0.0;
};

struct ScenarioConfig {
    std::map<std::string, ChamberConfig> chambers;
    double duration_s = 24 * 3600.0;
    /// Simulated seconds per wall second.
    double time_scale = 1000.0;
    std::vector<FaultSpec> faults;
    std::uint64_t seed = 20240502;
    double poll_interval_s = 5.0;
    std::filesystem::path output_dir = "out";
    /// Simulation epoch, UTC ms. 2024-05-02T15:30:00Z.
    std::int64_t start_ms = 1714663800000;
    std::string site = "plant1";
    /// How long a unit trip must persist before the backup unit takes over.
    double failover_detect_s = 3.0;
    /// Settling counts once both loops stay in band for this long.
    double settle_hold_s = 1800.0;
    std::string bind_host = "127.0.0.1";
    std::uint16_t regmap_port = 0;  // 0: ephemeral
    std::uint16_t mqtt_port = 0;
    std::uint16_t http_port = 0;
    int report_utc_offset_min = 0;
    std::string service_token = "gateway-service-token";
    std::string admin_user = "admin";
    std::string admin_password = "change-me-now";
    int password_iterations = supervisory::UserStore::kIterations;
};

/// The four stability conditions: A 25/60, B 30/65, C 30/75, D 40/75.
ScenarioConfig default_scenario();
ChamberConfig default_chamber(const std::string& id, double t_sp, double rh_sp);
control::PidGains default_gains(control::LoopKind kind);

/// Overlays `j` on the defaults. Unknown keys are rejected so typos surface as errors.
ScenarioConfig parse_scenario(const nlohmann::json& j);
ScenarioConfig load_scenario(const std::filesystem::path& file);

// ---- one chamber --------------------------------------------------------------

struct FailoverEvent {
    std::string chamber;
    plant::Actuator actuator = plant::Actuator::heater;
    int from_unit = 1;
    int to_unit = 2;
    double sim_time_s = 0.0;
};

std::string actuator_name(plant::Actuator a);

struct TickResult {
    std::array<plant::SensorReading, plant::kSensorCount> readings{};
    double pressure_inwc = 0.0;
    double t_pv = 0.0;
    double rh_pv = 0.0;
    double heater_duty = 0.0;  // continuous controller duties, before PWM
    double cool_duty = 0.0;
    double steam_a = 0.0;
    double t_u = 0.0;
    double rh_u = 0.0;
    std::optional<FailoverEvent> failover;
};

/// Plant, both control loops and the unit failover logic for one chamber, advanced in 1 s ticks.
class ChamberTwin {
public:
    static constexpr double kStep = 1.0;

    ChamberTwin(ChamberConfig config, std::uint64_t seed, double failover_detect_s = 3.0);

    /// Reads the sensors, runs the loops (or the override), handles failover and steps the plant.
    TickResult tick();

    const ChamberConfig& config() const { return config_; }
    const plant::PlantState& state() const { return state_; }
    const plant::ActuatorBank& bank() const { return bank_; }
    double sim_time() const { return state_.sim_time_s; }
    const TickResult& last() const { return last_; }

    double setpoint(control::LoopKind k) const;
    void set_setpoint(control::LoopKind k, double sp);
    const control::PidGains& gains(control::LoopKind k) const;
    void set_gains(control::LoopKind k, const control::PidGains& g);
    control::LoopController& loop(control::LoopKind k);

    /// Replaces a loop's controller output with `u` (tuning); nullopt hands control back.
    void set_override(control::LoopKind k, std::optional<double> u);
    bool overridden(control::LoopKind k) const;

    void inject_fault(plant::FaultTarget target, double at_s);

    /// Writes everything the PLC publishes into a data block.
    void publish(regmap::Block& block, std::int64_t ts_ms, std::uint16_t alarm_word, std::uint32_t sequence,
                 bool tuning) const;
    /// Applies the setpoint and gain words covered by `writes` (already landed in `block`).
    /// Invalid values are reverted in place.
    void absorb(regmap::Block& block, std::span<const regmap::WriteCommand> writes);

private:
    ChamberConfig config_;
    plant::PlantState state_;
    plant::ActuatorBank bank_;
    control::LoopController t_loop_;
    control::LoopController rh_loop_;
    std::optional<double> t_override_;
    std::optional<double> rh_override_;
    control::PwmChannel override_heater_pwm_;
    control::PwmChannel override_cool_pwm_;
    double failover_detect_s_;
    std::array<double, plant::kActuatorCount> trip_since_;
    TickResult last_;
};

/// Advances a twin by one tick. The facility substitutes one that hands the tick to its own loop.
using Stepper = std::function<TickResult()>;

/// Tuning view of a twin: the tuned loop is driven open-loop while the other loop keeps regulating.
class TwinTuningPlant : public control::TuningPlant {
public:
    TwinTuningPlant(ChamberTwin& twin, control::LoopKind kind, Stepper step = {})
        : twin_(twin), kind_(kind), step_(std::move(step)) {}
    double sample_time() const override { return ChamberTwin::kStep; }
    void apply(double u) override { twin_.set_override(kind_, u); }
    void advance() override { step_ ? step_() : twin_.tick(); }
    double read_pv() override;

private:
    ChamberTwin& twin_;
    control::LoopKind kind_;
    Stepper step_;
};

// ---- tuning ---------------------------------------------------------------

struct TuneOptions {
    // Step and relay sizes keep the excursion to a few K / %RH on the default chamber.
    double pretune_step_t = 0.01;
    double pretune_step_rh = 0.005;
    double relay_amplitude_t = 0.05;
    double relay_amplitude_rh = 0.02;
    double relay_hysteresis_t = 0.1;
    double relay_hysteresis_rh = 0.3;
    /// Moisture in a sealed room is close to a pure integrator (leak time constant of hours), so an
    /// open-loop step does not settle within any sensible excursion; humidity goes straight to the relay.
    bool humidity_pretune = false;
    double max_excursion_t = 10.0;
    double max_excursion_rh = 6.0;
    /// Time spent regulating on the existing gains before the experiment starts.
    double warmup_s = 3 * 3600.0;
};

struct TuneReport {
    std::string chamber;
    control::LoopKind loop = control::LoopKind::temperature;
    double bias_u = 0.0;
    std::optional<control::PretuneResult> pretune;
    control::FinetuneResult finetune;
    control::PidGains gains;
    double duration_s = 0.0;
};

/// Full two-phase tuning on `twin`: warm-up, step identification + CHR, relay + Z-N.
/// Leaves the twin regulating with the new gains. Throws control::TuningFailed.
TuneReport run_tuning(ChamberTwin& twin, control::LoopKind kind, const TuneOptions& options = {}, Stepper step = {});

nlohmann::json to_json(const TuneReport& r);
nlohmann::json gains_json(const control::PidGains& g);

// ---- whole facility --------------------------------------------------------------

struct ChamberSummary {
    std::string chamber;
    double t_sp = 0.0;
    double rh_sp = 0.0;
    std::optional<double> settling_s;
    std::size_t samples = 0;
    std::size_t post_settling_samples = 0;
    double in_band_pct = 0.0;
    double max_abs_t_dev = 0.0;   // over post-settling samples, any sensor
    double max_abs_rh_dev = 0.0;
    double t_min = 0.0, t_max = 0.0, rh_min = 0.0, rh_max = 0.0;  // post-settling sensor envelope
    std::map<std::string, std::size_t> alarms;
    std::vector<FailoverEvent> failovers;
    /// Largest |T_bulk - sp| after the first injected fault, if any.
    std::optional<double> max_fault_excursion;
};

struct RunSummary {
    std::vector<ChamberSummary> chambers;
    double sim_seconds = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t samples_stored = 0;
    std::uint64_t samples_published = 0;
    std::uint64_t mqtt_retransmissions = 0;
    std::uint64_t outbox_entries = 0;
    std::uint64_t audit_records = 0;
    bool audit_ok = false;
    /// One TuneReport JSON (or {chamber, loop, error}) per tuning run, in completion order.
    nlohmann::json tuning = nlohmann::json::array();
};

nlohmann::json to_json(const RunSummary& s);

/// Every component of the stack in one process, joined by real sockets:
/// register server, poller, MQTT broker and clients, historian HTTP API.
class Facility {
public:
    explicit Facility(ScenarioConfig config);
    ~Facility();
    Facility(const Facility&) = delete;
    Facility& operator=(const Facility&) = delete;

    /// Runs until duration_s (or until stop() when `forever`). Throws plant::SimulationFault.
    RunSummary run(bool forever = false);
    void stop() { stop_requested_ = true; }

    std::uint16_t regmap_port() const;
    std::uint16_t mqtt_port() const;
    std::uint16_t http_port() const;
    const ScenarioConfig& config() const { return config_; }
    historian::SampleStore& store();
    supervisory::AlarmManager& alarms();
    ChamberTwin& twin(const std::string& chamber);
    double sim_time() const { return sim_time_.load(); }

    /// Queues a tuning run that the simulation thread drives in lockstep with everything else.
    /// Throws std::out_of_range for chambers not in the scenario, std::logic_error when one is running.
    std::string request_tuning(const std::string& chamber, control::LoopKind kind);

    /// Lets tests run code between ticks on the simulation thread.
    void on_tick(std::function<void(double sim_s)> fn) { tick_hook_ = std::move(fn); }

    struct Impl;

private:
    ScenarioConfig config_;
    std::unique_ptr<Impl> impl_;
    std::atomic<bool> stop_requested_{false};
    std::atomic<double> sim_time_{0.0};
    std::function<void(double)> tick_hook_;
};

/// Per-chamber post-run statistics from the stored samples. A sample is in band when every sensor
/// is within tolerance of the setpoint the sample itself carries. Settling is the start of the first
/// in-band streak lasting settle_hold_s.
ChamberSummary summarize(const std::string& chamber, const std::vector<gateway::TelemetrySample>& samples,
                         double tol_t, double tol_rh, std::int64_t start_ms, double settle_hold_s);

}  // namespace chamber::facility
