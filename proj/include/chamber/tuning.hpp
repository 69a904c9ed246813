#pragma once

#include "chamber/control.hpp"

#include <deque>
#include <stdexcept>
#include <vector>

namespace chamber::control {

class TuningFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Plant under test as seen by the tuner: hold an output for one sample, read the process value.
class TuningPlant {
public:
    virtual ~TuningPlant() = default;
    virtual double sample_time() const = 0;
    virtual void apply(double u) = 0;
    virtual void advance() = 0;
    virtual double read_pv() = 0;
};

/// First-order-plus-dead-time model y' = (K u(t - L) - y) / tau.
struct FopdtModel {
    double gain = 0.0;
    double tau_s = 0.0;
    double dead_time_s = 0.0;
};

/// Exactly discretised FOPDT process, useful as a synthetic tuning target.
class FopdtPlant final : public TuningPlant {
public:
    FopdtPlant(FopdtModel model, double dt_s, double y0 = 0.0, double u0 = 0.0);

    double sample_time() const override { return dt_; }
    void apply(double u) override { u_ = u; }
    void advance() override;
    double read_pv() override { return y_; }
    double time() const { return t_; }

private:
    FopdtModel model_;
    double dt_;
    double y_;
    double u_;
    double t_ = 0.0;
    std::deque<double> delay_;
};

struct PretuneOptions {
    double u0 = 0.0;            ///< output held before and around the step
    double step = 0.3;          ///< step amplitude in output units
    double baseline_s = 30.0;   ///< averaging window before the step
    double window_s = 60.0;     ///< steady-state detection window
    double settle_rel = 0.001;  ///< steady when successive window means differ by < settle_rel * response
    double max_duration_s = 6 * 3600.0;
    double min_response = 1e-6; ///< |delta y| below this counts as no response
    double max_excursion = 1e300;
};

struct PretuneResult {
    FopdtModel model;
    PidGains gains;
    double t28_s = 0.0;
    double t63_s = 0.0;
};

/// Open-loop step identification (two-point 28.3 % / 63.2 % method) followed by
/// Chien-Hrones-Reswick 0 % overshoot setpoint-response PID rules.
PretuneResult pretune(TuningPlant& plant, const PretuneOptions& options, const PidGains& limits = {});

/// CHR 0 % overshoot (setpoint) PID gains for an FOPDT model.
PidGains chr_gains(const FopdtModel& model, const PidGains& limits);

struct FinetuneOptions {
    double setpoint = 0.0;
    double bias = 0.0;          ///< relay centre output
    double amplitude = 0.1;     ///< relay half-swing d
    double hysteresis = 0.0;    ///< switching band epsilon around the setpoint
    int discard_cycles = 2;
    int measure_cycles = 4;
    double timeout_s = 4 * 3600.0;
};

struct FinetuneResult {
    double ultimate_gain = 0.0;   ///< K_u = 4 d / (pi a)
    double ultimate_period_s = 0.0;
    double amplitude = 0.0;       ///< a, half peak-to-peak of the process value
    double mean_pv = 0.0;
    PidGains gains;
};

/// Relay-feedback experiment around the setpoint; Ziegler-Nichols PID from (K_u, P_u).
FinetuneResult finetune(TuningPlant& plant, const FinetuneOptions& options, const PidGains& base);

/// Classic Ziegler-Nichols PID rule.
PidGains ziegler_nichols(double ku, double pu, const PidGains& limits);

}  // namespace chamber::control
