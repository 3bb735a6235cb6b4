#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "restopo/ancre.hpp"
#include "restopo/network.hpp"

namespace restopo {

inline constexpr double kDivergenceThreshold = 1e9;
// Thresholds tracked exactly (every step) for iterations-to-threshold reports.
inline constexpr double kTrackedThresholds[] = {1e-2, 1e-4, 1e-6, 1e-8};

struct Trajectory {
    std::vector<double> times;
    std::vector<long> iters;
    std::vector<double> losses;
    std::vector<std::vector<double>> fro_norms;  // [layer][sample]
    std::vector<double> spec_w1w2;               // ||W_2 W_1||_2, when recorded
    std::vector<double> balance_gap;             // ||W_1||_F^2 - ||W_2||_F^2, when recorded
    // Extra named columns appended to the CSV (bound envelopes and the like).
    std::vector<std::pair<std::string, std::vector<double>>> extra;
    std::vector<CoeffMap> coeff_snapshots;  // normalised p, when recorded

    // First step index at which the loss was <= each tracked threshold.
    std::vector<std::optional<long>> first_below =
        std::vector<std::optional<long>>(std::size(kTrackedThresholds));

    bool diverged = false;
    std::string stop_reason;  // "completed", "loss_floor", "diverged"

    std::size_t size() const { return times.size(); }
    void validate() const;
    // Exact when `threshold` is tracked, else the first recorded sample.
    std::optional<long> iterations_to(double threshold) const;
    void add_column(std::string name, std::vector<double> values);
};

struct RecordChannels {
    bool spectral_w1w2 = false;
    bool balance_gap = false;
    bool coefficients = false;
};

// Called at every recorded sample with the state and its time stamp.
using RecordObserver = std::function<void(const TrainState&, double)>;

struct GdOptions {
    double lr = 1e-2;
    std::optional<double> coeff_lr;  // defaults to lr
    long iters = 1000;
    int record_every = 10;
    long dense_steps = 0;     // additionally record every step below this index
    double loss_floor = 0.0;  // stop once loss <= floor; 0 disables
    RecordChannels channels;
    RecordObserver observer;
};

enum class GfMethod { euler, rk4 };
std::string to_string(GfMethod m);

struct GfOptions {
    double dt = 1e-3;
    double t_end = 1.0;
    GfMethod method = GfMethod::euler;
    int record_every = 10;
    long dense_steps = 0;
    double coeff_rate = 1.0;  // dc/dt = -coeff_rate * dL/dc
    double loss_floor = 0.0;
    RecordChannels channels;
    RecordObserver observer;
};

enum class StepStatus { ok, non_finite };

// One gradient step on every parameter. On a non-finite gradient or update the
// state is left untouched and non_finite is returned.
StepStatus gd_step(TrainState& state, double lr, std::optional<double> coeff_lr = std::nullopt);

// Runs GD, recording every `record_every` steps plus the last one. Time stamps
// are iteration * lr.
Trajectory train_gd(TrainState& state, const GdOptions& opts);

// Integrates dtheta/dt = -grad L(theta) over every parameter.
Trajectory integrate_gf(TrainState& state, const GfOptions& opts);

enum class RateKind { linear, sublinear, diverged, stalled };
std::string to_string(RateKind k);

struct RateVerdict {
    RateKind kind = RateKind::stalled;
    double rate_or_power = 0.0;  // -slope of the winning fit
    double fit_quality = 0.0;    // R^2 of the winning fit
    double linear_r2 = 0.0;
    double power_r2 = 0.0;
    std::size_t window = 0;
    bool zero_clamped = false;  // some loss was 0 and got clamped to 1e-300
};

inline constexpr std::size_t kRateDiscard = 10;
inline constexpr std::size_t kRateMinWindow = 20;

// Fits log L against t and against log t on the tail window (the last
// `tail_fraction` of the samples left after dropping the first 10) and keeps
// the better R^2.
RateVerdict classify_rate(const Trajectory& traj, double tail_fraction = 0.5);

// max_t |gap(t) - gap(0)| over the balance_gap channel.
double balance_drift(const Trajectory& traj);

// CSV: t,iter,loss,fro_w1..fro_wK[,spec_w1w2][,balance_gap][,extra...], %.12g.
std::string trajectory_csv(const Trajectory& traj);
// t,iter,p_i_j... for the recorded coefficient snapshots.
std::string coefficients_csv(const Trajectory& traj);

std::string format_number(double v, int significant = 12);

}  // namespace restopo
