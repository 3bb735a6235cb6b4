#pragma once

// Experiment configuration, presets, run directories and reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "restopo/ancre.hpp"
#include "restopo/dynamics.hpp"
#include "restopo/network.hpp"

namespace restopo {

inline constexpr const char* kVersion = "0.1.0";

enum class Preset { depth_sweep, topo_3layer, topo_4layer, ancre_lnn, lb_witness, ub_witness, kdeep_extension, custom };
enum class Optimizer { gd, gf_euler, gf_rk4 };
enum class InitKind { gaussian, orthogonal };

std::string to_string(Preset p);
std::string to_string(Optimizer o);
std::string to_string(InitKind k);
Preset parse_preset(std::string_view text);
Optimizer parse_optimizer(std::string_view text);
InitKind parse_init_kind(std::string_view text);
const std::vector<Preset>& all_presets();

// Thrown for malformed configuration; names the offending field.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& field, const std::string& message)
        : std::invalid_argument(field + ": " + message), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

struct AncreConfig {
    Normalization mode = Normalization::ingoing;
    double temperature = kDefaultTemperature;
    bool trunk = true;
    double coeff_lr_multiplier = 1.0;  // lr_c = multiplier * lr
};

struct InitConfig {
    InitKind kind = InitKind::gaussian;
    // gaussian: entries ~ N(0, (scale/sqrt(d))^2); orthogonal: scale * Q.
    double scale = 0.01;
};

struct ExperimentConfig {
    Preset preset = Preset::custom;
    std::size_t d = 8;
    std::size_t n = 16;
    int K = 3;
    std::string topology = "none";  // custom runs without `ancre`
    std::optional<AncreConfig> ancre;
    Optimizer optimizer = Optimizer::gd;
    std::vector<double> lr = {1e-2};  // more than one value means sweep and keep the best
    long iters = 1000;
    double dt = 1e-3;
    double t_end = 1.0;
    int record_every = 10;
    long dense_steps = 0;
    std::uint64_t seed = 1;
    Nonlinearity nonlinearity = Nonlinearity::none;
    InitConfig init;
    std::size_t target_rank = 0;  // 0 = full rank
    double loss_floor = 0.0;
    double lambda = 0.5;      // ub-witness
    std::size_t rank_a = 0;   // lb-witness, 0 = d - 1
    std::string output_dir;   // empty = $RESTOPO_OUT or "runs"

    void validate() const;
};

ExperimentConfig preset_config(Preset p);
// Strict: unknown keys are rejected. Keys not given keep the preset's values.
ExperimentConfig config_from_json(std::string_view text);
std::string config_to_json(const ExperimentConfig& cfg);

struct InvariantResult {
    std::string name;
    bool passed = false;
    double margin = 0.0;  // worst slack; negative when violated
    std::string detail;
};

struct SweepEntry {
    double lr = 0.0;
    std::optional<long> iters_to_1e6;
    double final_loss = 0.0;
    bool diverged = false;
};

struct CurveResult {
    std::string name;
    std::string file;  // trajectory CSV, relative to the run directory
    std::string coeff_file;
    double lr = 0.0;   // chosen step size (GD) or dt (GF)
    std::optional<RateVerdict> verdict;
    std::string verdict_note;  // set when no verdict could be computed
    std::vector<std::optional<long>> iterations_to;  // per kTrackedThresholds
    double final_loss = 0.0;
    double initial_loss = 0.0;
    std::string stop_reason;
    std::size_t points = 0;
    std::vector<SweepEntry> sweep;
    Trajectory trajectory;  // not serialised
    std::optional<AncreParams> final_ancre;
};

struct RunRecord {
    ExperimentConfig config;
    std::string data_fingerprint;
    std::vector<CurveResult> curves;
    std::vector<InvariantResult> invariants;
    // Scalar facts about witness constructions (L0, delta variants, ...).
    std::vector<std::pair<std::string, double>> facts;
    std::string heatmap_file;
    std::optional<Matrix> heatmap;
    double wall_clock_seconds = 0.0;
    std::string version = kVersion;
    std::filesystem::path directory;

    const CurveResult& curve(std::string_view name) const;
    bool invariants_pass() const;
};

// Runs every curve of the preset without touching the file system.
RunRecord execute(const ExperimentConfig& cfg, unsigned jobs = 0);
// execute() plus the run directory <out>/<preset>_<seed>/.
RunRecord run(const ExperimentConfig& cfg, unsigned jobs = 0);
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg);

std::string record_to_json(const RunRecord& rec);

struct CompareRow {
    std::string name;
    std::vector<std::optional<long>> iterations_to;
    std::vector<std::optional<double>> speedup;  // baseline / curve
};

struct CompareReport {
    std::string baseline;
    std::vector<double> thresholds;
    std::vector<CompareRow> rows;
    std::string to_text() const;
};

// Records must share d, n, seed and the data fingerprint.
CompareReport compare(const std::vector<std::string>& record_json_texts);

std::string curve_file_stem(std::string_view curve);

}  // namespace restopo
