// Acceptance suite: one PASS/FAIL line per criterion.
//
//   restopo_acceptance                 run every criterion
//   restopo_acceptance --criterion 4   run one
//
// Exit status is 0 iff every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "restopo/experiments.hpp"
#include "restopo/linalg.hpp"
#include "restopo/oracles.hpp"

using namespace restopo;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds, pinned.
constexpr int kSeeds = 3;
constexpr double kLinearFit = 0.99;
constexpr double kPowerFit = 0.95;
constexpr double kPowerLo = 1.5, kPowerHi = 3.0;
constexpr double kSecondsPerSeed = 60.0;
constexpr double kLbSlack = 1e-2;
constexpr double kOracleRel = 1e-6;
constexpr double kUbSlack = 1.05;
constexpr double kUbLambda = 0.5;
constexpr double kFdRel = 1e-6;
constexpr int kFdConfigs = 50;
constexpr int kCoeffSets = 1000;
constexpr double kNormTol = 1e-12;
constexpr double kDriftLo = 1.6, kDriftHi = 2.4;
constexpr double kAncreFactor = 2.0;
constexpr double kSuppression = 0.3;

struct Outcome {
    bool pass = true;
    std::string detail;

    void fail(const std::string& why) {
        pass = false;
        note(why);
    }
    void note(const std::string& s) {
        if (!detail.empty()) detail += "; ";
        detail += s;
    }
};

std::string fmt(double v, int sig = 4) { return format_number(v, sig); }

std::string it_str(const std::optional<long>& it) { return it ? std::to_string(*it) : "inf"; }

// Preset runs are shared between criteria within one process.
const RunRecord& preset_run(Preset p, std::uint64_t seed) {
    static std::map<std::pair<Preset, std::uint64_t>, RunRecord> cache;
    auto key = std::make_pair(p, seed);
    auto it = cache.find(key);
    if (it == cache.end()) {
        ExperimentConfig c = preset_config(p);
        c.seed = seed;
        it = cache.emplace(key, execute(c, 0)).first;
    }
    return it->second;
}

Outcome rate_separation() {
    Outcome o;
    for (int seed = 1; seed <= kSeeds; ++seed) {
        ExperimentConfig c = preset_config(Preset::topo_3layer);
        c.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();
        const RunRecord rec = execute(c, 1);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto& lin = rec.curve("0:2").verdict;
        const auto& sub = rec.curve("0:1").verdict;
        const std::string s = "seed " + std::to_string(seed);
        if (!lin || lin->kind != RateKind::linear || lin->fit_quality < kLinearFit)
            o.fail(s + " 0:2 not linear with R^2 >= 0.99");
        if (!sub || sub->kind != RateKind::sublinear || sub->fit_quality < kPowerFit ||
            sub->rate_or_power < kPowerLo || sub->rate_or_power > kPowerHi)
            o.fail(s + " 0:1 not sublinear with power in [1.5, 3] and R^2 >= 0.95");
        if (secs >= kSecondsPerSeed) o.fail(s + " took " + fmt(secs) + " s");
        if (lin && sub)
            o.note(s + ": 0:2 rate " + fmt(lin->rate_or_power) + " R2 " + fmt(lin->fit_quality, 6) + ", 0:1 power " +
                   fmt(sub->rate_or_power) + " R2 " + fmt(sub->fit_quality, 6) + ", " + fmt(secs, 3) + " s");
    }
    return o;
}

Outcome lower_bound_envelope() {
    Outcome o;
    const ExperimentConfig cfg = preset_config(Preset::lb_witness);
    const LbWitness wit = lb_witness_init(cfg.d, cfg.rank_a, cfg.seed, cfg.n);
    TrainState s = wit.state;
    std::vector<std::vector<double>> w, u, v;  // [sample][coord]
    GfOptions g;
    g.dt = 1e-4;
    g.t_end = 50.0;
    g.method = cfg.optimizer == Optimizer::gf_rk4 ? GfMethod::rk4 : GfMethod::euler;
    g.record_every = cfg.record_every;
    g.observer = [&](const TrainState& st, double) {
        std::vector<double> a(cfg.d), b(cfg.d), c(cfg.d);
        for (std::size_t i = 0; i < cfg.d; ++i) {
            a[i] = st.weights[0](i, i) + 1.0;
            b[i] = st.weights[1](i, i);
            c[i] = st.weights[2](i, i);
        }
        w.push_back(a);
        u.push_back(b);
        v.push_back(c);
    };
    const Trajectory tr = integrate_gf(s, g);
    const DiagTrajectory ref = diag_integrate(wit.diag, g.dt, g.t_end, g.record_every);

    double worst_env = INFINITY;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const double env = lower_bound_curve(wit.a_d0, tr.times[k]) * (1.0 - kLbSlack);
        worst_env = std::min(worst_env, tr.losses[k] / env - 1.0);
        if (tr.losses[k] < env) {
            o.fail("envelope violated at t=" + fmt(tr.times[k]));
            break;
        }
    }
    double worst_rel = 0.0;
    if (ref.size() != w.size()) {
        o.fail("oracle grid differs");
    } else {
        auto rel = [](double x, double r) { return std::abs(x - r) / std::max(std::abs(r), 1e-12); };
        for (std::size_t k = 0; k < ref.size(); ++k)
            for (std::size_t i = 0; i < cfg.d; ++i)
                worst_rel = std::max({worst_rel, rel(w[k][i], ref.w[i][k]), rel(u[k][i], ref.u[i][k]),
                                      rel(v[k][i], ref.v[i][k])});
        if (worst_rel > kOracleRel) o.fail("diagonal oracle mismatch " + fmt(worst_rel));
    }
    o.note("min L/envelope - 1 = " + fmt(worst_env) + ", max oracle rel err = " + fmt(worst_rel) + ", integrator " +
           to_string(g.method));
    return o;
}

Outcome upper_bound_envelope() {
    Outcome o;
    const ExperimentConfig cfg = preset_config(Preset::ub_witness);
    const UbWitness wit = ub_witness_init(cfg.d, kUbLambda, cfg.seed, cfg.n);
    double init_max = 0.0;
    for (const auto& w : wit.state.weights.layers) init_max = std::max(init_max, frobenius_norm(w));
    if (init_max > wit.delta.used) o.fail("initialisation exceeds delta");

    TrainState s = wit.state;
    GfOptions g;
    g.dt = 1e-3;
    g.t_end = 20.0;
    g.method = GfMethod::euler;
    g.record_every = 10;
    g.channels.spectral_w1w2 = true;
    const Trajectory tr = integrate_gf(s, g);
    const double g2 = 2.0 * (1.0 - kUbLambda) * (1.0 - kUbLambda);
    double worst = INFINITY, spec = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const double env = wit.l0 * std::exp(-g2 * tr.times[k]) * kUbSlack;
        worst = std::min(worst, 1.0 - tr.losses[k] / env);
        if (tr.losses[k] > env) o.fail("envelope violated at t=" + fmt(tr.times[k]));
        spec = std::max(spec, tr.spec_w1w2[k]);
    }
    if (!(spec < kUbLambda)) o.fail("spectral norm of W2 W1 reached " + fmt(spec));
    o.note("L0 " + fmt(wit.l0) + ", delta " + fmt(wit.delta.used) + ", init max " + fmt(init_max) +
           ", min slack " + fmt(worst) + ", max ||W2W1||_2 " + fmt(spec));
    return o;
}

Outcome gradient_oracle() {
    Outcome o;
    const std::size_t dims[] = {2, 4, 8};
    double worst = 0.0, worst_rich = 0.0, smallest_bad = INFINITY;
    std::size_t coords = 0, bad_total = 0;
    int fixed = 0, in = 0, out = 0, tanh = 0;
    for (int idx = 0; idx < kFdConfigs; ++idx) {
        const int K = 2 + idx % 4;
        const std::size_t d = dims[(idx / 4) % 3];
        const std::uint64_t seed = 1000 + idx;
        SplitMix64 rng(seed);
        TrainState s;
        Layout layout;
        switch (idx % 3) {
            case 0: {
                const auto all = enumerate_topologies(K, 1 + idx % 2);
                layout = all[rng.next_u64() % all.size()];
                ++fixed;
                break;
            }
            default: {
                const auto mode = idx % 3 == 1 ? Normalization::ingoing : Normalization::outgoing;
                AncreParams a = AncreParams::uniform(K, mode, kDefaultTemperature, (idx / 3) % 2 == 0);
                for (auto [i, j] : a.raw.pairs()) a.raw.at(i, j) = rng.uniform(-0.2, 0.2);
                layout = a;
                ++(mode == Normalization::ingoing ? in : out);
            }
        }
        s.layout = layout;
        for (int k = 0; k < K; ++k)
            s.weights.layers.push_back(random_gaussian(d, d, rng, 1.0 / std::sqrt(static_cast<double>(d))));
        s.x = random_orthogonal_data(d, 2 * d, derive_seed(seed, 1));
        s.y = random_gaussian(d, 2 * d, rng, 0.5);
        s.act = (idx / 2) % 2 ? Nonlinearity::tanh : Nonlinearity::none;
        tanh += s.act == Nonlinearity::tanh;

        const auto fd = fd_gradient(s, 1e-6);
        const auto an = gradient_vector(backward(s, forward(s).trace));
        if (!fd.flagged.empty()) o.fail("config " + std::to_string(idx) + " has non-finite evaluations");
        // Informational: Richardson-extrapolated differences, free of the
        // round-off that limits eps = 1e-6 on small coordinates.
        const auto coarse = fd_gradient(s, 1e-3).gradient, fine = fd_gradient(s, 5e-4).gradient;
        int bad = 0;
        for (std::size_t i = 0; i < an.size(); ++i) {
            const double e = relative_error(an[i], fd.gradient[i]);
            worst = std::max(worst, e);
            worst_rich = std::max(worst_rich, relative_error(an[i], (4.0 * fine[i] - coarse[i]) / 3.0));
            if (e > kFdRel) {
                ++bad;
                smallest_bad = std::min(smallest_bad, std::abs(an[i]));
            }
        }
        coords += an.size();
        bad_total += bad;
        if (bad)
            o.fail("config " + std::to_string(idx) + " (K=" + std::to_string(K) + ", d=" + std::to_string(d) + ", " +
                   layout_name(layout) + ") has " + std::to_string(bad) + " coordinates above tolerance");
    }
    o.note(std::to_string(kFdConfigs) + " configs (" + std::to_string(fixed) + " fixed, " + std::to_string(in) +
           " ingoing, " + std::to_string(out) + " outgoing, " + std::to_string(tanh) + " tanh), " +
           std::to_string(bad_total) + "/" + std::to_string(coords) + " coordinates above tolerance, max rel err " +
           fmt(worst) + (bad_total ? ", smallest failing |g| " + fmt(smallest_bad) : std::string()) +
           ", max rel err vs extrapolated differences " + fmt(worst_rich));
    return o;
}

Outcome normalization() {
    Outcome o;
    const double taus[] = {1e-3, 0.1, 10.0};
    SplitMix64 rng(2024);
    double worst_sum = 0.0, worst_shift = 0.0;
    for (int n = 0; n < kCoeffSets; ++n) {
        const double tau = taus[n % 3];
        const auto mode = (n / 3) % 2 ? Normalization::outgoing : Normalization::ingoing;
        const int K = 2 + (n / 6) % 5;
        AncreParams a = AncreParams::uniform(K, mode, tau);
        for (auto [i, j] : a.raw.pairs()) a.raw.at(i, j) = rng.uniform(-1.0, 1.0);
        const CoeffMap p = normalize(a);
        AncreParams shifted = a;
        const auto groups = normalization_groups(K, mode);
        for (const auto& g : groups) {
            const double c = rng.uniform(-1.0, 1.0);
            for (auto [i, j] : g) shifted.raw.at(i, j) += c;
        }
        const CoeffMap q = normalize(shifted);
        for (const auto& g : groups) {
            double sum = 0.0;
            for (auto [i, j] : g) {
                sum += p.at(i, j);
                worst_shift = std::max(worst_shift, std::abs(p.at(i, j) - q.at(i, j)));
            }
            worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        }
    }
    if (worst_sum > kNormTol) o.fail("group sum off by " + fmt(worst_sum));
    if (worst_shift > kNormTol) o.fail("shift changed p by " + fmt(worst_shift));
    o.note(std::to_string(kCoeffSets) + " sets, max |sum-1| " + fmt(worst_sum) + ", max shift change " +
           fmt(worst_shift));
    return o;
}

Outcome conservation() {
    Outcome o;
    const ExperimentConfig cfg = preset_config(Preset::ub_witness);
    const UbWitness wit = ub_witness_init(cfg.d, cfg.lambda, cfg.seed, cfg.n);
    auto drift = [&](double dt) {
        TrainState s = wit.state;
        GfOptions g;
        g.dt = dt;
        g.t_end = cfg.t_end;
        g.method = GfMethod::euler;
        g.record_every = 10;
        g.channels.balance_gap = true;
        return balance_drift(integrate_gf(s, g));
    };
    for (double dt : {2e-3, 1e-3, 5e-4}) {
        const double r = drift(dt) / drift(dt / 2);
        if (r < kDriftLo || r > kDriftHi) o.fail("dt " + fmt(dt) + " ratio " + fmt(r));
        o.note("dt " + fmt(dt) + ": ratio " + fmt(r, 5));
    }
    return o;
}

Outcome ancre_near_optimal() {
    Outcome o;
    for (Preset p : {Preset::topo_3layer, Preset::topo_4layer})
        for (int seed = 1; seed <= kSeeds; ++seed) {
            const RunRecord& rec = preset_run(p, seed);
            std::optional<long> best;
            std::string best_name;
            for (const auto& c : rec.curves) {
                if (c.name == "ancre") continue;
                const auto it = c.iterations_to[2];
                if (it && (!best || *it < *best)) {
                    best = it;
                    best_name = c.name;
                }
            }
            const CurveResult& a = rec.curve("ancre");
            const auto ait = a.iterations_to[2];
            const std::string s = to_string(p) + " seed " + std::to_string(seed);
            if (!best || !ait || static_cast<double>(*ait) > kAncreFactor * static_cast<double>(*best))
                o.fail(s + ": ancre " + it_str(ait) + " vs best " + it_str(best));
            if (!a.verdict || a.verdict->kind != RateKind::linear) o.fail(s + ": ancre not linear");
            o.note(s + ": ancre " + it_str(ait) + ", best " + best_name + " " + it_str(best));
        }
    return o;
}

Outcome depth_slowdown() {
    Outcome o;
    for (int seed = 1; seed <= kSeeds; ++seed) {
        const RunRecord& rec = preset_run(Preset::depth_sweep, seed);
        std::vector<std::optional<long>> its;
        for (const char* k : {"K2", "K3", "K4"}) its.push_back(rec.curve(k).iterations_to[1]);
        const bool ok = its[0] && its[1] && its[2] && *its[0] < *its[1] && *its[1] < *its[2];
        const std::string s =
            "seed " + std::to_string(seed) + ": " + it_str(its[0]) + " < " + it_str(its[1]) + " < " + it_str(its[2]);
        if (!ok)
            o.fail(s);
        else
            o.note(s);
    }
    return o;
}

Outcome deeper_extension() {
    Outcome o;
    for (int seed = 1; seed <= kSeeds; ++seed) {
        const RunRecord& rec = preset_run(Preset::kdeep_extension, seed);
        const auto& lin = rec.curve("K5_0:4").verdict;
        const auto& sub = rec.curve("K5_0:1").verdict;
        const std::string s = "seed " + std::to_string(seed);
        if (!lin || lin->kind != RateKind::linear || lin->fit_quality < kLinearFit)
            o.fail(s + " 0:4 not linear with R^2 >= 0.99");
        if (!sub || sub->kind != RateKind::sublinear || sub->fit_quality < kPowerFit ||
            sub->rate_or_power < kPowerLo || sub->rate_or_power > kPowerHi)
            o.fail(s + " 0:1 not sublinear with power in [1.5, 3] and R^2 >= 0.95");
        if (lin && sub)
            o.note(s + ": 0:4 " + to_string(lin->kind) + " rate " + fmt(lin->rate_or_power) + ", 0:1 " +
                   to_string(sub->kind) + " power " + fmt(sub->rate_or_power) + " R2 " + fmt(sub->fit_quality, 6));
    }
    return o;
}

Outcome suppression() {
    Outcome o;
    for (int seed = 1; seed <= kSeeds; ++seed) {
        const RunRecord& rec = preset_run(Preset::ancre_lnn, seed);
        if (!rec.heatmap) {
            o.fail("no heatmap");
            continue;
        }
        const Matrix& h = *rec.heatmap;
        double row_max = -INFINITY;
        for (int i = 0; i < 3; ++i) row_max = std::max(row_max, h(3, i));
        const double g03 = row_max - h(3, 0), g23 = row_max - h(3, 2);
        const std::string s = "seed " + std::to_string(seed) + ": 0:3 " + fmt(h(3, 0)) + ", 2:3 " + fmt(h(3, 2)) +
                              ", row max " + fmt(row_max);
        if (!(g03 >= kSuppression) || !(g23 >= kSuppression))
            o.fail(s);
        else
            o.note(s);
    }
    return o;
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (e.path().extension() != ".csv" || name == "heatmap.csv") continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        out[name] = ss.str();
    }
    return out;
}

Outcome determinism() {
    Outcome o;
    const fs::path root = fs::temp_directory_path() / "restopo_acceptance_determinism";
    fs::remove_all(root);
    std::size_t files = 0;
    for (Preset p : all_presets()) {
        if (p == Preset::custom) continue;
        std::map<std::string, std::string> seen[2];
        for (int r = 0; r < 2; ++r) {
            ExperimentConfig c = preset_config(p);
            c.output_dir = (root / std::to_string(r)).string();
            seen[r] = csv_files(run(c, r == 0 ? 0 : 1).directory);
        }
        if (seen[0].empty() || seen[0] != seen[1]) o.fail(to_string(p) + " trajectories differ");
        files += seen[0].size();
    }
    fs::remove_all(root);
    o.note(std::to_string(files) + " CSV files compared across two runs");
    return o;
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    int only = 0;
    app.add_option("--criterion", only, "Run a single criterion (1-11)")->check(CLI::Range(1, 11));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all = {
        {1, "rate separation", rate_separation},
        {2, "lower-bound envelope", lower_bound_envelope},
        {3, "upper-bound envelope", upper_bound_envelope},
        {4, "gradient oracle", gradient_oracle},
        {5, "normalization", normalization},
        {6, "conservation", conservation},
        {7, "ancre near-optimality", ancre_near_optimal},
        {8, "depth slowdown", depth_slowdown},
        {9, "K=5 extension", deeper_extension},
        {10, "suppression pattern", suppression},
        {11, "determinism", determinism},
    };
    int failed = 0;
    for (const auto& c : all) {
        if (only && c.id != only) continue;
        Outcome r;
        try {
            r = c.check();
        } catch (const std::exception& e) {
            r.fail(std::string("error: ") + e.what());
        }
        std::printf("[%s] %2d %s: %s\n", r.pass ? "PASS" : "FAIL", c.id, c.name, r.detail.c_str());
        std::fflush(stdout);
        failed += !r.pass;
    }
    return failed ? 1 : 0;
}
