#include "restopo/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "restopo/linalg.hpp"
#include "restopo/oracles.hpp"
#include "restopo/rng.hpp"

namespace restopo {

using ojson = nlohmann::ordered_json;

namespace {

const std::pair<Preset, const char*> kPresetNames[] = {
    {Preset::depth_sweep, "depth-sweep"},   {Preset::topo_3layer, "topo-3layer"},
    {Preset::topo_4layer, "topo-4layer"},   {Preset::ancre_lnn, "ancre-lnn"},
    {Preset::lb_witness, "lb-witness"},     {Preset::ub_witness, "ub-witness"},
    {Preset::kdeep_extension, "kdeep-extension"}, {Preset::custom, "custom"},
};

}  // namespace

std::string to_string(Preset p) {
    for (auto [v, name] : kPresetNames)
        if (v == p) return name;
    return "unknown";
}

Preset parse_preset(std::string_view text) {
    for (auto [v, name] : kPresetNames)
        if (text == name) return v;
    throw ConfigError("preset", "unknown preset '" + std::string(text) + "'");
}

const std::vector<Preset>& all_presets() {
    static const std::vector<Preset> presets = [] {
        std::vector<Preset> out;
        for (auto [v, name] : kPresetNames) out.push_back(v);
        return out;
    }();
    return presets;
}

std::string to_string(Optimizer o) {
    switch (o) {
        case Optimizer::gd: return "gd";
        case Optimizer::gf_euler: return "gf-euler";
        case Optimizer::gf_rk4: return "gf-rk4";
    }
    return "unknown";
}

Optimizer parse_optimizer(std::string_view text) {
    if (text == "gd") return Optimizer::gd;
    if (text == "gf-euler") return Optimizer::gf_euler;
    if (text == "gf-rk4") return Optimizer::gf_rk4;
    throw ConfigError("optimizer", "unknown optimizer '" + std::string(text) + "' (gd, gf-euler, gf-rk4)");
}

std::string to_string(InitKind k) { return k == InitKind::gaussian ? "gaussian" : "orthogonal"; }

InitKind parse_init_kind(std::string_view text) {
    if (text == "gaussian") return InitKind::gaussian;
    if (text == "orthogonal") return InitKind::orthogonal;
    throw ConfigError("init.kind", "unknown init kind '" + std::string(text) + "' (gaussian, orthogonal)");
}

void ExperimentConfig::validate() const {
    if (d < 1) throw ConfigError("d", "must be positive");
    if (n < 1) throw ConfigError("n", "must be positive");
    if (n < d) throw ConfigError("n", "must be >= d (" + std::to_string(d) + ") for whitened data");
    if (d > kMaxSvdDim) throw ConfigError("d", "must be <= " + std::to_string(kMaxSvdDim));
    if (K < 1) throw ConfigError("K", "must be positive");
    if (lr.empty()) throw ConfigError("lr", "needs at least one value");
    for (double v : lr)
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("lr", "values must be positive and finite");
    if (iters < 0) throw ConfigError("iters", "must be >= 0");
    if (!(dt > 0.0)) throw ConfigError("dt", "must be positive");
    if (!(t_end >= 0.0)) throw ConfigError("t_end", "must be >= 0");
    if (t_end > 0.0 && dt > t_end) throw ConfigError("dt", "must not exceed t_end");
    if (record_every < 1) throw ConfigError("record_every", "must be >= 1");
    if (dense_steps < 0) throw ConfigError("dense_steps", "must be >= 0");
    if (!(init.scale >= 0.0) || !std::isfinite(init.scale)) throw ConfigError("init.scale", "must be >= 0");
    if (target_rank > d) throw ConfigError("target.rank", "must be <= d");
    if (!(loss_floor >= 0.0)) throw ConfigError("loss_floor", "must be >= 0");
    if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("lambda", "must lie in (0, 1)");
    if (rank_a >= d && preset == Preset::lb_witness) throw ConfigError("rank_a", "must be < d");
    if (ancre) {
        if (!(ancre->temperature > 0.0) || !std::isfinite(ancre->temperature))
            throw ConfigError("ancre.temperature", "must be positive");
        if (!(ancre->coeff_lr_multiplier > 0.0)) throw ConfigError("ancre.coeff_lr_multiplier", "must be positive");
    }
    if (preset == Preset::custom && !ancre) {
        try {
            Topology::parse(K, topology);
        } catch (const std::exception& e) {
            throw ConfigError("topology", e.what());
        }
    }
    if (nonlinearity != Nonlinearity::none &&
        (preset == Preset::lb_witness || preset == Preset::ub_witness))
        throw ConfigError("nonlinearity", "witness presets are linear");
}

ExperimentConfig preset_config(Preset p) {
    ExperimentConfig c;
    c.preset = p;
    auto gd_preset = [&c](int K) {
        c.d = 8;
        c.n = 16;
        c.K = K;
        c.optimizer = Optimizer::gd;
        c.lr = {1e-2, 3e-2, 1e-1};
        c.iters = 20000;
        c.record_every = 20;
        c.dense_steps = 1000;
        c.init = {InitKind::orthogonal, 0.2};
        c.target_rank = 4;
        c.loss_floor = 1e-20;
    };
    switch (p) {
        case Preset::depth_sweep:
            gd_preset(3);
            c.target_rank = 0;
            break;
        case Preset::topo_3layer:
        case Preset::ancre_lnn:
            gd_preset(3);
            c.ancre = AncreConfig{Normalization::ingoing, kDefaultTemperature, true, 10.0};
            break;
        case Preset::topo_4layer:
            gd_preset(4);
            c.ancre = AncreConfig{Normalization::ingoing, kDefaultTemperature, true, 10.0};
            break;
        case Preset::kdeep_extension:
            gd_preset(5);
            c.init = {InitKind::orthogonal, 0.5};
            c.iters = 100000;
            c.record_every = 100;
            break;
        case Preset::lb_witness:
            c.d = 4;
            c.n = 8;
            c.optimizer = Optimizer::gf_rk4;
            c.dt = 1e-4;
            c.t_end = 50.0;
            c.record_every = 100;
            c.rank_a = 3;
            break;
        case Preset::ub_witness:
            c.d = 4;
            c.n = 8;
            c.optimizer = Optimizer::gf_euler;
            c.dt = 1e-3;
            c.t_end = 20.0;
            c.record_every = 10;
            c.lambda = 0.5;
            break;
        case Preset::custom: break;
    }
    return c;
}

namespace {

template <class T>
T get_as(const ojson& j, const std::string& field) {
    try {
        return j.get<T>();
    } catch (const std::exception&) {
        throw ConfigError(field, "has the wrong type");
    }
}

std::size_t get_count(const ojson& j, const std::string& field) {
    if (!j.is_number_integer() && !j.is_number_unsigned()) throw ConfigError(field, "must be an integer");
    const auto v = j.get<long long>();
    if (v < 0) throw ConfigError(field, "must be >= 0");
    return static_cast<std::size_t>(v);
}

double get_real(const ojson& j, const std::string& field) {
    if (!j.is_number()) throw ConfigError(field, "must be a number");
    return j.get<double>();
}

void check_keys(const ojson& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
    }
}

}  // namespace

ExperimentConfig config_from_json(std::string_view text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config", "top level must be an object");
    check_keys(j, "",
               {"preset", "d", "n", "K", "topology", "ancre", "optimizer", "lr", "iters", "dt", "t_end",
                "record_every", "dense_steps", "seed", "nonlinearity", "init", "target", "loss_floor", "lambda",
                "rank_a", "output_dir"});
    ExperimentConfig c = preset_config(
        j.contains("preset") ? parse_preset(get_as<std::string>(j["preset"], "preset")) : Preset::custom);
    if (j.contains("topology") && j.contains("ancre"))
        throw ConfigError("ancre", "give exactly one layout source: topology or ancre");

    if (j.contains("d")) c.d = get_count(j["d"], "d");
    if (j.contains("n")) c.n = get_count(j["n"], "n");
    if (j.contains("K")) c.K = static_cast<int>(get_count(j["K"], "K"));
    if (j.contains("topology")) {
        c.topology = get_as<std::string>(j["topology"], "topology");
        c.ancre.reset();
    }
    if (j.contains("ancre")) {
        const auto& a = j["ancre"];
        if (!a.is_object()) throw ConfigError("ancre", "must be an object");
        check_keys(a, "ancre", {"mode", "temperature", "trunk", "coeff_lr_multiplier"});
        AncreConfig ac = c.ancre.value_or(AncreConfig{});
        if (a.contains("mode")) {
            try {
                ac.mode = parse_normalization(get_as<std::string>(a["mode"], "ancre.mode"));
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                throw ConfigError("ancre.mode", e.what());
            }
        }
        if (a.contains("temperature")) ac.temperature = get_real(a["temperature"], "ancre.temperature");
        if (a.contains("trunk")) {
            const auto& t = a["trunk"];
            if (t.is_boolean())
                ac.trunk = t.get<bool>();
            else if (t.is_string() && (t == "on" || t == "off"))
                ac.trunk = t == "on";
            else
                throw ConfigError("ancre.trunk", "must be true/false or \"on\"/\"off\"");
        }
        if (a.contains("coeff_lr_multiplier"))
            ac.coeff_lr_multiplier = get_real(a["coeff_lr_multiplier"], "ancre.coeff_lr_multiplier");
        c.ancre = ac;
    }
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(get_as<std::string>(j["optimizer"], "optimizer"));
    if (j.contains("lr")) {
        const auto& l = j["lr"];
        c.lr.clear();
        if (l.is_array()) {
            for (const auto& v : l) c.lr.push_back(get_real(v, "lr"));
        } else {
            c.lr.push_back(get_real(l, "lr"));
        }
    }
    if (j.contains("iters")) c.iters = static_cast<long>(get_count(j["iters"], "iters"));
    if (j.contains("dt")) c.dt = get_real(j["dt"], "dt");
    if (j.contains("t_end")) c.t_end = get_real(j["t_end"], "t_end");
    if (j.contains("record_every")) c.record_every = static_cast<int>(get_count(j["record_every"], "record_every"));
    if (j.contains("dense_steps")) c.dense_steps = static_cast<long>(get_count(j["dense_steps"], "dense_steps"));
    if (j.contains("seed")) c.seed = get_count(j["seed"], "seed");
    if (j.contains("nonlinearity")) {
        try {
            c.nonlinearity = parse_nonlinearity(get_as<std::string>(j["nonlinearity"], "nonlinearity"));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError("nonlinearity", e.what());
        }
    }
    if (j.contains("init")) {
        const auto& in = j["init"];
        if (!in.is_object()) throw ConfigError("init", "must be an object");
        check_keys(in, "init", {"kind", "scale"});
        if (in.contains("kind")) c.init.kind = parse_init_kind(get_as<std::string>(in["kind"], "init.kind"));
        if (in.contains("scale")) c.init.scale = get_real(in["scale"], "init.scale");
    }
    if (j.contains("target")) {
        const auto& t = j["target"];
        if (!t.is_object()) throw ConfigError("target", "must be an object");
        check_keys(t, "target", {"rank"});
        if (t.contains("rank")) c.target_rank = get_count(t["rank"], "target.rank");
    }
    if (j.contains("loss_floor")) c.loss_floor = get_real(j["loss_floor"], "loss_floor");
    if (j.contains("lambda")) c.lambda = get_real(j["lambda"], "lambda");
    if (j.contains("rank_a")) c.rank_a = get_count(j["rank_a"], "rank_a");
    if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j["output_dir"], "output_dir");
    c.validate();
    return c;
}

namespace {

ojson config_json(const ExperimentConfig& c) {
    ojson j;
    j["preset"] = to_string(c.preset);
    j["d"] = c.d;
    j["n"] = c.n;
    j["K"] = c.K;
    if (c.ancre) {
        j["ancre"] = {{"mode", to_string(c.ancre->mode)},
                      {"temperature", c.ancre->temperature},
                      {"trunk", c.ancre->trunk},
                      {"coeff_lr_multiplier", c.ancre->coeff_lr_multiplier}};
    } else {
        j["topology"] = c.topology;
    }
    j["optimizer"] = to_string(c.optimizer);
    if (c.lr.size() == 1)
        j["lr"] = c.lr.front();
    else
        j["lr"] = c.lr;
    j["iters"] = c.iters;
    j["dt"] = c.dt;
    j["t_end"] = c.t_end;
    j["record_every"] = c.record_every;
    j["dense_steps"] = c.dense_steps;
    j["seed"] = c.seed;
    j["nonlinearity"] = to_string(c.nonlinearity);
    j["init"] = {{"kind", to_string(c.init.kind)}, {"scale", c.init.scale}};
    j["target"] = {{"rank", c.target_rank}};
    j["loss_floor"] = c.loss_floor;
    j["lambda"] = c.lambda;
    j["rank_a"] = c.rank_a;
    if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
    return j;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Problem data and curves

namespace {

struct Problem {
    Matrix x, y;
};

Problem regression_problem(const ExperimentConfig& c) {
    Problem p;
    p.x = random_orthogonal_data(c.d, c.n, derive_seed(c.seed, 1));
    SplitMix64 rng(derive_seed(c.seed, 2));
    const std::size_t r = c.target_rank == 0 ? c.d : c.target_rank;
    // A = B C with Gaussian factors; rank r almost surely.
    const Matrix b = random_gaussian(c.d, r, rng, 1.0 / std::sqrt(static_cast<double>(c.d)));
    const Matrix cc = random_gaussian(r, c.d, rng, 1.0 / std::sqrt(static_cast<double>(r)));
    p.y = matmul(matmul(b, cc), p.x);
    return p;
}

WeightStack initial_weights(const ExperimentConfig& c, int K) {
    SplitMix64 rng(derive_seed(c.seed, 100 + static_cast<std::uint64_t>(K)));
    WeightStack w;
    for (int k = 0; k < K; ++k) {
        if (c.init.kind == InitKind::gaussian)
            w.layers.push_back(random_gaussian(c.d, c.d, rng, c.init.scale / std::sqrt(static_cast<double>(c.d))));
        else
            w.layers.push_back(c.init.scale * random_orthogonal(c.d, rng));
    }
    return w;
}

std::string fingerprint(const Matrix& x, const Matrix& y) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const Matrix& m) {
        for (double v : m.data()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof v);
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 0x100000001b3ULL;
            }
        }
    };
    mix(x);
    mix(y);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct CurveSpec {
    std::string name;
    int K = 3;
    Layout layout;
    bool record_coeffs = false;
};

Layout ancre_layout(const ExperimentConfig& c, int K) {
    const AncreConfig ac = c.ancre.value_or(AncreConfig{});
    return AncreParams::uniform(K, ac.mode, ac.temperature, ac.trunk);
}

std::vector<CurveSpec> preset_curves(const ExperimentConfig& c) {
    std::vector<CurveSpec> out;
    switch (c.preset) {
        case Preset::depth_sweep:
            for (int K : {2, 3, 4}) out.push_back({"K" + std::to_string(K), K, Topology::plain(K)});
            break;
        case Preset::topo_3layer:
            for (const char* t : {"none", "cascaded", "0:1", "0:2"}) out.push_back({t, 3, Topology::parse(3, t)});
            out.push_back({"ancre", 3, ancre_layout(c, 3)});
            break;
        case Preset::topo_4layer:
            out.push_back({"cascaded", 4, Topology::cascaded(4)});
            out.push_back({"0:3", 4, Topology::single(4, 0, 3)});
            for (const auto& t : enumerate_topologies(4, 2)) out.push_back({t.to_string(), 4, t});
            out.push_back({"ancre", 4, ancre_layout(c, 4)});
            break;
        case Preset::ancre_lnn: out.push_back({"ancre", c.K, ancre_layout(c, c.K), true}); break;
        case Preset::kdeep_extension:
            for (int K : {4, 5}) {
                out.push_back({"K" + std::to_string(K) + "_0:1", K, Topology::single(K, 0, 1)});
                out.push_back({"K" + std::to_string(K) + "_0:" + std::to_string(K - 1), K, Topology::single(K, 0, K - 1)});
            }
            break;
        case Preset::custom:
            if (c.ancre)
                out.push_back({"ancre", c.K, ancre_layout(c, c.K), true});
            else
                out.push_back({Topology::parse(c.K, c.topology).to_string(), c.K, Topology::parse(c.K, c.topology)});
            break;
        default: break;
    }
    return out;
}

void finish_curve(CurveResult& r) {
    const Trajectory& t = r.trajectory;
    r.points = t.size();
    r.stop_reason = t.stop_reason;
    r.final_loss = t.losses.empty() ? std::numeric_limits<double>::quiet_NaN() : t.losses.back();
    r.initial_loss = t.losses.empty() ? std::numeric_limits<double>::quiet_NaN() : t.losses.front();
    r.iterations_to.assign(t.first_below.begin(), t.first_below.end());
    try {
        r.verdict = classify_rate(t);
    } catch (const std::invalid_argument& e) {
        r.verdict.reset();
        r.verdict_note = e.what();
    }
}

RecordChannels channels_for(const CurveSpec& spec) {
    RecordChannels ch;
    ch.coefficients = spec.record_coeffs;
    ch.spectral_w1w2 = spec.K == 3;
    return ch;
}

CurveResult run_curve(const ExperimentConfig& c, const Problem& prob, const CurveSpec& spec) {
    TrainState base;
    base.weights = initial_weights(c, spec.K);
    base.layout = spec.layout;
    base.x = prob.x;
    base.y = prob.y;
    base.act = c.nonlinearity;
    base.validate();
    const double mult = c.ancre ? c.ancre->coeff_lr_multiplier : 1.0;

    CurveResult best;
    best.name = spec.name;
    if (c.optimizer == Optimizer::gd) {
        bool have = false;
        auto key = [](const Trajectory& t) {
            const auto it6 = t.first_below[2];
            return std::make_tuple(t.diverged ? 1 : 0, it6 ? *it6 : std::numeric_limits<long>::max(),
                                   t.losses.empty() ? INFINITY : t.losses.back());
        };
        for (double lr : c.lr) {
            TrainState s = base;
            GdOptions o;
            o.lr = lr;
            o.coeff_lr = mult * lr;
            o.iters = c.iters;
            o.record_every = c.record_every;
            o.dense_steps = c.dense_steps;
            o.loss_floor = c.loss_floor;
            o.channels = channels_for(spec);
            Trajectory t = train_gd(s, o);
            best.sweep.push_back({lr, t.first_below[2], t.losses.empty() ? NAN : t.losses.back(), t.diverged});
            if (!have || key(t) < key(best.trajectory)) {
                best.trajectory = std::move(t);
                best.lr = lr;
                best.final_ancre = s.has_ancre() ? std::optional<AncreParams>(s.ancre()) : std::nullopt;
                have = true;
            }
        }
    } else {
        TrainState s = base;
        GfOptions o;
        o.dt = c.dt;
        o.t_end = c.t_end;
        o.method = c.optimizer == Optimizer::gf_euler ? GfMethod::euler : GfMethod::rk4;
        o.record_every = c.record_every;
        o.dense_steps = c.dense_steps;
        o.coeff_rate = mult;
        o.loss_floor = c.loss_floor;
        o.channels = channels_for(spec);
        best.trajectory = integrate_gf(s, o);
        best.lr = c.dt;
        best.final_ancre = s.has_ancre() ? std::optional<AncreParams>(s.ancre()) : std::nullopt;
    }
    finish_curve(best);
    return best;
}

std::vector<CurveResult> run_curves(const ExperimentConfig& c, const Problem& prob,
                                    const std::vector<CurveSpec>& specs, unsigned jobs) {
    std::vector<CurveResult> results(specs.size());
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min<unsigned>(jobs, static_cast<unsigned>(specs.size()));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < specs.size(); i = next++) {
            try {
                results[i] = run_curve(c, prob, specs[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return results;
}

// ---------------------------------------------------------------------------
// Witness presets

InvariantResult make_invariant(std::string name, double margin, std::string detail) {
    return {std::move(name), margin >= 0.0, margin, std::move(detail)};
}

std::string fmt(double v) { return format_number(v, 6); }

// Worst single-sample increase of the loss relative to tolerance * L.
InvariantResult loss_monotone(const Trajectory& t, double tol) {
    double margin = INFINITY;
    for (std::size_t i = 1; i < t.size(); ++i) {
        const double allowed = tol * t.losses[i - 1];
        margin = std::min(margin, allowed - (t.losses[i] - t.losses[i - 1]));
    }
    if (!std::isfinite(margin)) margin = 0.0;
    return make_invariant("loss non-increasing", margin, "max single-sample increase within " + fmt(tol) + " * L");
}

void run_lb_witness(const ExperimentConfig& c, RunRecord& rec) {
    const std::size_t rank_a = c.rank_a == 0 ? c.d - 1 : c.rank_a;
    LbWitness wit = lb_witness_init(c.d, rank_a, c.seed, c.n);
    rec.data_fingerprint = fingerprint(wit.state.x, wit.state.y);
    const std::size_t d = c.d, kd = d - 1;

    std::vector<Matrix> w1s, w2s, w3s;
    TrainState s = wit.state;
    CurveResult cr;
    cr.name = "witness";
    if (c.optimizer == Optimizer::gd) {
        GdOptions o;
        o.lr = c.lr.front();
        o.iters = c.iters;
        o.record_every = c.record_every;
        o.loss_floor = c.loss_floor;
        o.observer = [&](const TrainState& st, double) {
            w1s.push_back(st.weights[0]);
            w2s.push_back(st.weights[1]);
            w3s.push_back(st.weights[2]);
        };
        cr.trajectory = train_gd(s, o);
        cr.lr = o.lr;
    } else {
        GfOptions o;
        o.dt = c.dt;
        o.t_end = c.t_end;
        o.method = c.optimizer == Optimizer::gf_euler ? GfMethod::euler : GfMethod::rk4;
        o.record_every = c.record_every;
        o.loss_floor = c.loss_floor;
        o.observer = [&](const TrainState& st, double) {
            w1s.push_back(st.weights[0]);
            w2s.push_back(st.weights[1]);
            w3s.push_back(st.weights[2]);
        };
        cr.trajectory = integrate_gf(s, o);
        cr.lr = c.dt;
    }
    Trajectory& traj = cr.trajectory;

    std::vector<double> env;
    for (double t : traj.times) env.push_back(lower_bound_curve(wit.a_d0, t));
    traj.add_column("lb_env", env);

    // Lower-bound envelope.
    double env_margin = INFINITY;
    for (std::size_t i = 0; i < traj.size(); ++i)
        env_margin = std::min(env_margin, (traj.losses[i] - env[i] * (1.0 - 1e-2)) / env[i]);
    rec.invariants.push_back(make_invariant("lower-bound envelope", env_margin,
                                            "min over t of (L - 0.99*lb_env)/lb_env, a_d(0)=" + fmt(wit.a_d0)));

    // Diagonal oracle on the same grid.
    const double oracle_dt = c.optimizer == Optimizer::gd ? c.lr.front() : c.dt;
    const double oracle_t_end = c.optimizer == Optimizer::gd ? c.lr.front() * static_cast<double>(c.iters) : c.t_end;
    const DiagTrajectory oracle = diag_integrate(wit.diag, oracle_dt, oracle_t_end, c.record_every);
    const std::size_t m = std::min(oracle.size(), w1s.size());
    double max_rel = 0.0, max_off = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t i = 0; i < d; ++i) {
            const double full[3] = {w1s[k](i, i) + 1.0, w2s[k](i, i), w3s[k](i, i)};
            const double ref[3] = {oracle.w[i][k], oracle.u[i][k], oracle.v[i][k]};
            for (int q = 0; q < 3; ++q)
                max_rel = std::max(max_rel, std::abs(full[q] - ref[q]) / std::max(std::abs(ref[q]), 1e-12));
            for (std::size_t jj = 0; jj < d; ++jj)
                if (jj != i)
                    max_off = std::max({max_off, std::abs(w1s[k](i, jj)), std::abs(w2s[k](i, jj)),
                                        std::abs(w3s[k](i, jj))});
        }
    }
    rec.invariants.push_back(make_invariant("diagonal oracle match", 1e-6 - max_rel,
                                            "max relative error " + fmt(max_rel) + " over " + std::to_string(m) +
                                                " samples (limit 1e-06)"));
    rec.invariants.push_back(
        make_invariant("diagonal structure preserved", 1e-12 - max_off, "max |off-diagonal| " + fmt(max_off)));

    double sym = 0.0;
    for (std::size_t k = 0; k < w2s.size(); ++k) sym = std::max(sym, std::abs(w2s[k](kd, kd) - w3s[k](kd, kd)));
    rec.invariants.push_back(make_invariant("u_d = v_d symmetry", 1e-10 - sym, "max |u_d - v_d| " + fmt(sym)));

    double order = INFINITY, cube = INFINITY, a2 = INFINITY;
    for (std::size_t k = 0; k < oracle.size(); ++k) {
        const double w = oracle.w[kd][k], u = oracle.u[kd][k], v = oracle.v[kd][k], a = oracle.a[kd][k];
        order = std::min({order, u + 1e-9, w - u + 1e-9, w - v + 1e-9, 1.0 - w + 1e-9, 1e-9 - std::abs(u - v)});
        cube = std::min(cube, w - std::cbrt(a) + 1e-9);
        if (k > 0) {
            const double prev = oracle.a[kd][k - 1];
            a2 = std::min(a2, prev * prev - a * a + 1e-15);
        }
    }
    if (!std::isfinite(a2)) a2 = 0.0;
    rec.invariants.push_back(make_invariant("diagonal ordering 0 <= u_d = v_d <= w_d <= 1", order, "tolerance 1e-09"));
    rec.invariants.push_back(make_invariant("cube-root domination w_d >= a_d^(1/3)", cube, "tolerance 1e-09"));
    rec.invariants.push_back(make_invariant("a_d^2 non-increasing", a2, "oracle samples"));
    rec.invariants.push_back(loss_monotone(traj, 1e-10));

    rec.facts = {{"a_d0", wit.a_d0}, {"rank_a", static_cast<double>(rank_a)}};
    finish_curve(cr);
    rec.curves.push_back(std::move(cr));
}


Trajectory ub_run(const UbWitness& wit, const ExperimentConfig& c, double dt, bool full_channels) {
    TrainState s = wit.state;
    GfOptions o;
    o.dt = dt;
    o.t_end = c.t_end;
    o.method = c.optimizer == Optimizer::gf_rk4 ? GfMethod::rk4 : GfMethod::euler;
    o.record_every = full_channels ? c.record_every : 1;
    o.loss_floor = c.loss_floor;
    o.channels.balance_gap = true;
    o.channels.spectral_w1w2 = full_channels;
    return integrate_gf(s, o);
}

void run_ub_witness(const ExperimentConfig& c, RunRecord& rec) {
    const UbWitness wit = ub_witness_init(c.d, c.lambda, c.seed, c.n);
    rec.data_fingerprint = fingerprint(wit.state.x, wit.state.y);
    const double lambda = wit.lambda, l0 = wit.l0;

    CurveResult cr;
    cr.name = "witness";
    cr.lr = c.dt;
    cr.trajectory = ub_run(wit, c, c.dt, true);
    Trajectory& traj = cr.trajectory;
    std::vector<double> env;
    for (double t : traj.times) env.push_back(upper_bound_curve(l0, lambda, t));
    traj.add_column("ub_env", env);

    double env_margin = INFINITY;
    for (std::size_t i = 0; i < traj.size(); ++i)
        env_margin = std::min(env_margin, (1.05 * env[i] - traj.losses[i]) / env[i]);
    rec.invariants.push_back(
        make_invariant("upper-bound envelope", env_margin, "min over t of (1.05*ub_env - L)/ub_env"));

    double max_spec = 0.0;
    for (double v : traj.spec_w1w2) max_spec = std::max(max_spec, v);
    rec.invariants.push_back(make_invariant("spectral-norm containment", lambda - max_spec,
                                            "max ||W2 W1||_2 = " + fmt(max_spec) + " < lambda = " + fmt(lambda)));

    double max_init = 0.0;
    for (const auto& w : wit.state.weights.layers) max_init = std::max(max_init, frobenius_norm(w));
    rec.invariants.push_back(make_invariant("initialisation within delta", wit.delta.used - max_init,
                                            "max ||W_k(0)||_F = " + fmt(max_init) + ", delta_used = " +
                                                fmt(wit.delta.used)));

    const double w3_0 = traj.fro_norms[2].front();
    const double m = m_constant(lambda, l0, w3_0);
    const double p0 = traj.fro_norms[0].front() * traj.fro_norms[0].front() +
                      traj.fro_norms[1].front() * traj.fro_norms[1].front();
    double growth = INFINITY, w3cap = INFINITY;
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const double p = traj.fro_norms[0][i] * traj.fro_norms[0][i] + traj.fro_norms[1][i] * traj.fro_norms[1][i];
        const double cap = p0 * std::exp(m) * 1.05;
        growth = std::min(growth, (cap - p) / cap);
        w3cap = std::min(w3cap, w3_0 + std::sqrt(traj.times[i] * l0) + 1e-3 - traj.fro_norms[2][i]);
    }
    rec.invariants.push_back(make_invariant("product-norm growth cap", growth,
                                            "||W1||^2+||W2||^2 <= initial * e^M * 1.05, M = " + fmt(m)));
    rec.invariants.push_back(
        make_invariant("W3 norm growth", w3cap, "||W3(t)|| <= ||W3(0)|| + sqrt(t L0) + 1e-3"));
    rec.invariants.push_back(loss_monotone(traj, 1e-10));

    // O(dt) drift of the conserved balance gap.
    const double steps[] = {2.0 * c.dt, c.dt, 0.5 * c.dt, 0.25 * c.dt};
    double drift[4];
    for (int i = 0; i < 4; ++i)
        drift[i] = i == 1 ? balance_drift(traj) : balance_drift(ub_run(wit, c, steps[i], false));
    double ratio_margin = INFINITY;
    std::string detail = "drift";
    for (int i = 0; i < 4; ++i) detail += " " + fmt(drift[i]);
    detail += "; ratios";
    for (int i = 0; i < 3; ++i) {
        const double r = drift[i] / drift[i + 1];
        ratio_margin = std::min({ratio_margin, r - 1.6, 2.4 - r});
        detail += " " + fmt(r);
    }
    if (!std::isfinite(ratio_margin)) ratio_margin = -1.0;
    rec.invariants.push_back(make_invariant("balance drift halves with dt", ratio_margin, detail));

    rec.facts = {{"lambda", lambda},
                 {"L0", l0},
                 {"delta_statement", wit.delta.statement},
                 {"delta_proof", wit.delta.proof},
                 {"delta_used", wit.delta.used},
                 {"init_scale", wit.init_scale},
                 {"halvings", static_cast<double>(wit.halvings)},
                 {"M", m},
                 {"balance_drift", drift[1]}};
    finish_curve(cr);
    rec.curves.push_back(std::move(cr));
}

ojson optional_long(const std::optional<long>& v) { return v ? ojson(*v) : ojson(nullptr); }

ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

std::string threshold_key(double t) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.0e", t);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << body;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

const CurveResult& RunRecord::curve(std::string_view name) const {
    for (const auto& c : curves)
        if (c.name == name) return c;
    throw std::out_of_range("RunRecord: no curve named '" + std::string(name) + "'");
}

bool RunRecord::invariants_pass() const {
    return std::all_of(invariants.begin(), invariants.end(), [](const auto& i) { return i.passed; });
}

std::string curve_file_stem(std::string_view curve) {
    std::string out(curve);
    for (char& ch : out)
        if (ch == ':') ch = '_';
    return out;
}

RunRecord execute(const ExperimentConfig& cfg, unsigned jobs) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config = cfg;
    if (cfg.preset == Preset::lb_witness) {
        run_lb_witness(cfg, rec);
    } else if (cfg.preset == Preset::ub_witness) {
        run_ub_witness(cfg, rec);
    } else {
        const Problem prob = regression_problem(cfg);
        rec.data_fingerprint = fingerprint(prob.x, prob.y);
        rec.curves = run_curves(cfg, prob, preset_curves(cfg), jobs);
        if (cfg.preset == Preset::ancre_lnn) {
            const auto& a = rec.curve("ancre");
            if (a.final_ancre && a.final_ancre->mode == Normalization::ingoing) {
                rec.heatmap = heatmap(*a.final_ancre);
                rec.heatmap_file = "heatmap.csv";
            }
        }
    }
    for (auto& c : rec.curves) {
        c.file = "trajectory_" + curve_file_stem(c.name) + ".csv";
        if (!c.trajectory.coeff_snapshots.empty()) c.coeff_file = "coeffs_" + curve_file_stem(c.name) + ".csv";
    }
    rec.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv("RESTOPO_OUT"); env && *env) return env;
    if (!cfg.output_dir.empty()) return cfg.output_dir;
    return "runs";
}

RunRecord run(const ExperimentConfig& cfg, unsigned jobs) {
    RunRecord rec = execute(cfg, jobs);
    rec.directory = resolve_output_dir(cfg) / (to_string(cfg.preset) + "_" + std::to_string(cfg.seed));
    std::filesystem::create_directories(rec.directory);
    write_file(rec.directory / "config.json", config_to_json(cfg));
    for (const auto& c : rec.curves) {
        write_file(rec.directory / c.file, trajectory_csv(c.trajectory));
        if (!c.coeff_file.empty()) write_file(rec.directory / c.coeff_file, coefficients_csv(c.trajectory));
    }
    if (rec.heatmap) write_file(rec.directory / rec.heatmap_file, heatmap_csv(*rec.heatmap));
    write_file(rec.directory / "record.json", record_to_json(rec));
    return rec;
}

std::string record_to_json(const RunRecord& rec) {
    ojson j;
    j["version"] = rec.version;
    j["config"] = config_json(rec.config);
    j["data_fingerprint"] = rec.data_fingerprint;
    ojson curves = ojson::array();
    for (const auto& c : rec.curves) {
        ojson cj;
        cj["name"] = c.name;
        cj["file"] = c.file;
        if (!c.coeff_file.empty()) cj["coefficients_file"] = c.coeff_file;
        cj[rec.config.optimizer == Optimizer::gd ? "lr" : "dt"] = c.lr;
        if (c.verdict) {
            cj["verdict"] = {{"kind", to_string(c.verdict->kind)},
                             {"rate_or_power", number_or_null(c.verdict->rate_or_power)},
                             {"fit_quality", number_or_null(c.verdict->fit_quality)},
                             {"linear_r2", number_or_null(c.verdict->linear_r2)},
                             {"power_r2", number_or_null(c.verdict->power_r2)},
                             {"window", c.verdict->window},
                             {"zero_clamped", c.verdict->zero_clamped}};
        } else {
            cj["verdict"] = nullptr;
            cj["verdict_note"] = c.verdict_note;
        }
        ojson its;
        for (std::size_t k = 0; k < std::size(kTrackedThresholds); ++k)
            its[threshold_key(kTrackedThresholds[k])] = optional_long(c.iterations_to[k]);
        cj["iterations_to"] = its;
        cj["initial_loss"] = number_or_null(c.initial_loss);
        cj["final_loss"] = number_or_null(c.final_loss);
        cj["stop_reason"] = c.stop_reason;
        cj["points"] = c.points;
        if (!c.sweep.empty()) {
            ojson sw = ojson::array();
            for (const auto& e : c.sweep)
                sw.push_back({{"lr", e.lr},
                              {"iterations_to_1e-06", optional_long(e.iters_to_1e6)},
                              {"final_loss", number_or_null(e.final_loss)},
                              {"diverged", e.diverged}});
            cj["lr_sweep"] = sw;
        }
        if (c.final_ancre) {
            const CoeffMap p = normalize(*c.final_ancre);
            ojson pj;
            for (auto [i, jj] : p.pairs()) pj[std::to_string(i) + ":" + std::to_string(jj)] = p.at(i, jj);
            cj["final_coefficients"] = pj;
        }
        curves.push_back(cj);
    }
    j["curves"] = curves;
    ojson inv = ojson::array();
    for (const auto& i : rec.invariants)
        inv.push_back({{"name", i.name}, {"passed", i.passed}, {"margin", number_or_null(i.margin)}, {"detail", i.detail}});
    j["invariants"] = inv;
    if (!rec.facts.empty()) {
        ojson f;
        for (const auto& [k, v] : rec.facts) f[k] = number_or_null(v);
        j["facts"] = f;
    }
    if (!rec.heatmap_file.empty()) j["heatmap_file"] = rec.heatmap_file;
    j["wall_clock_seconds"] = rec.wall_clock_seconds;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// compare

std::string CompareReport::to_text() const {
    std::string out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-16s", "curve");
    out += buf;
    for (double t : thresholds) {
        std::snprintf(buf, sizeof buf, " %10s", ("it@" + threshold_key(t)).c_str());
        out += buf;
    }
    for (double t : thresholds) {
        std::snprintf(buf, sizeof buf, " %10s", ("x@" + threshold_key(t)).c_str());
        out += buf;
    }
    out += '\n';
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-16s", r.name.c_str());
        out += buf;
        for (const auto& it : r.iterations_to) {
            std::snprintf(buf, sizeof buf, " %10s", it ? std::to_string(*it).c_str() : "inf");
            out += buf;
        }
        for (const auto& s : r.speedup) {
            std::string v = "-";
            if (s) v = std::isinf(*s) ? "inf" : format_number(*s, 4);
            std::snprintf(buf, sizeof buf, " %10s", v.c_str());
            out += buf;
        }
        out += '\n';
    }
    out += "speedup baseline: " + baseline + "\n";
    return out;
}

CompareReport compare(const std::vector<std::string>& record_json_texts) {
    if (record_json_texts.empty()) throw std::invalid_argument("compare: no records given");
    std::vector<ojson> recs;
    for (const auto& text : record_json_texts) {
        try {
            recs.push_back(ojson::parse(text));
        } catch (const std::exception& e) {
            throw std::invalid_argument(std::string("compare: invalid record JSON: ") + e.what());
        }
    }
    auto key = [](const ojson& r) {
        try {
            return std::make_tuple(r.at("config").at("d").get<long long>(), r.at("config").at("n").get<long long>(),
                                   r.at("config").at("seed").get<unsigned long long>(),
                                   r.at("data_fingerprint").get<std::string>());
        } catch (const std::exception&) {
            throw std::invalid_argument("compare: record lacks config.d/n/seed or data_fingerprint");
        }
    };
    const auto k0 = key(recs.front());
    for (const auto& r : recs)
        if (key(r) != k0) throw std::invalid_argument("compare: records do not share d, n, seed and data");

    CompareReport rep;
    rep.thresholds.assign(std::begin(kTrackedThresholds), std::end(kTrackedThresholds));
    const bool prefix = recs.size() > 1;
    for (const auto& r : recs) {
        const std::string preset = r["config"]["preset"].get<std::string>();
        for (const auto& c : r.at("curves")) {
            CompareRow row;
            row.name = (prefix ? preset + "/" : "") + c.at("name").get<std::string>();
            for (double t : rep.thresholds) {
                const auto& v = c.at("iterations_to").at(threshold_key(t));
                row.iterations_to.push_back(v.is_null() ? std::nullopt : std::optional<long>(v.get<long>()));
            }
            rep.rows.push_back(std::move(row));
        }
    }
    const CompareRow* base = nullptr;
    for (const auto& row : rep.rows) {
        const auto pos = row.name.rfind('/');
        const std::string bare = pos == std::string::npos ? row.name : row.name.substr(pos + 1);
        if (bare == "cascaded") {
            base = &row;
            break;
        }
    }
    if (!base) base = &rep.rows.front();
    rep.baseline = base->name;
    const auto base_its = base->iterations_to;
    for (auto& row : rep.rows) {
        for (std::size_t k = 0; k < rep.thresholds.size(); ++k) {
            const auto& b = base_its[k];
            const auto& c = row.iterations_to[k];
            std::optional<double> s;
            if (!b && !c)
                s.reset();
            else if (!c)
                s = 0.0;
            else if (!b)
                s = INFINITY;
            else if (*c == 0)
                s = *b == 0 ? 1.0 : INFINITY;
            else
                s = static_cast<double>(*b) / static_cast<double>(*c);
            row.speedup.push_back(s);
        }
    }
    return rep;
}

}  // namespace restopo
