#include "restopo/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "restopo/linalg.hpp"

namespace restopo {

std::string to_string(GfMethod m) { return m == GfMethod::euler ? "euler" : "rk4"; }

std::string to_string(RateKind k) {
    switch (k) {
        case RateKind::linear: return "linear";
        case RateKind::sublinear: return "sublinear";
        case RateKind::diverged: return "diverged";
        case RateKind::stalled: return "stalled";
    }
    return "unknown";
}

void Trajectory::validate() const {
    const std::size_t n = times.size();
    auto same = [n](std::size_t m) { return m == n; };
    if (!same(iters.size()) || !same(losses.size()))
        throw std::logic_error("Trajectory: channel lengths differ");
    for (const auto& f : fro_norms)
        if (!same(f.size())) throw std::logic_error("Trajectory: fro_norm channel length differs");
    if (!spec_w1w2.empty() && !same(spec_w1w2.size())) throw std::logic_error("Trajectory: spec_w1w2 length");
    if (!balance_gap.empty() && !same(balance_gap.size())) throw std::logic_error("Trajectory: balance_gap length");
    for (const auto& [name, col] : extra)
        if (!same(col.size())) throw std::logic_error("Trajectory: column " + name + " length");
    for (std::size_t i = 1; i < n; ++i)
        if (!(times[i] > times[i - 1])) throw std::logic_error("Trajectory: times not strictly increasing");
    for (double l : losses)
        if (!(l >= 0.0)) throw std::logic_error("Trajectory: negative or NaN loss");
}

std::optional<long> Trajectory::iterations_to(double threshold) const {
    for (std::size_t k = 0; k < std::size(kTrackedThresholds); ++k)
        if (kTrackedThresholds[k] == threshold) return first_below[k];
    for (std::size_t i = 0; i < losses.size(); ++i)
        if (losses[i] <= threshold) return iters[i];
    return std::nullopt;
}

void Trajectory::add_column(std::string name, std::vector<double> values) {
    if (values.size() != size())
        throw std::invalid_argument("Trajectory::add_column: '" + name + "' has " + std::to_string(values.size()) +
                                    " rows, trajectory has " + std::to_string(size()));
    extra.emplace_back(std::move(name), std::move(values));
}

namespace {

double spectral_w1w2(const WeightStack& w) {
    const Matrix prod = matmul(w[1], w[0]);
    try {
        return spectral_norm(prod);
    } catch (const NonConvergence&) {
        return singular_values(prod).front();
    }
}

void record(Trajectory& traj, const TrainState& state, double t, long iter, double loss_value,
            const RecordChannels& ch, const std::optional<CoeffMap>& p) {
    traj.times.push_back(t);
    traj.iters.push_back(iter);
    traj.losses.push_back(loss_value);
    if (traj.fro_norms.size() != static_cast<std::size_t>(state.depth())) traj.fro_norms.resize(state.depth());
    for (int k = 0; k < state.depth(); ++k) traj.fro_norms[k].push_back(frobenius_norm(state.weights[k]));
    if (ch.spectral_w1w2 && state.depth() >= 2) traj.spec_w1w2.push_back(spectral_w1w2(state.weights));
    if (ch.balance_gap && state.depth() >= 2)
        traj.balance_gap.push_back(frobenius_norm_squared(state.weights[0]) -
                                   frobenius_norm_squared(state.weights[1]));
    if (ch.coefficients && p) traj.coeff_snapshots.push_back(*p);
}

void track_thresholds(Trajectory& traj, long iter, double loss_value) {
    for (std::size_t k = 0; k < std::size(kTrackedThresholds); ++k)
        if (!traj.first_below[k] && loss_value <= kTrackedThresholds[k]) traj.first_below[k] = iter;
}

bool bad_loss(double l) { return !std::isfinite(l) || l > kDivergenceThreshold; }

bool params_finite(const TrainState& s) {
    for (const auto& w : s.weights.layers)
        if (!w.all_finite()) return false;
    if (s.has_ancre())
        for (double c : s.ancre().raw.flatten())
            if (!std::isfinite(c)) return false;
    return true;
}

// Applies theta <- theta - lr * grad (coefficients use coeff_lr).
StepStatus apply_update(TrainState& state, const Gradients& g, double lr, double coeff_lr) {
    if (!all_finite(g)) return StepStatus::non_finite;
    TrainState next = state;
    for (int k = 0; k < state.depth(); ++k) next.weights[k].add_scaled(g.weights[k], -lr);
    if (g.coeffs) {
        auto& raw = next.ancre().raw;
        for (auto [i, j] : raw.pairs()) raw.at(i, j) -= coeff_lr * g.coeffs->at(i, j);
    }
    if (!params_finite(next)) return StepStatus::non_finite;
    state = std::move(next);
    return StepStatus::ok;
}

bool should_record(long step, long last_step, int every, long dense) {
    return step < dense || step % every == 0 || step == last_step;
}

}  // namespace

StepStatus gd_step(TrainState& state, double lr, std::optional<double> coeff_lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("gd_step: lr must be positive");
    const auto fwd = forward(state);
    const Gradients g = backward(state, fwd.trace);
    return apply_update(state, g, lr, coeff_lr.value_or(lr));
}

Trajectory train_gd(TrainState& state, const GdOptions& opts) {
    if (!(opts.lr > 0.0)) throw std::invalid_argument("train_gd: lr must be positive");
    if (opts.iters < 0) throw std::invalid_argument("train_gd: iters must be >= 0");
    if (opts.record_every < 1) throw std::invalid_argument("train_gd: record_every must be >= 1");
    state.validate();
    const double coeff_lr = opts.coeff_lr.value_or(opts.lr);
    Trajectory traj;
    traj.stop_reason = "completed";
    for (long it = 0;; ++it) {
        const auto fwd = forward(state);
        const double l = loss(fwd.output, state.y);
        if (bad_loss(l)) {
            traj.diverged = true;
            traj.stop_reason = "diverged";
            break;
        }
        track_thresholds(traj, it, l);
        const bool floor_hit = opts.loss_floor > 0.0 && l <= opts.loss_floor;
        if (should_record(it, opts.iters, opts.record_every, opts.dense_steps) || floor_hit)
        {
            record(traj, state, static_cast<double>(it) * opts.lr, it, l, opts.channels, fwd.trace.p);
            if (opts.observer) opts.observer(state, static_cast<double>(it) * opts.lr);
        }
        if (floor_hit) {
            traj.stop_reason = "loss_floor";
            break;
        }
        if (it == opts.iters) break;
        const Gradients g = backward(state, fwd.trace);
        if (apply_update(state, g, opts.lr, coeff_lr) != StepStatus::ok) {
            traj.diverged = true;
            traj.stop_reason = "diverged";
            break;
        }
    }
    return traj;
}

Trajectory integrate_gf(TrainState& state, const GfOptions& opts) {
    if (!(opts.dt > 0.0)) throw std::invalid_argument("integrate_gf: dt must be positive");
    if (opts.t_end < 0.0) throw std::invalid_argument("integrate_gf: t_end must be >= 0");
    if (opts.t_end > 0.0 && opts.dt > opts.t_end)
        throw std::invalid_argument("integrate_gf: dt exceeds t_end");
    if (opts.record_every < 1) throw std::invalid_argument("integrate_gf: record_every must be >= 1");
    state.validate();
    const long steps = std::lround(opts.t_end / opts.dt);

    if (opts.method == GfMethod::euler) {
        GdOptions gd;
        gd.lr = opts.dt;
        gd.coeff_lr = opts.dt * opts.coeff_rate;
        gd.iters = steps;
        gd.record_every = opts.record_every;
        gd.dense_steps = opts.dense_steps;
        gd.loss_floor = opts.loss_floor;
        gd.channels = opts.channels;
        gd.observer = opts.observer;
        return train_gd(state, gd);
    }

    // Classic RK4 on the flattened parameter vector.
    const std::size_t n_weights = [&] {
        std::size_t n = 0;
        for (const auto& w : state.weights.layers) n += w.size();
        return n;
    }();
    TrainState scratch = state;
    auto velocity = [&](const std::vector<double>& theta, double* loss_out,
                        std::optional<CoeffMap>* p_out) -> std::optional<std::vector<double>> {
        set_parameters(scratch, theta);
        const auto fwd = forward(scratch);
        if (loss_out) *loss_out = loss(fwd.output, scratch.y);
        if (p_out) *p_out = fwd.trace.p;
        const Gradients g = backward(scratch, fwd.trace);
        if (!all_finite(g)) return std::nullopt;
        auto v = gradient_vector(g);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = -(i < n_weights ? 1.0 : opts.coeff_rate) * v[i];
        return v;
    };

    Trajectory traj;
    traj.stop_reason = "completed";
    std::vector<double> theta = parameter_vector(state);
    const std::size_t n = theta.size();
    std::vector<double> tmp(n);
    const double dt = opts.dt;
    for (long step = 0;; ++step) {
        double l = 0.0;
        std::optional<CoeffMap> p;
        auto k1 = velocity(theta, &l, &p);
        if (bad_loss(l) || !k1) {
            traj.diverged = true;
            traj.stop_reason = "diverged";
            break;
        }
        track_thresholds(traj, step, l);
        const bool floor_hit = opts.loss_floor > 0.0 && l <= opts.loss_floor;
        if (should_record(step, steps, opts.record_every, opts.dense_steps) || floor_hit) {
            set_parameters(state, theta);
            record(traj, state, static_cast<double>(step) * dt, step, l, opts.channels, p);
            if (opts.observer) opts.observer(state, static_cast<double>(step) * dt);
        }
        if (floor_hit) {
            traj.stop_reason = "loss_floor";
            break;
        }
        if (step == steps) break;

        for (std::size_t i = 0; i < n; ++i) tmp[i] = theta[i] + 0.5 * dt * (*k1)[i];
        auto k2 = velocity(tmp, nullptr, nullptr);
        if (!k2) { traj.diverged = true; traj.stop_reason = "diverged"; break; }
        for (std::size_t i = 0; i < n; ++i) tmp[i] = theta[i] + 0.5 * dt * (*k2)[i];
        auto k3 = velocity(tmp, nullptr, nullptr);
        if (!k3) { traj.diverged = true; traj.stop_reason = "diverged"; break; }
        for (std::size_t i = 0; i < n; ++i) tmp[i] = theta[i] + dt * (*k3)[i];
        auto k4 = velocity(tmp, nullptr, nullptr);
        if (!k4) { traj.diverged = true; traj.stop_reason = "diverged"; break; }
        for (std::size_t i = 0; i < n; ++i)
            theta[i] += dt / 6.0 * ((*k1)[i] + 2.0 * (*k2)[i] + 2.0 * (*k3)[i] + (*k4)[i]);
        if (!std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); })) {
            traj.diverged = true;
            traj.stop_reason = "diverged";
            break;
        }
    }
    set_parameters(state, theta);
    return traj;
}

namespace {

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = -std::numeric_limits<double>::infinity();
};

LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LineFit f;
    if (sxx == 0.0) return f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += r * r;
    }
    f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return f;
}

}  // namespace

RateVerdict classify_rate(const Trajectory& traj, double tail_fraction) {
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
        throw std::invalid_argument("classify_rate: tail_fraction must lie in (0, 1]");
    RateVerdict v;
    if (traj.diverged) {
        v.kind = RateKind::diverged;
        return v;
    }
    const std::size_t n = traj.size();
    const std::size_t start = std::min(kRateDiscard, n);
    const std::size_t remaining = n - start;
    const auto count = static_cast<std::size_t>(std::ceil(static_cast<double>(remaining) * tail_fraction));
    const std::size_t begin = n - count;
    v.window = count;

    std::vector<double> t, logt, logl;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t i = begin; i < n; ++i) {
        double l = traj.losses[i];
        if (l <= 0.0) {
            l = 1e-300;
            v.zero_clamped = true;
        }
        lo = std::min(lo, l);
        hi = std::max(hi, l);
        t.push_back(traj.times[i]);
        logl.push_back(std::log(l));
    }
    if (count < 2 || (hi - lo) < 1e-12 * hi) {
        v.kind = RateKind::stalled;
        return v;
    }
    if (count < kRateMinWindow)
        throw std::invalid_argument("classify_rate: tail window has " + std::to_string(count) +
                                    " points, need at least " + std::to_string(kRateMinWindow));

    const LineFit lin = least_squares(t, logl);
    LineFit pow;
    if (t.front() > 0.0) {
        for (double x : t) logt.push_back(std::log(x));
        pow = least_squares(logt, logl);
    }
    v.linear_r2 = lin.r2;
    v.power_r2 = pow.r2;
    if (lin.r2 >= pow.r2) {
        v.kind = RateKind::linear;
        v.rate_or_power = -lin.slope;
        v.fit_quality = lin.r2;
    } else {
        v.kind = RateKind::sublinear;
        v.rate_or_power = -pow.slope;
        v.fit_quality = pow.r2;
    }
    return v;
}

double balance_drift(const Trajectory& traj) {
    if (traj.balance_gap.empty()) throw std::invalid_argument("balance_drift: trajectory has no balance_gap channel");
    const double g0 = traj.balance_gap.front();
    double worst = 0.0;
    for (double g : traj.balance_gap) worst = std::max(worst, std::abs(g - g0));
    return worst;
}

std::string format_number(double v, int significant) {
    if (v == 0.0) v = 0.0;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", significant, v);
    return buf;
}

std::string trajectory_csv(const Trajectory& traj) {
    traj.validate();
    std::string out = "t,iter,loss";
    for (std::size_t k = 0; k < traj.fro_norms.size(); ++k) out += ",fro_w" + std::to_string(k + 1);
    if (!traj.spec_w1w2.empty()) out += ",spec_w1w2";
    if (!traj.balance_gap.empty()) out += ",balance_gap";
    for (const auto& [name, col] : traj.extra) out += "," + name;
    out += '\n';
    for (std::size_t i = 0; i < traj.size(); ++i) {
        out += format_number(traj.times[i]);
        out += ',' + std::to_string(traj.iters[i]);
        out += ',' + format_number(traj.losses[i]);
        for (const auto& f : traj.fro_norms) out += ',' + format_number(f[i]);
        if (!traj.spec_w1w2.empty()) out += ',' + format_number(traj.spec_w1w2[i]);
        if (!traj.balance_gap.empty()) out += ',' + format_number(traj.balance_gap[i]);
        for (const auto& [name, col] : traj.extra) out += ',' + format_number(col[i]);
        out += '\n';
    }
    return out;
}

std::string coefficients_csv(const Trajectory& traj) {
    if (traj.coeff_snapshots.empty()) return {};
    if (traj.coeff_snapshots.size() != traj.size())
        throw std::logic_error("coefficients_csv: snapshot count differs from trajectory length");
    std::string out = "t,iter";
    const auto pairs = traj.coeff_snapshots.front().pairs();
    for (auto [i, j] : pairs) out += ",p_" + std::to_string(i) + "_" + std::to_string(j);
    out += '\n';
    for (std::size_t r = 0; r < traj.size(); ++r) {
        out += format_number(traj.times[r]) + ',' + std::to_string(traj.iters[r]);
        for (auto [i, j] : pairs) out += ',' + format_number(traj.coeff_snapshots[r].at(i, j));
        out += '\n';
    }
    return out;
}

}  // namespace restopo
