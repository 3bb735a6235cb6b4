#include "restopo/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "restopo/linalg.hpp"
#include "restopo/rng.hpp"

namespace restopo {

double DiagState::loss() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) {
        const double r = a(i) - sigma[i];
        s += r * r;
    }
    return 0.5 * s;
}

void DiagState::validate() const {
    if (w.empty()) throw std::invalid_argument("DiagState: empty");
    if (u.size() != w.size() || v.size() != w.size() || sigma.size() != w.size())
        throw std::invalid_argument("DiagState: coordinate vectors differ in length");
}

namespace {

struct Deriv {
    double w, u, v;
};

Deriv diag_rhs(double w, double u, double v, double sigma) {
    const double r = w * u * v - sigma;
    return {-u * v * r, -w * v * r, -w * u * r};
}

void diag_record(DiagTrajectory& out, const DiagState& s, double t) {
    out.times.push_back(t);
    out.losses.push_back(s.loss());
    for (std::size_t i = 0; i < s.dim(); ++i) {
        out.w[i].push_back(s.w[i]);
        out.u[i].push_back(s.u[i]);
        out.v[i].push_back(s.v[i]);
        out.a[i].push_back(s.a(i));
    }
}

}  // namespace

DiagTrajectory diag_integrate(const DiagState& s0, double dt, double t_end, int record_every) {
    if (!(dt > 0.0)) throw std::invalid_argument("diag_integrate: dt must be positive");
    if (t_end < 0.0) throw std::invalid_argument("diag_integrate: t_end must be >= 0");
    if (record_every < 1) throw std::invalid_argument("diag_integrate: record_every must be >= 1");
    s0.validate();
    const std::size_t d = s0.dim();
    const long steps = std::lround(t_end / dt);

    DiagTrajectory out;
    out.w.resize(d);
    out.u.resize(d);
    out.v.resize(d);
    out.a.resize(d);
    DiagState s = s0;
    diag_record(out, s, 0.0);
    for (long step = 1; step <= steps; ++step) {
        for (std::size_t i = 0; i < d; ++i) {
            const double w = s.w[i], u = s.u[i], v = s.v[i], sg = s.sigma[i];
            const Deriv k1 = diag_rhs(w, u, v, sg);
            const Deriv k2 = diag_rhs(w + 0.5 * dt * k1.w, u + 0.5 * dt * k1.u, v + 0.5 * dt * k1.v, sg);
            const Deriv k3 = diag_rhs(w + 0.5 * dt * k2.w, u + 0.5 * dt * k2.u, v + 0.5 * dt * k2.v, sg);
            const Deriv k4 = diag_rhs(w + dt * k3.w, u + dt * k3.u, v + dt * k3.v, sg);
            s.w[i] = w + dt / 6.0 * (k1.w + 2.0 * k2.w + 2.0 * k3.w + k4.w);
            s.u[i] = u + dt / 6.0 * (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u);
            s.v[i] = v + dt / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v);
            if (!std::isfinite(s.w[i]) || !std::isfinite(s.u[i]) || !std::isfinite(s.v[i])) out.diverged = true;
        }
        if (out.diverged) break;
        if (step % record_every == 0 || step == steps) diag_record(out, s, static_cast<double>(step) * dt);
    }
    return out;
}

double lower_bound_curve(double a0, double t) {
    if (!(a0 > 0.0)) throw std::invalid_argument("lower_bound_curve: a0 must be positive");
    if (t < 0.0) throw std::invalid_argument("lower_bound_curve: t must be >= 0");
    const double a = a0 / (1.0 + 3.0 * a0 * t);
    return 0.5 * a * a;
}

namespace {

void require_lambda(double lambda, const char* who) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument(std::string(who) + ": lambda must lie in (0, 1)");
}

}  // namespace

double upper_bound_curve(double l0, double lambda, double t) {
    require_lambda(lambda, "upper_bound_curve");
    if (l0 < 0.0) throw std::invalid_argument("upper_bound_curve: L0 must be >= 0");
    if (t < 0.0) throw std::invalid_argument("upper_bound_curve: t must be >= 0");
    const double g = 1.0 - lambda;
    return l0 * std::exp(-2.0 * g * g * t);
}

DeltaThreshold delta_threshold(double lambda, double l0) {
    require_lambda(lambda, "delta_threshold");
    if (!(l0 > 0.0)) throw std::invalid_argument("delta_threshold: L0 must be positive");
    const double g = 1.0 - lambda;
    const double prefactor = std::sqrt(lambda / 2.0);
    const double tail = std::sqrt(2.0 * std::numbers::pi) * l0 / (2.0 * g * g * g);
    DeltaThreshold out;
    out.statement = prefactor * std::exp(-std::sqrt(lambda * l0) / (g * g) - tail);
    out.proof = prefactor * std::exp(-std::sqrt(2.0 * l0) / (g * g) - tail);
    out.used = std::min(out.statement, out.proof);
    return out;
}

double m_constant(double lambda, double l0, double w3_fro0) {
    require_lambda(lambda, "m_constant");
    const double g = 1.0 - lambda;
    return 2.0 * std::sqrt(2.0 * l0) * w3_fro0 / (g * g) + std::sqrt(2.0 * std::numbers::pi) * l0 / (g * g * g);
}

FdResult fd_gradient(const LossFunction& evaluate, std::span<const double> params, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("fd_gradient: eps must be positive");
    FdResult out;
    out.gradient.resize(params.size());
    std::vector<double> theta(params.begin(), params.end());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + eps;
        const double up = evaluate(theta);
        theta[i] = keep - eps;
        const double down = evaluate(theta);
        theta[i] = keep;
        const double g = (up - down) / (2.0 * eps);
        if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(g)) {
            out.flagged.push_back(i);
            out.gradient[i] = std::numeric_limits<double>::quiet_NaN();
        } else {
            out.gradient[i] = g;
        }
    }
    return out;
}

double relative_error(double a, double b) { return std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-12); }

FdResult fd_gradient(const TrainState& state, double eps) {
    TrainState scratch = state;
    auto eval = [&scratch](std::span<const double> theta) {
        set_parameters(scratch, theta);
        return evaluate_loss(scratch);
    };
    const auto theta0 = parameter_vector(state);
    return fd_gradient(eval, theta0, eps);
}

namespace {

// Uniform draw on (lo, hi]; SplitMix64::uniform() never returns 0.
double draw_open_closed(SplitMix64& rng, double lo, double hi) { return rng.uniform(lo, hi); }

// Uniform draw on [lo, hi].
double draw_closed(SplitMix64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng.next_u64() >> 11) / 9007199254740991.0;  // / (2^53 - 1)
    return lo + (hi - lo) * u;
}

}  // namespace

LbWitness lb_witness_init(std::size_t d, std::size_t rank_a, std::uint64_t seed, std::size_t n) {
    if (d < 1) throw std::invalid_argument("lb_witness_init: d must be >= 1");
    if (rank_a >= d)
        throw std::invalid_argument("lb_witness_init: rank_A (" + std::to_string(rank_a) + ") must be < d (" +
                                    std::to_string(d) + ")");
    if (n == 0) n = 2 * d;
    SplitMix64 rng(derive_seed(seed, 11));

    DiagState diag;
    diag.w.resize(d);
    diag.u.resize(d);
    diag.v.resize(d);
    diag.sigma.assign(d, 0.0);
    for (std::size_t i = 0; i < rank_a; ++i) diag.sigma[i] = draw_closed(rng, 0.5, 1.0);
    for (std::size_t i = 0; i + 1 < d; ++i) {
        diag.w[i] = 1.0 + draw_open_closed(rng, 0.0, 0.5);
        diag.u[i] = draw_open_closed(rng, 0.0, 0.5);
        diag.v[i] = draw_open_closed(rng, 0.0, 0.5);
    }
    const std::size_t k = d - 1;
    diag.w[k] = 1.0 + draw_closed(rng, -0.5, 0.0);
    diag.u[k] = draw_open_closed(rng, 0.0, 0.5);
    diag.v[k] = diag.u[k];

    LbWitness out;
    out.diag = diag;
    out.a_d0 = diag.a(k);
    std::vector<double> w1(d);
    for (std::size_t i = 0; i < d; ++i) w1[i] = diag.w[i] - 1.0;
    out.state.weights.layers = {Matrix::diagonal(w1), Matrix::diagonal(diag.u), Matrix::diagonal(diag.v)};
    out.state.layout = Topology::single(3, 0, 1);
    out.state.x = random_orthogonal_data(d, n, derive_seed(seed, 12));
    out.state.y = matmul(Matrix::diagonal(diag.sigma), out.state.x);
    out.state.validate();
    return out;
}

UbWitness ub_witness_init(std::size_t d, double lambda, std::uint64_t seed, std::size_t n, double target_norm) {
    require_lambda(lambda, "ub_witness_init");
    if (d < 1) throw std::invalid_argument("ub_witness_init: d must be >= 1");
    if (!(target_norm > 0.0)) throw std::invalid_argument("ub_witness_init: target_norm must be positive");
    if (n == 0) n = 2 * d;
    SplitMix64 rng(derive_seed(seed, 21));

    UbWitness out;
    out.lambda = lambda;
    out.target = random_gaussian(d, d, rng);
    out.target *= target_norm / frobenius_norm(out.target);

    std::vector<Matrix> base;
    for (int k = 0; k < 3; ++k) base.push_back(random_gaussian(d, d, rng, 1.0 / std::sqrt(static_cast<double>(d))));

    out.state.layout = Topology::single(3, 0, 2);
    out.state.x = random_orthogonal_data(d, n, derive_seed(seed, 22));
    out.state.y = matmul(out.target, out.state.x);

    double scale = 1.0;
    for (int h = 0; h <= kMaxDeltaHalvings; ++h) {
        out.state.weights.layers.clear();
        for (const auto& b : base) out.state.weights.layers.push_back(scale * b);
        out.l0 = evaluate_loss(out.state);
        out.delta = delta_threshold(lambda, out.l0);
        double biggest = 0.0;
        for (const auto& w : out.state.weights.layers) biggest = std::max(biggest, frobenius_norm(w));
        if (biggest <= out.delta.used) {
            out.init_scale = scale;
            out.halvings = h;
            return out;
        }
        scale *= 0.5;
    }
    throw std::runtime_error("ub_witness_init: initialisation still violates the delta condition after " +
                             std::to_string(kMaxDeltaHalvings) + " halvings");
}

}  // namespace restopo
