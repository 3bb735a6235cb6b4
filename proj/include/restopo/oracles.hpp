#pragma once

// Independent reference computations used to check the training code:
// the decoupled diagonal dynamics of the three-layer 0:1 network, closed-form
// loss envelopes, the initialisation threshold for the 0:2 network, and a
// central-difference gradient.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "restopo/network.hpp"

namespace restopo {

// Diagonal coordinates of a 3-layer 0:1 network with diagonal weights and a
// diagonal target: w = diag(W1 + I), u = diag(W2), v = diag(W3), a = w*u*v.
struct DiagState {
    std::vector<double> w, u, v, sigma;

    std::size_t dim() const { return w.size(); }
    double a(std::size_t i) const { return w[i] * u[i] * v[i]; }
    double loss() const;  // 0.5 * sum (a_i - sigma_i)^2
    void validate() const;
};

struct DiagTrajectory {
    std::vector<double> times;
    std::vector<double> losses;
    std::vector<std::vector<double>> w, u, v, a;  // [coord][sample]
    bool diverged = false;

    std::size_t size() const { return times.size(); }
};

// RK4 on  w' = -u v (a - sigma),  u' = -w v (a - sigma),  v' = -w u (a - sigma).
// Samples at step 0, every `record_every` steps and the final step.
DiagTrajectory diag_integrate(const DiagState& s0, double dt, double t_end, int record_every = 10);

// 0.5 * (a0 / (1 + 3 a0 t))^2
double lower_bound_curve(double a0, double t);
// L0 * exp(-2 (1 - lambda)^2 t)
double upper_bound_curve(double l0, double lambda, double t);

struct DeltaThreshold {
    double statement = 0.0;  // sqrt(lambda L0) in the first exponent term
    double proof = 0.0;      // sqrt(2 L0) in the first exponent term
    double used = 0.0;       // min of the two
};

DeltaThreshold delta_threshold(double lambda, double l0);

// Exponent bounding the growth of ||W1||^2 + ||W2||^2 on the 0:2 network:
// 2 sqrt(2 L0) ||W3(0)||_F / (1-lambda)^2 + sqrt(2 pi) L0 / (1-lambda)^3.
double m_constant(double lambda, double l0, double w3_fro0);

struct FdResult {
    std::vector<double> gradient;
    std::vector<std::size_t> flagged;  // coordinates whose evaluations were non-finite
};

using LossFunction = std::function<double(std::span<const double>)>;

FdResult fd_gradient(const LossFunction& evaluate, std::span<const double> params, double eps = 1e-6);

// |a - b| / (|a| + |b| + 1e-12)
double relative_error(double a, double b);

// Central-difference gradient of the state's loss over parameter_vector().
FdResult fd_gradient(const TrainState& state, double eps = 1e-6);

struct LbWitness {
    TrainState state;  // K = 3, shortcut 0:1, diagonal weights
    DiagState diag;
    double a_d0 = 0.0;  // a_d(0) of the witness coordinate
};

// Diagonal target diag(sigma_1..sigma_r, 0..0) with sigma in [0.5, 1];
// W1[d,d] in [-0.5, 0], W2[d,d] = W3[d,d] in (0, 0.5]; other diagonal
// entries in (0, 0.5]. X has orthonormal rows and Y = A X.
LbWitness lb_witness_init(std::size_t d, std::size_t rank_a, std::uint64_t seed, std::size_t n = 0);

struct UbWitness {
    TrainState state;  // K = 3, shortcut 0:2
    Matrix target;     // A with ||A||_F = target_norm
    double lambda = 0.5;
    double l0 = 0.0;
    DeltaThreshold delta;
    double init_scale = 0.0;
    int halvings = 0;
};

inline constexpr int kMaxDeltaHalvings = 60;

// Gaussian weights halved until max_k ||W_k(0)||_F <= delta_used(lambda, L(0)),
// with L(0) recomputed after each halving. Throws after 60 halvings.
UbWitness ub_witness_init(std::size_t d, double lambda, std::uint64_t seed, std::size_t n = 0,
                          double target_norm = 0.5);

}  // namespace restopo
