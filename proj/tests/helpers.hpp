#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "restopo/linalg.hpp"
#include "restopo/network.hpp"
#include "restopo/rng.hpp"

namespace testutil {

using namespace restopo;

// Naive triple-sum product, kept separate from the library's matmul.
inline Matrix naive_product(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

inline Matrix mul(const Matrix& a, const Matrix& b) { return naive_product(a, b); }

inline Matrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    SplitMix64 rng(seed);
    return random_gaussian(r, c, rng, scale);
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> symmetric_eigenvalues(Matrix s) {
    const std::size_t n = s.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += s(p, q) * s(p, q);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(s(p, q)) < 1e-300) continue;
                const double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), sn = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double skp = s(k, p), skq = s(k, q);
                    s(k, p) = c * skp - sn * skq;
                    s(k, q) = sn * skp + c * skq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double spk = s(p, k), sqk = s(q, k);
                    s(p, k) = c * spk - sn * sqk;
                    s(q, k) = sn * spk + c * sqk;
                }
            }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = s(i, i);
    return ev;
}

inline double reference_spectral_norm(const Matrix& a) {
    double best = 0.0;
    for (double e : symmetric_eigenvalues(mul(transpose(a), a))) best = std::max(best, e);
    return std::sqrt(std::max(best, 0.0));
}

inline WeightStack random_weights(int K, std::size_t d, std::uint64_t seed, double scale) {
    SplitMix64 rng(seed);
    WeightStack w;
    for (int k = 0; k < K; ++k) w.layers.push_back(random_gaussian(d, d, rng, scale / std::sqrt(double(d))));
    return w;
}

inline TrainState make_state(int K, std::size_t d, std::size_t n, Layout layout, std::uint64_t seed,
                             double scale = 1.0, Nonlinearity act = Nonlinearity::none) {
    TrainState s;
    s.weights = random_weights(K, d, seed, scale);
    s.layout = std::move(layout);
    s.x = random_orthogonal_data(d, n, seed + 1000);
    s.y = gaussian(d, n, seed + 2000, 0.5);
    s.act = act;
    return s;
}

}  // namespace testutil
