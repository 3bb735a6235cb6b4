#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "restopo/matrix.hpp"
#include "restopo/rng.hpp"

namespace restopo {

// Thrown when an iterative routine runs out of iterations; carries the last
// iterate so callers can still report it.
class NonConvergence : public std::runtime_error {
public:
    NonConvergence(const std::string& what, double last_estimate, int iterations)
        : std::runtime_error(what), last_estimate_(last_estimate), iterations_(iterations) {}
    double last_estimate() const { return last_estimate_; }
    int iterations() const { return iterations_; }

private:
    double last_estimate_;
    int iterations_;
};

inline constexpr double kPowerIterationTol = 1e-12;
inline constexpr int kPowerIterationMaxIter = 10000;
inline constexpr std::size_t kMaxSvdDim = 256;

// Largest singular value by power iteration on a^T a from the normalised
// all-ones vector. Stops when successive estimates agree to `tol` relatively.
double spectral_norm(const Matrix& a, double tol = kPowerIterationTol,
                     int max_iter = kPowerIterationMaxIter);

// All singular values, descending, by one-sided (Hestenes) Jacobi rotations.
std::vector<double> singular_values(const Matrix& a);
double smallest_singular_value(const Matrix& a);

struct QrResult {
    Matrix q;  // m x n, orthonormal columns
    Matrix r;  // n x n, upper triangular, nonnegative diagonal
};
// Householder QR of a tall (m >= n) matrix.
QrResult householder_qr(const Matrix& a);

// Gauss-Jordan with partial pivoting; throws on (numerically) singular input.
Matrix inverse(const Matrix& a);

Matrix random_gaussian(std::size_t rows, std::size_t cols, SplitMix64& rng, double scale = 1.0);
// Haar-like orthogonal matrix: Q factor of a Gaussian draw.
Matrix random_orthogonal(std::size_t d, SplitMix64& rng);

// d x n matrix with orthonormal rows (X X^T = I_d), from a seeded Gaussian
// draw orthonormalised by Householder QR.
Matrix random_orthogonal_data(std::size_t d, std::size_t n, std::uint64_t seed);

}  // namespace restopo
