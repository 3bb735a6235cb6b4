#include "restopo/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace restopo {

namespace {

double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

std::vector<double> mat_vec(const Matrix& a, const std::vector<double>& v) {
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * v[j];
        out[i] = s;
    }
    return out;
}

std::vector<double> mat_tvec(const Matrix& a, const std::vector<double>& u) {
    std::vector<double> out(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j) * u[i];
    return out;
}

}  // namespace

double spectral_norm(const Matrix& a, double tol, int max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("spectral_norm: tol must be positive");
    if (a.empty()) return 0.0;
    if (frobenius_norm_squared(a) == 0.0) return 0.0;

    const std::size_t n = a.cols();
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    double estimate = 0.0;
    bool restarted = false;
    for (int it = 1; it <= max_iter; ++it) {
        auto u = mat_vec(a, v);
        const double next = vec_norm(u);
        auto w = mat_tvec(a, u);
        const double wn = vec_norm(w);
        if (wn == 0.0) {
            // Start vector fell in the null space; restart from the heaviest column.
            if (restarted) return next;
            restarted = true;
            std::size_t best = 0;
            double best_norm = -1.0;
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j) * a(i, j);
                if (s > best_norm) best_norm = s, best = j;
            }
            std::fill(v.begin(), v.end(), 0.0);
            v[best] = 1.0;
            continue;
        }
        for (std::size_t j = 0; j < n; ++j) v[j] = w[j] / wn;
        if (it > 1 && std::abs(next - estimate) <= tol * next) return next;
        estimate = next;
    }
    throw NonConvergence("spectral_norm: no convergence after " + std::to_string(max_iter) +
                             " iterations (last estimate " + std::to_string(estimate) + ")",
                         estimate, max_iter);
}

std::vector<double> singular_values(const Matrix& a) {
    if (a.rows() > kMaxSvdDim || a.cols() > kMaxSvdDim)
        throw std::invalid_argument("singular_values: dimension above " +
                                    std::to_string(kMaxSvdDim) + " (" + a.shape_string() + ")");
    // Work on the orientation with at least as many rows as columns.
    Matrix u = a.rows() >= a.cols() ? a : transpose(a);
    const std::size_t m = u.rows(), n = u.cols();
    constexpr double eps = 1e-15;
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += u(i, p) * u(i, p);
                    beta += u(i, q) * u(i, q);
                    gamma += u(i, p) * u(i, q);
                }
                if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double up = u(i, p), uq = u(i, q);
                    u(i, p) = c * up - s * uq;
                    u(i, q) = s * up + c * uq;
                }
            }
        }
        if (!rotated) break;
    }
    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += u(i, j) * u(i, j);
        sv[j] = std::sqrt(s);
    }
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

double smallest_singular_value(const Matrix& a) {
    if (!a.is_square())
        throw std::invalid_argument("smallest_singular_value: square input required, got " +
                                    a.shape_string());
    if (a.empty()) return 0.0;
    return singular_values(a).back();
}

QrResult householder_qr(const Matrix& a) {
    const std::size_t m = a.rows(), n = a.cols();
    if (m < n) throw std::invalid_argument("householder_qr: need rows >= cols, got " + a.shape_string());
    Matrix r = a;
    std::vector<std::vector<double>> reflectors;
    reflectors.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> v(m - k);
        for (std::size_t i = k; i < m; ++i) v[i - k] = r(i, k);
        const double norm_x = vec_norm(v);
        if (norm_x == 0.0) {
            reflectors.emplace_back();
            continue;
        }
        v[0] += std::copysign(norm_x, v[0]);
        const double vn = vec_norm(v);
        for (double& x : v) x /= vn;
        for (std::size_t j = k; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < m; ++i) dot += v[i - k] * r(i, j);
            for (std::size_t i = k; i < m; ++i) r(i, j) -= 2.0 * v[i - k] * dot;
        }
        reflectors.push_back(std::move(v));
    }
    // Accumulate the thin Q by applying reflectors to the first n columns of I.
    Matrix q(m, n);
    for (std::size_t j = 0; j < n; ++j) q(j, j) = 1.0;
    for (std::size_t kk = n; kk-- > 0;) {
        const auto& v = reflectors[kk];
        if (v.empty()) continue;
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = kk; i < m; ++i) dot += v[i - kk] * q(i, j);
            for (std::size_t i = kk; i < m; ++i) q(i, j) -= 2.0 * v[i - kk] * dot;
        }
    }
    Matrix rr(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) rr(i, j) = r(i, j);
    // Sign convention: nonnegative diagonal of R.
    for (std::size_t i = 0; i < n; ++i) {
        if (rr(i, i) < 0.0) {
            for (std::size_t j = i; j < n; ++j) rr(i, j) = -rr(i, j);
            for (std::size_t row = 0; row < m; ++row) q(row, i) = -q(row, i);
        }
    }
    return {std::move(q), std::move(rr)};
}

Matrix inverse(const Matrix& a) {
    if (!a.is_square()) throw std::invalid_argument("inverse: square input required, got " + a.shape_string());
    const std::size_t d = a.rows();
    Matrix work = a;
    Matrix inv = Matrix::identity(d);
    const double scale = std::max(frobenius_norm(a), 1e-300);
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t i = col + 1; i < d; ++i)
            if (std::abs(work(i, col)) > std::abs(work(pivot, col))) pivot = i;
        if (std::abs(work(pivot, col)) <= 1e-14 * scale)
            throw std::invalid_argument("inverse: matrix is numerically singular");
        if (pivot != col) {
            for (std::size_t j = 0; j < d; ++j) {
                std::swap(work(col, j), work(pivot, j));
                std::swap(inv(col, j), inv(pivot, j));
            }
        }
        const double p = work(col, col);
        for (std::size_t j = 0; j < d; ++j) {
            work(col, j) /= p;
            inv(col, j) /= p;
        }
        for (std::size_t i = 0; i < d; ++i) {
            if (i == col) continue;
            const double f = work(i, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                work(i, j) -= f * work(col, j);
                inv(i, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

Matrix random_gaussian(std::size_t rows, std::size_t cols, SplitMix64& rng, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

Matrix random_orthogonal(std::size_t d, SplitMix64& rng) {
    return householder_qr(random_gaussian(d, d, rng)).q;
}

Matrix random_orthogonal_data(std::size_t d, std::size_t n, std::uint64_t seed) {
    if (d == 0) throw std::invalid_argument("random_orthogonal_data: d must be positive");
    if (n < d)
        throw std::invalid_argument("random_orthogonal_data: need n >= d, got d=" + std::to_string(d) +
                                    " n=" + std::to_string(n));
    SplitMix64 rng(seed);
    Matrix g = random_gaussian(n, d, rng);
    return transpose(householder_qr(g).q);
}

}  // namespace restopo
