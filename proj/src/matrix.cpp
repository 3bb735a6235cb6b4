#include "restopo/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace restopo {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
    if (data_.size() != rows_ * cols_)
        throw std::invalid_argument("Matrix: " + std::to_string(data_.size()) +
                                    " entries supplied for shape " + shape_string());
    if (!all_finite())
        throw std::invalid_argument("Matrix: non-finite entry on construction");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer list");
        data_.insert(data_.end(), r.begin(), r.end());
    }
    if (!all_finite())
        throw std::invalid_argument("Matrix: non-finite entry on construction");
}

Matrix Matrix::identity(std::size_t d) {
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix& Matrix::add_scaled(const Matrix& other, double s) {
    require_same_shape(*this, other, "add_scaled");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimension mismatch " + a.shape_string() +
                                    " * " + b.shape_string());
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = c.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < m; ++k) {
            const double aik = A[i * m + k];
            const double* brow = B + k * p;
            double* crow = C + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw std::invalid_argument("matmul_tn: dimension mismatch " + a.shape_string() +
                                    "^T * " + b.shape_string());
    Matrix c(a.cols(), b.cols());
    const std::size_t n = a.cols(), m = a.rows(), p = b.cols();
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = c.data().data();
    for (std::size_t k = 0; k < m; ++k) {
        const double* arow = A + k * n;
        const double* brow = B + k * p;
        for (std::size_t i = 0; i < n; ++i) {
            const double aki = arow[i];
            double* crow = C + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("matmul_nt: dimension mismatch " + a.shape_string() +
                                    " * " + b.shape_string() + "^T");
    Matrix c(a.rows(), b.rows());
    const std::size_t n = a.rows(), m = a.cols(), p = b.rows();
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = c.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = A + i * m;
        for (std::size_t j = 0; j < p; ++j) {
            const double* brow = B + j * m;
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += arow[k] * brow[k];
            C[i * p + j] = s;
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix c = a;
    auto cd = c.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < cd.size(); ++i) cd[i] *= bd[i];
    return c;
}

double frobenius_norm_squared(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return s;
}

double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_norm_squared(a)); }

double frobenius_dot(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "frobenius_dot");
    double s = 0.0;
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) s += ad[i] * bd[i];
    return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::abs(ad[i] - bd[i]));
    return m;
}

}  // namespace restopo
