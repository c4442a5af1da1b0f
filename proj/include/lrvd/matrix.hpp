#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrvd {

/// Raised when an algorithm fails numerically (non-convergence, non-finite
/// values) as opposed to being called with invalid arguments.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised for invalid configurations and malformed input files. The CLI
/// maps these to exit code 2, NumericError to exit code 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense real matrix, row-major. The universal numeric carrier for the
/// library; adapter factors at desk scale are tiny so no sparse or blocked
/// storage is provided.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ > 0 ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_) {
                throw std::invalid_argument("Matrix: ragged initializer list");
            }
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    /// Row vector (1 x n) from a std::vector.
    static Matrix row_vector(const std::vector<double>& v) {
        Matrix m(1, v.size());
        m.data_ = v;
        return m;
    }

    static Matrix diagonal(const std::vector<double>& d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    Matrix transpose() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j)
                t(j, i) = (*this)(i, j);
        return t;
    }

    Matrix& operator+=(const Matrix& o) {
        check_same_shape(o, "operator+=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }

    Matrix& operator-=(const Matrix& o) {
        check_same_shape(o, "operator-=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& x : data_) x *= s;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }

    Matrix operator-() const {
        Matrix m = *this;
        for (double& x : m.data_) x = -x;
        return m;
    }

    /// Elementwise product.
    friend Matrix hadamard(Matrix a, const Matrix& b) {
        a.check_same_shape(b, "hadamard");
        for (std::size_t k = 0; k < a.data_.size(); ++k) a.data_[k] *= b.data_[k];
        return a;
    }

    template <typename F>
    Matrix map(F&& f) const {
        Matrix m = *this;
        for (double& x : m.data_) x = f(x);
        return m;
    }

    double frobenius_norm() const { return std::sqrt(frobenius_norm_sq()); }

    double frobenius_norm_sq() const {
        double s = 0.0;
        for (double x : data_) s += x * x;
        return s;
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : data_) m = std::max(m, std::abs(x));
        return m;
    }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

private:
    void check_same_shape(const Matrix& o, const char* op) const {
        if (!same_shape(o)) {
            throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                        shape_str(*this) + " vs " + shape_str(o));
        }
    }

    static std::string shape_str(const Matrix& m) {
        return std::to_string(m.rows_) + "x" + std::to_string(m.cols_);
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ, " +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                    " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                c(i, j) += aik * b(k, j);
            }
        }
    }
    return c;
}

inline Matrix operator*(const Matrix& a, const Matrix& b) { return matmul(a, b); }

/// Outer product of a column of `b_like` semantics: u (m x 1 as vector) v (1 x n).
inline Matrix outer(const std::vector<double>& u, const std::vector<double>& v) {
    Matrix m(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j)
            m(i, j) = u[i] * v[j];
    return m;
}

/// Scale row i of m by v[i].
inline Matrix scale_rows(const Matrix& m, const std::vector<double>& v) {
    if (v.size() != m.rows()) {
        throw std::invalid_argument("scale_rows: vector length " + std::to_string(v.size()) +
                                    " != rows " + std::to_string(m.rows()));
    }
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            out(i, j) *= v[i];
    return out;
}

/// Inverse of a small square matrix by Gauss-Jordan elimination with partial
/// pivoting. Throws NumericError when a pivot is (numerically) zero.
inline Matrix inverse(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("inverse: matrix is " + std::to_string(m.rows()) + "x" +
                                    std::to_string(m.cols()) + ", must be square");
    }
    const std::size_t n = m.rows();
    Matrix a = m;
    Matrix inv = Matrix::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t i = col + 1; i < n; ++i) {
            if (std::abs(a(i, col)) > std::abs(a(pivot, col))) pivot = i;
        }
        if (std::abs(a(pivot, col)) < 1e-300) {
            throw NumericError("inverse: matrix is singular (pivot " + std::to_string(col) + ")");
        }
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a(col, j), a(pivot, j));
                std::swap(inv(col, j), inv(pivot, j));
            }
        }
        const double p = a(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            a(col, j) /= p;
            inv(col, j) /= p;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (i == col) continue;
            const double f = a(i, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                a(i, j) -= f * a(col, j);
                inv(i, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

/// Scale column j of m by v[j].
inline Matrix scale_cols(const Matrix& m, const std::vector<double>& v) {
    if (v.size() != m.cols()) {
        throw std::invalid_argument("scale_cols: vector length " + std::to_string(v.size()) +
                                    " != cols " + std::to_string(m.cols()));
    }
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            out(i, j) *= v[j];
    return out;
}

}  // namespace lrvd
