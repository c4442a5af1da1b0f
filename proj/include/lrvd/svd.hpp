#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvd/matrix.hpp"

namespace lrvd {

/// Thin singular value decomposition m = u * diag(sigma) * v^T with
/// column-orthonormal u (rows x k), v (cols x k), k = min(rows, cols),
/// sigma non-negative and sorted descending.
struct SvdResult {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;

    Matrix reconstruct() const {
        Matrix us = u;
        for (std::size_t j = 0; j < sigma.size(); ++j)
            for (std::size_t i = 0; i < us.rows(); ++i)
                us(i, j) *= sigma[j];
        return matmul(us, v.transpose());
    }
};

namespace detail {

// Orthonormalize any (near-)zero columns of u against the rest so the
// column-orthonormality invariant holds even for rank-deficient input.
inline void complete_orthonormal_basis(Matrix& u, const std::vector<bool>& is_zero) {
    const std::size_t m = u.rows();
    const std::size_t k = u.cols();
    for (std::size_t j = 0; j < k; ++j) {
        if (!is_zero[j]) continue;
        for (std::size_t cand = 0; cand < m; ++cand) {
            for (std::size_t i = 0; i < m; ++i) u(i, j) = (i == cand) ? 1.0 : 0.0;
            for (std::size_t o = 0; o < k; ++o) {
                if (o == j || (is_zero[o] && o > j)) continue;
                double dot = 0.0;
                for (std::size_t i = 0; i < m; ++i) dot += u(i, o) * u(i, j);
                for (std::size_t i = 0; i < m; ++i) u(i, j) -= dot * u(i, o);
            }
            double norm = 0.0;
            for (std::size_t i = 0; i < m; ++i) norm += u(i, j) * u(i, j);
            norm = std::sqrt(norm);
            if (norm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) u(i, j) /= norm;
                break;
            }
        }
    }
}

}  // namespace detail

/// One-sided Jacobi SVD. Sweeps plane rotations until every column pair of
/// the working matrix is orthogonal to relative tolerance `tol`; throws if
/// `max_sweeps` is exhausted first.
inline SvdResult svd(const Matrix& m, double tol = 1e-12, int max_sweeps = 60) {
    if (!m.all_finite()) {
        throw std::invalid_argument("svd: input contains non-finite entries");
    }
    if (m.rows() < m.cols()) {
        SvdResult t = svd(m.transpose(), tol, max_sweeps);
        return SvdResult{t.v, t.sigma, t.u};
    }

    const std::size_t rows = m.rows();
    const std::size_t n = m.cols();
    Matrix g = m;
    Matrix v = Matrix::identity(n);

    bool converged = (n <= 1);
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < rows; ++i) {
                    app += g(i, p) * g(i, p);
                    aqq += g(i, q) * g(i, q);
                    apq += g(i, p) * g(i, q);
                }
                if (app == 0.0 || aqq == 0.0) continue;
                if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
                converged = false;

                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;

                for (std::size_t i = 0; i < rows; ++i) {
                    const double gp = g(i, p), gq = g(i, q);
                    g(i, p) = cs * gp - sn * gq;
                    g(i, q) = sn * gp + cs * gq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = cs * vp - sn * vq;
                    v(i, q) = sn * vp + cs * vq;
                }
            }
        }
    }
    if (!converged) {
        throw NumericError("svd: Jacobi sweeps did not converge after " +
                           std::to_string(max_sweeps) + " sweeps on " +
                           std::to_string(rows) + "x" + std::to_string(n) + " matrix");
    }

    std::vector<double> sigma(n);
    std::vector<bool> zero_col(n, false);
    const double scale = g.max_abs();
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += g(i, j) * g(i, j);
        sigma[j] = std::sqrt(s);
        if (sigma[j] <= scale * 1e-300 || sigma[j] == 0.0) {
            sigma[j] = 0.0;
            zero_col[j] = true;
        } else {
            for (std::size_t i = 0; i < rows; ++i) g(i, j) /= sigma[j];
        }
    }
    detail::complete_orthonormal_basis(g, zero_col);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    SvdResult out;
    out.u = Matrix(rows, n);
    out.v = Matrix(n, n);
    out.sigma.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        out.sigma[j] = sigma[order[j]];
        for (std::size_t i = 0; i < rows; ++i) out.u(i, j) = g(i, order[j]);
        for (std::size_t i = 0; i < n; ++i) out.v(i, j) = v(i, order[j]);
    }
    return out;
}

}  // namespace lrvd
