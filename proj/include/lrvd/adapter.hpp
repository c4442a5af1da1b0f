#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvd/matrix.hpp"
#include "lrvd/rng.hpp"

namespace lrvd {

/// Constants of the sparse variational dropout KL approximation
/// (Molchanov et al.).
struct KlConstants {
    static constexpr double k1 = 0.63576;
    static constexpr double k2 = 1.87320;
    static constexpr double k3 = 1.48695;
};

/// Allowed interval for the trainable log-alpha parameters. The ceiling sits
/// above the pruning threshold (tau = 4 by default) so ranks can actually
/// cross it; the floor keeps exp(-log_alpha) bounded.
struct LogAlphaClamp {
    double lo = -10.0;
    double hi = 8.0;
};

inline double stable_sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

/// Per-rank KL surrogate KL(alpha) = k1*sigmoid(k2 + k3*log_alpha)
/// - 0.5*log(1 + 1/alpha) - k1. Nonpositive, monotone nondecreasing in
/// log_alpha, and tends to 0 as log_alpha -> +inf.
inline double kl_term(double log_alpha) {
    return KlConstants::k1 * stable_sigmoid(KlConstants::k2 + KlConstants::k3 * log_alpha) -
           0.5 * softplus(-log_alpha) - KlConstants::k1;
}

/// Rank-tied variational posterior over low-rank adapter factors.
/// Every parameter of rank i shares the noise-to-signal ratio
/// alpha_i = exp(log_alpha[i]); the weight update is
/// W = W0 + (lambda / r_init) * mu_b * diag(active_mask) * mu_a.
/// Pruned ranks (active_mask false) contribute exactly zero everywhere and
/// never reactivate.
struct RankTiedAdapter {
    Matrix mu_a;                    // r_init x d_in
    Matrix mu_b;                    // d_out x r_init
    std::vector<double> log_alpha;  // length r_init
    double lambda = 16.0;
    std::size_t r_init = 0;
    std::vector<bool> active_mask;

    std::size_t d_in() const { return mu_a.cols(); }
    std::size_t d_out() const { return mu_b.rows(); }
    double scale() const { return lambda / static_cast<double>(r_init); }

    std::size_t active_count() const {
        std::size_t n = 0;
        for (bool a : active_mask) n += a ? 1 : 0;
        return n;
    }

    /// mu_a with pruned rows zeroed.
    Matrix masked_mu_a() const {
        Matrix m = mu_a;
        for (std::size_t i = 0; i < r_init; ++i) {
            if (active_mask[i]) continue;
            for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = 0.0;
        }
        return m;
    }

    /// mu_b with pruned columns zeroed.
    Matrix masked_mu_b() const {
        Matrix m = mu_b;
        for (std::size_t j = 0; j < r_init; ++j) {
            if (active_mask[j]) continue;
            for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) = 0.0;
        }
        return m;
    }
};

/// Fresh adapter: mu_a ~ N(0, 1/d_in), mu_b = 0 (so the update starts at
/// zero), log_alpha at init_log_alpha for every rank, all ranks active.
inline RankTiedAdapter make_adapter(RngState& rng, std::size_t d_in, std::size_t d_out,
                                    std::size_t r_init, double lambda,
                                    double init_log_alpha = -8.0) {
    if (r_init == 0) throw std::invalid_argument("make_adapter: r_init must be positive");
    RankTiedAdapter a;
    a.mu_a = sample_gaussian(rng, r_init, d_in, 0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
    a.mu_b = Matrix(d_out, r_init);
    a.log_alpha.assign(r_init, init_log_alpha);
    a.lambda = lambda;
    a.r_init = r_init;
    a.active_mask.assign(r_init, true);
    return a;
}

/// Sum of kl_term over active ranks.
inline double kl_sum(const RankTiedAdapter& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.r_init; ++i) {
        if (a.active_mask[i]) s += kl_term(a.log_alpha[i]);
    }
    return s;
}

/// Posterior-mean update (lambda / r_init) * mu_b * diag(mask) * mu_a.
inline Matrix delta_w_mean(const RankTiedAdapter& a) {
    return a.scale() * matmul(a.masked_mu_b(), a.masked_mu_a());
}

/// Outer-product contribution of rank i, (lambda / r_init) * b_i a_i^T,
/// ignoring the mask (callers decide which ranks participate).
inline Matrix rank_component(const RankTiedAdapter& a, std::size_t i) {
    Matrix c(a.d_out(), a.d_in());
    for (std::size_t r = 0; r < a.d_out(); ++r)
        for (std::size_t cidx = 0; cidx < a.d_in(); ++cidx)
            c(r, cidx) = a.scale() * a.mu_b(r, i) * a.mu_a(i, cidx);
    return c;
}

namespace detail {

inline void check_forward_shapes(const Matrix& x, const RankTiedAdapter& a,
                                 const Matrix& base_out, const char* op) {
    if (x.cols() != a.d_in()) {
        throw std::invalid_argument(std::string(op) + ": input cols " + std::to_string(x.cols()) +
                                    " != adapter d_in " + std::to_string(a.d_in()));
    }
    if (base_out.rows() != x.rows() || base_out.cols() != a.d_out()) {
        throw std::invalid_argument(std::string(op) + ": base_out is " +
                                    std::to_string(base_out.rows()) + "x" + std::to_string(base_out.cols()) +
                                    ", expected " + std::to_string(x.rows()) + "x" +
                                    std::to_string(a.d_out()));
    }
}

inline std::vector<double> active_alpha(const RankTiedAdapter& a) {
    std::vector<double> al(a.r_init, 0.0);
    for (std::size_t i = 0; i < a.r_init; ++i) {
        al[i] = a.active_mask[i] ? std::exp(a.log_alpha[i]) : 0.0;
    }
    return al;
}

}  // namespace detail

/// base_out + x applied through the posterior-mean update E_q[W] - W0.
inline Matrix forward_deterministic(const Matrix& x, const RankTiedAdapter& a,
                                    const Matrix& base_out) {
    detail::check_forward_shapes(x, a, base_out, "forward_deterministic");
    Matrix xa = matmul(x, a.masked_mu_a().transpose());      // batch x r
    Matrix out = matmul(xa, a.masked_mu_b().transpose());    // batch x d_out
    out *= a.scale();
    out += base_out;
    return out;
}

/// Activation-space means and variances of the stochastic adapter output
/// under the rank-tied posterior (local reparameterization). Exposed for
/// tests and for the trainer's graph builder to cross-check against.
struct LocalReparamMoments {
    Matrix m_s;  // batch x r
    Matrix v_s;  // batch x r
    Matrix m_y;  // batch x d_out
    Matrix v_y;  // batch x d_out
};

inline LocalReparamMoments local_reparam_moments(const Matrix& x, const RankTiedAdapter& a) {
    const Matrix mu_a = a.masked_mu_a();
    const Matrix mu_b = a.masked_mu_b();
    const std::vector<double> alpha = detail::active_alpha(a);

    LocalReparamMoments m;
    m.m_s = matmul(x, mu_a.transpose());
    m.v_s = matmul(hadamard(x, x), scale_rows(hadamard(mu_a, mu_a), alpha).transpose());
    m.m_y = matmul(m.m_s, mu_b.transpose());
    m.v_y = matmul(m.v_s, hadamard(mu_b, mu_b).transpose()) +
            matmul(hadamard(m.m_s, m.m_s), scale_cols(hadamard(mu_b, mu_b), alpha).transpose());
    return m;
}

/// Stochastic forward via local reparameterization: sample in activation
/// space from the moment-matched Gaussian rather than sampling the factors.
inline Matrix forward_local_reparam(const Matrix& x, const RankTiedAdapter& a, RngState& rng,
                                    const Matrix& base_out, double eps_num = 1e-8) {
    detail::check_forward_shapes(x, a, base_out, "forward_local_reparam");
    const LocalReparamMoments m = local_reparam_moments(x, a);
    Matrix out = base_out;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) {
            const double eps = rng.next_gaussian();
            out(i, j) += a.scale() * (m.m_y(i, j) + eps * std::sqrt(m.v_y(i, j) + eps_num));
        }
    }
    return out;
}

/// Stochastic forward by sampling the factors directly:
/// A~N(mu_a, alpha_i mu_a^2), B~N(mu_b, alpha_i mu_b^2) per active rank.
/// This is the inference-time sampler; pruned ranks draw nothing.
inline Matrix forward_direct_sample(const Matrix& x, const RankTiedAdapter& a, RngState& rng,
                                    const Matrix& base_out) {
    detail::check_forward_shapes(x, a, base_out, "forward_direct_sample");
    Matrix at(a.r_init, a.d_in());
    Matrix bt(a.d_out(), a.r_init);
    for (std::size_t i = 0; i < a.r_init; ++i) {
        if (!a.active_mask[i]) continue;
        const double sd = std::sqrt(std::exp(a.log_alpha[i]));
        for (std::size_t j = 0; j < a.d_in(); ++j) {
            at(i, j) = a.mu_a(i, j) + sd * std::abs(a.mu_a(i, j)) * rng.next_gaussian();
        }
        for (std::size_t k = 0; k < a.d_out(); ++k) {
            bt(k, i) = a.mu_b(k, i) + sd * std::abs(a.mu_b(k, i)) * rng.next_gaussian();
        }
    }
    Matrix out = matmul(matmul(x, at.transpose()), bt.transpose());
    out *= a.scale();
    out += base_out;
    return out;
}

/// Number of active ranks with log_alpha strictly below tau.
inline std::size_t effective_rank(const RankTiedAdapter& a, double tau) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.r_init; ++i) {
        if (a.active_mask[i] && a.log_alpha[i] < tau) ++n;
    }
    return n;
}

/// Permanently deactivate ranks whose log_alpha >= tau. Idempotent; never
/// reactivates a rank. Returns the number of ranks pruned by this call.
inline std::size_t prune(RankTiedAdapter& a, double tau) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.r_init; ++i) {
        if (a.active_mask[i] && a.log_alpha[i] >= tau) {
            a.active_mask[i] = false;
            ++n;
        }
    }
    return n;
}

}  // namespace lrvd
