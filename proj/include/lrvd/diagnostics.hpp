#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvd/adapter.hpp"
#include "lrvd/matrix.hpp"
#include "lrvd/rng.hpp"
#include "lrvd/svd.hpp"

namespace lrvd {

// -- residual gauge symmetry ----------------------------------------------

/// Candidate reparameterization R of the rank space together with the
/// diagonal rank covariance D it must preserve.
struct SymmetryProbe {
    std::vector<double> d;  // diagonal of D, strictly positive
    Matrix r;               // r x r invertible candidate
    double tol = 1e-9;
};

struct SymmetryVerdict {
    bool orthogonal = false;
    bool both_diagonal = false;
    bool is_signed_permutation = false;
    bool equal_diagonal = false;  // both transformed covariances diagonal AND equal
    double orthogonality_deviation = 0.0;  // ||R R^T - I||_max
    double max_offdiagonal = 0.0;          // worst off-diagonal of either transform
    double transform_mismatch = 0.0;       // ||R^-1 D R^-T  -  R^T D R||_max
};

namespace detail {

inline double max_offdiag(const Matrix& m) {
    double w = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            if (i != j) w = std::max(w, std::abs(m(i, j)));
    return w;
}

inline bool signed_permutation_structure(const Matrix& r, double tol) {
    const std::size_t n = r.rows();
    std::vector<std::size_t> col_hits(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t row_hits = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const double a = std::abs(r(i, j));
            if (std::abs(a - 1.0) < tol) {
                ++row_hits;
                ++col_hits[j];
            } else if (a >= tol) {
                return false;
            }
        }
        if (row_hits != 1) return false;
    }
    for (std::size_t j = 0; j < n; ++j)
        if (col_hits[j] != 1) return false;
    return true;
}

}  // namespace detail

/// Check which parts of the residual-symmetry characterization hold for a
/// probe: orthogonality of R, diagonality of both transformed rank
/// covariances R^-1 D R^-T and R^T D R, and signed-permutation structure.
inline SymmetryVerdict residual_symmetry_check(const SymmetryProbe& probe) {
    const std::size_t n = probe.d.size();
    if (probe.r.rows() != n || probe.r.cols() != n) {
        throw std::invalid_argument("residual_symmetry_check: R is " + std::to_string(probe.r.rows()) +
                                    "x" + std::to_string(probe.r.cols()) + ", D has " +
                                    std::to_string(n) + " entries");
    }
    for (double v : probe.d) {
        if (!(v > 0.0)) throw std::invalid_argument("residual_symmetry_check: D must be positive");
    }

    const Matrix& r = probe.r;
    const Matrix r_inv = inverse(r);  // throws NumericError when singular
    const Matrix d = Matrix::diagonal(probe.d);

    SymmetryVerdict v;
    Matrix rrt = matmul(r, r.transpose());
    for (std::size_t i = 0; i < n; ++i) rrt(i, i) -= 1.0;
    v.orthogonality_deviation = rrt.max_abs();
    v.orthogonal = v.orthogonality_deviation < probe.tol;

    const Matrix cov_inv = matmul(matmul(r_inv, d), r_inv.transpose());
    const Matrix cov_t = matmul(matmul(r.transpose(), d), r);
    v.max_offdiagonal = std::max(detail::max_offdiag(cov_inv), detail::max_offdiag(cov_t));
    v.both_diagonal = v.max_offdiagonal < probe.tol;
    v.transform_mismatch = (cov_inv - cov_t).max_abs();
    v.equal_diagonal = v.both_diagonal && v.transform_mismatch < probe.tol;
    v.is_signed_permutation = detail::signed_permutation_structure(r, probe.tol);
    return v;
}

/// Monte Carlo verification of the matrix-normal covariance transformation:
/// sample A ~ MN(0, diag(d), I) with n_samples columns, form A' = R^-1 A,
/// and return the max deviation of the empirical row covariance of A' from
/// R^-1 diag(d) R^-T.
inline double mc_covariance_transform_check(const std::vector<double>& d, const Matrix& r,
                                            std::size_t n_samples, RngState rng) {
    const std::size_t dim = d.size();
    if (r.rows() != dim || r.cols() != dim) {
        throw std::invalid_argument("mc_covariance_transform_check: R / D dimension mismatch");
    }
    const Matrix r_inv = inverse(r);
    Matrix a = sample_matrix_normal(rng, Matrix(dim, n_samples), d,
                                    std::vector<double>(n_samples, 1.0));
    Matrix ap = matmul(r_inv, a);
    Matrix emp = matmul(ap, ap.transpose());
    emp *= 1.0 / static_cast<double>(n_samples);
    const Matrix expected = matmul(matmul(r_inv, Matrix::diagonal(d)), r_inv.transpose());
    return (emp - expected).max_abs();
}

// -- energy curves (gauge-ordering experiment) -----------------------------

enum class EnergyOrdering { kSvd, kLearnedAlpha, kRandomPermutation };

inline std::string to_string(EnergyOrdering o) {
    switch (o) {
        case EnergyOrdering::kSvd: return "svd";
        case EnergyOrdering::kLearnedAlpha: return "learned-alpha";
        case EnergyOrdering::kRandomPermutation: return "random-permutation";
    }
    return "?";
}

/// Cumulative energy fractions e_0..e_r of the mean update as rank
/// components are added in some order; e_0 = 0 and (for component orderings)
/// e_r = 1 exactly. AUC is the unweighted mean of e_1..e_r.
struct EnergyCurve {
    EnergyOrdering ordering = EnergyOrdering::kSvd;
    std::vector<double> fractions;
    double auc = 0.0;
};

namespace detail {

inline std::vector<std::size_t> active_indices(const RankTiedAdapter& a) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < a.r_init; ++i)
        if (a.active_mask[i]) idx.push_back(i);
    return idx;
}

/// Active ranks sorted by increasing log_alpha; ties broken by descending
/// component Frobenius norm, then by index, so the ordering is deterministic.
inline std::vector<std::size_t> learned_order(const RankTiedAdapter& a) {
    std::vector<std::size_t> idx = active_indices(a);
    std::vector<double> comp_norm(a.r_init, 0.0);
    for (std::size_t i : idx) comp_norm[i] = rank_component(a, i).frobenius_norm();
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
        if (a.log_alpha[x] != a.log_alpha[y]) return a.log_alpha[x] < a.log_alpha[y];
        if (comp_norm[x] != comp_norm[y]) return comp_norm[x] > comp_norm[y];
        return x < y;
    });
    return idx;
}

inline EnergyCurve curve_from_component_order(const RankTiedAdapter& a,
                                              const std::vector<std::size_t>& order,
                                              EnergyOrdering label) {
    Matrix partial(a.d_out(), a.d_in());
    std::vector<double> energy;
    energy.reserve(order.size());
    for (std::size_t i : order) {
        partial += rank_component(a, i);
        energy.push_back(partial.frobenius_norm_sq());
    }
    const double total = energy.empty() ? 0.0 : energy.back();
    if (!(total > 0.0)) {
        throw std::invalid_argument("energy_curve: mean update is zero, normalized energy "
                                    "fractions are undefined (train the adapter first)");
    }
    EnergyCurve c;
    c.ordering = label;
    c.fractions.push_back(0.0);
    for (double e : energy) c.fractions.push_back(e / total);
    c.auc = std::accumulate(c.fractions.begin() + 1, c.fractions.end(), 0.0) /
            static_cast<double>(order.size());
    return c;
}

}  // namespace detail

inline EnergyCurve energy_curve(const RankTiedAdapter& a, EnergyOrdering ordering,
                                RngState* rng = nullptr) {
    const std::vector<std::size_t> active = detail::active_indices(a);
    if (active.empty()) {
        throw std::invalid_argument("energy_curve: no active ranks, the update is zero");
    }
    switch (ordering) {
        case EnergyOrdering::kSvd: {
            const Matrix dw = delta_w_mean(a);
            const SvdResult s = svd(dw);
            double total = 0.0;
            for (double x : s.sigma) total += x * x;
            if (!(total > 0.0)) {
                throw std::invalid_argument("energy_curve: mean update is zero, normalized energy "
                                            "fractions are undefined (train the adapter first)");
            }
            EnergyCurve c;
            c.ordering = ordering;
            c.fractions.push_back(0.0);
            double acc = 0.0;
            for (std::size_t k = 0; k < active.size(); ++k) {
                if (k < s.sigma.size()) acc += s.sigma[k] * s.sigma[k];
                c.fractions.push_back(acc / total);
            }
            c.auc = std::accumulate(c.fractions.begin() + 1, c.fractions.end(), 0.0) /
                    static_cast<double>(active.size());
            return c;
        }
        case EnergyOrdering::kLearnedAlpha:
            return detail::curve_from_component_order(a, detail::learned_order(a), ordering);
        case EnergyOrdering::kRandomPermutation: {
            if (rng == nullptr) {
                throw std::invalid_argument("energy_curve: random ordering needs an rng");
            }
            std::vector<std::size_t> order = active;
            for (std::size_t i = order.size(); i > 1; --i) {
                const std::size_t j = static_cast<std::size_t>(rng->next_below(i));
                std::swap(order[i - 1], order[j]);
            }
            return detail::curve_from_component_order(a, order, ordering);
        }
    }
    throw std::logic_error("energy_curve: unreachable");
}

/// Fig-2 style comparison for one adapter: AUC of the SVD ordering, of the
/// learned log-alpha ordering, and the mean/std over random permutations of
/// the same active components.
struct GaugeOrderingResult {
    std::size_t adapter_index = 0;
    bool skipped = false;  // fewer than 2 active ranks: ordering is vacuous
    double auc_svd = 0.0;
    double auc_learned = 0.0;
    double auc_random_mean = 0.0;
    double auc_random_std = 0.0;
    double improvement = 0.0;  // auc_learned - auc_random_mean
};

inline std::vector<GaugeOrderingResult> gauge_ordering_experiment(
    const std::vector<const RankTiedAdapter*>& adapters, std::size_t n_random, RngState rng) {
    std::vector<GaugeOrderingResult> out;
    for (std::size_t ai = 0; ai < adapters.size(); ++ai) {
        const RankTiedAdapter& a = *adapters[ai];
        GaugeOrderingResult res;
        res.adapter_index = ai;
        if (a.active_count() < 2) {
            res.skipped = true;
            out.push_back(res);
            continue;
        }
        res.auc_svd = energy_curve(a, EnergyOrdering::kSvd).auc;
        res.auc_learned = energy_curve(a, EnergyOrdering::kLearnedAlpha).auc;

        RngState arng = rng.split(ai);
        double sum = 0.0, sum_sq = 0.0;
        for (std::size_t t = 0; t < n_random; ++t) {
            RngState prng = arng.split(t);
            const double auc = energy_curve(a, EnergyOrdering::kRandomPermutation, &prng).auc;
            sum += auc;
            sum_sq += auc * auc;
        }
        const double n = static_cast<double>(n_random);
        res.auc_random_mean = sum / n;
        res.auc_random_std = std::sqrt(std::max(0.0, sum_sq / n - res.auc_random_mean * res.auc_random_mean));
        res.improvement = res.auc_learned - res.auc_random_mean;
        out.push_back(res);
    }
    return out;
}

// -- randomized Theorem-1 suite ---------------------------------------------

struct TheoremSuiteReport {
    std::size_t rank = 4;
    std::size_t signed_permutation_count = 0;
    std::size_t signed_permutation_failures = 0;
    double signed_permutation_max_offdiag = 0.0;
    std::size_t orthogonal_count = 0;
    std::size_t orthogonal_failures = 0;
    double orthogonal_min_offdiag = 0.0;  // smallest observed violation
    std::size_t non_orthogonal_count = 0;
    std::size_t non_orthogonal_failures = 0;
    double mc_deviation_identity = 0.0;
    double mc_deviation_permutation = 0.0;
    double mc_deviation_rotation = 0.0;
    bool pass = false;
};

namespace detail {

inline Matrix random_signed_permutation(RngState& rng, std::size_t n) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.next_below(i))]);
    }
    Matrix r(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        r(i, perm[i]) = (rng.next_u64() & 1) ? 1.0 : -1.0;
    }
    return r;
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the sign
/// of the R diagonal folded into Q.
inline Matrix random_orthogonal(RngState& rng, std::size_t n) {
    Matrix g = sample_gaussian(rng, n, n, 0.0, 1.0);
    Matrix q(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) q(i, j) = g(i, j);
        for (std::size_t o = 0; o < j; ++o) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += q(i, o) * q(i, j);
            for (std::size_t i = 0; i < n; ++i) q(i, j) -= dot * q(i, o);
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) norm += q(i, j) * q(i, j);
        norm = std::sqrt(norm);
        double rjj_sign = g(j, j) >= 0.0 ? 1.0 : -1.0;  // diag(R) sign correction
        for (std::size_t i = 0; i < n; ++i) q(i, j) *= rjj_sign / norm;
    }
    return q;
}

inline std::vector<double> distinct_diagonal(RngState& rng, std::size_t n) {
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = static_cast<double>(i + 1) + 0.1 * rng.next_uniform();
    }
    return d;
}

}  // namespace detail

/// Randomized numerical verification of the residual-symmetry theorem:
/// signed permutations preserve diagonality of both transformed covariances;
/// generic orthogonal matrices (distinct D) do not; non-orthogonal
/// reparameterizations cannot keep the transformed covariances equal and
/// diagonal.
inline TheoremSuiteReport run_theorem_suite(std::size_t n_signed, std::size_t n_orthogonal,
                                            std::size_t n_non_orthogonal, std::size_t rank,
                                            RngState rng, double diag_tol = 1e-12,
                                            double violation_floor = 1e-6) {
    TheoremSuiteReport rep;
    rep.rank = rank;
    rep.orthogonal_min_offdiag = std::numeric_limits<double>::infinity();

    RngState sp_rng = rng.split(0);
    for (std::size_t t = 0; t < n_signed; ++t) {
        SymmetryProbe p{detail::distinct_diagonal(sp_rng, rank),
                        detail::random_signed_permutation(sp_rng, rank), 1e-9};
        const SymmetryVerdict v = residual_symmetry_check(p);
        rep.signed_permutation_max_offdiag =
            std::max(rep.signed_permutation_max_offdiag, v.max_offdiagonal);
        if (!(v.orthogonal && v.is_signed_permutation && v.max_offdiagonal < diag_tol)) {
            ++rep.signed_permutation_failures;
        }
        ++rep.signed_permutation_count;
    }

    RngState or_rng = rng.split(1);
    for (std::size_t t = 0; t < n_orthogonal; ++t) {
        Matrix r = detail::random_orthogonal(or_rng, rank);
        while (detail::signed_permutation_structure(r, 1e-3)) {
            r = detail::random_orthogonal(or_rng, rank);
        }
        SymmetryProbe p{detail::distinct_diagonal(or_rng, rank), r, 1e-9};
        const SymmetryVerdict v = residual_symmetry_check(p);
        rep.orthogonal_min_offdiag = std::min(rep.orthogonal_min_offdiag, v.max_offdiagonal);
        if (!(v.orthogonal && v.max_offdiagonal > violation_floor)) {
            ++rep.orthogonal_failures;
        }
        ++rep.orthogonal_count;
    }

    RngState no_rng = rng.split(2);
    for (std::size_t t = 0; t < n_non_orthogonal; ++t) {
        Matrix r = sample_gaussian(no_rng, rank, rank, 0.0, 1.0);
        Matrix rrt = matmul(r, r.transpose());
        for (std::size_t i = 0; i < rank; ++i) rrt(i, i) -= 1.0;
        while (rrt.max_abs() < 1e-3) {  // reject near-orthogonal draws
            r = sample_gaussian(no_rng, rank, rank, 0.0, 1.0);
            rrt = matmul(r, r.transpose());
            for (std::size_t i = 0; i < rank; ++i) rrt(i, i) -= 1.0;
        }
        SymmetryProbe p{detail::distinct_diagonal(no_rng, rank), r, 1e-9};
        const SymmetryVerdict v = residual_symmetry_check(p);
        if (v.equal_diagonal) ++rep.non_orthogonal_failures;
        ++rep.non_orthogonal_count;
    }

    RngState mc_rng = rng.split(3);
    const std::vector<double> unit_d(rank, 1.0);
    rep.mc_deviation_identity =
        mc_covariance_transform_check(unit_d, Matrix::identity(rank), 100000, mc_rng.split(0));
    RngState perm_rng = mc_rng.split(1);
    rep.mc_deviation_permutation = mc_covariance_transform_check(
        detail::distinct_diagonal(perm_rng, rank), detail::random_signed_permutation(perm_rng, rank),
        100000, mc_rng.split(2));
    RngState rot_rng = mc_rng.split(3);
    rep.mc_deviation_rotation = mc_covariance_transform_check(
        detail::distinct_diagonal(rot_rng, rank), detail::random_orthogonal(rot_rng, rank), 100000,
        mc_rng.split(4));

    rep.pass = rep.signed_permutation_failures == 0 && rep.orthogonal_failures == 0 &&
               rep.non_orthogonal_failures == 0 && rep.mc_deviation_identity < 0.05 &&
               rep.mc_deviation_permutation < 0.1 && rep.mc_deviation_rotation < 0.1;
    return rep;
}

}  // namespace lrvd
