#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvd/matrix.hpp"

namespace lrvd {

/// Counter-based pseudo-random generator (splitmix64 core). Streams are keyed
/// by (seed, stream path), so substreams obtained through split() are
/// reproducible and independent of how far the parent stream has advanced.
/// All sampling in the library goes through this type; nothing uses
/// std::random, which keeps outputs identical across platforms.
class RngState {
public:
    explicit RngState(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(derive_key(seed, stream)), counter_(0) {}

    /// Substream indexed by `stream_index`. Depends only on this stream's key
    /// and the index, never on the draw position.
    RngState split(std::uint64_t stream_index) const {
        RngState child(0);
        child.key_ = mix(key_ ^ mix(stream_index + 0x9e3779b97f4a7c15ULL));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() {
        ++counter_;
        return mix(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
    }

    /// Uniform in the open interval (0, 1).
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (cosine branch).
    double next_gaussian() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) {
        return mix(mix(seed) ^ mix(stream ^ 0x5851f42d4c957f2dULL));
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

/// Matrix of i.i.d. Normal(mean, std^2) entries. std = 0 yields the constant
/// matrix (degenerate normal).
inline Matrix sample_gaussian(RngState& rng, std::size_t rows, std::size_t cols,
                              double mean, double std) {
    if (std < 0.0) {
        throw std::invalid_argument("sample_gaussian: negative std " + std::to_string(std));
    }
    Matrix m(rows, cols);
    for (double& x : m.values()) x = mean + std * rng.next_gaussian();
    return m;
}

/// Sample from a matrix normal MN(mean, diag(row_cov_diag), diag(col_cov_diag)):
/// entry (i,j) ~ Normal(mean_ij, row_cov_diag[i] * col_cov_diag[j]).
inline Matrix sample_matrix_normal(RngState& rng, const Matrix& mean,
                                   const std::vector<double>& row_cov_diag,
                                   const std::vector<double>& col_cov_diag) {
    if (row_cov_diag.size() != mean.rows() || col_cov_diag.size() != mean.cols()) {
        throw std::invalid_argument("sample_matrix_normal: covariance diagonal lengths (" +
                                    std::to_string(row_cov_diag.size()) + ", " +
                                    std::to_string(col_cov_diag.size()) + ") do not match mean " +
                                    std::to_string(mean.rows()) + "x" + std::to_string(mean.cols()));
    }
    for (double d : row_cov_diag)
        if (!(d > 0.0)) throw std::invalid_argument("sample_matrix_normal: non-positive row covariance entry");
    for (double d : col_cov_diag)
        if (!(d > 0.0)) throw std::invalid_argument("sample_matrix_normal: non-positive column covariance entry");

    Matrix m(mean.rows(), mean.cols());
    for (std::size_t i = 0; i < mean.rows(); ++i) {
        for (std::size_t j = 0; j < mean.cols(); ++j) {
            m(i, j) = mean(i, j) + std::sqrt(row_cov_diag[i] * col_cov_diag[j]) * rng.next_gaussian();
        }
    }
    return m;
}

}  // namespace lrvd
