#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvd/matrix.hpp"
#include "lrvd/model.hpp"
#include "lrvd/rng.hpp"

namespace lrvd {

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            p(i, j) = std::exp(logits(i, j) - mx);
            z += p(i, j);
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) p(i, j) /= z;
    }
    return p;
}

/// Predictive distribution summary. Classification carries per-example
/// probability rows (simplex rows even after MC averaging); regression
/// carries predictive means and across-sample variances.
struct PredictiveResult {
    TaskKind kind = TaskKind::kClassification;
    std::size_t k = 0;
    Matrix probs;     // classification: batch x classes
    Matrix mean;      // regression: batch x d_out
    Matrix variance;  // regression: batch x d_out (zero for k < 2)

    std::size_t size() const {
        return kind == TaskKind::kClassification ? probs.rows() : mean.rows();
    }
};

/// Monte Carlo predictive inference. k = 0 is deterministic posterior-mean
/// inference; k >= 1 averages k direct-sampling passes in probability space,
/// each pass driven by the substream rng.split(t). Samples land in
/// pre-indexed slots and are reduced in index order, so any parallel
/// execution produces the identical result.
inline PredictiveResult mc_predict(const BackboneModel& model, const Matrix& inputs,
                                   std::size_t k, RngState rng) {
    PredictiveResult res;
    res.kind = model.task;
    res.k = k;

    if (k == 0) {
        Matrix out = model_logits(model, inputs, ForwardMode::kDeterministic);
        if (model.task == TaskKind::kClassification) {
            res.probs = softmax_rows(out);
        } else {
            res.mean = std::move(out);
            res.variance = Matrix(inputs.rows(), model.d_out());
        }
        return res;
    }

    std::vector<Matrix> slots(k);
    for (std::size_t t = 0; t < k; ++t) {
        RngState sub = rng.split(t);
        Matrix out = model_logits(model, inputs, ForwardMode::kDirectSample, &sub);
        slots[t] = model.task == TaskKind::kClassification ? softmax_rows(out) : std::move(out);
    }

    Matrix acc(slots[0].rows(), slots[0].cols());
    for (const Matrix& s : slots) acc += s;
    acc *= 1.0 / static_cast<double>(k);

    if (model.task == TaskKind::kClassification) {
        res.probs = std::move(acc);
    } else {
        res.mean = acc;
        res.variance = Matrix(acc.rows(), acc.cols());
        if (k >= 2) {
            for (const Matrix& s : slots) {
                for (std::size_t i = 0; i < acc.size(); ++i) {
                    const double d = s.values()[i] - acc.values()[i];
                    res.variance.values()[i] += d * d;
                }
            }
            res.variance *= 1.0 / static_cast<double>(k - 1);
        }
    }
    return res;
}

inline void require_classification(const PredictiveResult& r, const char* op) {
    if (r.kind != TaskKind::kClassification) {
        throw std::invalid_argument(std::string(op) + ": classification result required");
    }
    if (r.probs.rows() == 0) {
        throw std::invalid_argument(std::string(op) + ": empty result");
    }
}

inline int predicted_class(const PredictiveResult& r, std::size_t i) {
    int best = 0;
    for (std::size_t j = 1; j < r.probs.cols(); ++j) {
        if (r.probs(i, j) > r.probs(i, static_cast<std::size_t>(best))) best = static_cast<int>(j);
    }
    return best;
}

inline double accuracy(const PredictiveResult& r, const std::vector<int>& labels) {
    require_classification(r, "accuracy");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < r.probs.rows(); ++i) {
        if (predicted_class(r, i) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(r.probs.rows());
}

/// Expected calibration error over equal-width confidence bins on [0, 1].
/// Confidence is the max class probability; empty bins contribute nothing.
inline double ece(const PredictiveResult& r, const std::vector<int>& labels,
                  std::size_t n_bins = 15) {
    require_classification(r, "ece");
    if (labels.size() != r.probs.rows()) {
        throw std::invalid_argument("ece: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(r.probs.rows()) + " examples");
    }
    std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
    std::vector<std::size_t> count(n_bins, 0);
    for (std::size_t i = 0; i < r.probs.rows(); ++i) {
        const int pred = predicted_class(r, i);
        const double conf = r.probs(i, static_cast<std::size_t>(pred));
        std::size_t b = static_cast<std::size_t>(conf * static_cast<double>(n_bins));
        if (b >= n_bins) b = n_bins - 1;
        conf_sum[b] += conf;
        acc_sum[b] += (pred == labels[i]) ? 1.0 : 0.0;
        count[b] += 1;
    }
    const double n = static_cast<double>(r.probs.rows());
    double e = 0.0;
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (count[b] == 0) continue;
        const double cb = static_cast<double>(count[b]);
        e += (cb / n) * std::abs(acc_sum[b] / cb - conf_sum[b] / cb);
    }
    return e;
}

/// Mean negative log-probability of the true class, probabilities floored
/// at 1e-12.
inline double nll(const PredictiveResult& r, const std::vector<int>& labels) {
    require_classification(r, "nll");
    double total = 0.0;
    for (std::size_t i = 0; i < r.probs.rows(); ++i) {
        const double p = std::max(r.probs(i, static_cast<std::size_t>(labels[i])), 1e-12);
        total -= std::log(p);
    }
    return total / static_cast<double>(r.probs.rows());
}

/// Regression NLL under a unit-variance Gaussian likelihood, constants
/// dropped: 0.5 * mean_i ||y_i - mean_i||^2.
inline double regression_nll(const PredictiveResult& r, const Matrix& targets) {
    if (r.kind != TaskKind::kRegression) {
        throw std::invalid_argument("regression_nll: regression result required");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < r.mean.size(); ++i) {
        const double d = r.mean.values()[i] - targets.values()[i];
        total += d * d;
    }
    return 0.5 * total / static_cast<double>(r.mean.rows());
}

struct SampleSweepRow {
    std::size_t k = 0;
    double accuracy = 0.0;
    double ece = 0.0;
    double nll = 0.0;
    double seconds = 0.0;
};

/// Inference-time MC sample sweep: one predictive evaluation per k on the
/// shared input set, each with its own substream, with wall-clock recorded.
inline std::vector<SampleSweepRow> sample_sweep(const BackboneModel& model, const Matrix& inputs,
                                                const std::vector<int>& labels,
                                                const std::vector<std::size_t>& k_list,
                                                RngState rng, std::size_t ece_bins = 15) {
    if (k_list.empty()) {
        throw std::invalid_argument("sample_sweep: k_list must be nonempty");
    }
    std::vector<SampleSweepRow> rows;
    rows.reserve(k_list.size());
    for (std::size_t idx = 0; idx < k_list.size(); ++idx) {
        const auto start = std::chrono::steady_clock::now();
        PredictiveResult r = mc_predict(model, inputs, k_list[idx], rng.split(idx));
        const auto stop = std::chrono::steady_clock::now();
        SampleSweepRow row;
        row.k = k_list[idx];
        row.accuracy = accuracy(r, labels);
        row.ece = ece(r, labels, ece_bins);
        row.nll = nll(r, labels);
        row.seconds = std::chrono::duration<double>(stop - start).count();
        rows.push_back(row);
    }
    return rows;
}

}  // namespace lrvd
