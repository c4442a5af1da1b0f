#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvd/adapter.hpp"
#include "lrvd/matrix.hpp"
#include "lrvd/rng.hpp"
#include "lrvd/svd.hpp"

namespace lrvd {

enum class TaskKind { kRegression, kClassification };
enum class Activation { kIdentity, kRelu };
enum class ForwardMode { kDeterministic, kLocalReparam, kDirectSample };

inline std::string to_string(TaskKind k) {
    return k == TaskKind::kRegression ? "regression" : "classification";
}
inline std::string to_string(Activation a) {
    return a == Activation::kIdentity ? "identity" : "relu";
}

/// Synthetic task with known ground truth. Data is fully determined by the
/// generator parameters and seed; exports carry the parameters only.
struct SyntheticTask {
    TaskKind kind = TaskKind::kRegression;
    std::size_t d_in = 0;
    std::size_t d_out = 0;  // output dim, or class count for classification
    std::uint64_t seed = 0;

    // regression teacher: y = (w0 + delta_w_star) x + noise
    Matrix w0;            // the "pretrained" weights the model backbone reuses
    Matrix delta_w_star;  // rank r_star by construction
    std::size_t r_star = 0;
    std::vector<double> spectrum;
    double noise_std = 0.0;

    // classification generator
    Matrix class_means;  // n_classes x d_in
    double separation = 0.0;
    double label_noise = 0.0;

    Matrix x_train, x_val, x_test;
    Matrix y_train, y_val, y_test;                      // regression targets
    std::vector<int> labels_train, labels_val, labels_test;  // classification
};

namespace detail {

// Orthonormal columns: QR of a Gaussian matrix (Haar distributed up to sign).
inline Matrix random_orthonormal_columns(RngState& rng, std::size_t dim, std::size_t k) {
    Matrix g = sample_gaussian(rng, dim, k, 0.0, 1.0);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t o = 0; o < j; ++o) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += g(i, o) * g(i, j);
            for (std::size_t i = 0; i < dim; ++i) g(i, j) -= dot * g(i, o);
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < dim; ++i) norm += g(i, j) * g(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw std::runtime_error("random_orthonormal_columns: degenerate draw");
        for (std::size_t i = 0; i < dim; ++i) g(i, j) /= norm;
    }
    return g;
}

}  // namespace detail

/// Low-rank regression task: teacher y = (w0 + sum_i s_i u_i v_i^T) x + eta.
/// The u_i, v_i are orthonormal so svd(delta_w_star) recovers the spectrum
/// exactly. spectrum must be positive descending with one entry per teacher
/// rank; r_star = 0 means the teacher equals the frozen backbone.
inline SyntheticTask make_lowrank_regression_task(std::size_t d_in, std::size_t d_out,
                                                  std::size_t r_star,
                                                  const std::vector<double>& spectrum,
                                                  double noise_std, std::size_t n_train,
                                                  std::size_t n_val, std::size_t n_test,
                                                  std::uint64_t seed) {
    if (r_star > std::min(d_in, d_out)) {
        throw std::invalid_argument("make_lowrank_regression_task: r_star " + std::to_string(r_star) +
                                    " exceeds min(d_in, d_out) = " +
                                    std::to_string(std::min(d_in, d_out)));
    }
    if (spectrum.size() != r_star) {
        throw std::invalid_argument("make_lowrank_regression_task: spectrum has " +
                                    std::to_string(spectrum.size()) + " entries for r_star " +
                                    std::to_string(r_star));
    }
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        if (!(spectrum[i] > 0.0) || (i > 0 && spectrum[i] > spectrum[i - 1])) {
            throw std::invalid_argument("make_lowrank_regression_task: spectrum must be positive descending");
        }
    }

    SyntheticTask t;
    t.kind = TaskKind::kRegression;
    t.d_in = d_in;
    t.d_out = d_out;
    t.seed = seed;
    t.r_star = r_star;
    t.spectrum = spectrum;
    t.noise_std = noise_std;

    // Stream 1 is reserved for task generation so that a model or trainer
    // sharing the same seed never replays these draws.
    RngState root(seed, 1);
    RngState w0_rng = root.split(0);
    t.w0 = sample_gaussian(w0_rng, d_out, d_in, 0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));

    t.delta_w_star = Matrix(d_out, d_in);
    if (r_star > 0) {
        RngState dw_rng = root.split(1);
        Matrix u = detail::random_orthonormal_columns(dw_rng, d_out, r_star);
        Matrix v = detail::random_orthonormal_columns(dw_rng, d_in, r_star);
        for (std::size_t k = 0; k < r_star; ++k)
            for (std::size_t i = 0; i < d_out; ++i)
                for (std::size_t j = 0; j < d_in; ++j)
                    t.delta_w_star(i, j) += spectrum[k] * u(i, k) * v(j, k);
    }

    const Matrix teacher_t = (t.w0 + t.delta_w_star).transpose();
    auto gen_split = [&](std::size_t n, std::uint64_t x_stream, std::uint64_t noise_stream,
                         Matrix& x, Matrix& y) {
        RngState xr = root.split(x_stream);
        RngState nr = root.split(noise_stream);
        x = sample_gaussian(xr, n, d_in, 0.0, 1.0);
        y = matmul(x, teacher_t);
        if (noise_std > 0.0) y += sample_gaussian(nr, n, d_out, 0.0, noise_std);
    };
    gen_split(n_train, 2, 3, t.x_train, t.y_train);
    gen_split(n_val, 4, 5, t.x_val, t.y_val);
    gen_split(n_test, 6, 7, t.x_test, t.y_test);
    return t;
}

/// Gaussian cluster classification. Class means are separation * random unit
/// vectors; inputs are unit-variance Gaussians around their class mean. A
/// label_noise fraction of labels is resampled uniformly (on every split),
/// creating irreducible uncertainty.
inline SyntheticTask make_cluster_classification_task(std::size_t d_in, std::size_t n_classes,
                                                      double separation, double label_noise,
                                                      std::size_t n_train, std::size_t n_val,
                                                      std::size_t n_test, std::uint64_t seed) {
    if (n_classes < 2) {
        throw std::invalid_argument("make_cluster_classification_task: need at least 2 classes");
    }
    if (label_noise < 0.0 || label_noise > 1.0) {
        throw std::invalid_argument("make_cluster_classification_task: label_noise " +
                                    std::to_string(label_noise) + " outside [0, 1]");
    }

    SyntheticTask t;
    t.kind = TaskKind::kClassification;
    t.d_in = d_in;
    t.d_out = n_classes;
    t.seed = seed;
    t.separation = separation;
    t.label_noise = label_noise;

    RngState root(seed, 1);
    RngState means_rng = root.split(0);
    t.class_means = Matrix(n_classes, d_in);
    for (std::size_t c = 0; c < n_classes; ++c) {
        double norm = 0.0;
        std::vector<double> dir(d_in);
        for (std::size_t j = 0; j < d_in; ++j) {
            dir[j] = means_rng.next_gaussian();
            norm += dir[j] * dir[j];
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d_in; ++j) t.class_means(c, j) = separation * dir[j] / norm;
    }

    auto gen_split = [&](std::size_t n, std::uint64_t stream, Matrix& x, std::vector<int>& labels) {
        RngState r = root.split(stream);
        x = Matrix(n, d_in);
        labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int c = static_cast<int>(i % n_classes);  // balanced classes
            for (std::size_t j = 0; j < d_in; ++j) {
                x(i, j) = t.class_means(static_cast<std::size_t>(c), j) + r.next_gaussian();
            }
            int label = c;
            if (label_noise > 0.0 && r.next_uniform() < label_noise) {
                label = static_cast<int>(r.next_below(n_classes));
            }
            labels[i] = label;
        }
    };
    gen_split(n_train, 1, t.x_train, t.labels_train);
    gen_split(n_val, 2, t.x_val, t.labels_val);
    gen_split(n_test, 3, t.x_test, t.labels_test);
    return t;
}

/// One backbone layer: frozen weights, frozen bias, activation, and an
/// optional rank-tied adapter on the weight matrix.
struct Layer {
    Matrix w0;                 // d_out x d_in, never trained
    std::vector<double> bias;  // d_out, never trained
    Activation activation = Activation::kIdentity;
    std::optional<RankTiedAdapter> adapter;

    std::size_t d_in() const { return w0.cols(); }
    std::size_t d_out() const { return w0.rows(); }
};

struct Head {
    Matrix w;  // d_out x d_feat, trainable
    Matrix b;  // 1 x d_out, trainable
};

/// Frozen backbone with attached adapters and a trainable head.
struct BackboneModel {
    std::vector<Layer> layers;
    Head head;
    TaskKind task = TaskKind::kRegression;

    std::size_t d_in() const { return layers.front().d_in(); }
    std::size_t d_out() const { return head.w.rows(); }

    std::vector<RankTiedAdapter*> adapters() {
        std::vector<RankTiedAdapter*> out;
        for (Layer& l : layers)
            if (l.adapter) out.push_back(&*l.adapter);
        return out;
    }
    std::vector<const RankTiedAdapter*> adapters() const {
        std::vector<const RankTiedAdapter*> out;
        for (const Layer& l : layers)
            if (l.adapter) out.push_back(&*l.adapter);
        return out;
    }
};

struct ModelConfig {
    std::string backbone = "linear";  // "linear" | "mlp"
    std::size_t hidden_dim = 32;      // mlp only
    std::size_t adapter_rank = 16;    // r_init; 0 disables adapters
    double lambda = 16.0;
    double init_log_alpha = -8.0;
    std::uint64_t seed = 0;
};

/// Build a frozen backbone for the task. The regression "linear" backbone
/// reuses the task's pretrained w0 (the teacher is w0 + a low-rank update,
/// so the adapter is exactly the object being fit) and its head starts at
/// the identity. The classification "mlp" backbone is a frozen random
/// two-layer feature extractor with adapters on both weight matrices and a
/// zero-initialized head.
inline BackboneModel build_model(const ModelConfig& cfg, const SyntheticTask& task) {
    if (cfg.backbone != "linear" && cfg.backbone != "mlp") {
        throw std::invalid_argument("build_model: unknown backbone '" + cfg.backbone +
                                    "' (expected \"linear\" or \"mlp\")");
    }
    if (cfg.backbone == "linear" && task.kind == TaskKind::kRegression && task.w0.rows() == 0) {
        throw std::invalid_argument("build_model: regression task carries no pretrained w0");
    }

    BackboneModel m;
    m.task = task.kind;
    RngState rng(cfg.seed, 2);  // stream 2: model construction
    RngState backbone_rng = rng.split(0);
    RngState adapter_rng = rng.split(1);
    RngState head_rng = rng.split(2);

    auto attach_adapter = [&](Layer& l) {
        if (cfg.adapter_rank == 0) return;
        l.adapter = make_adapter(adapter_rng, l.d_in(), l.d_out(), cfg.adapter_rank, cfg.lambda,
                                 cfg.init_log_alpha);
    };

    if (cfg.backbone == "linear") {
        Layer l;
        l.w0 = task.kind == TaskKind::kRegression
                   ? task.w0
                   : sample_gaussian(backbone_rng, task.d_out, task.d_in, 0.0,
                                     1.0 / std::sqrt(static_cast<double>(task.d_in)));
        l.bias.assign(l.w0.rows(), 0.0);
        l.activation = Activation::kIdentity;
        attach_adapter(l);
        const std::size_t feat = l.d_out();
        m.layers.push_back(std::move(l));

        if (task.kind == TaskKind::kRegression) {
            m.head.w = Matrix::identity(feat);
        } else {
            m.head.w = Matrix(task.d_out, feat);  // zero init: uniform start
        }
        m.head.b = Matrix(1, task.kind == TaskKind::kRegression ? feat : task.d_out);
    } else {
        const std::size_t h = cfg.hidden_dim;
        Layer l1;
        l1.w0 = sample_gaussian(backbone_rng, h, task.d_in, 0.0,
                                1.0 / std::sqrt(static_cast<double>(task.d_in)));
        l1.bias.assign(h, 0.0);
        l1.activation = Activation::kRelu;
        attach_adapter(l1);
        m.layers.push_back(std::move(l1));

        Layer l2;
        l2.w0 = sample_gaussian(backbone_rng, h, h, 0.0, 1.0 / std::sqrt(static_cast<double>(h)));
        l2.bias.assign(h, 0.0);
        l2.activation = Activation::kRelu;
        attach_adapter(l2);
        m.layers.push_back(std::move(l2));

        if (task.kind == TaskKind::kRegression) {
            m.head.w = sample_gaussian(head_rng, task.d_out, h, 0.0,
                                       1.0 / std::sqrt(static_cast<double>(h)));
        } else {
            m.head.w = Matrix(task.d_out, h);
        }
        m.head.b = Matrix(1, task.d_out);
    }
    return m;
}

/// Forward pass outside the training graph. For kLocalReparam and
/// kDirectSample the rng drives the stochastic draws; kDeterministic uses
/// the posterior-mean update.
inline Matrix model_logits(const BackboneModel& m, const Matrix& x, ForwardMode mode,
                           RngState* rng = nullptr) {
    if ((mode != ForwardMode::kDeterministic) && rng == nullptr) {
        throw std::invalid_argument("model_logits: stochastic forward mode needs an rng");
    }
    Matrix h = x;
    for (const Layer& l : m.layers) {
        Matrix base = matmul(h, l.w0.transpose());
        bool any_bias = false;
        for (double b : l.bias) any_bias = any_bias || b != 0.0;
        if (any_bias) {
            for (std::size_t i = 0; i < base.rows(); ++i)
                for (std::size_t j = 0; j < base.cols(); ++j) base(i, j) += l.bias[j];
        }
        Matrix out;
        if (l.adapter) {
            switch (mode) {
                case ForwardMode::kDeterministic:
                    out = forward_deterministic(h, *l.adapter, base);
                    break;
                case ForwardMode::kLocalReparam:
                    out = forward_local_reparam(h, *l.adapter, *rng, base);
                    break;
                case ForwardMode::kDirectSample:
                    out = forward_direct_sample(h, *l.adapter, *rng, base);
                    break;
            }
        } else {
            out = std::move(base);
        }
        if (l.activation == Activation::kRelu) {
            for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
        }
        h = std::move(out);
    }
    Matrix logits = matmul(h, m.head.w.transpose());
    for (std::size_t i = 0; i < logits.rows(); ++i)
        for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += m.head.b(0, j);
    return logits;
}

/// Trainable parameter count: adapters (mu_a, mu_b, log_alpha) plus head.
inline std::size_t trainable_parameter_count(const BackboneModel& m) {
    std::size_t n = m.head.w.size() + m.head.b.size();
    for (const Layer& l : m.layers) {
        if (!l.adapter) continue;
        n += l.adapter->mu_a.size() + l.adapter->mu_b.size() + l.adapter->log_alpha.size();
    }
    return n;
}

}  // namespace lrvd
