#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvd/adapter.hpp"
#include "lrvd/autodiff.hpp"
#include "lrvd/evaluator.hpp"
#include "lrvd/matrix.hpp"
#include "lrvd/model.hpp"
#include "lrvd/rng.hpp"

namespace lrvd {

struct TrainConfig {
    std::size_t steps = 3000;
    std::size_t batch_size = 32;
    double adapter_lr = 1e-2;
    double head_lr = 1e-3;
    double beta = 1e-4;  // KL scale, constant (no annealing)
    double tau = 4.0;    // pruning / effective-rank threshold on log_alpha
    std::vector<std::size_t> prune_steps;
    std::size_t eval_interval = 100;
    std::uint64_t seed = 0;
    LogAlphaClamp clamp;
    std::size_t eval_mc_samples = 10;  // k for the periodic evaluation rows
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double head_weight_decay = 0.0;  // decoupled decay, head only
    bool kl_group_scale = false;     // multiply each rank KL by (d_in + d_out)
    double local_reparam_eps = 1e-8;

    void validate() const {
        if (!(adapter_lr > 0.0) || !(head_lr > 0.0)) {
            throw ConfigError("train config: learning rates must be positive");
        }
        if (!(beta >= 0.0)) throw ConfigError("train config: beta must be >= 0");
        if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
        if (eval_interval == 0) throw ConfigError("train config: eval_interval must be positive");
        if (!(clamp.lo < clamp.hi)) throw ConfigError("train config: clamp interval is empty");
        for (std::size_t s : prune_steps) {
            if (s > steps) {
                throw ConfigError("train config: prune step " + std::to_string(s) +
                                  " exceeds total steps " + std::to_string(steps));
            }
        }
    }
};

/// One evaluation row of a training run. wall_clock_seconds is kept in
/// memory for reporting but never serialized into run.jsonl, which must be
/// byte-identical across reruns of the same (config, seed).
struct RunRow {
    std::size_t step = 0;
    double train_loss = 0.0;
    double data_nll = 0.0;
    double kl_sum = 0.0;
    std::vector<std::size_t> effective_ranks;
    std::size_t eval_k = 0;
    double val_accuracy_k0 = std::numeric_limits<double>::quiet_NaN();
    double val_ece_k0 = std::numeric_limits<double>::quiet_NaN();
    double val_nll_k0 = 0.0;
    double val_accuracy_k = std::numeric_limits<double>::quiet_NaN();
    double val_ece_k = std::numeric_limits<double>::quiet_NaN();
    double val_nll_k = 0.0;
    double wall_clock_seconds = 0.0;
};

struct RunRecord {
    std::vector<RunRow> rows;
};

// -- Adam ---------------------------------------------------------------

struct AdamState {
    Matrix m;
    Matrix v;
    std::size_t t = 0;
};

/// Standard Adam with bias correction; optional decoupled weight decay.
inline void adam_step(Matrix& param, const Matrix& grad, AdamState& st, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                      double weight_decay = 0.0) {
    if (!param.same_shape(grad)) {
        throw std::invalid_argument("adam_step: parameter " + std::to_string(param.rows()) + "x" +
                                    std::to_string(param.cols()) + " vs gradient " +
                                    std::to_string(grad.rows()) + "x" + std::to_string(grad.cols()));
    }
    if (st.m.size() == 0) {
        st.m = Matrix(param.rows(), param.cols());
        st.v = Matrix(param.rows(), param.cols());
    }
    ++st.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.values()[i];
        double& m = st.m.values()[i];
        double& v = st.v.values()[i];
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        double& p = param.values()[i];
        p -= lr * mhat / (std::sqrt(vhat) + eps);
        if (weight_decay != 0.0) p -= lr * weight_decay * p;
    }
}

// -- ELBO graph ----------------------------------------------------------

/// Leaf handles into the ELBO tape, one set per adapted layer (in layer
/// order) plus the head.
struct ElboGraph {
    Tape tape;
    struct AdapterVars {
        Var mu_a, mu_b, log_alpha;
    };
    std::vector<AdapterVars> adapters;
    Var head_w, head_b;
    Var data_nll, kl_total, loss;
};

/// Build the per-step training graph: local-reparameterization forward with
/// the supplied noise draws (one batch x d_out matrix per adapted layer),
/// data NLL, and the beta-weighted KL surrogate. Minimizing the returned
/// loss = NLL - beta * sum_i kl_term(log_alpha_i) maximizes the ELBO.
/// Noise is passed in (not drawn here) so gradient checks can freeze it.
inline ElboGraph build_elbo_graph(const BackboneModel& model, const Matrix& x,
                                  const Matrix* targets, const std::vector<int>* labels,
                                  double beta, const std::vector<Matrix>& layer_noise,
                                  double eps_num = 1e-8, bool kl_group_scale = false) {
    ElboGraph g;
    Tape& t = g.tape;
    std::vector<Var> masks;
    std::vector<const RankTiedAdapter*> adapted;

    Var h = t.constant(x);
    std::size_t noise_idx = 0;
    for (const Layer& l : model.layers) {
        Var base = t.matmul(h, t.constant(l.w0.transpose()));
        bool any_bias = false;
        for (double b : l.bias) any_bias = any_bias || b != 0.0;
        if (any_bias) {
            base = t.add_rowvec(base, t.constant(Matrix::row_vector(l.bias)));
        }
        if (l.adapter) {
            const RankTiedAdapter& a = *l.adapter;
            ElboGraph::AdapterVars av;
            av.mu_a = t.leaf(a.mu_a);
            av.mu_b = t.leaf(a.mu_b);
            av.log_alpha = t.leaf(Matrix::row_vector(a.log_alpha));
            g.adapters.push_back(av);
            adapted.push_back(&a);

            std::vector<double> mask_vals(a.r_init);
            for (std::size_t i = 0; i < a.r_init; ++i) mask_vals[i] = a.active_mask[i] ? 1.0 : 0.0;
            Var mask = t.constant(Matrix::row_vector(mask_vals));
            masks.push_back(mask);

            Var alpha = t.mul(t.exp(av.log_alpha), mask);
            Var mu_a_m = t.scale_rows(av.mu_a, mask);
            Var mu_b_m = t.scale_cols(av.mu_b, mask);

            Var m_s = t.matmul(h, t.transpose(mu_a_m));
            Var v_s = t.matmul(t.square(h), t.transpose(t.scale_rows(t.square(mu_a_m), alpha)));
            Var m_y = t.matmul(m_s, t.transpose(mu_b_m));
            Var v_y = t.add(t.matmul(v_s, t.transpose(t.square(mu_b_m))),
                            t.matmul(t.square(m_s), t.transpose(t.scale_cols(t.square(mu_b_m), alpha))));

            if (noise_idx >= layer_noise.size()) {
                throw std::invalid_argument("build_elbo_graph: missing noise for adapted layer " +
                                            std::to_string(noise_idx));
            }
            Var eps = t.constant(layer_noise[noise_idx++]);
            Var stoch = t.add(m_y, t.mul(eps, t.sqrt(t.add_const(v_y, eps_num))));
            h = t.add(base, t.scalar_mul(a.scale(), stoch));
        } else {
            h = base;
        }
        if (l.activation == Activation::kRelu) h = t.relu(h);
    }

    g.head_w = t.leaf(model.head.w);
    g.head_b = t.leaf(model.head.b);
    Var pred = t.add_rowvec(t.matmul(h, t.transpose(g.head_w)), g.head_b);

    if (model.task == TaskKind::kClassification) {
        if (labels == nullptr) throw std::invalid_argument("build_elbo_graph: labels required");
        g.data_nll = t.cross_entropy_with_labels(pred, *labels);
    } else {
        if (targets == nullptr) throw std::invalid_argument("build_elbo_graph: targets required");
        Var diff = t.sub(pred, t.constant(*targets));
        g.data_nll = t.scalar_mul(0.5 / static_cast<double>(x.rows()), t.sum(t.square(diff)));
    }

    bool have_kl = false;
    for (std::size_t i = 0; i < g.adapters.size(); ++i) {
        Var la = g.adapters[i].log_alpha;
        Var sig = t.sigmoid(t.add_const(t.scalar_mul(KlConstants::k3, la), KlConstants::k2));
        // log(1 + alpha^-1) = softplus(-log_alpha); safe since log_alpha is clamped
        Var sp = t.log(t.add_const(t.exp(t.scalar_mul(-1.0, la)), 1.0));
        Var klvec = t.add_const(t.sub(t.scalar_mul(KlConstants::k1, sig), t.scalar_mul(0.5, sp)),
                                -KlConstants::k1);
        klvec = t.mul(klvec, masks[i]);
        if (kl_group_scale) {
            klvec = t.scalar_mul(static_cast<double>(adapted[i]->d_in() + adapted[i]->d_out()), klvec);
        }
        Var s = t.sum(klvec);
        g.kl_total = have_kl ? t.add(g.kl_total, s) : s;
        have_kl = true;
    }
    if (!have_kl) g.kl_total = t.constant(Matrix{{0.0}});
    g.loss = t.add(g.data_nll, t.scalar_mul(-beta, g.kl_total));
    return g;
}

// -- training loop --------------------------------------------------------

namespace detail {

inline std::string adapter_diagnostics(const BackboneModel& model) {
    std::string s;
    std::size_t idx = 0;
    for (const auto* a : model.adapters()) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (double v : a->log_alpha) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        s += " adapter[" + std::to_string(idx++) + "]: max|mu_A|=" + std::to_string(a->mu_a.max_abs()) +
             " max|mu_B|=" + std::to_string(a->mu_b.max_abs()) +
             " log_alpha in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]" +
             " active=" + std::to_string(a->active_count()) + "/" + std::to_string(a->r_init) + ";";
    }
    return s;
}

struct AdapterOptState {
    AdamState mu_a, mu_b, log_alpha;
};

// Clear Adam moments on pruned ranks so those entries can never move again
// (their gradients are structurally zero afterwards).
inline void zero_pruned_moments(const RankTiedAdapter& a, AdapterOptState& st) {
    if (st.mu_a.m.size() == 0) return;
    for (std::size_t r = 0; r < a.r_init; ++r) {
        if (a.active_mask[r]) continue;
        for (std::size_t j = 0; j < a.mu_a.cols(); ++j) {
            st.mu_a.m(r, j) = 0.0;
            st.mu_a.v(r, j) = 0.0;
        }
        for (std::size_t i = 0; i < a.mu_b.rows(); ++i) {
            st.mu_b.m(i, r) = 0.0;
            st.mu_b.v(i, r) = 0.0;
        }
        st.log_alpha.m(0, r) = 0.0;
        st.log_alpha.v(0, r) = 0.0;
    }
}

}  // namespace detail

/// ELBO training: sample batch -> local-reparameterization loss -> backward
/// -> Adam -> clamp log_alpha, with hard pruning at the scheduled steps and
/// an evaluation row every eval_interval steps (and at the final step).
/// Fully deterministic given (model, task, config).
inline RunRecord train(BackboneModel& model, const SyntheticTask& task, const TrainConfig& cfg) {
    cfg.validate();
    std::vector<RankTiedAdapter*> adapters = model.adapters();
    std::vector<detail::AdapterOptState> opt(adapters.size());
    AdamState head_w_opt, head_b_opt;

    RngState root(cfg.seed, 3);  // stream 3: training
    RngState batch_rng = root.split(0);
    RngState noise_rng = root.split(1);
    RngState eval_root = root.split(2);

    const std::size_t n_train = task.x_train.rows();
    if (n_train == 0) throw ConfigError("train: task has no training data");

    RunRecord record;
    const auto t_start = std::chrono::steady_clock::now();

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        Matrix xb(cfg.batch_size, task.d_in);
        Matrix yb;
        std::vector<int> lb;
        if (task.kind == TaskKind::kRegression) yb = Matrix(cfg.batch_size, task.d_out);
        else lb.resize(cfg.batch_size);
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t idx = static_cast<std::size_t>(batch_rng.next_below(n_train));
            for (std::size_t j = 0; j < task.d_in; ++j) xb(b, j) = task.x_train(idx, j);
            if (task.kind == TaskKind::kRegression) {
                for (std::size_t j = 0; j < task.d_out; ++j) yb(b, j) = task.y_train(idx, j);
            } else {
                lb[b] = task.labels_train[idx];
            }
        }

        std::vector<Matrix> noise;
        for (const Layer& l : model.layers) {
            if (l.adapter) noise.push_back(sample_gaussian(noise_rng, cfg.batch_size, l.d_out(), 0.0, 1.0));
        }

        ElboGraph g = build_elbo_graph(model, xb,
                                       task.kind == TaskKind::kRegression ? &yb : nullptr,
                                       task.kind == TaskKind::kClassification ? &lb : nullptr,
                                       cfg.beta, noise, cfg.local_reparam_eps, cfg.kl_group_scale);
        const double loss = g.tape.value(g.loss)(0, 0);
        const double data_nll = g.tape.value(g.data_nll)(0, 0);
        if (!std::isfinite(loss)) {
            throw NumericError("train: non-finite loss at step " + std::to_string(step) + ";" +
                               detail::adapter_diagnostics(model));
        }
        g.tape.backward(g.loss);

        for (std::size_t i = 0; i < adapters.size(); ++i) {
            RankTiedAdapter& a = *adapters[i];
            adam_step(a.mu_a, g.tape.grad(g.adapters[i].mu_a), opt[i].mu_a, cfg.adapter_lr,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            adam_step(a.mu_b, g.tape.grad(g.adapters[i].mu_b), opt[i].mu_b, cfg.adapter_lr,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            Matrix la = Matrix::row_vector(a.log_alpha);
            adam_step(la, g.tape.grad(g.adapters[i].log_alpha), opt[i].log_alpha, cfg.adapter_lr,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            for (std::size_t r = 0; r < a.r_init; ++r) {
                a.log_alpha[r] = std::min(std::max(la(0, r), cfg.clamp.lo), cfg.clamp.hi);
            }
        }
        adam_step(model.head.w, g.tape.grad(g.head_w), head_w_opt, cfg.head_lr,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.head_weight_decay);
        adam_step(model.head.b, g.tape.grad(g.head_b), head_b_opt, cfg.head_lr,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

        if (std::find(cfg.prune_steps.begin(), cfg.prune_steps.end(), step) != cfg.prune_steps.end()) {
            for (std::size_t i = 0; i < adapters.size(); ++i) {
                prune(*adapters[i], cfg.tau);
                detail::zero_pruned_moments(*adapters[i], opt[i]);
            }
        }

        if (step % cfg.eval_interval == 0 || step == cfg.steps) {
            RunRow row;
            row.step = step;
            row.train_loss = loss;
            row.data_nll = data_nll;
            row.kl_sum = 0.0;
            for (const auto* a : adapters) row.kl_sum += kl_sum(*a);
            for (const auto* a : adapters) row.effective_ranks.push_back(effective_rank(*a, cfg.tau));
            row.eval_k = cfg.eval_mc_samples;

            RngState eval_rng = eval_root.split(step);
            PredictiveResult r0 = mc_predict(model, task.x_val, 0, eval_rng.split(0));
            PredictiveResult rk = mc_predict(model, task.x_val, cfg.eval_mc_samples, eval_rng.split(1));
            if (task.kind == TaskKind::kClassification) {
                row.val_accuracy_k0 = accuracy(r0, task.labels_val);
                row.val_ece_k0 = ece(r0, task.labels_val);
                row.val_nll_k0 = nll(r0, task.labels_val);
                row.val_accuracy_k = accuracy(rk, task.labels_val);
                row.val_ece_k = ece(rk, task.labels_val);
                row.val_nll_k = nll(rk, task.labels_val);
            } else {
                row.val_nll_k0 = regression_nll(r0, task.y_val);
                row.val_nll_k = regression_nll(rk, task.y_val);
            }
            row.wall_clock_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            if (record.rows.empty() || record.rows.back().step < step) {
                record.rows.push_back(std::move(row));
            }
        }
    }
    return record;
}

}  // namespace lrvd
