#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "lrvd/config.hpp"
#include "lrvd/evaluator.hpp"
#include "lrvd/model.hpp"
#include "lrvd/trainer.hpp"

namespace lrvd {

enum class SweepKind { kBeta, kTau, kMcSamples };

inline SweepKind sweep_kind_from_string(const std::string& s) {
    if (s == "beta") return SweepKind::kBeta;
    if (s == "tau") return SweepKind::kTau;
    if (s == "mc") return SweepKind::kMcSamples;
    throw ConfigError("sweep: unknown kind \"" + s + "\" (expected beta, tau or mc)");
}

inline std::string to_string(SweepKind k) {
    switch (k) {
        case SweepKind::kBeta: return "beta";
        case SweepKind::kTau: return "tau";
        case SweepKind::kMcSamples: return "mc";
    }
    return "?";
}

struct SweepRow {
    double grid_value = 0.0;
    std::uint64_t seed = 0;
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double ece = std::numeric_limits<double>::quiet_NaN();
    double nll = std::numeric_limits<double>::quiet_NaN();
    double r_eff_total = 0.0;
    double seconds = 0.0;
};

namespace sweep_detail {

struct TrainedRun {
    SyntheticTask task;
    BackboneModel model;
    RunRecord record;
    double seconds = 0.0;
};

inline RunConfig reseeded(RunConfig cfg, std::uint64_t seed) {
    // One replication seed drives task, model and trainer; their rngs are
    // domain-separated by stream index so this cannot alias draws.
    cfg.task.seed = seed;
    cfg.model.seed = seed;
    cfg.train.seed = seed;
    return cfg;
}

inline TrainedRun train_run(const RunConfig& cfg) {
    TrainedRun run;
    const auto start = std::chrono::steady_clock::now();
    run.task = make_task(cfg.task);
    run.model = build_model(cfg.model, run.task);
    run.record = train(run.model, run.task, cfg.train);
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return run;
}

inline void fill_final_metrics(const TrainedRun& run, const RunConfig& cfg, SweepRow& row) {
    row.seconds = run.seconds;
    double r_eff = 0.0;
    for (const auto* a : run.model.adapters()) {
        r_eff += static_cast<double>(effective_rank(*a, cfg.train.tau));
    }
    row.r_eff_total = r_eff;
    if (!run.record.rows.empty()) {
        const RunRow& last = run.record.rows.back();
        row.accuracy = last.val_accuracy_k;
        row.ece = last.val_ece_k;
        row.nll = last.val_nll_k;
    }
}

}  // namespace sweep_detail

/// Sweep harness. beta retrains per grid point; tau re-thresholds one
/// trained snapshot per seed (pure counting, no retraining); mc delegates to
/// the evaluator's sample sweep on one trained snapshot per seed.
inline std::vector<SweepRow> run_sweep(SweepKind kind, const std::vector<double>& grid,
                                       const RunConfig& base,
                                       const std::vector<std::uint64_t>& seeds) {
    if (grid.empty()) throw ConfigError("sweep: grid must be nonempty");
    if (seeds.empty()) throw ConfigError("sweep: seeds must be nonempty");
    std::vector<SweepRow> rows;

    switch (kind) {
        case SweepKind::kBeta: {
            for (double g : grid) {
                if (!(g >= 0.0)) throw ConfigError("sweep: beta grid values must be >= 0");
                for (std::uint64_t s : seeds) {
                    RunConfig cfg = sweep_detail::reseeded(base, s);
                    cfg.train.beta = g;
                    sweep_detail::TrainedRun run = sweep_detail::train_run(cfg);
                    SweepRow row;
                    row.grid_value = g;
                    row.seed = s;
                    sweep_detail::fill_final_metrics(run, cfg, row);
                    rows.push_back(row);
                }
            }
            break;
        }
        case SweepKind::kTau: {
            for (std::uint64_t s : seeds) {
                RunConfig cfg = sweep_detail::reseeded(base, s);
                sweep_detail::TrainedRun run = sweep_detail::train_run(cfg);
                for (double g : grid) {
                    SweepRow row;
                    row.grid_value = g;
                    row.seed = s;
                    sweep_detail::fill_final_metrics(run, cfg, row);
                    double r_eff = 0.0;
                    for (const auto* a : run.model.adapters()) {
                        r_eff += static_cast<double>(effective_rank(*a, g));
                    }
                    row.r_eff_total = r_eff;  // re-thresholded count
                    rows.push_back(row);
                }
            }
            break;
        }
        case SweepKind::kMcSamples: {
            std::vector<std::size_t> k_list;
            for (double g : grid) {
                if (!(g >= 0.0) || g != std::floor(g)) {
                    throw ConfigError("sweep: mc grid values must be nonnegative integers");
                }
                k_list.push_back(static_cast<std::size_t>(g));
            }
            for (std::uint64_t s : seeds) {
                RunConfig cfg = sweep_detail::reseeded(base, s);
                sweep_detail::TrainedRun run = sweep_detail::train_run(cfg);
                const std::vector<int>* labels = &run.task.labels_val;
                std::vector<SampleSweepRow> table =
                    run.task.kind == TaskKind::kClassification
                        ? sample_sweep(run.model, run.task.x_val, *labels, k_list,
                                       RngState(cfg.train.seed, 4), cfg.eval.ece_bins)
                        : std::vector<SampleSweepRow>{};
                if (run.task.kind == TaskKind::kClassification) {
                    for (const SampleSweepRow& sr : table) {
                        SweepRow row;
                        row.grid_value = static_cast<double>(sr.k);
                        row.seed = s;
                        row.accuracy = sr.accuracy;
                        row.ece = sr.ece;
                        row.nll = sr.nll;
                        row.seconds = sr.seconds;
                        double r_eff = 0.0;
                        for (const auto* a : run.model.adapters()) {
                            r_eff += static_cast<double>(effective_rank(*a, cfg.train.tau));
                        }
                        row.r_eff_total = r_eff;
                        rows.push_back(row);
                    }
                } else {
                    // regression: same sweep over k with the regression NLL
                    for (std::size_t idx = 0; idx < k_list.size(); ++idx) {
                        const auto start = std::chrono::steady_clock::now();
                        PredictiveResult r = mc_predict(run.model, run.task.x_val, k_list[idx],
                                                        RngState(cfg.train.seed, 4).split(idx));
                        SweepRow row;
                        row.grid_value = static_cast<double>(k_list[idx]);
                        row.seed = s;
                        row.nll = regression_nll(r, run.task.y_val);
                        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                                    start).count();
                        double r_eff = 0.0;
                        for (const auto* a : run.model.adapters()) {
                            r_eff += static_cast<double>(effective_rank(*a, cfg.train.tau));
                        }
                        row.r_eff_total = r_eff;
                        rows.push_back(row);
                    }
                }
            }
            break;
        }
    }
    return rows;
}

}  // namespace lrvd
