#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrvd/io.hpp"
#include "lrvd/matrix.hpp"
#include "lrvd/model.hpp"
#include "lrvd/trainer.hpp"

namespace lrvd {

/// Synthetic task description as written in config files. Regression tasks
/// use d_out / r_star / spectrum / noise_std; classification tasks use
/// n_classes / separation / label_noise.
struct TaskConfig {
    std::string kind = "regression";
    std::size_t d_in = 32;
    std::uint64_t seed = 1;
    std::size_t n_train = 512;
    std::size_t n_val = 256;
    std::size_t n_test = 256;
    // regression
    std::size_t d_out = 32;
    std::size_t r_star = 3;
    std::vector<double> spectrum;  // empty -> linear decay r_star, ..., 1
    double noise_std = 0.05;
    // classification
    std::size_t n_classes = 2;
    double separation = 3.0;
    double label_noise = 0.0;
};

struct EvalConfig {
    std::vector<std::size_t> k_list{0, 10};
    std::size_t ece_bins = 15;
};

struct RunConfig {
    TaskConfig task;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
};

inline SyntheticTask make_task(const TaskConfig& c) {
    if (c.kind == "regression") {
        std::vector<double> spectrum = c.spectrum;
        if (spectrum.empty()) {
            for (std::size_t i = c.r_star; i >= 1; --i) spectrum.push_back(static_cast<double>(i));
        }
        return make_lowrank_regression_task(c.d_in, c.d_out, c.r_star, spectrum, c.noise_std,
                                            c.n_train, c.n_val, c.n_test, c.seed);
    }
    if (c.kind == "classification") {
        return make_cluster_classification_task(c.d_in, c.n_classes, c.separation, c.label_noise,
                                                c.n_train, c.n_val, c.n_test, c.seed);
    }
    throw ConfigError("task.kind must be \"regression\" or \"classification\", got \"" + c.kind + "\"");
}

namespace cfg_detail {

using nlohmann::json;

/// Reads keys out of one config section, collecting key-level problems
/// (missing required keys, wrong types, unknown keys) instead of stopping at
/// the first.
class Section {
public:
    Section(const json& obj, std::string prefix, std::vector<std::string>& errors)
        : obj_(obj), prefix_(std::move(prefix)), errors_(errors) {}

    template <typename T>
    void require(const char* key, T& out) {
        read(key, out, true);
    }

    template <typename T>
    void optional(const char* key, T& out) {
        read(key, out, false);
    }

    void finish() {
        for (const auto& item : obj_.items()) {
            if (!seen_.count(item.key())) {
                errors_.push_back("unknown key \"" + prefix_ + item.key() + "\"");
            }
        }
    }

private:
    template <typename T>
    void read(const char* key, T& out, bool required) {
        seen_.insert(key);
        if (!obj_.contains(key)) {
            if (required) errors_.push_back("missing required key \"" + prefix_ + key + "\"");
            return;
        }
        try {
            out = obj_.at(key).get<T>();
        } catch (const json::exception&) {
            errors_.push_back("key \"" + prefix_ + key + "\" has the wrong type");
        }
    }

    const json& obj_;
    std::string prefix_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

}  // namespace cfg_detail

/// Parse and validate a full run configuration. Unknown keys are errors, not
/// warnings; all problems are reported together in one ConfigError.
inline RunConfig parse_run_config(const nlohmann::json& j) {
    using cfg_detail::Section;
    std::vector<std::string> errors;
    RunConfig cfg;

    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (const auto& item : j.items()) {
        const std::string& k = item.key();
        if (k != "task" && k != "model" && k != "train" && k != "eval") {
            errors.push_back("unknown key \"" + k + "\"");
        }
    }

    if (!j.contains("task")) {
        errors.push_back("missing required key \"task\"");
    } else {
        Section s(j.at("task"), "task.", errors);
        s.require("kind", cfg.task.kind);
        s.require("d_in", cfg.task.d_in);
        s.require("seed", cfg.task.seed);
        s.optional("n_train", cfg.task.n_train);
        s.optional("n_val", cfg.task.n_val);
        s.optional("n_test", cfg.task.n_test);
        if (cfg.task.kind == "classification") {
            s.require("n_classes", cfg.task.n_classes);
            s.require("separation", cfg.task.separation);
            s.require("label_noise", cfg.task.label_noise);
        } else {
            s.require("d_out", cfg.task.d_out);
            s.require("r_star", cfg.task.r_star);
            s.require("noise_std", cfg.task.noise_std);
            s.optional("spectrum", cfg.task.spectrum);
        }
        s.finish();
    }

    if (!j.contains("model")) {
        errors.push_back("missing required key \"model\"");
    } else {
        Section s(j.at("model"), "model.", errors);
        s.require("backbone", cfg.model.backbone);
        s.require("adapter_rank", cfg.model.adapter_rank);
        s.require("lambda", cfg.model.lambda);
        s.require("seed", cfg.model.seed);
        s.optional("hidden_dim", cfg.model.hidden_dim);
        s.optional("init_log_alpha", cfg.model.init_log_alpha);
        s.finish();
    }

    if (!j.contains("train")) {
        errors.push_back("missing required key \"train\"");
    } else {
        Section s(j.at("train"), "train.", errors);
        s.require("steps", cfg.train.steps);
        s.require("batch_size", cfg.train.batch_size);
        s.require("adapter_lr", cfg.train.adapter_lr);
        s.require("head_lr", cfg.train.head_lr);
        s.require("beta", cfg.train.beta);
        s.require("tau", cfg.train.tau);
        s.require("seed", cfg.train.seed);
        s.optional("prune_steps", cfg.train.prune_steps);
        s.optional("eval_interval", cfg.train.eval_interval);
        s.optional("clamp_lo", cfg.train.clamp.lo);
        s.optional("clamp_hi", cfg.train.clamp.hi);
        s.optional("eval_mc_samples", cfg.train.eval_mc_samples);
        s.optional("adam_beta1", cfg.train.adam_beta1);
        s.optional("adam_beta2", cfg.train.adam_beta2);
        s.optional("adam_eps", cfg.train.adam_eps);
        s.optional("head_weight_decay", cfg.train.head_weight_decay);
        s.optional("kl_group_scale", cfg.train.kl_group_scale);
        s.optional("local_reparam_eps", cfg.train.local_reparam_eps);
        s.finish();
    }

    if (j.contains("eval")) {
        Section s(j.at("eval"), "eval.", errors);
        s.optional("k_list", cfg.eval.k_list);
        s.optional("ece_bins", cfg.eval.ece_bins);
        s.finish();
    }

    if (!errors.empty()) {
        std::string msg = "config:";
        for (const std::string& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    cfg.train.validate();
    return cfg;
}

/// Fully resolved configuration (defaults materialized) for bundle echoes.
inline nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json task{{"kind", cfg.task.kind},
                        {"d_in", cfg.task.d_in},
                        {"seed", cfg.task.seed},
                        {"n_train", cfg.task.n_train},
                        {"n_val", cfg.task.n_val},
                        {"n_test", cfg.task.n_test}};
    if (cfg.task.kind == "classification") {
        task["n_classes"] = cfg.task.n_classes;
        task["separation"] = cfg.task.separation;
        task["label_noise"] = cfg.task.label_noise;
    } else {
        task["d_out"] = cfg.task.d_out;
        task["r_star"] = cfg.task.r_star;
        task["spectrum"] = cfg.task.spectrum;
        task["noise_std"] = cfg.task.noise_std;
    }
    return nlohmann::json{
        {"task", std::move(task)},
        {"model",
         {{"backbone", cfg.model.backbone},
          {"hidden_dim", cfg.model.hidden_dim},
          {"adapter_rank", cfg.model.adapter_rank},
          {"lambda", cfg.model.lambda},
          {"init_log_alpha", cfg.model.init_log_alpha},
          {"seed", cfg.model.seed}}},
        {"train",
         {{"steps", cfg.train.steps},
          {"batch_size", cfg.train.batch_size},
          {"adapter_lr", cfg.train.adapter_lr},
          {"head_lr", cfg.train.head_lr},
          {"beta", cfg.train.beta},
          {"tau", cfg.train.tau},
          {"prune_steps", cfg.train.prune_steps},
          {"eval_interval", cfg.train.eval_interval},
          {"seed", cfg.train.seed},
          {"clamp_lo", cfg.train.clamp.lo},
          {"clamp_hi", cfg.train.clamp.hi},
          {"eval_mc_samples", cfg.train.eval_mc_samples},
          {"adam_beta1", cfg.train.adam_beta1},
          {"adam_beta2", cfg.train.adam_beta2},
          {"adam_eps", cfg.train.adam_eps},
          {"head_weight_decay", cfg.train.head_weight_decay},
          {"kl_group_scale", cfg.train.kl_group_scale},
          {"local_reparam_eps", cfg.train.local_reparam_eps}}},
        {"eval", {{"k_list", cfg.eval.k_list}, {"ece_bins", cfg.eval.ece_bins}}}};
}

}  // namespace lrvd
