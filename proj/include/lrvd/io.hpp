#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrvd/adapter.hpp"
#include "lrvd/matrix.hpp"
#include "lrvd/model.hpp"

namespace lrvd {

inline constexpr const char* kVersion = "bayeslora 0.1.0";

namespace io {

using nlohmann::json;

inline json to_json(const Matrix& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

inline Matrix matrix_from_json(const json& j) {
    if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
        throw ConfigError("matrix: expected object with rows, cols, data");
    }
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols) {
        throw ConfigError("matrix: data length " + std::to_string(data.size()) + " != rows*cols = " +
                          std::to_string(rows * cols));
    }
    Matrix m(rows, cols);
    m.values() = std::move(data);
    return m;
}

inline json to_json(const RankTiedAdapter& a) {
    std::vector<bool> mask(a.active_mask.begin(), a.active_mask.end());
    return json{{"mu_A", to_json(a.mu_a)},
                {"mu_B", to_json(a.mu_b)},
                {"log_alpha", a.log_alpha},
                {"lambda", a.lambda},
                {"r_init", a.r_init},
                {"active_mask", mask}};
}

inline RankTiedAdapter adapter_from_json(const json& j) {
    RankTiedAdapter a;
    a.mu_a = matrix_from_json(j.at("mu_A"));
    a.mu_b = matrix_from_json(j.at("mu_B"));
    a.log_alpha = j.at("log_alpha").get<std::vector<double>>();
    a.lambda = j.at("lambda").get<double>();
    a.r_init = j.at("r_init").get<std::size_t>();
    a.active_mask = j.at("active_mask").get<std::vector<bool>>();
    if (a.mu_a.rows() != a.r_init || a.mu_b.cols() != a.r_init ||
        a.log_alpha.size() != a.r_init || a.active_mask.size() != a.r_init) {
        throw ConfigError("adapter: inconsistent r_init across fields");
    }
    return a;
}

inline json to_json(const BackboneModel& m) {
    json layers = json::array();
    for (const Layer& l : m.layers) {
        json jl{{"w0", to_json(l.w0)},
                {"bias", l.bias},
                {"activation", to_string(l.activation)}};
        jl["adapter"] = l.adapter ? to_json(*l.adapter) : json(nullptr);
        layers.push_back(std::move(jl));
    }
    return json{{"task", to_string(m.task)},
                {"layers", std::move(layers)},
                {"head", json{{"w", to_json(m.head.w)}, {"b", to_json(m.head.b)}}}};
}

inline BackboneModel model_from_json(const json& j) {
    BackboneModel m;
    const std::string task = j.at("task").get<std::string>();
    if (task == "regression") {
        m.task = TaskKind::kRegression;
    } else if (task == "classification") {
        m.task = TaskKind::kClassification;
    } else {
        throw ConfigError("model: unknown task kind '" + task + "'");
    }
    for (const json& jl : j.at("layers")) {
        Layer l;
        l.w0 = matrix_from_json(jl.at("w0"));
        l.bias = jl.at("bias").get<std::vector<double>>();
        const std::string act = jl.at("activation").get<std::string>();
        if (act == "identity") {
            l.activation = Activation::kIdentity;
        } else if (act == "relu") {
            l.activation = Activation::kRelu;
        } else {
            throw ConfigError("model: unknown activation '" + act + "'");
        }
        if (!jl.at("adapter").is_null()) l.adapter = adapter_from_json(jl.at("adapter"));
        m.layers.push_back(std::move(l));
    }
    m.head.w = matrix_from_json(j.at("head").at("w"));
    m.head.b = matrix_from_json(j.at("head").at("b"));
    if (m.layers.empty()) throw ConfigError("model: no layers");
    return m;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << content;
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline json parse_json_file(const std::string& path) {
    const std::string text = read_text_file(path);
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        // re-parse with exceptions for a located message
        try {
            (void)json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(path + ": " + e.what());
        }
        throw ConfigError(path + ": malformed JSON");
    }
    return j;
}

}  // namespace io

/// Lossless model checkpoint; doubles are emitted in shortest round-trip
/// form so a load reproduces forward outputs bit-exactly.
inline void save_checkpoint(const BackboneModel& model, const std::string& path) {
    io::json j = io::to_json(model);
    j["version"] = kVersion;
    io::write_text_file(path, j.dump(2) + "\n");
}

inline BackboneModel load_checkpoint(const std::string& path) {
    const io::json j = io::parse_json_file(path);
    try {
        return io::model_from_json(j);
    } catch (const io::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

/// Generator parameters of a task (data is regenerated from the seed, never
/// stored raw).
inline io::json task_export(const SyntheticTask& t) {
    io::json j{{"kind", to_string(t.kind)},
               {"d_in", t.d_in},
               {"d_out", t.d_out},
               {"seed", t.seed},
               {"n_train", t.kind == TaskKind::kRegression ? t.x_train.rows() : t.labels_train.size()},
               {"n_val", t.kind == TaskKind::kRegression ? t.x_val.rows() : t.labels_val.size()},
               {"n_test", t.kind == TaskKind::kRegression ? t.x_test.rows() : t.labels_test.size()}};
    if (t.kind == TaskKind::kRegression) {
        j["r_star"] = t.r_star;
        j["spectrum"] = t.spectrum;
        j["noise_std"] = t.noise_std;
    } else {
        j["separation"] = t.separation;
        j["label_noise"] = t.label_noise;
    }
    return j;
}

}  // namespace lrvd
