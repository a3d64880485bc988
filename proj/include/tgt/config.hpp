#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tgt/bench.hpp"
#include "tgt/model.hpp"
#include "tgt/pipeline.hpp"

namespace tgt {

// Flat INI-style run configuration: [section] headers, key = value lines,
// '#' comments. Unknown sections or keys are rejected outright.

struct DataConfig {
    std::string kind = "geometry";  // geometry | tsp
    std::string path = "dataset.txt";
    int count = 1000;
    int n_min = 6;
    int n_max = 12;
    int knn = 3;
    int tsp_points = 12;
    int tsp_knn = 4;
    double heldout_fraction = 0.1;
};

struct TrainConfig {
    StageConfig stage;
    std::string distance_checkpoint;  // stage 3: frozen distance predictor
    std::string distance_config;      // config file describing that model
};

struct InferConfig {
    int samples = 10;
    std::string statistic = "mean";  // mean | median | mode
    double ewt_tau = 0.1;
    std::vector<double> confidence_thresholds{0.0, 0.25, 0.5, 0.75};
    std::string distance_checkpoint;
    std::string distance_config;
};

struct BenchConfig {
    std::vector<int> sizes{32, 64, 128, 256};
    int reps = 5;
    std::vector<Variant> mechanisms{Variant::none, Variant::triplet_agg, Variant::triplet_att};
    bool backward = false;
    BenchDims dims;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string precision = "f64";  // f32 | f64
    std::string output_dir = "out";
    DataConfig data;
    TGTConfig model;
    TrainConfig train;
    InferConfig infer;
    BenchConfig bench;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline double to_real(const std::string& v, const std::string& key) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') throw ConfigError("bad numeric value for '" + key + "': " + v);
    return x;
}

inline long to_int(const std::string& v, const std::string& key) {
    char* end = nullptr;
    const long x = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') throw ConfigError("bad integer value for '" + key + "': " + v);
    return x;
}

inline bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("bad boolean value for '" + key + "': " + v);
}

template <typename T>
std::vector<T> to_list(const std::string& v, const std::string& key,
                       T (*convert)(const std::string&, const std::string&)) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(convert(item, key));
    }
    if (out.empty()) throw ConfigError("empty list for '" + key + "'");
    return out;
}

inline double cv_real(const std::string& v, const std::string& k) { return to_real(v, k); }
inline int cv_int(const std::string& v, const std::string& k) { return static_cast<int>(to_int(v, k)); }

}  // namespace detail

inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    RunConfig cfg;

    using Setter = std::function<void(const std::string&)>;
    std::map<std::string, std::map<std::string, Setter>> schema;
    auto& run = schema["run"];
    run["seed"] = [&](const std::string& v) { cfg.seed = static_cast<std::uint64_t>(detail::to_int(v, "seed")); };
    run["precision"] = [&](const std::string& v) {
        if (v != "f32" && v != "f64") throw ConfigError("precision must be f32 or f64, got " + v);
        cfg.precision = v;
    };
    run["output_dir"] = [&](const std::string& v) { cfg.output_dir = v; };

    auto& data = schema["data"];
    data["kind"] = [&](const std::string& v) {
        if (v != "geometry" && v != "tsp") throw ConfigError("data kind must be geometry or tsp");
        cfg.data.kind = v;
    };
    data["path"] = [&](const std::string& v) { cfg.data.path = v; };
    data["count"] = [&](const std::string& v) { cfg.data.count = detail::cv_int(v, "count"); };
    data["n_min"] = [&](const std::string& v) { cfg.data.n_min = detail::cv_int(v, "n_min"); };
    data["n_max"] = [&](const std::string& v) { cfg.data.n_max = detail::cv_int(v, "n_max"); };
    data["knn"] = [&](const std::string& v) { cfg.data.knn = detail::cv_int(v, "knn"); };
    data["tsp_points"] = [&](const std::string& v) { cfg.data.tsp_points = detail::cv_int(v, "tsp_points"); };
    data["tsp_knn"] = [&](const std::string& v) { cfg.data.tsp_knn = detail::cv_int(v, "tsp_knn"); };
    data["heldout_fraction"] = [&](const std::string& v) {
        cfg.data.heldout_fraction = detail::to_real(v, "heldout_fraction");
    };

    auto& model = schema["model"];
    model["num_layers"] = [&](const std::string& v) { cfg.model.num_layers = detail::cv_int(v, "num_layers"); };
    model["layer_multiplier"] = [&](const std::string& v) {
        cfg.model.layer_multiplier = detail::cv_int(v, "layer_multiplier");
    };
    model["node_dim"] = [&](const std::string& v) { cfg.model.node_dim = detail::cv_int(v, "node_dim"); };
    model["edge_dim"] = [&](const std::string& v) { cfg.model.edge_dim = detail::cv_int(v, "edge_dim"); };
    model["heads"] = [&](const std::string& v) { cfg.model.heads = detail::cv_int(v, "heads"); };
    model["triplet_heads"] = [&](const std::string& v) {
        cfg.model.triplet_heads = detail::cv_int(v, "triplet_heads");
    };
    model["variant"] = [&](const std::string& v) { cfg.model.variant = variant_from_name(v); };
    model["node_ffn_dim"] = [&](const std::string& v) { cfg.model.node_ffn_dim = detail::cv_int(v, "node_ffn_dim"); };
    model["edge_ffn_dim"] = [&](const std::string& v) { cfg.model.edge_ffn_dim = detail::cv_int(v, "edge_ffn_dim"); };
    model["source_dropout"] = [&](const std::string& v) {
        cfg.model.dropout.source_p = detail::to_real(v, "source_dropout");
    };
    model["triplet_dropout"] = [&](const std::string& v) {
        cfg.model.dropout.triplet_p = detail::to_real(v, "triplet_dropout");
    };
    model["path_dropout"] = [&](const std::string& v) {
        cfg.model.dropout.path_p = detail::to_real(v, "path_dropout");
    };
    model["activation_dropout"] = [&](const std::string& v) {
        cfg.model.dropout.activation_p = detail::to_real(v, "activation_dropout");
    };
    model["num_bins"] = [&](const std::string& v) { cfg.model.bins.num_bins = detail::cv_int(v, "num_bins"); };
    model["bin_range"] = [&](const std::string& v) { cfg.model.bins.range = detail::to_real(v, "bin_range"); };
    model["encoding"] = [&](const std::string& v) { cfg.model.encoding = encoding_from_name(v); };
    model["max_hops"] = [&](const std::string& v) { cfg.model.max_hops = detail::cv_int(v, "max_hops"); };
    model["num_node_types"] = [&](const std::string& v) {
        cfg.model.num_node_types = detail::cv_int(v, "num_node_types");
    };
    model["num_bond_types"] = [&](const std::string& v) {
        cfg.model.num_bond_types = detail::cv_int(v, "num_bond_types");
    };
    model["coord_dim"] = [&](const std::string& v) { cfg.model.coord_dim = detail::cv_int(v, "coord_dim"); };
    model["rbf_kernels"] = [&](const std::string& v) { cfg.model.rbf_kernels = detail::cv_int(v, "rbf_kernels"); };
    model["fourier_kernels"] = [&](const std::string& v) {
        cfg.model.fourier_kernels = detail::cv_int(v, "fourier_kernels");
    };
    model["fourier_delta_min"] = [&](const std::string& v) {
        cfg.model.fourier_delta_min = detail::to_real(v, "fourier_delta_min");
    };
    model["graph_head"] = [&](const std::string& v) { cfg.model.graph_head = detail::to_bool(v, "graph_head"); };
    model["distance_head"] = [&](const std::string& v) {
        cfg.model.distance_head = detail::to_bool(v, "distance_head");
    };
    model["edge_head"] = [&](const std::string& v) { cfg.model.edge_head = detail::to_bool(v, "edge_head"); };

    auto& train = schema["train"];
    train["stage"] = [&](const std::string& v) { cfg.train.stage.stage = stage_from_name(v); };
    train["steps"] = [&](const std::string& v) { cfg.train.stage.steps = detail::cv_int(v, "steps"); };
    train["batch_size"] = [&](const std::string& v) { cfg.train.stage.batch_size = detail::cv_int(v, "batch_size"); };
    train["max_lr"] = [&](const std::string& v) { cfg.train.stage.max_lr = detail::to_real(v, "max_lr"); };
    train["min_lr"] = [&](const std::string& v) { cfg.train.stage.min_lr = detail::to_real(v, "min_lr"); };
    train["warmup_steps"] = [&](const std::string& v) {
        cfg.train.stage.warmup_steps = detail::cv_int(v, "warmup_steps");
    };
    train["grad_clip"] = [&](const std::string& v) { cfg.train.stage.grad_clip = detail::to_real(v, "grad_clip"); };
    train["dist_loss_weight"] = [&](const std::string& v) {
        cfg.train.stage.dist_loss_weight = detail::to_real(v, "dist_loss_weight");
    };
    train["log_every"] = [&](const std::string& v) { cfg.train.stage.log_every = detail::cv_int(v, "log_every"); };
    train["noise_sigma"] = [&](const std::string& v) {
        cfg.train.stage.noise.sigma = detail::to_real(v, "noise_sigma");
    };
    train["noise_nu"] = [&](const std::string& v) { cfg.train.stage.noise.nu = detail::to_real(v, "noise_nu"); };
    train["distance_checkpoint"] = [&](const std::string& v) { cfg.train.distance_checkpoint = v; };
    train["distance_config"] = [&](const std::string& v) { cfg.train.distance_config = v; };

    auto& infer = schema["infer"];
    infer["samples"] = [&](const std::string& v) { cfg.infer.samples = detail::cv_int(v, "samples"); };
    infer["statistic"] = [&](const std::string& v) {
        if (v != "mean" && v != "median" && v != "mode") throw ConfigError("statistic must be mean|median|mode");
        cfg.infer.statistic = v;
    };
    infer["ewt_tau"] = [&](const std::string& v) { cfg.infer.ewt_tau = detail::to_real(v, "ewt_tau"); };
    infer["confidence_thresholds"] = [&](const std::string& v) {
        cfg.infer.confidence_thresholds = detail::to_list<double>(v, "confidence_thresholds", detail::cv_real);
    };
    infer["distance_checkpoint"] = [&](const std::string& v) { cfg.infer.distance_checkpoint = v; };
    infer["distance_config"] = [&](const std::string& v) { cfg.infer.distance_config = v; };

    auto& bench = schema["bench"];
    bench["sizes"] = [&](const std::string& v) {
        cfg.bench.sizes = detail::to_list<int>(v, "sizes", detail::cv_int);
    };
    bench["reps"] = [&](const std::string& v) { cfg.bench.reps = detail::cv_int(v, "reps"); };
    bench["mechanisms"] = [&](const std::string& v) {
        cfg.bench.mechanisms.clear();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = detail::trim(item);
            if (!item.empty()) cfg.bench.mechanisms.push_back(variant_from_name(item));
        }
        if (cfg.bench.mechanisms.empty()) throw ConfigError("empty mechanism list");
    };
    bench["backward"] = [&](const std::string& v) { cfg.bench.backward = detail::to_bool(v, "backward"); };
    bench["node_dim"] = [&](const std::string& v) { cfg.bench.dims.node_dim = detail::cv_int(v, "node_dim"); };
    bench["edge_dim"] = [&](const std::string& v) { cfg.bench.dims.edge_dim = detail::cv_int(v, "edge_dim"); };
    bench["heads"] = [&](const std::string& v) { cfg.bench.dims.heads = detail::cv_int(v, "heads"); };
    bench["triplet_heads"] = [&](const std::string& v) {
        cfg.bench.dims.triplet_heads = detail::cv_int(v, "triplet_heads");
    };

    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
            section = line.substr(1, line.size() - 2);
            if (!schema.count(section)) {
                throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" + section + "]");
            }
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
        auto& sec = schema[section];
        auto it = sec.find(key);
        if (it == sec.end()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                              "' in section [" + section + "]");
        }
        it->second(value);
    }
    // seed propagates into the stage config so one value drives everything
    cfg.train.stage.seed = cfg.seed;
    cfg.train.stage.heldout_fraction = cfg.data.heldout_fraction;
    return cfg;
}

}  // namespace tgt
