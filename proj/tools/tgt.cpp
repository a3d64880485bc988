// Command-line entry point: dataset generation, three-stage training,
// evaluation, stochastic inference, mechanism benchmarks and the built-in
// verification suite, all driven by an INI config file.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "tgt/config.hpp"
#include "tgt/dataset_io.hpp"
#include "tgt/datagen.hpp"
#include "tgt/tsp.hpp"
#include "tgt/verify.hpp"

namespace fs = std::filesystem;
using namespace tgt;

namespace {

int exit_code_for(ErrorCategory cat) {
    switch (cat) {
        case ErrorCategory::config: return 2;
        case ErrorCategory::io: return 3;
        case ErrorCategory::shape: return 4;
        case ErrorCategory::value: return 4;
        case ErrorCategory::numeric: return 5;
    }
    return 1;
}

const char* category_name(ErrorCategory cat) {
    switch (cat) {
        case ErrorCategory::config: return "config";
        case ErrorCategory::io: return "io";
        case ErrorCategory::shape: return "shape";
        case ErrorCategory::value: return "value";
        case ErrorCategory::numeric: return "numeric";
    }
    return "error";
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    fs::create_directories(cfg.output_dir);
    return (fs::path(cfg.output_dir) / name).string();
}

// ---- gen-data ----

int cmd_gen_data(const RunConfig& cfg) {
    std::vector<GraphInstance> graphs;
    if (cfg.data.kind == "geometry") {
        GeometryDatasetConfig gc;
        gc.count = cfg.data.count;
        gc.n_min = cfg.data.n_min;
        gc.n_max = cfg.data.n_max;
        gc.knn = cfg.data.knn;
        gc.max_hops = cfg.model.max_hops;
        gc.num_node_types = cfg.model.num_node_types;
        gc.seed = cfg.seed;
        graphs = gen_geometry_dataset(gc);
    } else {
        for (int i = 0; i < cfg.data.count; ++i) {
            graphs.push_back(gen_tsp_instance(cfg.data.tsp_points, cfg.data.tsp_knn,
                                              derive_seed(cfg.seed, static_cast<std::uint64_t>(i)),
                                              cfg.model.max_hops)
                                 .graph);
        }
    }
    write_dataset(cfg.data.path, graphs);
    std::printf("wrote %zu records to %s\n", graphs.size(), cfg.data.path.c_str());
    return 0;
}

// ---- shared model/dataset loading ----

template <typename Real>
TgtModel<Real> load_distance_model(const std::string& config_path, const std::string& ckpt_path,
                                   std::uint64_t seed) {
    if (config_path.empty() || ckpt_path.empty()) {
        throw ConfigError("a distance model requires both distance_config and distance_checkpoint");
    }
    RunConfig dc = parse_run_config(config_path);
    TgtModel<Real> model(dc.model, seed);
    model.params().load(ckpt_path);
    return model;
}

struct EvalSplit {
    std::vector<GraphInstance> data;
    std::vector<int> train_idx, heldout_idx;
};

EvalSplit load_split(const RunConfig& cfg) {
    EvalSplit s;
    s.data = read_dataset(cfg.data.path);
    if (s.data.empty()) throw IoError("dataset is empty: " + cfg.data.path);
    auto split = split_dataset(s.data.size(), cfg.data.heldout_fraction, cfg.seed);
    s.train_idx = std::move(split.first);
    s.heldout_idx = std::move(split.second);
    if (s.heldout_idx.empty()) s.heldout_idx = s.train_idx;  // tiny datasets: evaluate in-sample
    return s;
}

// ---- train ----

template <typename Real>
void write_scalar_metrics(const RunConfig& cfg, const std::vector<std::pair<std::string, double>>& kv) {
    CsvWriter metrics(out_path(cfg, "metrics.csv"), {"metric", "value"});
    for (const auto& [k, v] : kv) {
        metrics.write_row({k, format_real(v)});
        std::printf("%s = %s\n", k.c_str(), format_real(v).c_str());
    }
}

template <typename Real>
int cmd_train(const RunConfig& cfg, const std::string& checkpoint_in) {
    auto split = load_split(cfg);
    TgtModel<Real> model(cfg.model, cfg.seed);
    if (!checkpoint_in.empty()) model.params().load(checkpoint_in);
    CsvWriter log(out_path(cfg, "train_log.csv"), train_log_header());

    const StageConfig& stage = cfg.train.stage;
    std::vector<std::pair<std::string, double>> metrics;
    switch (stage.stage) {
        case Stage::distance_pretrain: {
            train_distance_predictor(model, split.data, split.train_idx, stage, &log);
            metrics.emplace_back("heldout_distance_ce",
                                 eval_distance_ce(model, split.data, split.heldout_idx));
            break;
        }
        case Stage::task_pretrain: {
            pretrain_task_predictor(model, split.data, split.train_idx, stage, &log);
            std::vector<double> preds, tgts;
            for (int i : split.heldout_idx) {
                const auto& g = split.data[static_cast<std::size_t>(i)];
                Rng rng(derive_seed(cfg.seed, 0xe5a1, static_cast<std::uint64_t>(i)));
                preds.push_back(predict_scalar<Real>(model, nullptr, g, Mode::deterministic_eval, rng));
                tgts.push_back(*g.target_scalar);
            }
            metrics.emplace_back("heldout_task_mae", mae(preds, tgts));
            break;
        }
        case Stage::task_finetune: {
            auto frozen = load_distance_model<Real>(cfg.train.distance_config,
                                                    cfg.train.distance_checkpoint, cfg.seed + 1);
            finetune_task_predictor(model, frozen, split.data, split.train_idx, stage, &log);
            std::vector<double> preds, tgts;
            for (int i : split.heldout_idx) {
                const auto& g = split.data[static_cast<std::size_t>(i)];
                Rng rng(derive_seed(cfg.seed, 0xe5a1, static_cast<std::uint64_t>(i)));
                preds.push_back(predict_scalar<Real>(model, &frozen, g, Mode::deterministic_eval, rng));
                tgts.push_back(*g.target_scalar);
            }
            metrics.emplace_back("heldout_task_mae_predicted_dists", mae(preds, tgts));
            break;
        }
        case Stage::single_stage: {
            train_single_stage_edge(model, split.data, split.train_idx, stage, &log);
            const auto f1 = eval_edge_f1(model, split.data, split.heldout_idx);
            metrics.emplace_back("heldout_edge_f1", f1.f1);
            metrics.emplace_back("heldout_edge_precision", f1.precision);
            metrics.emplace_back("heldout_edge_recall", f1.recall);
            break;
        }
    }
    model.params().save(out_path(cfg, "model.ckpt"));
    write_scalar_metrics<Real>(cfg, metrics);
    std::printf("checkpoint written to %s\n", out_path(cfg, "model.ckpt").c_str());
    return 0;
}

// ---- eval ----

template <typename Real>
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
    auto split = load_split(cfg);
    TgtModel<Real> model(cfg.model, cfg.seed);
    model.params().load(checkpoint);
    std::vector<std::pair<std::string, double>> metrics;
    if (cfg.model.distance_head && split.data[0].target_distances) {
        metrics.emplace_back("heldout_distance_ce",
                             eval_distance_ce(model, split.data, split.heldout_idx));
    }
    if (cfg.model.graph_head && split.data[0].target_scalar) {
        std::unique_ptr<TgtModel<Real>> dist_model;
        if (!cfg.infer.distance_checkpoint.empty()) {
            dist_model = std::make_unique<TgtModel<Real>>(load_distance_model<Real>(
                cfg.infer.distance_config, cfg.infer.distance_checkpoint, cfg.seed + 1));
        }
        std::vector<double> preds(split.heldout_idx.size()), tgts(split.heldout_idx.size());
        parallel_for(static_cast<int>(split.heldout_idx.size()), [&](int k) {
            const int i = split.heldout_idx[static_cast<std::size_t>(k)];
            const auto& g = split.data[static_cast<std::size_t>(i)];
            Rng rng(derive_seed(cfg.seed, 0xe5a1, static_cast<std::uint64_t>(i)));
            preds[static_cast<std::size_t>(k)] =
                predict_scalar<Real>(model, dist_model.get(), g, Mode::deterministic_eval, rng);
            tgts[static_cast<std::size_t>(k)] = *g.target_scalar;
        });
        metrics.emplace_back("heldout_task_mae", mae(preds, tgts));
        metrics.emplace_back("heldout_task_ewt", ewt(preds, tgts, cfg.infer.ewt_tau));
    }
    if (cfg.model.edge_head && split.data[0].edge_labels) {
        metrics.emplace_back("heldout_edge_f1", eval_edge_f1(model, split.data, split.heldout_idx).f1);
    }
    if (metrics.empty()) throw ConfigError("eval: no applicable head/target combination");
    CsvWriter out(out_path(cfg, "eval_metrics.csv"), {"metric", "value"});
    for (const auto& [k, v] : metrics) {
        out.write_row({k, format_real(v)});
        std::printf("%s = %s\n", k.c_str(), format_real(v).c_str());
    }
    return 0;
}

// ---- infer ----

template <typename Real>
int cmd_infer(const RunConfig& cfg, const std::string& checkpoint) {
    auto split = load_split(cfg);
    TgtModel<Real> model(cfg.model, cfg.seed);
    model.params().load(checkpoint);
    if (!model.config().graph_head) throw ConfigError("infer requires a graph head");
    std::unique_ptr<TgtModel<Real>> dist_model;
    if (!cfg.infer.distance_checkpoint.empty()) {
        dist_model = std::make_unique<TgtModel<Real>>(load_distance_model<Real>(
            cfg.infer.distance_config, cfg.infer.distance_checkpoint, cfg.seed + 1));
    }

    const auto& idx = split.heldout_idx;
    std::vector<PredictionSampleSet> sets(idx.size());
    std::vector<double> targets(idx.size());
    parallel_for(static_cast<int>(idx.size()), [&](int k) {
        const int i = idx[static_cast<std::size_t>(k)];
        const auto& g = split.data[static_cast<std::size_t>(i)];
        sets[static_cast<std::size_t>(k)] = stochastic_inference(
            dist_model.get(), model, g, cfg.infer.samples, cfg.seed, static_cast<std::uint64_t>(i));
        targets[static_cast<std::size_t>(k)] = g.target_scalar ? *g.target_scalar : 0.0;
    });

    const auto conf = normalize_confidences(sets);
    CsvWriter preds(out_path(cfg, "predictions.csv"),
                    {"graph", "target", "mean", "median", "mode", "confidence", "confidence_norm"});
    for (std::size_t k = 0; k < sets.size(); ++k) {
        preds.write_row({std::to_string(idx[k]), format_real(targets[k]), format_real(sets[k].mean),
                         format_real(sets[k].median), format_real(sets[k].mode),
                         sets[k].confidence ? format_real(*sets[k].confidence) : "",
                         conf[k] ? format_real(*conf[k]) : ""});
    }

    const auto curve = confidence_curve(sets, targets, cfg.infer.confidence_thresholds, cfg.infer.ewt_tau);
    CsvWriter curve_csv(out_path(cfg, "confidence_curve.csv"), {"threshold", "count", "mae", "ewt"});
    for (const auto& row : curve) {
        curve_csv.write_row({format_real(row.threshold), std::to_string(row.count),
                             format_real(row.mae), format_real(row.ewt)});
    }

    // sample-count curve: mean-aggregated MAE for K = 1, 2, 4, ... <= samples
    CsvWriter kcurve(out_path(cfg, "sample_curve.csv"), {"samples", "mae"});
    for (int k_count = 1; k_count <= cfg.infer.samples; k_count *= 2) {
        std::vector<double> preds_k(idx.size());
        parallel_for(static_cast<int>(idx.size()), [&](int k) {
            const int i = idx[static_cast<std::size_t>(k)];
            const auto& g = split.data[static_cast<std::size_t>(i)];
            auto set = stochastic_inference(dist_model.get(), model, g, k_count,
                                            derive_seed(cfg.seed, 0x6b, static_cast<std::uint64_t>(k_count)),
                                            static_cast<std::uint64_t>(i));
            preds_k[static_cast<std::size_t>(k)] = set.mean;
        });
        kcurve.write_row({std::to_string(k_count), format_real(mae(preds_k, targets))});
    }

    std::vector<double> agg(sets.size());
    for (std::size_t k = 0; k < sets.size(); ++k) {
        agg[k] = cfg.infer.statistic == "median" ? sets[k].median
                 : cfg.infer.statistic == "mode" ? sets[k].mode
                                                 : sets[k].mean;
    }
    std::printf("inference (%s of %d samples): mae = %s, ewt(%s) = %s over %zu graphs\n",
                cfg.infer.statistic.c_str(), cfg.infer.samples, format_real(mae(agg, targets)).c_str(),
                format_real(cfg.infer.ewt_tau).c_str(),
                format_real(ewt(agg, targets, cfg.infer.ewt_tau)).c_str(), sets.size());
    return 0;
}

// ---- bench ----

int cmd_bench(const RunConfig& cfg) {
    CsvWriter results(out_path(cfg, "bench_results.csv"), {"mechanism", "n", "rep", "time_s"});
    CsvWriter summary(out_path(cfg, "bench_summary.csv"),
                      {"mechanism", "exponent", "median_s_at_max_n"});
    for (Variant v : cfg.bench.mechanisms) {
        const auto res = bench_mechanism<double>(v, cfg.bench.sizes, cfg.bench.dims, cfg.bench.reps,
                                                 cfg.bench.backward, cfg.seed);
        for (const auto& r : res) {
            for (std::size_t rep = 0; rep < r.times_s.size(); ++rep) {
                results.write_row({variant_name(r.mechanism), std::to_string(r.n),
                                   std::to_string(rep), format_real(r.times_s[rep])});
            }
        }
        const double expn = scaling_exponent(res);
        summary.write_row({variant_name(v), format_real(expn), format_real(res.back().median_s)});
        std::printf("%s: exponent %.3f, median %.4fs at N=%d\n", variant_name(v), expn,
                    res.back().median_s, res.back().n);
    }
    return 0;
}

// ---- verify ----

int cmd_verify() {
    const auto checks = run_verification();
    int failed = 0;
    for (const auto& c : checks) {
        std::printf("%s - %s (%s)\n", c.passed ? "ok " : "FAIL", c.name.c_str(), c.detail.c_str());
        if (!c.passed) ++failed;
    }
    std::printf("verify: %zu/%zu checks passed\n", checks.size() - static_cast<std::size_t>(failed),
                checks.size());
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"triplet graph transformer workbench"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_in, checkpoint;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
    gen->add_option("--config", config_path, "run config file")->required();

    auto* train = app.add_subcommand("train", "train one stage and write a checkpoint");
    train->add_option("--config", config_path, "run config file")->required();
    train->add_option("--init-checkpoint", checkpoint_in, "initial parameters (e.g. stage-2 output)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
    eval->add_option("--config", config_path, "run config file")->required();
    eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    auto* infer = app.add_subcommand("infer", "stochastic inference with uncertainty");
    infer->add_option("--config", config_path, "run config file")->required();
    infer->add_option("--checkpoint", checkpoint, "task model checkpoint")->required();

    auto* bench = app.add_subcommand("bench", "wall-clock scaling of the interaction mechanisms");
    bench->add_option("--config", config_path, "run config file")->required();

    app.add_subcommand("verify", "run the built-in invariant and oracle checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("verify")) return cmd_verify();
        RunConfig cfg = parse_run_config(config_path);
        if (app.got_subcommand("gen-data")) return cmd_gen_data(cfg);
        if (app.got_subcommand("bench")) return cmd_bench(cfg);
        const bool f64 = cfg.precision == "f64";
        if (app.got_subcommand("train")) {
            return f64 ? cmd_train<double>(cfg, checkpoint_in) : cmd_train<float>(cfg, checkpoint_in);
        }
        if (app.got_subcommand("eval")) {
            return f64 ? cmd_eval<double>(cfg, checkpoint) : cmd_eval<float>(cfg, checkpoint);
        }
        if (app.got_subcommand("infer")) {
            return f64 ? cmd_infer<double>(cfg, checkpoint) : cmd_infer<float>(cfg, checkpoint);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", category_name(e.category()), e.what());
        return exit_code_for(e.category());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
    return 1;
}
