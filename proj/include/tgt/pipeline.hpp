#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include "tgt/csv.hpp"
#include "tgt/metrics.hpp"
#include "tgt/model.hpp"
#include "tgt/noising.hpp"

namespace tgt {

// ---- threading ----

inline int thread_count() {
    if (const char* env = std::getenv("TGT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Index-parallel map; tasks must be independent (seeded per index), so the
// result is identical to a sequential run.
template <typename Fn>
void parallel_for(int n, Fn&& fn, int threads = thread_count()) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

// ---- optimizer & schedule ----

enum class Stage { distance_pretrain, task_pretrain, task_finetune, single_stage };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::distance_pretrain: return "distance_pretrain";
        case Stage::task_pretrain: return "task_pretrain";
        case Stage::task_finetune: return "task_finetune";
        case Stage::single_stage: return "single_stage";
    }
    return "?";
}

inline Stage stage_from_name(const std::string& s) {
    for (Stage st : {Stage::distance_pretrain, Stage::task_pretrain, Stage::task_finetune,
                     Stage::single_stage}) {
        if (s == stage_name(st)) return st;
    }
    throw ConfigError("unknown stage '" + s + "'");
}

struct StageConfig {
    Stage stage = Stage::distance_pretrain;
    int steps = 1000;
    int batch_size = 8;
    double max_lr = 1e-3;
    double min_lr = 1e-6;
    int warmup_steps = 100;
    double grad_clip = 5.0;
    double dist_loss_weight = 0.1;  // w_d; stage 1 trains on the distance term alone
    double heldout_fraction = 0.1;
    std::uint64_t seed = 1;
    NoiseConfig noise;  // stage 2 input noising
    int log_every = 10;
};

inline void validate(const StageConfig& c) {
    check(c.steps >= 1 && c.batch_size >= 1, "stage config: steps and batch_size must be >= 1");
    check(c.max_lr > 0 && c.min_lr >= 0 && c.min_lr <= c.max_lr, "stage config: bad LR range");
    check(c.warmup_steps >= 0, "stage config: warmup_steps must be >= 0");
    check(c.grad_clip > 0, "stage config: grad_clip must be > 0");
    check(c.dist_loss_weight >= 0, "stage config: dist_loss_weight must be >= 0");
    check(c.heldout_fraction >= 0 && c.heldout_fraction < 1, "stage config: heldout fraction in [0,1)");
}

// Linear warmup to max_lr, then cosine decay to min_lr.
inline double lr_at(const StageConfig& cfg, int step) {
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
        return cfg.max_lr * static_cast<double>(step) / cfg.warmup_steps;
    }
    const int total = std::max(cfg.steps, cfg.warmup_steps + 1);
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(total - cfg.warmup_steps);
    return cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

template <typename Real>
class Adam {
public:
    explicit Adam(const ParamStore<Real>& store, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (std::size_t i = 0; i < store.size(); ++i) {
            m_.emplace_back(store.entry(static_cast<int>(i)).value.shape, Real(0));
            v_.emplace_back(store.entry(static_cast<int>(i)).value.shape, Real(0));
        }
    }

    void step(ParamStore<Real>& store, const std::vector<Tensor<Real>>& grads, double lr) {
        check(grads.size() == m_.size(), "adam: grad count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t p = 0; p < grads.size(); ++p) {
            Tensor<Real>& w = store.value(static_cast<int>(p));
            for (std::int64_t i = 0; i < w.size(); ++i) {
                const double g = static_cast<double>(grads[p][i]);
                const double m = beta1_ * static_cast<double>(m_[p][i]) + (1.0 - beta1_) * g;
                const double v = beta2_ * static_cast<double>(v_[p][i]) + (1.0 - beta2_) * g * g;
                m_[p][i] = static_cast<Real>(m);
                v_[p][i] = static_cast<Real>(v);
                w[i] -= static_cast<Real>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

private:
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor<Real>> m_, v_;
};

template <typename Real>
double clip_global_norm(std::vector<Tensor<Real>>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) {
        for (std::int64_t i = 0; i < g.size(); ++i) sq += static_cast<double>(g[i]) * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return norm;
    const Real scale = static_cast<Real>(max_norm / norm);
    double sq2 = 0.0;
    for (auto& g : grads) {
        for (std::int64_t i = 0; i < g.size(); ++i) {
            g[i] *= scale;
            sq2 += static_cast<double>(g[i]) * g[i];
        }
    }
    return std::sqrt(sq2);
}

// ---- train engine ----

struct TrainLogRow {
    int step = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_task = 0.0;
    double loss_dist = 0.0;
    double grad_norm_pre = 0.0;
    double grad_norm = 0.0;  // post-clip
};

inline std::vector<std::string> train_log_header() {
    return {"step", "lr", "loss_total", "loss_task", "loss_dist", "grad_norm_pre", "grad_norm"};
}

inline std::vector<std::string> train_log_cells(const TrainLogRow& r) {
    return {std::to_string(r.step), format_real(r.lr),           format_real(r.loss_total),
            format_real(r.loss_task), format_real(r.loss_dist), format_real(r.grad_norm_pre),
            format_real(r.grad_norm)};
}

// Per-graph loss terms; dist may be invalid when a stage has no distance
// objective. total must be built as task + w_d * dist on the tape.
template <typename Real>
struct StepLoss {
    typename Tape<Real>::Var total, task, dist;
};

// Generic single-threaded training loop. loss_fn builds the loss for one
// graph on the given tape using the pre-bound parameter leaves; rng drives
// every stochastic draw (dropout, noise, frozen-model sampling) in a fixed
// order, so a (config, seed) pair fully determines the run.
template <typename Real, typename LossFn>
std::vector<TrainLogRow> train_loop(TgtModel<Real>& model, const std::vector<GraphInstance>& data,
                                    const std::vector<int>& train_idx, const StageConfig& cfg,
                                    LossFn&& loss_fn, CsvWriter* log = nullptr) {
    validate(cfg);
    check(!train_idx.empty(), "train_loop: empty training set");
    Rng rng(derive_seed(cfg.seed, 0x7261));
    std::vector<int> order = train_idx;
    rng.shuffle(order);
    std::size_t cursor = 0;

    Adam<Real> adam(model.params());
    std::vector<TrainLogRow> rows;
    std::vector<Tensor<Real>> grad_accum;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        grad_accum.emplace_back(model.params().entry(static_cast<int>(i)).value.shape, Real(0));
    }

    for (int step = 1; step <= cfg.steps; ++step) {
        for (auto& g : grad_accum) g.fill(Real(0));
        double total_v = 0.0, task_v = 0.0, dist_v = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const GraphInstance& graph = data[static_cast<std::size_t>(order[cursor++])];
            Tape<Real> tape;
            tape.reserve(512);
            auto leaves = model.params().bind(tape, true);
            StepLoss<Real> loss = loss_fn(tape, leaves, graph, rng);
            const double lt = tape.val(loss.total)[0];
            if (!std::isfinite(lt)) {
                throw NumericError("non-finite loss at step " + std::to_string(step));
            }
            total_v += lt;
            task_v += loss.task.valid() ? tape.val(loss.task)[0] : 0.0;
            dist_v += loss.dist.valid() ? tape.val(loss.dist)[0] : 0.0;
            tape.backward(loss.total);
            const Real inv_batch = Real(1) / Real(cfg.batch_size);
            for (std::size_t p = 0; p < leaves.size(); ++p) {
                const auto& g = tape.grad(leaves[p]);
                auto& acc = grad_accum[p];
                for (std::int64_t i = 0; i < g.size(); ++i) acc[i] += g[i] * inv_batch;
            }
        }
        TrainLogRow row;
        row.step = step;
        row.lr = lr_at(cfg, step);
        row.loss_total = total_v / cfg.batch_size;
        row.loss_task = task_v / cfg.batch_size;
        row.loss_dist = dist_v / cfg.batch_size;
        double pre = 0.0;
        for (const auto& g : grad_accum) {
            for (std::int64_t i = 0; i < g.size(); ++i) pre += static_cast<double>(g[i]) * g[i];
        }
        row.grad_norm_pre = std::sqrt(pre);
        row.grad_norm = clip_global_norm(grad_accum, cfg.grad_clip);
        adam.step(model.params(), grad_accum, row.lr);
        if (step == 1 || step == cfg.steps || step % cfg.log_every == 0) {
            rows.push_back(row);
            if (log) log->write_row(train_log_cells(row));
        }
    }
    if (log) log->flush();
    return rows;
}

// Deterministic train/held-out split.
inline std::pair<std::vector<int>, std::vector<int>> split_dataset(std::size_t count,
                                                                   double heldout_fraction,
                                                                   std::uint64_t seed) {
    std::vector<int> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<int>(i);
    Rng rng(derive_seed(seed, 0x73706c));
    rng.shuffle(idx);
    const std::size_t heldout = static_cast<std::size_t>(heldout_fraction * static_cast<double>(count));
    std::vector<int> hold(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(heldout));
    std::vector<int> train(idx.begin() + static_cast<std::ptrdiff_t>(heldout), idx.end());
    return {train, hold};
}

// ---- per-stage loss builders ----

template <typename Real>
std::vector<std::int64_t> binned_targets(const GraphInstance& g, const BinSpec& bins) {
    check(g.target_distances.has_value(), "graph has no target distances");
    std::vector<std::int64_t> t(static_cast<std::size_t>(g.n) * g.n);
    for (int i = 0; i < g.n; ++i) {
        for (int j = 0; j < g.n; ++j) {
            t[static_cast<std::size_t>(i) * g.n + j] =
                i == j ? -1  // diagonal pairs carry no information
                       : bin_distance((*g.target_distances)[static_cast<std::size_t>(i) * g.n + j], bins);
        }
    }
    return t;
}

template <typename Real>
std::vector<Real> to_real_vec(const std::vector<double>& v) {
    std::vector<Real> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<Real>(v[i]);
    return out;
}

// Mean cross-entropy of the binned-distance head against ground truth bins.
template <typename Real>
typename Tape<Real>::Var distance_ce(Tape<Real>& tape, const ModelOutputs<Real>& out,
                                     const GraphInstance& g, const BinSpec& bins) {
    const std::int64_t n = g.n;
    return tape.cross_entropy(
        tape.reshape(out.distance_logits, Shape{n * n, bins.num_bins}), binned_targets<Real>(g, bins));
}

// Partial distance estimate for the optional stage-1 input channel: exact
// distances on observed K-NN edges, 0 ("unknown") elsewhere.
template <typename Real>
std::vector<Real> local_distance_estimate(const GraphInstance& g) {
    check(g.target_distances.has_value(), "local_distance_estimate: graph lacks distances");
    std::vector<Real> d(static_cast<std::size_t>(g.n) * g.n, Real(0));
    for (const auto& e : g.edges) {
        const Real v = static_cast<Real>((*g.target_distances)[static_cast<std::size_t>(e.i) * g.n + e.j]);
        d[static_cast<std::size_t>(e.i) * g.n + e.j] = v;
        d[static_cast<std::size_t>(e.j) * g.n + e.i] = v;
    }
    return d;
}

// Argmax-bin distances from a (frozen) distance predictor; diagonal is zero.
template <typename Real>
std::vector<Real> sample_distances(const TgtModel<Real>& dist_model, const GraphInstance& g,
                                   Mode mode, Rng& rng) {
    Tape<Real> tape;
    auto leaves = dist_model.params().bind(tape, false);
    // a distance predictor with an encoding consumes the local-estimate channel
    std::optional<std::vector<Real>> est;
    if (dist_model.config().encoding != EncodingKind::none) {
        est = local_distance_estimate<Real>(g);
    }
    auto out = dist_model.forward_with_params(tape, leaves, g, mode, rng, est ? &*est : nullptr);
    const auto& logits = tape.val(out.distance_logits);
    const int n = g.n;
    const int bins = dist_model.config().bins.num_bins;
    std::vector<Real> d(static_cast<std::size_t>(n) * n, Real(0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const Real* row = logits.data.data() + (static_cast<std::int64_t>(i) * n + j) * bins;
            int best = 0;
            for (int b = 1; b < bins; ++b) {
                if (row[b] > row[best]) best = b;
            }
            d[static_cast<std::size_t>(i) * n + j] =
                static_cast<Real>(bin_center(best, dist_model.config().bins));
        }
    }
    return d;
}

// Stage 1: distance predictor trained with cross-entropy on binned distances.
template <typename Real>
std::vector<TrainLogRow> train_distance_predictor(TgtModel<Real>& model,
                                                  const std::vector<GraphInstance>& data,
                                                  const std::vector<int>& train_idx,
                                                  const StageConfig& cfg, CsvWriter* log = nullptr) {
    check(model.config().distance_head, "stage 1 requires the distance head");
    for (int i : train_idx) {
        check(data[static_cast<std::size_t>(i)].target_distances.has_value(),
              "stage 1: dataset is missing target distances");
    }
    return train_loop(
        model, data, train_idx, cfg,
        [&](Tape<Real>& tape, const std::vector<typename Tape<Real>::Var>& leaves,
            const GraphInstance& g, Rng& rng) {
            std::optional<std::vector<Real>> est;
            if (model.config().encoding != EncodingKind::none) {
                est = local_distance_estimate<Real>(g);
            }
            auto out = model.forward_with_params(tape, leaves, g, Mode::train, rng,
                                                 est ? &*est : nullptr);
            StepLoss<Real> loss;
            loss.dist = distance_ce(tape, out, g, model.config().bins);
            loss.total = loss.dist;
            return loss;
        },
        log);
}

// Stage 2: task predictor on noised ground-truth structures; MAE task loss
// plus the denoising distance objective on ground-truth bins.
template <typename Real>
std::vector<TrainLogRow> pretrain_task_predictor(TgtModel<Real>& model,
                                                 const std::vector<GraphInstance>& data,
                                                 const std::vector<int>& train_idx,
                                                 const StageConfig& cfg, CsvWriter* log = nullptr) {
    check(model.config().graph_head, "stage 2 requires the graph head");
    for (int i : train_idx) {
        const auto& g = data[static_cast<std::size_t>(i)];
        check(g.has_coords(), "stage 2: dataset lacks coordinates");
        check(g.target_scalar.has_value(), "stage 2: dataset lacks scalar targets");
    }
    const bool with_dist = cfg.dist_loss_weight > 0.0 && model.config().distance_head;
    return train_loop(
        model, data, train_idx, cfg,
        [&, with_dist](Tape<Real>& tape, const std::vector<typename Tape<Real>::Var>& leaves,
                       const GraphInstance& g, Rng& rng) {
            const auto noised = smooth_noise(g.coords, g.n, g.coord_dim, cfg.noise, rng);
            const auto dists = to_real_vec<Real>(pairwise_distances(noised, g.n, g.coord_dim));
            auto out = model.forward_with_params(tape, leaves, g, Mode::train, rng, &dists);
            StepLoss<Real> loss;
            loss.task = tape.abs_(tape.sub(out.graph_scalar, tape.scalar(Real(*g.target_scalar))));
            if (with_dist) {
                loss.dist = distance_ce(tape, out, g, model.config().bins);
                loss.total =
                    tape.add(loss.task, tape.mul_scalar(loss.dist, Real(cfg.dist_loss_weight)));
            } else {
                loss.total = loss.task;
            }
            return loss;
        },
        log);
}

// Stage 3: finetune the task predictor on stochastic argmax-bin distances from
// the frozen distance predictor; ground-truth bins stay the denoising target.
template <typename Real>
std::vector<TrainLogRow> finetune_task_predictor(TgtModel<Real>& model,
                                                 const TgtModel<Real>& frozen_distance_model,
                                                 const std::vector<GraphInstance>& data,
                                                 const std::vector<int>& train_idx,
                                                 const StageConfig& cfg, CsvWriter* log = nullptr) {
    check(model.config().graph_head, "stage 3 requires the graph head");
    const BinSpec& a = model.config().bins;
    const BinSpec& b = frozen_distance_model.config().bins;
    if (a.num_bins != b.num_bins || a.range != b.range) {
        throw ValueError("stage 3: task and distance predictors use incompatible bin specs (" +
                         std::to_string(a.num_bins) + "@" + format_real(a.range) + " vs " +
                         std::to_string(b.num_bins) + "@" + format_real(b.range) + ")");
    }
    const bool with_dist = cfg.dist_loss_weight > 0.0 && model.config().distance_head;
    return train_loop(
        model, data, train_idx, cfg,
        [&, with_dist](Tape<Real>& tape, const std::vector<typename Tape<Real>::Var>& leaves,
                       const GraphInstance& g, Rng& rng) {
            // stochastic mode with active dropout; parameters receive no gradient
            const auto dists = sample_distances(frozen_distance_model, g, Mode::stochastic_eval, rng);
            auto out = model.forward_with_params(tape, leaves, g, Mode::train, rng, &dists);
            StepLoss<Real> loss;
            loss.task = tape.abs_(tape.sub(out.graph_scalar, tape.scalar(Real(*g.target_scalar))));
            if (with_dist) {
                loss.dist = distance_ce(tape, out, g, model.config().bins);
                loss.total =
                    tape.add(loss.task, tape.mul_scalar(loss.dist, Real(cfg.dist_loss_weight)));
            } else {
                loss.total = loss.task;
            }
            return loss;
        },
        log);
}

// Undirected K-NN edge mask (upper triangle) for the TSP edge objective.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> edge_targets_and_mask(const GraphInstance& g) {
    check(g.edge_labels.has_value(), "graph has no edge labels");
    Tensor<Real> targets(Shape{g.n, g.n}, Real(0));
    Tensor<Real> mask(Shape{g.n, g.n}, Real(0));
    for (const auto& e : g.edges) {
        const int i = std::min(e.i, e.j), j = std::max(e.i, e.j);
        mask[static_cast<std::int64_t>(i) * g.n + j] = Real(1);
        targets[static_cast<std::int64_t>(i) * g.n + j] =
            Real((*g.edge_labels)[static_cast<std::size_t>(i) * g.n + j]);
    }
    return {std::move(targets), std::move(mask)};
}

// Single-stage edge classification (TSP): BCE over K-NN edges with exact
// pairwise distances as input features.
template <typename Real>
std::vector<TrainLogRow> train_single_stage_edge(TgtModel<Real>& model,
                                                 const std::vector<GraphInstance>& data,
                                                 const std::vector<int>& train_idx,
                                                 const StageConfig& cfg, CsvWriter* log = nullptr) {
    check(model.config().edge_head, "single stage edge task requires the edge head");
    for (int i : train_idx) {
        const auto& g = data[static_cast<std::size_t>(i)];
        check(g.edge_labels.has_value(), "single stage: dataset lacks edge labels");
        check(g.target_distances.has_value(), "single stage: dataset lacks distances");
    }
    return train_loop(
        model, data, train_idx, cfg,
        [&](Tape<Real>& tape, const std::vector<typename Tape<Real>::Var>& leaves,
            const GraphInstance& g, Rng& rng) {
            const auto dists = to_real_vec<Real>(*g.target_distances);
            auto out = model.forward_with_params(tape, leaves, g, Mode::train, rng, &dists);
            auto [targets, mask] = edge_targets_and_mask<Real>(g);
            StepLoss<Real> loss;
            loss.task = tape.bce_with_logits(out.edge_logits, targets, mask);
            loss.total = loss.task;
            return loss;
        },
        log);
}

// ---- evaluation ----

template <typename Real>
double eval_distance_ce(const TgtModel<Real>& model, const std::vector<GraphInstance>& data,
                        const std::vector<int>& idx) {
    check(!idx.empty(), "eval_distance_ce: empty evaluation set");
    std::vector<double> ce(idx.size());
    parallel_for(static_cast<int>(idx.size()), [&](int k) {
        const GraphInstance& g = data[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
        Tape<Real> tape;
        auto leaves = model.params().bind(tape, false);
        Rng rng(0);  // unused in deterministic mode
        std::optional<std::vector<Real>> est;
        if (model.config().encoding != EncodingKind::none) {
            est = local_distance_estimate<Real>(g);
        }
        auto out = model.forward_with_params(tape, leaves, g, Mode::deterministic_eval, rng,
                                             est ? &*est : nullptr);
        auto ce_var = distance_ce(tape, out, g, model.config().bins);
        ce[static_cast<std::size_t>(k)] = static_cast<double>(tape.val(ce_var)[0]);
    });
    double s = 0.0;
    for (double v : ce) s += v;
    return s / static_cast<double>(ce.size());
}

enum class DistanceSource { ground_truth, predicted };

// Deterministic scalar prediction (dropout off) with the chosen distance input.
template <typename Real>
double predict_scalar(const TgtModel<Real>& task_model, const TgtModel<Real>* dist_model,
                      const GraphInstance& g, Mode mode, Rng& rng) {
    std::vector<Real> dists;
    if (dist_model) {
        dists = sample_distances(*dist_model, g, mode, rng);
    } else {
        check(g.target_distances.has_value(), "predict_scalar: graph lacks distances");
        dists = to_real_vec<Real>(*g.target_distances);
    }
    Tape<Real> tape;
    auto leaves = task_model.params().bind(tape, false);
    auto out = task_model.forward_with_params(tape, leaves, g, mode, rng, &dists);
    return static_cast<double>(tape.val(out.graph_scalar)[0]);
}

// Micro-averaged F1 of tour-edge classification over the K-NN edges.
template <typename Real>
F1Result eval_edge_f1(const TgtModel<Real>& model, const std::vector<GraphInstance>& data,
                      const std::vector<int>& idx) {
    std::vector<int> preds, labels;
    for (int k : idx) {
        const GraphInstance& g = data[static_cast<std::size_t>(k)];
        const auto dists = to_real_vec<Real>(*g.target_distances);
        Tape<Real> tape;
        auto leaves = model.params().bind(tape, false);
        Rng rng(0);
        auto out = model.forward_with_params(tape, leaves, g, Mode::deterministic_eval, rng, &dists);
        const auto& logits = tape.val(out.edge_logits);
        for (const auto& e : g.edges) {
            const int i = std::min(e.i, e.j), j = std::max(e.i, e.j);
            preds.push_back(logits[static_cast<std::int64_t>(i) * g.n + j] > Real(0) ? 1 : 0);
            labels.push_back((*g.edge_labels)[static_cast<std::size_t>(i) * g.n + j]);
        }
    }
    return binary_f1(preds, labels);
}

// ---- stochastic inference ----

struct PredictionSampleSet {
    std::vector<double> samples;
    double mean = 0.0;
    double median = 0.0;
    double mode = 0.0;
    std::optional<double> confidence;  // 1 / sample std; absent for K = 1
};

// Mode of continuous samples: histogram over 32 equal-width bins spanning the
// sample range, center of the fullest bin.
inline double sample_mode(const std::vector<double>& samples) {
    double lo = samples[0], hi = samples[0];
    for (double s : samples) {
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    if (lo == hi) return lo;
    constexpr int kBins = 32;
    int counts[kBins] = {};
    for (double s : samples) {
        int b = static_cast<int>((s - lo) / (hi - lo) * kBins);
        b = std::min(b, kBins - 1);
        ++counts[b];
    }
    int best = 0;
    for (int b = 1; b < kBins; ++b) {
        if (counts[b] > counts[best]) best = b;
    }
    return lo + (best + 0.5) * (hi - lo) / kBins;
}

inline PredictionSampleSet aggregate_samples(std::vector<double> samples) {
    check(!samples.empty(), "aggregate_samples: need K >= 1");
    PredictionSampleSet set;
    set.samples = samples;
    double s = 0.0;
    for (double v : samples) s += v;
    set.mean = s / static_cast<double>(samples.size());
    std::sort(samples.begin(), samples.end());
    const std::size_t k = samples.size();
    set.median = k % 2 == 1 ? samples[k / 2] : 0.5 * (samples[k / 2 - 1] + samples[k / 2]);
    set.mode = sample_mode(samples);
    if (k >= 2) {
        double sq = 0.0;
        for (double v : samples) sq += (v - set.mean) * (v - set.mean);
        const double stddev = std::sqrt(sq / static_cast<double>(k - 1));
        set.confidence = stddev == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / stddev;
    }
    return set;
}

// K independent (distance sample -> task prediction) passes, both models in
// stochastic mode. Each pass derives its own seed from (base_seed, graph_id,
// sample_id), so samples can be computed in parallel with identical results.
template <typename Real>
PredictionSampleSet stochastic_inference(const TgtModel<Real>* dist_model,
                                         const TgtModel<Real>& task_model, const GraphInstance& g,
                                         int k, std::uint64_t base_seed, std::uint64_t graph_id = 0) {
    check(k >= 1, "stochastic_inference: K must be >= 1");
    std::vector<double> samples(static_cast<std::size_t>(k));
    for (int s = 0; s < k; ++s) {
        Rng rng(derive_seed(base_seed, graph_id, static_cast<std::uint64_t>(s)));
        samples[static_cast<std::size_t>(s)] =
            predict_scalar(task_model, dist_model, g, Mode::stochastic_eval, rng);
    }
    return aggregate_samples(std::move(samples));
}

// Min-max normalization of confidences over an evaluation set; infinite
// confidences (zero spread) saturate at 1. Absent entries stay absent.
inline std::vector<std::optional<double>> normalize_confidences(
    const std::vector<PredictionSampleSet>& sets) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& s : sets) {
        if (s.confidence && std::isfinite(*s.confidence)) {
            lo = std::min(lo, *s.confidence);
            hi = std::max(hi, *s.confidence);
        }
    }
    std::vector<std::optional<double>> out(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (!sets[i].confidence) continue;
        const double c = *sets[i].confidence;
        if (!std::isfinite(c) || hi <= lo) {
            out[i] = 1.0;
        } else {
            out[i] = (c - lo) / (hi - lo);
        }
    }
    return out;
}

struct ConfidenceCurveRow {
    double threshold = 0.0;
    int count = 0;
    double mae = 0.0;
    double ewt = 0.0;
};

// Metrics over the subset of examples with normalized confidence >= threshold.
inline std::vector<ConfidenceCurveRow> confidence_curve(const std::vector<PredictionSampleSet>& sets,
                                                        const std::vector<double>& targets,
                                                        const std::vector<double>& thresholds,
                                                        double ewt_tau) {
    check(sets.size() == targets.size(), "confidence_curve: size mismatch");
    const auto conf = normalize_confidences(sets);
    std::vector<ConfidenceCurveRow> rows;
    for (double t : thresholds) {
        std::vector<double> preds, tgts;
        for (std::size_t i = 0; i < sets.size(); ++i) {
            if (conf[i] && *conf[i] >= t) {
                preds.push_back(sets[i].mean);
                tgts.push_back(targets[i]);
            }
        }
        ConfidenceCurveRow row;
        row.threshold = t;
        row.count = static_cast<int>(preds.size());
        if (!preds.empty()) {
            row.mae = mae(preds, tgts);
            row.ewt = ewt(preds, tgts, ewt_tau);
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace tgt
