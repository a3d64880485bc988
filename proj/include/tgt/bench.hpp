#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "tgt/layers.hpp"
#include "tgt/metrics.hpp"

namespace tgt {

struct BenchDims {
    int node_dim = 32;
    int edge_dim = 16;
    int heads = 4;
    int triplet_heads = 2;
    int node_ffn = 64;
    int edge_ffn = 32;
};

struct BenchResult {
    Variant mechanism = Variant::none;
    int n = 0;
    std::vector<double> times_s;  // one entry per repetition
    double median_s = 0.0;
    double mean_s = 0.0;
    double stddev_s = 0.0;
};

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size();
    return k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

// One full pre-norm TGT layer (EGT attention + optional third-order module +
// both FFNs) with fixed random parameters; measures wall time per forward
// (optionally + backward).
template <typename Real>
class LayerBench {
public:
    LayerBench(Variant variant, BenchDims dims, std::uint64_t seed)
        : variant_(variant), dims_(dims), rng_(seed) {
        const std::int64_t dh = dims.node_dim, de = dims.edge_dim;
        const std::int64_t dk = dh / dims.heads;
        auto mk = [&](std::int64_t r, std::int64_t c) {
            return Tensor<Real>::randn(Shape{r, c}, rng_, Real(0.2));
        };
        ln_gain_h_ = Tensor<Real>(Shape{dh}, Real(1));
        ln_bias_h_ = Tensor<Real>(Shape{dh}, Real(0));
        ln_gain_e_ = Tensor<Real>(Shape{de}, Real(1));
        ln_bias_e_ = Tensor<Real>(Shape{de}, Real(0));
        attn_ = {mk(dh, dims.heads * dk), mk(dh, dims.heads * dk), mk(dh, dims.heads * dk),
                 mk(de, dims.heads),      Tensor<Real>(Shape{dims.heads}, Real(0)),
                 mk(de, dims.heads),      Tensor<Real>(Shape{dims.heads}, Real(0)),
                 mk(dims.heads * dk, dh), Tensor<Real>(Shape{dh}, Real(0)),
                 mk(dims.heads, de),      Tensor<Real>(Shape{de}, Real(0))};
        if (variant == Variant::triangular) {
            const std::int64_t sets = de;
            tria_ = {mk(de, sets), mk(de, sets), mk(de, sets),
                     mk(de, sets), mk(2 * sets, de), Tensor<Real>(Shape{de}, Real(0))};
        } else if (variant != Variant::none) {
            const std::int64_t ht = dims.triplet_heads;
            const std::int64_t width = de;  // ht * (de / ht)
            auto dir = [&]() {
                return DirT{mk(de, width),          mk(de, width), mk(de, width),
                            mk(de, ht),             Tensor<Real>(Shape{ht}, Real(0)),
                            mk(de, ht),             Tensor<Real>(Shape{ht}, Real(0))};
            };
            tri_in_ = dir();
            tri_out_ = dir();
            tri_wo_ = mk(2 * width, de);
            tri_bo_ = Tensor<Real>(Shape{de}, Real(0));
        }
        ffn_h_ = {mk(dh, dims.node_ffn), Tensor<Real>(Shape{dims.node_ffn}, Real(0)),
                  mk(dims.node_ffn, dh), Tensor<Real>(Shape{dh}, Real(0))};
        ffn_e_ = {mk(de, dims.edge_ffn), Tensor<Real>(Shape{dims.edge_ffn}, Real(0)),
                  mk(dims.edge_ffn, de), Tensor<Real>(Shape{de}, Real(0))};
    }

    // Seconds for one layer pass at size n.
    double run_once(int n, bool with_backward) {
        Tensor<Real> h = Tensor<Real>::randn(Shape{n, dims_.node_dim}, rng_, Real(1));
        Tensor<Real> e = Tensor<Real>::randn(Shape{n, n, dims_.edge_dim}, rng_, Real(1));
        const auto start = std::chrono::steady_clock::now();
        Tape<Real> tape;
        tape.reserve(256);
        auto hv = tape.leaf(std::move(h), with_backward);
        auto ev = tape.leaf(std::move(e), with_backward);
        auto out = forward(tape, hv, ev, with_backward);
        if (with_backward) tape.backward(out);
        volatile Real sink = tape.val(out)[0];
        (void)sink;
        const auto stop = std::chrono::steady_clock::now();
        return std::chrono::duration<double>(stop - start).count();
    }

private:
    using V = typename Tape<Real>::Var;
    struct DirT {
        Tensor<Real> wq, wp, wv, wb, bb, wg, bg;
    };
    struct AttnT {
        Tensor<Real> wq, wk, wv, wb, bb, wg, bg, wo, bo, we, be;
    };
    struct TriaT {
        Tensor<Real> wa_in, wb_in, wa_out, wb_out, wo, bo;
    };
    struct FfnT {
        Tensor<Real> w1, b1, w2, b2;
    };

    V forward(Tape<Real>& t, V h, V e, bool needs_grad) {
        auto c = [&](const Tensor<Real>& w) { return t.leaf(w, needs_grad); };
        auto hn = t.layer_norm(h, c(ln_gain_h_), c(ln_bias_h_));
        auto en = t.layer_norm(e, c(ln_gain_e_), c(ln_bias_e_));
        EgtAttnVars<Real> av{c(attn_.wq), c(attn_.wk), c(attn_.wv), c(attn_.wb), c(attn_.wg),
                             c(attn_.bb), c(attn_.bg), c(attn_.wo), c(attn_.bo), c(attn_.we),
                             c(attn_.be)};
        auto att = egt_attention(t, hn, en, av, dims_.heads);
        h = t.add(h, att.node_update);
        e = t.add(e, att.pair_update);
        if (variant_ != Variant::none) {
            auto en2 = t.layer_norm(e, c(ln_gain_e_), c(ln_bias_e_));
            V update;
            if (variant_ == Variant::triangular) {
                TriangularVars<Real> tv{c(tria_.wa_in), c(tria_.wb_in), c(tria_.wa_out),
                                        c(tria_.wb_out), c(tria_.wo), c(tria_.bo)};
                update = triangular_update(t, en2, tv);
            } else {
                TripletVars<Real> tv;
                tv.in = {c(tri_in_.wq), c(tri_in_.wp), c(tri_in_.wv), c(tri_in_.wb),
                         c(tri_in_.bb), c(tri_in_.wg), c(tri_in_.bg)};
                tv.out = {c(tri_out_.wq), c(tri_out_.wp), c(tri_out_.wv), c(tri_out_.wb),
                          c(tri_out_.bb), c(tri_out_.wg), c(tri_out_.bg)};
                tv.wo = c(tri_wo_);
                tv.bo = c(tri_bo_);
                const int ht = dims_.triplet_heads;
                switch (variant_) {
                    case Variant::triplet_att: update = triplet_attention(t, en2, tv, ht, true); break;
                    case Variant::ungated_att: update = triplet_attention(t, en2, tv, ht, false); break;
                    case Variant::triplet_agg: update = triplet_aggregation(t, en2, tv, ht, true); break;
                    case Variant::ungated_agg: update = triplet_aggregation(t, en2, tv, ht, false); break;
                    case Variant::axial: update = axial_attention(t, en2, tv, ht); break;
                    default: throw ValueError("unreachable");
                }
            }
            e = t.add(e, update);
        }
        auto hn2 = t.layer_norm(h, c(ln_gain_h_), c(ln_bias_h_));
        FfnVars<Real> fh{c(ffn_h_.w1), c(ffn_h_.b1), c(ffn_h_.w2), c(ffn_h_.b2)};
        h = t.add(h, ffn(t, hn2, fh));
        auto en3 = t.layer_norm(e, c(ln_gain_e_), c(ln_bias_e_));
        FfnVars<Real> fe{c(ffn_e_.w1), c(ffn_e_.b1), c(ffn_e_.w2), c(ffn_e_.b2)};
        e = t.add(e, ffn(t, en3, fe));
        return t.add(t.mean_all(h), t.mean_all(e));
    }

    Variant variant_;
    BenchDims dims_;
    Rng rng_;
    Tensor<Real> ln_gain_h_, ln_bias_h_, ln_gain_e_, ln_bias_e_;
    AttnT attn_;
    DirT tri_in_, tri_out_;
    Tensor<Real> tri_wo_, tri_bo_;
    TriaT tria_;
    FfnT ffn_h_, ffn_e_;
};

// Harness overhead: the same timing path around an empty closure.
inline double harness_overhead_s() {
    std::vector<double> times;
    for (int r = 0; r < 32; ++r) {
        const auto start = std::chrono::steady_clock::now();
        volatile int sink = 0;
        (void)sink;
        const auto stop = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(stop - start).count());
    }
    return median_of(times);
}

// Median-of-reps wall times for one mechanism across sizes. Repetitions are
// increased automatically while the median is too close to timer resolution.
template <typename Real>
std::vector<BenchResult> bench_mechanism(Variant variant, const std::vector<int>& n_list,
                                         const BenchDims& dims, int reps, bool with_backward = false,
                                         std::uint64_t seed = 1) {
    check(reps >= 5, "bench: need at least 5 repetitions");
    LayerBench<Real> layer(variant, dims, seed);
    const double overhead = harness_overhead_s();
    std::vector<BenchResult> results;
    for (int n : n_list) {
        layer.run_once(n, with_backward);  // warmup, excluded
        int use_reps = reps;
        BenchResult res;
        for (;;) {
            res.times_s.clear();
            for (int r = 0; r < use_reps; ++r) res.times_s.push_back(layer.run_once(n, with_backward));
            res.median_s = median_of(res.times_s);
            if (res.median_s > std::max(overhead * 100.0, 50e-9) || use_reps >= reps * 16) break;
            use_reps *= 2;  // timer resolution too coarse for this size
        }
        res.mechanism = variant;
        res.n = n;
        double mean = 0.0;
        for (double v : res.times_s) mean += v;
        mean /= static_cast<double>(res.times_s.size());
        double var = 0.0;
        for (double v : res.times_s) var += (v - mean) * (v - mean);
        res.mean_s = mean;
        res.stddev_s = std::sqrt(var / static_cast<double>(res.times_s.size()));
        results.push_back(std::move(res));
    }
    return results;
}

// Log-log scaling exponent fitted over the top half of the size list.
inline double scaling_exponent(const std::vector<BenchResult>& results) {
    check(results.size() >= 2, "scaling_exponent: need at least two sizes");
    std::size_t start = results.size() / 2;
    if (results.size() - start < 2) start = results.size() - 2;
    std::vector<double> xs, ys;
    for (std::size_t i = start; i < results.size(); ++i) {
        xs.push_back(std::log(static_cast<double>(results[i].n)));
        ys.push_back(std::log(results[i].median_s));
    }
    return regression_slope(xs, ys);
}

}  // namespace tgt
