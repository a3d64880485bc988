#pragma once

#include <cmath>
#include <limits>

#include "tgt/rng.hpp"
#include "tgt/tape.hpp"

namespace tgt {

enum class Variant {
    none,
    axial,
    triangular,
    triplet_agg,
    triplet_att,
    ungated_agg,
    ungated_att,
};

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::none: return "none";
        case Variant::axial: return "axial";
        case Variant::triangular: return "triangular";
        case Variant::triplet_agg: return "triplet_agg";
        case Variant::triplet_att: return "triplet_att";
        case Variant::ungated_agg: return "ungated_agg";
        case Variant::ungated_att: return "ungated_att";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    for (Variant v : {Variant::none, Variant::axial, Variant::triangular, Variant::triplet_agg,
                      Variant::triplet_att, Variant::ungated_agg, Variant::ungated_att}) {
        if (s == variant_name(v)) return v;
    }
    throw ConfigError("unknown interaction variant '" + s + "'");
}

inline bool variant_is_attention(Variant v) {
    return v == Variant::axial || v == Variant::triplet_att || v == Variant::ungated_att;
}

inline bool variant_is_gated(Variant v) {
    return v == Variant::triplet_agg || v == Variant::triplet_att;
}

struct DropoutSpec {
    double source_p = 0.0;
    double triplet_p = 0.0;
    double path_p = 0.0;
    double activation_p = 0.0;
};

inline void validate(const DropoutSpec& d) {
    for (double p : {d.source_p, d.triplet_p, d.path_p, d.activation_p}) {
        check(p >= 0.0 && p < 1.0, "dropout probabilities must lie in [0,1)");
    }
}

// ---- dropout draws (explicit masks; the ops themselves are deterministic) ----

// Column mask for source dropout: entry j is -inf with probability p. At
// least one column always survives (resampled otherwise).
template <typename Real>
Tensor<Real> source_dropout_mask(int n, double p, Rng& rng) {
    Tensor<Real> mask(Shape{n}, Real(0));
    if (p <= 0.0 || n == 0) return mask;
    const Real ninf = -std::numeric_limits<Real>::infinity();
    for (;;) {
        bool any_alive = false;
        for (int j = 0; j < n; ++j) {
            const bool drop = rng.bernoulli(p);
            mask[j] = drop ? ninf : Real(0);
            any_alive = any_alive || !drop;
        }
        if (any_alive) return mask;
    }
}

// Inverted-scaling Bernoulli mask: entries are 0 or 1/(1-p).
template <typename Real>
Tensor<Real> dropout_mask(Shape shape, double p, Rng& rng) {
    Tensor<Real> mask(std::move(shape), Real(1));
    if (p <= 0.0) return mask;
    const Real keep = Real(1.0 / (1.0 - p));
    for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) ? Real(0) : keep;
    return mask;
}

// Stochastic depth: returns the residual-branch scale (0 drops the branch).
inline double path_drop_draw(double p, Rng& rng) {
    if (p <= 0.0) return 1.0;
    return rng.bernoulli(p) ? 0.0 : 1.0 / (1.0 - p);
}

// ---- generic pieces ----

// y = x @ w (+ b), applied over the last axis of x.
template <typename Real>
typename Tape<Real>::Var linear(Tape<Real>& t, typename Tape<Real>::Var x,
                                typename Tape<Real>::Var w, typename Tape<Real>::Var b = {}) {
    // copy shapes up front: creating ops may reallocate the tape's node storage
    Shape out = t.val(x).shape;
    const std::int64_t dout = t.val(w).shape[1];
    const std::int64_t din = out.back();
    const std::int64_t rows = numel(out) / din;
    auto y = t.matmul(t.reshape(x, Shape{rows, din}), w);
    if (b.valid()) y = t.add(y, b);
    out.back() = dout;
    return t.reshape(y, out);
}

template <typename Real>
struct LayerNormVars {
    typename Tape<Real>::Var gain, bias;
};

template <typename Real>
typename Tape<Real>::Var layer_norm(Tape<Real>& t, typename Tape<Real>::Var x,
                                    const LayerNormVars<Real>& p) {
    return t.layer_norm(x, p.gain, p.bias);
}

template <typename Real>
struct FfnVars {
    typename Tape<Real>::Var w1, b1, w2, b2;
};

// Two-layer GELU FFN; the optional mask applies activation dropout to the
// hidden units.
template <typename Real>
typename Tape<Real>::Var ffn(Tape<Real>& t, typename Tape<Real>::Var x, const FfnVars<Real>& p,
                             const Tensor<Real>* act_mask = nullptr) {
    auto h = t.gelu(linear(t, x, p.w1, p.b1));
    if (act_mask) h = t.mul(h, t.constant(*act_mask));
    return linear(t, h, p.w2, p.b2);
}

// ---- EGT node-pair multi-head attention ----

template <typename Real>
struct EgtAttnVars {
    using V = typename Tape<Real>::Var;
    V wq, wk, wv;  // [dh, H*dk]
    V wb, wg;      // [de, H] scalar projections per head
    V bb, bg;      // [H] biases of the scalar projections
    V wo, bo;      // [H*dk, dh], [dh]
    V we, be;      // [H, de]
};

template <typename Real>
struct EgtAttnOut {
    typename Tape<Real>::Var node_update;  // [N, dh]
    typename Tape<Real>::Var pair_update;  // [N, N, de]
    typename Tape<Real>::Var scalers;      // [H, N] centrality scalers
};

// t_ij = q_i . k_j / sqrt(dk) + b_ij;  a_ij = softmax_j(t_ij + mask_j) * sigmoid(g_ij)
// o_i  = s_i * sum_j a_ij v_j,  s_i = ln sum_j (1 + sigmoid(g_ij))
// Pair update projects the unmasked logits t_ij across heads.
template <typename Real>
EgtAttnOut<Real> egt_attention(Tape<Real>& t, typename Tape<Real>::Var h,
                               typename Tape<Real>::Var e, const EgtAttnVars<Real>& p, int heads,
                               const Tensor<Real>* source_mask = nullptr) {
    const std::int64_t n = t.val(h).shape[0];
    const std::int64_t dh = t.val(h).shape[1];
    const std::int64_t hdk = t.val(p.wq).shape[1];
    const std::int64_t dk = hdk / heads;
    check(dk * heads == hdk, "egt_attention: head projection width not divisible by head count");

    auto heads_first = [&](typename Tape<Real>::Var m) {
        return t.permute(t.reshape(m, Shape{n, heads, dk}), {1, 0, 2});  // [H,N,dk]
    };
    auto q = heads_first(t.matmul(h, p.wq));
    auto k = heads_first(t.matmul(h, p.wk));
    auto v = heads_first(t.matmul(h, p.wv));

    auto e2 = t.reshape(e, Shape{n * n, t.val(e).shape[2]});
    auto b = t.permute(t.reshape(t.add(t.matmul(e2, p.wb), p.bb), Shape{n, n, heads}), {2, 0, 1});
    auto g = t.permute(t.reshape(t.add(t.matmul(e2, p.wg), p.bg), Shape{n, n, heads}), {2, 0, 1});

    auto dots = t.mul_scalar(t.bmm(q, t.permute(k, {0, 2, 1})), Real(1.0 / std::sqrt(double(dk))));
    auto logits = t.add(dots, b);  // [H,N,N], pre-mask (pair update reads these)

    auto masked = logits;
    if (source_mask) {
        Tensor<Real> m3(Shape{1, 1, n}, source_mask->data);
        masked = t.add_mask(logits, m3);
    }
    auto gate = t.sigmoid(g);
    auto att = t.mul(t.softmax(masked, 2), gate);  // [H,i,j]

    auto scalers = t.log_(t.reduce_sum(t.add_scalar(gate, Real(1)), 2));  // [H,N]
    auto o = t.mul(t.bmm(att, v), t.reshape(scalers, Shape{heads, n, 1}));

    auto o_cat = t.reshape(t.permute(o, {1, 0, 2}), Shape{n, heads * dk});
    EgtAttnOut<Real> out;
    out.node_update = t.add(t.matmul(o_cat, p.wo), p.bo);
    auto t_cat = t.reshape(t.permute(logits, {1, 2, 0}), Shape{n * n, heads});
    out.pair_update = t.reshape(t.add(t.matmul(t_cat, p.we), p.be), t.val(e).shape);
    out.scalers = scalers;
    return out;
}

// ---- third-order pair interactions ----
//
// All four mechanisms read the normalized pair embeddings [N,N,de] and return
// an update of the same shape (the caller owns the residual add). Inward and
// outward directions use separate parameters; heads and directions are
// concatenated and projected by wo/bo.

template <typename Real>
struct TripletDirVars {
    using V = typename Tape<Real>::Var;
    V wq, wp;  // [de, Ht*dt] query/key projections (attention variants only)
    V wv;      // [de, Ht*dt]
    V wb, bb;  // [de, Ht], [Ht] bias scalars (absent for axial)
    V wg, bg;  // [de, Ht], [Ht] gate scalars (gated variants only)
};

template <typename Real>
struct TripletVars {
    TripletDirVars<Real> in, out;
    typename Tape<Real>::Var wo, bo;  // [2*Ht*dt, de], [de]
};

template <typename Real>
struct TripletMasks {
    const Tensor<Real>* in_mask = nullptr;  // triplet-dropout masks (0 or 1/(1-p))
    const Tensor<Real>* out_mask = nullptr;
};

namespace detail {

// Shared assembly for triplet attention / aggregation / axial attention.
// Direction is encoded by how keys, values, bias and gate index the pair
// tensors: inward aggregates (j,k) weighted by (i,k); outward aggregates
// (k,j) weighted by (k,i).
template <typename Real>
typename Tape<Real>::Var triplet_direction(Tape<Real>& t, typename Tape<Real>::Var e,
                                           const TripletDirVars<Real>& p, int ht, bool outward,
                                           bool with_dots, bool with_bias, bool gated,
                                           const Tensor<Real>* drop_mask) {
    using V = typename Tape<Real>::Var;
    const std::int64_t n = t.val(e).shape[0];
    const std::int64_t de = t.val(e).shape[2];
    auto e2 = t.reshape(e, Shape{n * n, de});

    V weights;  // [Ht, j, i, k] attention weights, or [Ht, i, k] for aggregation
    if (with_dots) {
        const std::int64_t dt = t.val(p.wq).shape[1] / ht;
        auto split = [&](V m, std::vector<int> perm) {
            return t.reshape(t.permute(t.reshape(m, Shape{n, n, ht, dt}), std::move(perm)),
                             Shape{static_cast<std::int64_t>(ht) * n, n, dt});
        };
        // q_ij batched over (h, j): [h, j, i, dt]
        auto q = split(t.matmul(e2, p.wq), {2, 1, 0, 3});
        // keys: inward p_jk -> [h, j, k, dt]; outward p_kj -> [h, j, k, dt] with k the
        // first pair index
        auto key = split(t.matmul(e2, p.wp), outward ? std::vector<int>{2, 1, 0, 3}
                                                     : std::vector<int>{2, 0, 1, 3});
        auto dots = t.bmm(q, t.permute(key, {0, 2, 1}));  // [(h,j), i, k]
        auto logits = t.reshape(t.mul_scalar(dots, Real(1.0 / std::sqrt(double(dt)))),
                                Shape{ht, n, n, n});
        if (with_bias) {
            // bias from the third pair: inward b_ik, outward b_ki -> [h, 1, i, k]
            auto b = t.add(t.matmul(e2, p.wb), p.bb);
            auto b4 = t.reshape(t.permute(t.reshape(b, Shape{n, n, ht}),
                                          outward ? std::vector<int>{2, 1, 0}
                                                  : std::vector<int>{2, 0, 1}),
                                Shape{ht, 1, n, n});
            logits = t.add(logits, b4);
        }
        weights = t.softmax(logits, 3);  // over k
        if (gated) {
            auto g = t.add(t.matmul(e2, p.wg), p.bg);
            auto g4 = t.reshape(t.permute(t.reshape(g, Shape{n, n, ht}),
                                          outward ? std::vector<int>{2, 1, 0}
                                                  : std::vector<int>{2, 0, 1}),
                                Shape{ht, 1, n, n});
            weights = t.mul(weights, t.sigmoid(g4));
        }
        if (drop_mask) weights = t.mul(weights, t.constant(*drop_mask));
        weights = t.reshape(weights, Shape{static_cast<std::int64_t>(ht) * n, n, n});
        // values: inward v_jk -> [h, j, k, dt]; outward v_kj -> [h, j, k, dt]
        auto val = split(t.matmul(e2, p.wv), outward ? std::vector<int>{2, 1, 0, 3}
                                                     : std::vector<int>{2, 0, 1, 3});
        auto o = t.bmm(weights, val);  // [(h,j), i, dt]
        return t.reshape(t.permute(t.reshape(o, Shape{ht, n, n, dt}), {2, 1, 0, 3}),
                         Shape{n, n, static_cast<std::int64_t>(ht) * dt});  // [i, j, h*dt]
    }

    // aggregation path: weights depend only on the third pair
    const std::int64_t dt = t.val(p.wv).shape[1] / ht;
    auto b = t.add(t.matmul(e2, p.wb), p.bb);
    auto w3 = t.permute(t.reshape(b, Shape{n, n, ht}),
                        outward ? std::vector<int>{2, 1, 0} : std::vector<int>{2, 0, 1});
    weights = t.softmax(w3, 2);  // softmax over k of b_ik (outward: b_ki)
    if (gated) {
        auto g = t.add(t.matmul(e2, p.wg), p.bg);
        auto g3 = t.permute(t.reshape(g, Shape{n, n, ht}),
                            outward ? std::vector<int>{2, 1, 0} : std::vector<int>{2, 0, 1});
        weights = t.mul(weights, t.sigmoid(g3));
    }
    if (drop_mask) weights = t.mul(weights, t.constant(*drop_mask));
    // one contraction per head: [h, i, k] x [h, k, j*dt]
    auto v4 = t.reshape(t.matmul(e2, p.wv), Shape{n, n, ht, dt});
    auto val = t.reshape(t.permute(v4, outward ? std::vector<int>{2, 0, 1, 3}
                                               : std::vector<int>{2, 1, 0, 3}),
                         Shape{ht, n, n * dt});
    auto o = t.bmm(weights, val);  // [h, i, j*dt]
    return t.reshape(t.permute(t.reshape(o, Shape{ht, n, n, dt}), {1, 2, 0, 3}),
                     Shape{n, n, static_cast<std::int64_t>(ht) * dt});
}

}  // namespace detail

// Triplet attention: a_ijk = softmax_k(q_ij . p_jk / sqrt(d) + b_ik) * sigmoid(g_ik),
// o_ij = sum_k a_ijk v_jk, plus the outward update over (k,j) pairs.
template <typename Real>
typename Tape<Real>::Var triplet_attention(Tape<Real>& t, typename Tape<Real>::Var e,
                                           const TripletVars<Real>& p, int ht, bool gated = true,
                                           const TripletMasks<Real>& masks = {}) {
    auto oin = detail::triplet_direction(t, e, p.in, ht, false, true, true, gated, masks.in_mask);
    auto oout = detail::triplet_direction(t, e, p.out, ht, true, true, true, gated, masks.out_mask);
    return linear(t, t.concat({oin, oout}, 2), p.wo, p.bo);
}

// Triplet aggregation: a_ik = softmax_k(b_ik) * sigmoid(g_ik), o_ij = sum_k a_ik v_jk;
// realized as one dense matrix product per head and direction.
template <typename Real>
typename Tape<Real>::Var triplet_aggregation(Tape<Real>& t, typename Tape<Real>::Var e,
                                             const TripletVars<Real>& p, int ht, bool gated = true,
                                             const TripletMasks<Real>& masks = {}) {
    auto oin = detail::triplet_direction(t, e, p.in, ht, false, false, true, gated, masks.in_mask);
    auto oout = detail::triplet_direction(t, e, p.out, ht, true, false, true, gated, masks.out_mask);
    return linear(t, t.concat({oin, oout}, 2), p.wo, p.bo);
}

// Axial attention baseline: triplet attention without the bias and gate terms.
template <typename Real>
typename Tape<Real>::Var axial_attention(Tape<Real>& t, typename Tape<Real>::Var e,
                                         const TripletVars<Real>& p, int ht,
                                         const TripletMasks<Real>& masks = {}) {
    auto oin = detail::triplet_direction(t, e, p.in, ht, false, true, false, false, masks.in_mask);
    auto oout = detail::triplet_direction(t, e, p.out, ht, true, true, false, false, masks.out_mask);
    return linear(t, t.concat({oin, oout}, 2), p.wo, p.bo);
}

template <typename Real>
struct TriangularVars {
    using V = typename Tape<Real>::Var;
    V wa_in, wb_in;    // [de, S] scalar projections per set
    V wa_out, wb_out;  // [de, S]
    V wo, bo;          // [2S, de], [de]
};

// Triangular update baseline: o_ij = sum_k a_ik b_jk (and the opposite
// direction sum_k a'_ki b'_kj), concatenated over scalar sets, projected.
template <typename Real>
typename Tape<Real>::Var triangular_update(Tape<Real>& t, typename Tape<Real>::Var e,
                                           const TriangularVars<Real>& p) {
    const std::int64_t n = t.val(e).shape[0];
    const std::int64_t de = t.val(e).shape[2];
    const std::int64_t sets = t.val(p.wa_in).shape[1];
    auto e2 = t.reshape(e, Shape{n * n, de});
    auto proj = [&](typename Tape<Real>::Var w) {
        return t.permute(t.reshape(t.matmul(e2, w), Shape{n, n, sets}), {2, 0, 1});  // [S,x,y]
    };
    auto a_in = proj(p.wa_in);    // [S,i,k]
    auto b_in = proj(p.wb_in);    // [S,j,k]
    auto o_in = t.bmm(a_in, t.permute(b_in, {0, 2, 1}));  // [S,i,j]
    auto a_out = proj(p.wa_out);  // [S,k,i]
    auto b_out = proj(p.wb_out);  // [S,k,j]
    auto o_out = t.bmm(t.permute(a_out, {0, 2, 1}), b_out);  // [S,i,j]
    auto cat = t.concat({t.permute(o_in, {1, 2, 0}), t.permute(o_out, {1, 2, 0})}, 2);  // [i,j,2S]
    return linear(t, cat, p.wo, p.bo);
}

}  // namespace tgt
