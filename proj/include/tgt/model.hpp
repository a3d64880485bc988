#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tgt/encodings.hpp"
#include "tgt/graph.hpp"
#include "tgt/layers.hpp"
#include "tgt/params.hpp"

namespace tgt {

enum class Mode { train, stochastic_eval, deterministic_eval };

enum class EncodingKind { none, rbf, fourier };

inline const char* encoding_name(EncodingKind k) {
    switch (k) {
        case EncodingKind::none: return "none";
        case EncodingKind::rbf: return "rbf";
        case EncodingKind::fourier: return "fourier";
    }
    return "?";
}

inline EncodingKind encoding_from_name(const std::string& s) {
    for (EncodingKind k : {EncodingKind::none, EncodingKind::rbf, EncodingKind::fourier}) {
        if (s == encoding_name(k)) return k;
    }
    throw ConfigError("unknown distance encoding '" + s + "'");
}

struct TGTConfig {
    int num_layers = 4;
    int layer_multiplier = 1;  // consecutive layers sharing one parameter group
    int node_dim = 32;
    int edge_dim = 16;
    int heads = 4;
    int triplet_heads = 2;
    Variant variant = Variant::triplet_att;
    int node_ffn_dim = 64;
    int edge_ffn_dim = 32;
    DropoutSpec dropout;
    BinSpec bins;
    EncodingKind encoding = EncodingKind::none;
    int max_hops = 16;
    int num_node_types = 8;
    int num_bond_types = 4;
    int coord_dim = 0;  // >0: continuous node coordinates are projected into the node channel
    int rbf_kernels = 32;
    int fourier_kernels = 32;
    double fourier_delta_min = 0.1;
    bool graph_head = false;
    bool distance_head = true;
    bool edge_head = false;

    int head_dim() const { return node_dim / heads; }
    int triplet_dim() const { return triplet_heads > 0 ? edge_dim / triplet_heads : 0; }
    int triangular_sets() const { return edge_dim; }
};

inline void validate(const TGTConfig& c) {
    check(c.num_layers >= 0, "config: num_layers must be >= 0");
    check(c.layer_multiplier >= 1, "config: layer_multiplier must be >= 1");
    check(c.num_layers % c.layer_multiplier == 0,
          "config: num_layers must be divisible by layer_multiplier");
    check(c.node_dim > 0 && c.edge_dim > 0, "config: dims must be positive");
    check(c.heads > 0 && c.node_dim % c.heads == 0,
          "config: node_dim must be divisible by heads");
    if (c.variant == Variant::none) {
        check(c.triplet_heads == 0, "config: triplet_heads must be 0 when variant is none");
    } else {
        check(c.triplet_heads > 0, "config: triplet_heads must be > 0 for a 3rd-order variant");
        check(c.edge_dim % c.triplet_heads == 0,
              "config: edge_dim must be divisible by triplet_heads");
    }
    check(c.max_hops >= 1, "config: max_hops must be >= 1");
    check(c.num_node_types >= 1 && c.num_bond_types >= 1, "config: type counts must be >= 1");
    validate(c.dropout);
    validate(c.bins);
    if (c.encoding == EncodingKind::rbf) check(c.rbf_kernels >= 1, "config: rbf_kernels >= 1");
    if (c.encoding == EncodingKind::fourier) {
        check(c.fourier_kernels >= 1, "config: fourier_kernels >= 1");
        check(c.fourier_delta_min > 0 && c.fourier_delta_min < c.bins.range,
              "config: fourier_delta_min must lie in (0, bins.range)");
    }
    check(c.graph_head || c.distance_head || c.edge_head, "config: at least one head required");
}

template <typename Real>
struct ModelOutputs {
    using V = typename Tape<Real>::Var;
    V graph_scalar;     // scalar (graph_head)
    V distance_logits;  // [N,N,B], symmetrized (distance_head)
    V edge_logits;      // [N,N], symmetrized (edge_head)
    V node_final;       // [N, node_dim] after the final pre-norm
    V pair_final;       // [N,N, edge_dim]
    std::vector<V> leaves;  // bound parameters, aligned with the store
};

// The TGT stack: embeddings -> L layers (EGT attention, optional triplet
// module, node/edge FFNs, all pre-norm residual) -> final norms -> heads.
template <typename Real>
class TgtModel {
public:
    using V = typename Tape<Real>::Var;

    TgtModel(TGTConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        validate(cfg_);
        Rng rng(derive_seed(seed, 0x7067));
        build_params(rng);
    }

    const TGTConfig& config() const { return cfg_; }
    ParamStore<Real>& params() { return store_; }
    const ParamStore<Real>& params() const { return store_; }

    std::int64_t count_params(const std::string& prefix = "") const {
        return store_.count_params(prefix);
    }

    // Group index of a (0-based) layer.
    int group_of_layer(int layer) const { return layer / cfg_.layer_multiplier; }
    int num_groups() const { return cfg_.num_layers / cfg_.layer_multiplier; }

    ModelOutputs<Real> forward(Tape<Real>& tape, const GraphInstance& graph, Mode mode, Rng& rng,
                               const std::vector<Real>* input_distances = nullptr) const {
        auto leaves = store_.bind(tape, mode == Mode::train);
        return forward_with_params(tape, leaves, graph, mode, rng, input_distances);
    }

    // Forward with caller-supplied parameter leaves (store order). Used by the
    // trainer (to read leaf gradients) and by gradient checking.
    ModelOutputs<Real> forward_with_params(Tape<Real>& tape, const std::vector<V>& vars,
                                           const GraphInstance& graph, Mode mode, Rng& rng,
                                           const std::vector<Real>* input_distances = nullptr) const {
        check(vars.size() == store_.size(), "forward: parameter binding count mismatch");
        const int n = graph.n;
        check(n > 0, "forward: empty graph");
        check(static_cast<int>(graph.node_types.size()) == n, "forward: node_types size mismatch");
        const bool dropout_on = mode != Mode::deterministic_eval;
        auto v = [&](int id) { return vars[static_cast<std::size_t>(id)]; };

        // ---- input embeddings ----
        std::vector<std::int64_t> type_idx(graph.node_types.size());
        for (std::size_t i = 0; i < type_idx.size(); ++i) {
            const int ty = graph.node_types[i];
            check(ty >= 0 && ty < cfg_.num_node_types, "forward: node type out of range");
            type_idx[i] = ty;
        }
        auto h = tape.embedding(v(input_.node_type_tab), type_idx, Shape{n});
        if (cfg_.coord_dim > 0) {
            check(graph.coord_dim == cfg_.coord_dim, "forward: coordinate dimension mismatch");
            Tensor<Real> coords(Shape{n, cfg_.coord_dim});
            for (std::size_t i = 0; i < graph.coords.size(); ++i) {
                coords[static_cast<std::int64_t>(i)] = static_cast<Real>(graph.coords[i]);
            }
            h = tape.add(h, tape.matmul(tape.constant(std::move(coords)), v(input_.coord_w)));
        }

        std::vector<std::int64_t> hop_idx(static_cast<std::size_t>(n) * n);
        check(graph.hop.size() == hop_idx.size(), "forward: hop matrix size mismatch");
        for (std::size_t i = 0; i < hop_idx.size(); ++i) {
            // clamp: dataset may have been generated with a larger max_hops
            hop_idx[i] = std::min(graph.hop[i], cfg_.max_hops + 1);
        }
        std::vector<std::int64_t> bond_idx(hop_idx.size(), cfg_.num_bond_types);  // "no edge"
        for (const auto& edge : graph.edges) {
            check(edge.bond_type >= 0 && edge.bond_type < cfg_.num_bond_types,
                  "forward: bond type out of range");
            bond_idx[static_cast<std::size_t>(edge.i) * n + edge.j] = edge.bond_type;
            bond_idx[static_cast<std::size_t>(edge.j) * n + edge.i] = edge.bond_type;
        }
        auto e = tape.add(tape.embedding(v(input_.hop_tab), hop_idx, Shape{n, n}),
                          tape.embedding(v(input_.bond_tab), bond_idx, Shape{n, n}));

        if (input_distances) {
            check(cfg_.encoding != EncodingKind::none,
                  "forward: input distances supplied but distance encoding is 'none'");
            check(static_cast<std::int64_t>(input_distances->size()) ==
                      static_cast<std::int64_t>(n) * n,
                  "forward: input distance matrix size mismatch");
            auto d = tape.constant(Tensor<Real>(Shape{static_cast<std::int64_t>(n) * n},
                                                *input_distances));
            V enc;
            if (cfg_.encoding == EncodingKind::rbf) {
                std::vector<std::int64_t> pair_idx(hop_idx.size());
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < n; ++j) {
                        pair_idx[static_cast<std::size_t>(i) * n + j] =
                            type_idx[static_cast<std::size_t>(i)] * cfg_.num_node_types +
                            type_idx[static_cast<std::size_t>(j)];
                    }
                }
                RbfVars<Real> rp{v(input_.rbf_mu), v(input_.rbf_sigma), v(input_.rbf_m_tab),
                                 v(input_.rbf_b_tab), v(input_.rbf_w1), v(input_.rbf_b1),
                                 v(input_.rbf_w2), v(input_.rbf_b2)};
                enc = rbf_encode(tape, d, pair_idx, rp);
            } else {
                FourierVars<Real> fp{v(input_.fourier_w), v(input_.fourier_b)};
                enc = fourier_encode(tape, d, fourier_lambdas_, fp);
            }
            e = tape.add(e, tape.reshape(enc, Shape{n, n, cfg_.edge_dim}));
        }

        // ---- layers ----
        for (int layer = 0; layer < cfg_.num_layers; ++layer) {
            const LayerIds& L = layers_[static_cast<std::size_t>(group_of_layer(layer))];

            std::optional<Tensor<Real>> src_mask;
            if (dropout_on && cfg_.dropout.source_p > 0.0) {
                src_mask = source_dropout_mask<Real>(n, cfg_.dropout.source_p, rng);
            }
            auto hn = tape.layer_norm(h, v(L.ln_h.gain), v(L.ln_h.bias));
            auto en = tape.layer_norm(e, v(L.ln_e.gain), v(L.ln_e.bias));
            EgtAttnVars<Real> av{v(L.attn.wq), v(L.attn.wk), v(L.attn.wv), v(L.attn.wb),
                                 v(L.attn.wg), v(L.attn.bb), v(L.attn.bg), v(L.attn.wo),
                                 v(L.attn.bo), v(L.attn.we), v(L.attn.be)};
            auto att = egt_attention(tape, hn, en, av, cfg_.heads,
                                     src_mask ? &*src_mask : nullptr);
            h = residual_add(tape, h, att.node_update, dropout_on, rng);
            e = residual_add(tape, e, att.pair_update, dropout_on, rng);

            if (cfg_.variant != Variant::none) {
                auto etn = tape.layer_norm(e, v(L.ln_tri.gain), v(L.ln_tri.bias));
                V update;
                if (cfg_.variant == Variant::triangular) {
                    TriangularVars<Real> tv{v(L.tria.wa_in), v(L.tria.wb_in), v(L.tria.wa_out),
                                            v(L.tria.wb_out), v(L.tria.wo), v(L.tria.bo)};
                    update = triangular_update(tape, etn, tv);
                } else {
                    TripletVars<Real> tv = bind_triplet(L.tri, vars);
                    const int ht = cfg_.triplet_heads;
                    std::optional<Tensor<Real>> in_mask, out_mask;
                    TripletMasks<Real> masks;
                    if (dropout_on && cfg_.dropout.triplet_p > 0.0) {
                        const bool att_like = variant_is_attention(cfg_.variant);
                        Shape ms = att_like ? Shape{ht, n, n, n} : Shape{ht, n, n};
                        in_mask = dropout_mask<Real>(ms, cfg_.dropout.triplet_p, rng);
                        out_mask = dropout_mask<Real>(ms, cfg_.dropout.triplet_p, rng);
                        masks.in_mask = &*in_mask;
                        masks.out_mask = &*out_mask;
                    }
                    switch (cfg_.variant) {
                        case Variant::triplet_att:
                            update = triplet_attention(tape, etn, tv, ht, true, masks);
                            break;
                        case Variant::ungated_att:
                            update = triplet_attention(tape, etn, tv, ht, false, masks);
                            break;
                        case Variant::triplet_agg:
                            update = triplet_aggregation(tape, etn, tv, ht, true, masks);
                            break;
                        case Variant::ungated_agg:
                            update = triplet_aggregation(tape, etn, tv, ht, false, masks);
                            break;
                        case Variant::axial:
                            update = axial_attention(tape, etn, tv, ht, masks);
                            break;
                        default:
                            throw ValueError("unreachable variant");
                    }
                }
                e = residual_add(tape, e, update, dropout_on, rng);
            }

            h = residual_add(tape, h,
                             ffn_block(tape, h, L.ln_ffn_h, L.ffn_h, vars, Shape{n, cfg_.node_ffn_dim},
                                       dropout_on, rng),
                             dropout_on, rng);
            e = residual_add(tape, e,
                             ffn_block(tape, e, L.ln_ffn_e, L.ffn_e, vars,
                                       Shape{n, n, cfg_.edge_ffn_dim}, dropout_on, rng),
                             dropout_on, rng);
        }

        // ---- heads from final pre-normed embeddings ----
        ModelOutputs<Real> out;
        out.node_final = tape.layer_norm(h, v(heads_.final_h.gain), v(heads_.final_h.bias));
        out.pair_final = tape.layer_norm(e, v(heads_.final_e.gain), v(heads_.final_e.bias));
        if (cfg_.distance_head) {
            auto logits = linear(tape, out.pair_final, v(heads_.dist_w), v(heads_.dist_b));
            auto sym = tape.mul_scalar(tape.add(logits, tape.permute(logits, {1, 0, 2})), Real(0.5));
            out.distance_logits = sym;
        }
        if (cfg_.graph_head) {
            auto pooled = tape.reshape(tape.reduce_mean(out.node_final, 0), Shape{1, cfg_.node_dim});
            auto hidden = tape.gelu(tape.add(tape.matmul(pooled, v(heads_.graph_w1)), v(heads_.graph_b1)));
            auto scalar = tape.add(tape.matmul(hidden, v(heads_.graph_w2)), v(heads_.graph_b2));
            out.graph_scalar = tape.reshape(scalar, Shape{});
        }
        if (cfg_.edge_head) {
            auto logits = tape.reshape(linear(tape, out.pair_final, v(heads_.edge_w), v(heads_.edge_b)),
                                       Shape{n, n});
            out.edge_logits = tape.mul_scalar(tape.add(logits, tape.permute(logits, {1, 0})), Real(0.5));
        }
        out.leaves = vars;
        return out;
    }

private:
    struct LnIds {
        int gain = -1, bias = -1;
    };
    struct FfnIds {
        int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
    };
    struct EgtIds {
        int wq = -1, wk = -1, wv = -1, wb = -1, bb = -1, wg = -1, bg = -1, wo = -1, bo = -1,
            we = -1, be = -1;
    };
    struct DirIds {
        int wq = -1, wp = -1, wv = -1, wb = -1, bb = -1, wg = -1, bg = -1;
    };
    struct TriIds {
        DirIds in, out;
        int wo = -1, bo = -1;
    };
    struct TriangularIds {
        int wa_in = -1, wb_in = -1, wa_out = -1, wb_out = -1, wo = -1, bo = -1;
    };
    struct LayerIds {
        LnIds ln_h, ln_e, ln_tri, ln_ffn_h, ln_ffn_e;
        EgtIds attn;
        TriIds tri;
        TriangularIds tria;
        FfnIds ffn_h, ffn_e;
    };
    struct InputIds {
        int node_type_tab = -1, hop_tab = -1, bond_tab = -1, coord_w = -1;
        int rbf_mu = -1, rbf_sigma = -1, rbf_m_tab = -1, rbf_b_tab = -1;
        int rbf_w1 = -1, rbf_b1 = -1, rbf_w2 = -1, rbf_b2 = -1;
        int fourier_w = -1, fourier_b = -1;
    };
    struct HeadIds {
        LnIds final_h, final_e;
        int dist_w = -1, dist_b = -1;
        int graph_w1 = -1, graph_b1 = -1, graph_w2 = -1, graph_b2 = -1;
        int edge_w = -1, edge_b = -1;
    };

    TGTConfig cfg_;
    ParamStore<Real> store_;
    InputIds input_;
    std::vector<LayerIds> layers_;
    HeadIds heads_;
    std::vector<double> fourier_lambdas_;

    // ---- parameter construction ----

    int add_xavier(const std::string& name, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
        const Real stddev = Real(std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
        return store_.add(name, Tensor<Real>::randn(Shape{fan_in, fan_out}, rng, stddev));
    }

    int add_zeros(const std::string& name, Shape shape) {
        return store_.add(name, Tensor<Real>(std::move(shape), Real(0)));
    }

    int add_embedding(const std::string& name, std::int64_t rows, std::int64_t cols, Rng& rng) {
        return store_.add(name, Tensor<Real>::randn(Shape{rows, cols}, rng, Real(0.2)));
    }

    LnIds add_ln(const std::string& prefix, std::int64_t d) {
        LnIds ids;
        ids.gain = store_.add(prefix + ".gain", Tensor<Real>(Shape{d}, Real(1)));
        ids.bias = add_zeros(prefix + ".bias", Shape{d});
        return ids;
    }

    FfnIds add_ffn(const std::string& prefix, std::int64_t d, std::int64_t hidden, Rng& rng) {
        FfnIds ids;
        ids.w1 = add_xavier(prefix + ".w1", d, hidden, rng);
        ids.b1 = add_zeros(prefix + ".b1", Shape{hidden});
        ids.w2 = add_xavier(prefix + ".w2", hidden, d, rng);
        ids.b2 = add_zeros(prefix + ".b2", Shape{d});
        return ids;
    }

    DirIds add_triplet_dir(const std::string& prefix, Rng& rng) {
        DirIds ids;
        const std::int64_t de = cfg_.edge_dim;
        const std::int64_t width = static_cast<std::int64_t>(cfg_.triplet_heads) * cfg_.triplet_dim();
        const bool att = variant_is_attention(cfg_.variant);
        const bool gated = variant_is_gated(cfg_.variant);
        if (att) {
            ids.wq = add_xavier(prefix + ".wq", de, width, rng);
            ids.wp = add_xavier(prefix + ".wp", de, width, rng);
        }
        ids.wv = add_xavier(prefix + ".wv", de, width, rng);
        if (cfg_.variant != Variant::axial) {
            ids.wb = add_xavier(prefix + ".wb", de, cfg_.triplet_heads, rng);
            ids.bb = add_zeros(prefix + ".bb", Shape{cfg_.triplet_heads});
        }
        if (gated) {
            ids.wg = add_xavier(prefix + ".wg", de, cfg_.triplet_heads, rng);
            ids.bg = add_zeros(prefix + ".bg", Shape{cfg_.triplet_heads});
        }
        return ids;
    }

    void build_params(Rng& rng) {
        const std::int64_t dh = cfg_.node_dim, de = cfg_.edge_dim;
        input_.node_type_tab = add_embedding("embed.node_type", cfg_.num_node_types, dh, rng);
        input_.hop_tab = add_embedding("embed.hop", cfg_.max_hops + 2, de, rng);
        input_.bond_tab = add_embedding("embed.bond", cfg_.num_bond_types + 1, de, rng);
        if (cfg_.coord_dim > 0) {
            input_.coord_w = add_xavier("embed.coord_w", cfg_.coord_dim, dh, rng);
        }
        if (cfg_.encoding == EncodingKind::rbf) {
            const int kk = cfg_.rbf_kernels;
            Tensor<Real> mu(Shape{kk});
            for (int k = 0; k < kk; ++k) {
                mu[k] = Real(cfg_.bins.range * (k + 0.5) / kk);
            }
            input_.rbf_mu = store_.add("enc.rbf.mu", std::move(mu));
            input_.rbf_sigma =
                store_.add("enc.rbf.sigma", Tensor<Real>(Shape{kk}, Real(cfg_.bins.range / kk)));
            Tensor<Real> m_tab(Shape{cfg_.num_node_types * cfg_.num_node_types, kk});
            for (std::int64_t i = 0; i < m_tab.size(); ++i) {
                m_tab[i] = Real(1) + Real(0.05) * Real(rng.normal());
            }
            input_.rbf_m_tab = store_.add("enc.rbf.m_tab", std::move(m_tab));
            input_.rbf_b_tab = add_zeros("enc.rbf.b_tab",
                                         Shape{cfg_.num_node_types * cfg_.num_node_types, kk});
            input_.rbf_w1 = add_xavier("enc.rbf.w1", kk, 2 * de, rng);
            input_.rbf_b1 = add_zeros("enc.rbf.b1", Shape{2 * de});
            input_.rbf_w2 = add_xavier("enc.rbf.w2", 2 * de, de, rng);
            input_.rbf_b2 = add_zeros("enc.rbf.b2", Shape{de});
        } else if (cfg_.encoding == EncodingKind::fourier) {
            fourier_lambdas_ =
                fourier_wavelengths(cfg_.fourier_kernels, cfg_.fourier_delta_min, cfg_.bins.range);
            input_.fourier_w = add_xavier("enc.fourier.w", 2 * cfg_.fourier_kernels, de, rng);
            input_.fourier_b = add_zeros("enc.fourier.b", Shape{de});
        }

        layers_.clear();
        for (int g = 0; g < num_groups(); ++g) {
            const std::string p = "layers." + std::to_string(g);
            LayerIds L;
            L.ln_h = add_ln(p + ".attn.ln_h", dh);
            L.ln_e = add_ln(p + ".attn.ln_e", de);
            L.attn.wq = add_xavier(p + ".attn.wq", dh, dh, rng);
            L.attn.wk = add_xavier(p + ".attn.wk", dh, dh, rng);
            L.attn.wv = add_xavier(p + ".attn.wv", dh, dh, rng);
            L.attn.wb = add_xavier(p + ".attn.wb", de, cfg_.heads, rng);
            L.attn.bb = add_zeros(p + ".attn.bb", Shape{cfg_.heads});
            L.attn.wg = add_xavier(p + ".attn.wg", de, cfg_.heads, rng);
            L.attn.bg = add_zeros(p + ".attn.bg", Shape{cfg_.heads});
            L.attn.wo = add_xavier(p + ".attn.wo", dh, dh, rng);
            L.attn.bo = add_zeros(p + ".attn.bo", Shape{dh});
            L.attn.we = add_xavier(p + ".attn.we", cfg_.heads, de, rng);
            L.attn.be = add_zeros(p + ".attn.be", Shape{de});
            if (cfg_.variant == Variant::triangular) {
                L.ln_tri = add_ln(p + ".tri.ln", de);
                const std::int64_t sets = cfg_.triangular_sets();
                L.tria.wa_in = add_xavier(p + ".tri.wa_in", de, sets, rng);
                L.tria.wb_in = add_xavier(p + ".tri.wb_in", de, sets, rng);
                L.tria.wa_out = add_xavier(p + ".tri.wa_out", de, sets, rng);
                L.tria.wb_out = add_xavier(p + ".tri.wb_out", de, sets, rng);
                L.tria.wo = add_xavier(p + ".tri.wo", 2 * sets, de, rng);
                L.tria.bo = add_zeros(p + ".tri.bo", Shape{de});
            } else if (cfg_.variant != Variant::none) {
                L.ln_tri = add_ln(p + ".tri.ln", de);
                L.tri.in = add_triplet_dir(p + ".tri.in", rng);
                L.tri.out = add_triplet_dir(p + ".tri.out", rng);
                const std::int64_t width =
                    static_cast<std::int64_t>(cfg_.triplet_heads) * cfg_.triplet_dim();
                L.tri.wo = add_xavier(p + ".tri.wo", 2 * width, de, rng);
                L.tri.bo = add_zeros(p + ".tri.bo", Shape{de});
            }
            L.ln_ffn_h = add_ln(p + ".ffn_h.ln", dh);
            L.ffn_h = add_ffn(p + ".ffn_h", dh, cfg_.node_ffn_dim, rng);
            L.ln_ffn_e = add_ln(p + ".ffn_e.ln", de);
            L.ffn_e = add_ffn(p + ".ffn_e", de, cfg_.edge_ffn_dim, rng);
            layers_.push_back(L);
        }

        heads_.final_h = add_ln("head.final_ln_h", dh);
        heads_.final_e = add_ln("head.final_ln_e", de);
        if (cfg_.distance_head) {
            heads_.dist_w = add_xavier("head.dist.w", de, cfg_.bins.num_bins, rng);
            heads_.dist_b = add_zeros("head.dist.b", Shape{cfg_.bins.num_bins});
        }
        if (cfg_.graph_head) {
            heads_.graph_w1 = add_xavier("head.graph.w1", dh, dh, rng);
            heads_.graph_b1 = add_zeros("head.graph.b1", Shape{dh});
            heads_.graph_w2 = add_xavier("head.graph.w2", dh, 1, rng);
            heads_.graph_b2 = add_zeros("head.graph.b2", Shape{1});
        }
        if (cfg_.edge_head) {
            heads_.edge_w = add_xavier("head.edge.w", de, 1, rng);
            heads_.edge_b = add_zeros("head.edge.b", Shape{1});
        }
    }

    // ---- forward helpers ----

    TripletVars<Real> bind_triplet(const TriIds& ids, const std::vector<V>& vars) const {
        auto v = [&](int id) { return id >= 0 ? vars[static_cast<std::size_t>(id)] : V{}; };
        TripletVars<Real> tv;
        tv.in = {v(ids.in.wq), v(ids.in.wp), v(ids.in.wv), v(ids.in.wb), v(ids.in.bb),
                 v(ids.in.wg), v(ids.in.bg)};
        tv.out = {v(ids.out.wq), v(ids.out.wp), v(ids.out.wv), v(ids.out.wb), v(ids.out.bb),
                  v(ids.out.wg), v(ids.out.bg)};
        tv.wo = v(ids.wo);
        tv.bo = v(ids.bo);
        return tv;
    }

    V residual_add(Tape<Real>& tape, V x, V update, bool dropout_on, Rng& rng) const {
        if (dropout_on && cfg_.dropout.path_p > 0.0) {
            const double scale = path_drop_draw(cfg_.dropout.path_p, rng);
            if (scale == 0.0) return x;  // branch dropped
            update = tape.mul_scalar(update, Real(scale));
        }
        return tape.add(x, update);
    }

    V ffn_block(Tape<Real>& tape, V x, const LnIds& ln, const FfnIds& f, const std::vector<V>& vars,
                Shape hidden_shape, bool dropout_on, Rng& rng) const {
        auto v = [&](int id) { return vars[static_cast<std::size_t>(id)]; };
        auto xn = tape.layer_norm(x, v(ln.gain), v(ln.bias));
        FfnVars<Real> fv{v(f.w1), v(f.b1), v(f.w2), v(f.b2)};
        std::optional<Tensor<Real>> mask;
        if (dropout_on && cfg_.dropout.activation_p > 0.0) {
            mask = dropout_mask<Real>(std::move(hidden_shape), cfg_.dropout.activation_p, rng);
        }
        return ffn(tape, xn, fv, mask ? &*mask : nullptr);
    }
};

}  // namespace tgt
