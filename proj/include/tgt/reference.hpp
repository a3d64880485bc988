#pragma once

// Naive reference implementations of the attention mechanisms, written as
// explicit loops with no tape machinery. They exist only to cross-check the
// vectorized implementations (unit tests and the `verify` subcommand); keep
// them independent of layers.hpp internals.

#include <algorithm>
#include <cmath>
#include <vector>

#include "tgt/graph.hpp"
#include "tgt/tensor.hpp"

namespace tgt::reference {

// Floyd-Warshall all-pairs shortest paths; oracle for the BFS hop encoder.
inline std::vector<int> floyd_warshall(const std::vector<GraphInstance::Edge>& edges, int n) {
    const int inf = 1 << 20;
    std::vector<int> d(static_cast<std::size_t>(n) * n, inf);
    for (int i = 0; i < n; ++i) d[static_cast<std::size_t>(i) * n + i] = 0;
    for (const auto& e : edges) {
        d[static_cast<std::size_t>(e.i) * n + e.j] = 1;
        d[static_cast<std::size_t>(e.j) * n + e.i] = 1;
    }
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                d[static_cast<std::size_t>(i) * n + j] =
                    std::min(d[static_cast<std::size_t>(i) * n + j],
                             d[static_cast<std::size_t>(i) * n + k] + d[static_cast<std::size_t>(k) * n + j]);
    return d;
}

// Exhaustive tour enumeration ((m-1)!/2 up to direction); oracle for Held-Karp.
inline double brute_force_tsp_length(const std::vector<double>& dist, int m) {
    std::vector<int> perm;
    for (int i = 1; i < m; ++i) perm.push_back(i);
    double best = 1e300;
    do {
        double len = dist[static_cast<std::size_t>(perm.front())];
        for (std::size_t i = 0; i + 1 < perm.size(); ++i)
            len += dist[static_cast<std::size_t>(perm[i]) * m + perm[i + 1]];
        len += dist[static_cast<std::size_t>(perm.back()) * m];
        best = std::min(best, len);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

struct TripletDirParams {
    Tensor<double> wq, wp, wv;  // [de, ht*dt]
    Tensor<double> wb, bb;      // [de, ht], [ht]
    Tensor<double> wg, bg;      // [de, ht], [ht]
};

struct TripletParams {
    TripletDirParams in, out;
    Tensor<double> wo, bo;  // [2*ht*dt, de], [de]
};

namespace detail {

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// row r of (x @ w + b) for flattened pair embeddings
inline double project(const Tensor<double>& e, int n, int a, int b, const Tensor<double>& w,
                      std::int64_t col) {
    const std::int64_t de = e.shape[2];
    double s = 0.0;
    for (std::int64_t d = 0; d < de; ++d) {
        s += e[(static_cast<std::int64_t>(a) * n + b) * de + d] * w[d * w.shape[1] + col];
    }
    return s;
}

}  // namespace detail

// One direction of a third-order interaction, head outputs concatenated:
// result [n, n, ht*dt]. Flags select the mechanism:
//   with_dots: include q.p/sqrt(dt) in the logits (attention variants)
//   with_bias: include the third-pair bias b (not axial)
//   gated:     multiply by sigmoid of the third-pair gate
inline Tensor<double> triplet_direction(const Tensor<double>& e, const TripletDirParams& p, int ht,
                                        bool outward, bool with_dots, bool with_bias, bool gated,
                                        const Tensor<double>* drop_mask = nullptr) {
    const int n = static_cast<int>(e.shape[0]);
    const std::int64_t dt = p.wv.shape[1] / ht;
    Tensor<double> out(Shape{n, n, static_cast<std::int64_t>(ht) * dt}, 0.0);
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (int h = 0; h < ht; ++h) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                for (int k = 0; k < n; ++k) {
                    double l = 0.0;
                    if (with_dots) {
                        double dot = 0.0;
                        for (std::int64_t c = 0; c < dt; ++c) {
                            const double q = detail::project(e, n, i, j, p.wq, h * dt + c);
                            const double pk = outward ? detail::project(e, n, k, j, p.wp, h * dt + c)
                                                      : detail::project(e, n, j, k, p.wp, h * dt + c);
                            dot += q * pk;
                        }
                        l += dot / std::sqrt(static_cast<double>(dt));
                    }
                    if (with_bias) {
                        l += (outward ? detail::project(e, n, k, i, p.wb, h)
                                      : detail::project(e, n, i, k, p.wb, h)) +
                             p.bb[h];
                    }
                    logits[static_cast<std::size_t>(k)] = l;
                }
                double mx = logits[0];
                for (int k = 1; k < n; ++k) mx = std::max(mx, logits[static_cast<std::size_t>(k)]);
                double denom = 0.0;
                for (int k = 0; k < n; ++k) denom += std::exp(logits[static_cast<std::size_t>(k)] - mx);
                for (int k = 0; k < n; ++k) {
                    double a = std::exp(logits[static_cast<std::size_t>(k)] - mx) / denom;
                    if (gated) {
                        const double g = (outward ? detail::project(e, n, k, i, p.wg, h)
                                                  : detail::project(e, n, i, k, p.wg, h)) +
                                         p.bg[h];
                        a *= detail::sigmoid(g);
                    }
                    if (drop_mask) {
                        // mask layout [ht, j, i, k] (attention) matches layers.hpp
                        a *= (*drop_mask)[((static_cast<std::int64_t>(h) * n + j) * n + i) * n + k];
                    }
                    for (std::int64_t c = 0; c < dt; ++c) {
                        const double v = outward ? detail::project(e, n, k, j, p.wv, h * dt + c)
                                                 : detail::project(e, n, j, k, p.wv, h * dt + c);
                        out[(static_cast<std::int64_t>(i) * n + j) * (ht * dt) + h * dt + c] += a * v;
                    }
                }
            }
        }
    }
    return out;
}

// Aggregation direction: weights from the third pair only (softmax over k of
// b, times the gate), then o_ij = sum_k a_ik v_jk (outward: weights from
// (k,i), values v_kj).
inline Tensor<double> aggregation_direction(const Tensor<double>& e, const TripletDirParams& p,
                                            int ht, bool outward, bool gated,
                                            const Tensor<double>* drop_mask = nullptr) {
    const int n = static_cast<int>(e.shape[0]);
    const std::int64_t dt = p.wv.shape[1] / ht;
    Tensor<double> out(Shape{n, n, static_cast<std::int64_t>(ht) * dt}, 0.0);
    for (int h = 0; h < ht; ++h) {
        for (int i = 0; i < n; ++i) {
            std::vector<double> w(static_cast<std::size_t>(n));
            for (int k = 0; k < n; ++k) {
                w[static_cast<std::size_t>(k)] = (outward ? detail::project(e, n, k, i, p.wb, h)
                                                          : detail::project(e, n, i, k, p.wb, h)) +
                                                 p.bb[h];
            }
            double mx = w[0];
            for (int k = 1; k < n; ++k) mx = std::max(mx, w[static_cast<std::size_t>(k)]);
            double denom = 0.0;
            for (int k = 0; k < n; ++k) denom += std::exp(w[static_cast<std::size_t>(k)] - mx);
            for (int k = 0; k < n; ++k) {
                double a = std::exp(w[static_cast<std::size_t>(k)] - mx) / denom;
                if (gated) {
                    const double g = (outward ? detail::project(e, n, k, i, p.wg, h)
                                              : detail::project(e, n, i, k, p.wg, h)) +
                                     p.bg[h];
                    a *= detail::sigmoid(g);
                }
                if (drop_mask) {
                    a *= (*drop_mask)[(static_cast<std::int64_t>(h) * n + i) * n + k];
                }
                for (int j = 0; j < n; ++j) {
                    for (std::int64_t c = 0; c < dt; ++c) {
                        const double v = outward ? detail::project(e, n, k, j, p.wv, h * dt + c)
                                                 : detail::project(e, n, j, k, p.wv, h * dt + c);
                        out[(static_cast<std::int64_t>(i) * n + j) * (ht * dt) + h * dt + c] += a * v;
                    }
                }
            }
        }
    }
    return out;
}

// Full attention-weight tensor [ht, i, j, k] (inward) for property checks:
// gated weights must satisfy 0 <= a and sum_k a <= 1.
inline Tensor<double> triplet_attention_weights(const Tensor<double>& e,
                                                const TripletDirParams& p, int ht, bool outward,
                                                bool with_dots, bool with_bias, bool gated) {
    const int n = static_cast<int>(e.shape[0]);
    const std::int64_t dt = p.wv.shape[1] / ht;
    Tensor<double> weights(Shape{ht, n, n, n});
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (int h = 0; h < ht; ++h) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                for (int k = 0; k < n; ++k) {
                    double l = 0.0;
                    if (with_dots) {
                        double dot = 0.0;
                        for (std::int64_t c = 0; c < dt; ++c) {
                            const double q = detail::project(e, n, i, j, p.wq, h * dt + c);
                            const double pk = outward ? detail::project(e, n, k, j, p.wp, h * dt + c)
                                                      : detail::project(e, n, j, k, p.wp, h * dt + c);
                            dot += q * pk;
                        }
                        l += dot / std::sqrt(static_cast<double>(dt));
                    }
                    if (with_bias) {
                        l += (outward ? detail::project(e, n, k, i, p.wb, h)
                                      : detail::project(e, n, i, k, p.wb, h)) +
                             p.bb[h];
                    }
                    logits[static_cast<std::size_t>(k)] = l;
                }
                double mx = logits[0];
                for (int k = 1; k < n; ++k) mx = std::max(mx, logits[static_cast<std::size_t>(k)]);
                double denom = 0.0;
                for (int k = 0; k < n; ++k) denom += std::exp(logits[static_cast<std::size_t>(k)] - mx);
                for (int k = 0; k < n; ++k) {
                    double a = std::exp(logits[static_cast<std::size_t>(k)] - mx) / denom;
                    if (gated) {
                        const double g = (outward ? detail::project(e, n, k, i, p.wg, h)
                                                  : detail::project(e, n, i, k, p.wg, h)) +
                                         p.bg[h];
                        a *= detail::sigmoid(g);
                    }
                    weights[((static_cast<std::int64_t>(h) * n + i) * n + j) * n + k] = a;
                }
            }
        }
    }
    return weights;
}

inline Tensor<double> project_concat(const Tensor<double>& oin, const Tensor<double>& oout,
                                     const Tensor<double>& wo, const Tensor<double>& bo) {
    const std::int64_t n = oin.shape[0];
    const std::int64_t w = oin.shape[2];
    const std::int64_t de = wo.shape[1];
    Tensor<double> out(Shape{n, n, de});
    for (std::int64_t r = 0; r < n * n; ++r) {
        for (std::int64_t d = 0; d < de; ++d) {
            double s = bo[d];
            for (std::int64_t c = 0; c < w; ++c) {
                s += oin[r * w + c] * wo[c * de + d];
                s += oout[r * w + c] * wo[(w + c) * de + d];
            }
            out[r * de + d] = s;
        }
    }
    return out;
}

inline Tensor<double> triplet_attention(const Tensor<double>& e, const TripletParams& p, int ht,
                                        bool gated = true) {
    auto oin = triplet_direction(e, p.in, ht, false, true, true, gated);
    auto oout = triplet_direction(e, p.out, ht, true, true, true, gated);
    return project_concat(oin, oout, p.wo, p.bo);
}

inline Tensor<double> triplet_aggregation(const Tensor<double>& e, const TripletParams& p, int ht,
                                          bool gated = true) {
    auto oin = aggregation_direction(e, p.in, ht, false, gated);
    auto oout = aggregation_direction(e, p.out, ht, true, gated);
    return project_concat(oin, oout, p.wo, p.bo);
}

inline Tensor<double> axial_attention(const Tensor<double>& e, const TripletParams& p, int ht) {
    auto oin = triplet_direction(e, p.in, ht, false, true, false, false);
    auto oout = triplet_direction(e, p.out, ht, true, true, false, false);
    return project_concat(oin, oout, p.wo, p.bo);
}

struct TriangularParams {
    Tensor<double> wa_in, wb_in, wa_out, wb_out;  // [de, S]
    Tensor<double> wo, bo;                        // [2S, de], [de]
};

inline Tensor<double> triangular_update(const Tensor<double>& e, const TriangularParams& p) {
    const int n = static_cast<int>(e.shape[0]);
    const std::int64_t sets = p.wa_in.shape[1];
    Tensor<double> oin(Shape{n, n, sets}, 0.0);
    Tensor<double> oout(Shape{n, n, sets}, 0.0);
    for (std::int64_t s = 0; s < sets; ++s) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double acc_in = 0.0, acc_out = 0.0;
                for (int k = 0; k < n; ++k) {
                    acc_in += detail::project(e, n, i, k, p.wa_in, s) *
                              detail::project(e, n, j, k, p.wb_in, s);
                    acc_out += detail::project(e, n, k, i, p.wa_out, s) *
                               detail::project(e, n, k, j, p.wb_out, s);
                }
                oin[(static_cast<std::int64_t>(i) * n + j) * sets + s] = acc_in;
                oout[(static_cast<std::int64_t>(i) * n + j) * sets + s] = acc_out;
            }
        }
    }
    return project_concat(oin, oout, p.wo, p.bo);
}

struct EgtParams {
    Tensor<double> wq, wk, wv;  // [dh, H*dk]
    Tensor<double> wb, bb;      // [de, H], [H]
    Tensor<double> wg, bg;      // [de, H], [H]
    Tensor<double> wo, bo;      // [H*dk, dh], [dh]
    Tensor<double> we, be;      // [H, de], [de]
};

struct EgtOut {
    Tensor<double> node_update;  // [n, dh]
    Tensor<double> pair_update;  // [n, n, de]
};

inline EgtOut egt_attention(const Tensor<double>& h, const Tensor<double>& e, const EgtParams& p,
                            int heads, const Tensor<double>* source_mask = nullptr) {
    const int n = static_cast<int>(h.shape[0]);
    const std::int64_t dh = h.shape[1];
    const std::int64_t dk = p.wq.shape[1] / heads;
    const std::int64_t de = e.shape[2];
    auto node_proj = [&](const Tensor<double>& w, int row, std::int64_t col) {
        double s = 0.0;
        for (std::int64_t d = 0; d < dh; ++d) s += h[row * dh + d] * w[d * w.shape[1] + col];
        return s;
    };
    Tensor<double> logits(Shape{heads, n, n});
    Tensor<double> gates(Shape{heads, n, n});
    for (int hd = 0; hd < heads; ++hd) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::int64_t c = 0; c < dk; ++c) {
                    dot += node_proj(p.wq, i, hd * dk + c) * node_proj(p.wk, j, hd * dk + c);
                }
                logits[(static_cast<std::int64_t>(hd) * n + i) * n + j] =
                    dot / std::sqrt(static_cast<double>(dk)) +
                    detail::project(e, n, i, j, p.wb, hd) + p.bb[hd];
                gates[(static_cast<std::int64_t>(hd) * n + i) * n + j] = detail::sigmoid(
                    detail::project(e, n, i, j, p.wg, hd) + p.bg[hd]);
            }
        }
    }
    EgtOut out;
    out.node_update = Tensor<double>(Shape{n, dh});
    out.pair_update = Tensor<double>(Shape{n, n, de});
    Tensor<double> ohead(Shape{n, static_cast<std::int64_t>(heads) * dk}, 0.0);
    for (int hd = 0; hd < heads; ++hd) {
        for (int i = 0; i < n; ++i) {
            std::vector<double> row(static_cast<std::size_t>(n));
            double mx = -1e300;
            for (int j = 0; j < n; ++j) {
                double l = logits[(static_cast<std::int64_t>(hd) * n + i) * n + j];
                if (source_mask) l += (*source_mask)[j];
                row[static_cast<std::size_t>(j)] = l;
                mx = std::max(mx, l);
            }
            double denom = 0.0;
            for (int j = 0; j < n; ++j) denom += std::exp(row[static_cast<std::size_t>(j)] - mx);
            double scaler = 0.0;
            for (int j = 0; j < n; ++j) {
                scaler += 1.0 + gates[(static_cast<std::int64_t>(hd) * n + i) * n + j];
            }
            scaler = std::log(scaler);
            for (std::int64_t c = 0; c < dk; ++c) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double a = std::exp(row[static_cast<std::size_t>(j)] - mx) / denom *
                                     gates[(static_cast<std::int64_t>(hd) * n + i) * n + j];
                    acc += a * node_proj(p.wv, j, hd * dk + c);
                }
                ohead[static_cast<std::int64_t>(i) * (heads * dk) + hd * dk + c] = acc * scaler;
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        for (std::int64_t d = 0; d < dh; ++d) {
            double s = p.bo[d];
            for (std::int64_t c = 0; c < static_cast<std::int64_t>(heads) * dk; ++c) {
                s += ohead[static_cast<std::int64_t>(i) * (heads * dk) + c] * p.wo[c * dh + d];
            }
            out.node_update[static_cast<std::int64_t>(i) * dh + d] = s;
        }
    }
    for (std::int64_t r = 0; r < static_cast<std::int64_t>(n) * n; ++r) {
        const std::int64_t i = r / n, j = r % n;
        for (std::int64_t d = 0; d < de; ++d) {
            double s = p.be[d];
            for (int hd = 0; hd < heads; ++hd) {
                s += logits[(static_cast<std::int64_t>(hd) * n + i) * n + j] * p.we[hd * de + d];
            }
            out.pair_update[r * de + d] = s;
        }
    }
    return out;
}

}  // namespace tgt::reference
