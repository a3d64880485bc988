#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "tgt/tensor.hpp"

namespace tgt {

// Reverse-mode autodiff tape. Nodes are appended in topological order
// (operands always precede results); backward() walks the record once in
// reverse and accumulates gradients additively into every requires-grad node.
//
// One tape per forward pass. Tapes are independent: concurrent passes on
// separate tapes may share read-only inputs.
template <typename Real>
class Tape {
public:
    struct Var {
        std::int32_t id = -1;
        bool valid() const { return id >= 0; }
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void reserve(std::size_t n) { nodes_.reserve(n); }
    std::size_t size() const { return nodes_.size(); }

    const Tensor<Real>& val(Var v) const { return nodes_[check_id(v)].value; }
    const Tensor<Real>& grad(Var v) const {
        const Node& n = nodes_[check_id(v)];
        if (!n.requires_grad) throw ValueError("grad() on a node that does not require grad");
        return n.grad;
    }
    bool requires_grad(Var v) const { return nodes_[check_id(v)].requires_grad; }

    // ---- leaves ----

    Var leaf(Tensor<Real> t, bool needs_grad = true) {
        return push(std::move(t), needs_grad, nullptr);
    }

    Var constant(Tensor<Real> t) { return push(std::move(t), false, nullptr); }

    Var scalar(Real v) { return constant(Tensor<Real>::scalar(v)); }

    // ---- elementwise binary with broadcasting ----

    Var add(Var a, Var b) {
        return ew_binary(
            a, b, [](Real x, Real y) { return x + y; },
            [](Real, Real, Real) { return Real(1); }, [](Real, Real, Real) { return Real(1); },
            "add");
    }

    Var sub(Var a, Var b) {
        return ew_binary(
            a, b, [](Real x, Real y) { return x - y; },
            [](Real, Real, Real) { return Real(1); }, [](Real, Real, Real) { return Real(-1); },
            "sub");
    }

    Var mul(Var a, Var b) {
        return ew_binary(
            a, b, [](Real x, Real y) { return x * y; },
            [](Real, Real y, Real) { return y; }, [](Real x, Real, Real) { return x; }, "mul");
    }

    Var div(Var a, Var b) {
        return ew_binary(
            a, b, [](Real x, Real y) { return x / y; },
            [](Real, Real y, Real) { return Real(1) / y; },
            [](Real x, Real y, Real) { return -x / (y * y); }, "div");
    }

    // ---- scalar-argument conveniences ----

    Var add_scalar(Var a, Real c) {
        return ew_unary(
            a, [c](Real x) { return x + c; }, [](Real, Real) { return Real(1); });
    }

    Var mul_scalar(Var a, Real c) {
        return ew_unary(
            a, [c](Real x) { return x * c; }, [c](Real, Real) { return c; });
    }

    Var neg(Var a) { return mul_scalar(a, Real(-1)); }

    // Additive attention mask. Entries of `mask` are 0 or -inf; -inf entries
    // route zero gradient back to the input.
    Var add_mask(Var a, const Tensor<Real>& mask) {
        const Tensor<Real>& av = val(a);
        BcastPlan plan = make_bcast(av.shape, mask.shape, "add_mask");
        if (plan.out_shape != av.shape) {
            throw ShapeError("add_mask may not broadcast the input: " + shape_str(av.shape) +
                             " vs mask " + shape_str(mask.shape));
        }
        Tensor<Real> out(plan.out_shape);
        Tensor<Real> mexp(plan.out_shape);  // expanded mask saved for backward
        bcast_apply(plan, av, mask, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            out[o] = av[ia] + mask[ib];
            mexp[o] = mask[ib];
        });
        const std::int32_t ida = a.id;
        auto mshared = std::make_shared<Tensor<Real>>(std::move(mexp));
        return push(std::move(out), nodes_[static_cast<std::size_t>(ida)].requires_grad,
                    [ida, mshared](Tape& t, const Node& self) {
                        Node& pa = t.nodes_[static_cast<std::size_t>(ida)];
                        if (!pa.requires_grad) return;
                        const auto& m = *mshared;
                        const auto ninf = -std::numeric_limits<Real>::infinity();
                        for (std::int64_t i = 0; i < self.grad.size(); ++i) {
                            if (m[i] != ninf) pa.grad[i] += self.grad[i];
                        }
                    });
    }

    // ---- elementwise unary ----

    Var sigmoid(Var a) {
        return ew_unary(
            a,
            [](Real x) {
                if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
                const Real e = std::exp(x);
                return e / (Real(1) + e);
            },
            [](Real, Real y) { return y * (Real(1) - y); });
    }

    Var gelu(Var a) {
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        return ew_unary(
            a,
            [](Real x) {
                return Real(0.5) * x * (Real(1) + Real(std::erf(double(x) * inv_sqrt2)));
            },
            [](Real x, Real) {
                const double cdf = 0.5 * (1.0 + std::erf(double(x) * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * double(x) * double(x));
                return Real(cdf + double(x) * pdf);
            });
    }

    Var exp_(Var a) {
        return ew_unary(
            a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
    }

    Var log_(Var a) {
        return ew_unary(
            a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
    }

    Var abs_(Var a) {
        return ew_unary(
            a, [](Real x) { return std::abs(x); },
            [](Real x, Real) { return x > Real(0) ? Real(1) : (x < Real(0) ? Real(-1) : Real(0)); });
    }

    Var sin_(Var a) {
        return ew_unary(
            a, [](Real x) { return std::sin(x); }, [](Real x, Real) { return std::cos(x); });
    }

    Var cos_(Var a) {
        return ew_unary(
            a, [](Real x) { return std::cos(x); }, [](Real x, Real) { return -std::sin(x); });
    }

    Var clamp_min(Var a, Real lo) {
        return ew_unary(
            a, [lo](Real x) { return x < lo ? lo : x; },
            [lo](Real x, Real) { return x < lo ? Real(0) : Real(1); });
    }

    // ---- matrix products ----

    Var matmul(Var a, Var b) {
        const Tensor<Real>& av = val(a);
        const Tensor<Real>& bv = val(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0]) {
            throw ShapeError("matmul shape mismatch: " + shape_str(av.shape) + " x " +
                             shape_str(bv.shape));
        }
        const std::int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
        Tensor<Real> out(Shape{m, n});
        gemm(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
        const std::int32_t ida = a.id, idb = b.id;
        const bool req = requires_grad(a) || requires_grad(b);
        return push(std::move(out), req, [ida, idb, m, k, n](Tape& t, const Node& self) {
            t.matmul_backward(ida, idb, self.grad.data.data(), m, k, n, 0);
        });
    }

    // Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
    Var bmm(Var a, Var b) {
        const Tensor<Real>& av = val(a);
        const Tensor<Real>& bv = val(b);
        if (av.rank() != 3 || bv.rank() != 3 || av.shape[0] != bv.shape[0] ||
            av.shape[2] != bv.shape[1]) {
            throw ShapeError("bmm shape mismatch: " + shape_str(av.shape) + " x " +
                             shape_str(bv.shape));
        }
        const std::int64_t batch = av.shape[0], m = av.shape[1], k = av.shape[2], n = bv.shape[2];
        Tensor<Real> out(Shape{batch, m, n});
        for (std::int64_t s = 0; s < batch; ++s) {
            gemm(av.data.data() + s * m * k, bv.data.data() + s * k * n,
                 out.data.data() + s * m * n, m, k, n);
        }
        const std::int32_t ida = a.id, idb = b.id;
        const bool req = requires_grad(a) || requires_grad(b);
        return push(std::move(out), req, [ida, idb, batch, m, k, n](Tape& t, const Node& self) {
            for (std::int64_t s = 0; s < batch; ++s) {
                t.matmul_backward(ida, idb, self.grad.data.data() + s * m * n, m, k, n, s);
            }
        });
    }

    // Contraction of one axis of `a` against one axis of `b`; the remaining
    // axes of `a` then `b` form the output (in order). Composed from
    // permute/reshape/matmul so the backward rule comes with it.
    Var contract(Var a, int axis_a, Var b, int axis_b) {
        const Shape& sa = val(a).shape;
        const Shape& sb = val(b).shape;
        if (axis_a < 0 || axis_a >= static_cast<int>(sa.size()) || axis_b < 0 ||
            axis_b >= static_cast<int>(sb.size()) ||
            sa[static_cast<std::size_t>(axis_a)] != sb[static_cast<std::size_t>(axis_b)]) {
            throw ShapeError("contract axis mismatch: " + shape_str(sa) + " axis " +
                             std::to_string(axis_a) + " vs " + shape_str(sb) + " axis " +
                             std::to_string(axis_b));
        }
        std::vector<int> pa, pb;
        Shape rest_a, rest_b;
        for (int i = 0; i < static_cast<int>(sa.size()); ++i)
            if (i != axis_a) { pa.push_back(i); rest_a.push_back(sa[static_cast<std::size_t>(i)]); }
        pa.push_back(axis_a);
        pb.push_back(axis_b);
        for (int i = 0; i < static_cast<int>(sb.size()); ++i)
            if (i != axis_b) { pb.push_back(i); rest_b.push_back(sb[static_cast<std::size_t>(i)]); }
        const std::int64_t kk = sa[static_cast<std::size_t>(axis_a)];
        Var am = reshape(permute(a, pa), Shape{numel(rest_a), kk});
        Var bm = reshape(permute(b, pb), Shape{kk, numel(rest_b)});
        Shape out_shape = rest_a;
        out_shape.insert(out_shape.end(), rest_b.begin(), rest_b.end());
        return reshape(matmul(am, bm), out_shape);
    }

    // ---- layout ----

    Var permute(Var a, std::vector<int> perm) {
        const Tensor<Real>& av = val(a);
        const int r = av.rank();
        if (static_cast<int>(perm.size()) != r) {
            throw ShapeError("permute rank mismatch for shape " + shape_str(av.shape));
        }
        std::vector<bool> seen(perm.size(), false);
        for (int d : perm) {
            if (d < 0 || d >= r || seen[static_cast<std::size_t>(d)]) {
                throw ShapeError("permute axes must be a permutation of 0.." + std::to_string(r - 1));
            }
            seen[static_cast<std::size_t>(d)] = true;
        }
        Shape out_shape(perm.size());
        for (int d = 0; d < r; ++d) out_shape[static_cast<std::size_t>(d)] = av.shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
        Tensor<Real> out(out_shape);
        permute_copy(av, out, perm);
        const std::int32_t ida = a.id;
        std::vector<int> inv(perm.size());
        for (int d = 0; d < r; ++d) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])] = d;
        return push(std::move(out), requires_grad(a), [ida, inv](Tape& t, const Node& self) {
            Node& pa = t.nodes_[static_cast<std::size_t>(ida)];
            if (!pa.requires_grad) return;
            Tensor<Real> gp(pa.value.shape);
            permute_copy(self.grad, gp, inv);
            for (std::int64_t i = 0; i < gp.size(); ++i) pa.grad[i] += gp[i];
        });
    }

    Var reshape(Var a, Shape shape) {
        const Tensor<Real>& av = val(a);
        if (numel(shape) != av.size()) {
            throw ShapeError("reshape " + shape_str(av.shape) + " -> " + shape_str(shape) +
                             " changes element count");
        }
        Tensor<Real> out(std::move(shape), av.data);
        const std::int32_t ida = a.id;
        return push(std::move(out), requires_grad(a), [ida](Tape& t, const Node& self) {
            Node& pa = t.nodes_[static_cast<std::size_t>(ida)];
            if (!pa.requires_grad) return;
            for (std::int64_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        });
    }

    // ---- softmax ----

    Var softmax(Var a, int axis) {
        const Tensor<Real>& av = val(a);
        const auto [outer, n, inner] = axis_split(av.shape, axis, "softmax");
        Tensor<Real> out(av.shape);
        const Real ninf = -std::numeric_limits<Real>::infinity();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t in = 0; in < inner; ++in) {
                const std::int64_t base = o * n * inner + in;
                Real mx = ninf;
                for (std::int64_t k = 0; k < n; ++k) mx = std::max(mx, av[base + k * inner]);
                if (mx == ninf) {  // fully masked lane: defined as all zeros
                    for (std::int64_t k = 0; k < n; ++k) out[base + k * inner] = Real(0);
                    continue;
                }
                Real sum = Real(0);
                for (std::int64_t k = 0; k < n; ++k) {
                    const Real e = std::exp(av[base + k * inner] - mx);
                    out[base + k * inner] = e;
                    sum += e;
                }
                const Real inv = Real(1) / sum;
                for (std::int64_t k = 0; k < n; ++k) out[base + k * inner] *= inv;
            }
        }
        const std::int32_t ida = a.id;
        const std::int64_t no = outer, nn = n, ni = inner;
        return push(std::move(out), requires_grad(a), [ida, no, nn, ni](Tape& t, const Node& self) {
            Node& pa = t.nodes_[static_cast<std::size_t>(ida)];
            if (!pa.requires_grad) return;
            const Tensor<Real>& y = self.value;
            const Tensor<Real>& g = self.grad;
            for (std::int64_t o = 0; o < no; ++o) {
                for (std::int64_t in = 0; in < ni; ++in) {
                    const std::int64_t base = o * nn * ni + in;
                    Real dot = Real(0);
                    for (std::int64_t k = 0; k < nn; ++k) dot += g[base + k * ni] * y[base + k * ni];
                    for (std::int64_t k = 0; k < nn; ++k) {
                        pa.grad[base + k * ni] += y[base + k * ni] * (g[base + k * ni] - dot);
                    }
                }
            }
        });
    }

    // ---- layer norm over the last axis ----
    //
    // Constant rows normalize to zero (epsilon inside the square root).
    Var layer_norm(Var x, Var gain, Var bias, Real eps = Real(1e-5)) {
        const Tensor<Real>& xv = val(x);
        const Tensor<Real>& gv = val(gain);
        const Tensor<Real>& bv = val(bias);
        if (xv.rank() < 1) throw ShapeError("layer_norm requires rank >= 1");
        const std::int64_t d = xv.shape.back();
        if (gv.shape != Shape{d} || bv.shape != Shape{d}) {
            throw ShapeError("layer_norm affine params must have shape [" + std::to_string(d) +
                             "], got " + shape_str(gv.shape) + " and " + shape_str(bv.shape));
        }
        const std::int64_t rows = xv.size() / d;
        Tensor<Real> out(xv.shape);
        Tensor<Real> xhat(xv.shape);
        std::vector<Real> inv_std(static_cast<std::size_t>(rows));
        for (std::int64_t r = 0; r < rows; ++r) {
            const Real* xr = xv.data.data() + r * d;
            Real mean = Real(0);
            for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
            mean /= Real(d);
            Real var = Real(0);
            for (std::int64_t j = 0; j < d; ++j) {
                const Real c = xr[j] - mean;
                var += c * c;
            }
            var /= Real(d);
            const Real inv = Real(1) / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(r)] = inv;
            for (std::int64_t j = 0; j < d; ++j) {
                const Real xh = (xr[j] - mean) * inv;
                xhat[r * d + j] = xh;
                out[r * d + j] = gv[j] * xh + bv[j];
            }
        }
        const std::int32_t idx = x.id, idg = gain.id, idb = bias.id;
        auto xh_shared = std::make_shared<Tensor<Real>>(std::move(xhat));
        auto inv_shared = std::make_shared<std::vector<Real>>(std::move(inv_std));
        const bool req = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
        return push(std::move(out), req,
                    [idx, idg, idb, rows, d, xh_shared, inv_shared](Tape& t, const Node& self) {
                        Node& px = t.nodes_[static_cast<std::size_t>(idx)];
                        Node& pg = t.nodes_[static_cast<std::size_t>(idg)];
                        Node& pb = t.nodes_[static_cast<std::size_t>(idb)];
                        const Tensor<Real>& g = self.grad;
                        const Tensor<Real>& xh = *xh_shared;
                        const std::vector<Real>& inv = *inv_shared;
                        const Tensor<Real>& gainv = pg.value;
                        for (std::int64_t r = 0; r < rows; ++r) {
                            const Real* gr = g.data.data() + r * d;
                            const Real* xhr = xh.data.data() + r * d;
                            if (pg.requires_grad) {
                                for (std::int64_t j = 0; j < d; ++j) pg.grad[j] += gr[j] * xhr[j];
                            }
                            if (pb.requires_grad) {
                                for (std::int64_t j = 0; j < d; ++j) pb.grad[j] += gr[j];
                            }
                            if (px.requires_grad) {
                                Real s1 = Real(0), s2 = Real(0);
                                for (std::int64_t j = 0; j < d; ++j) {
                                    const Real dxh = gr[j] * gainv[j];
                                    s1 += dxh;
                                    s2 += dxh * xhr[j];
                                }
                                s1 /= Real(d);
                                s2 /= Real(d);
                                const Real is = inv[static_cast<std::size_t>(r)];
                                for (std::int64_t j = 0; j < d; ++j) {
                                    const Real dxh = gr[j] * gainv[j];
                                    px.grad[r * d + j] += is * (dxh - s1 - xhr[j] * s2);
                                }
                            }
                        }
                    });
    }

    // ---- embedding lookup ----

    Var embedding(Var table, const std::vector<std::int64_t>& idx, Shape idx_shape) {
        const Tensor<Real>& tv = val(table);
        if (tv.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_str(tv.shape));
        if (numel(idx_shape) != static_cast<std::int64_t>(idx.size())) {
            throw ShapeError("embedding index shape mismatch");
        }
        const std::int64_t v = tv.shape[0], d = tv.shape[1];
        for (auto i : idx) {
            if (i < 0 || i >= v) {
                throw ValueError("embedding index " + std::to_string(i) + " out of range [0," +
                                 std::to_string(v) + ")");
            }
        }
        Shape out_shape = idx_shape;
        out_shape.push_back(d);
        Tensor<Real> out(out_shape);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::memcpy(out.data.data() + static_cast<std::int64_t>(r) * d,
                        tv.data.data() + idx[r] * d, sizeof(Real) * static_cast<std::size_t>(d));
        }
        const std::int32_t idt = table.id;
        auto idx_shared = std::make_shared<std::vector<std::int64_t>>(idx);
        return push(std::move(out), requires_grad(table),
                    [idt, idx_shared, d](Tape& t, const Node& self) {
                        Node& pt = t.nodes_[static_cast<std::size_t>(idt)];
                        if (!pt.requires_grad) return;
                        const auto& ix = *idx_shared;
                        for (std::size_t r = 0; r < ix.size(); ++r) {
                            const Real* gr = self.grad.data.data() + static_cast<std::int64_t>(r) * d;
                            Real* dst = pt.grad.data.data() + ix[r] * d;
                            for (std::int64_t j = 0; j < d; ++j) dst[j] += gr[j];
                        }
                    });
    }

    // ---- concatenate along an axis ----

    Var concat(const std::vector<Var>& parts, int axis) {
        if (parts.empty()) throw ValueError("concat of zero tensors");
        const Tensor<Real>& first = val(parts[0]);
        const int r = first.rank();
        if (axis < 0 || axis >= r) throw ShapeError("concat axis out of range");
        Shape out_shape = first.shape;
        std::int64_t total_axis = 0;
        for (Var p : parts) {
            const Shape& s = val(p).shape;
            if (static_cast<int>(s.size()) != r) {
                throw ShapeError("concat rank mismatch: " + shape_str(first.shape) + " vs " + shape_str(s));
            }
            for (int dd = 0; dd < r; ++dd) {
                if (dd != axis && s[static_cast<std::size_t>(dd)] != first.shape[static_cast<std::size_t>(dd)]) {
                    throw ShapeError("concat shape mismatch: " + shape_str(first.shape) + " vs " + shape_str(s));
                }
            }
            total_axis += s[static_cast<std::size_t>(axis)];
        }
        out_shape[static_cast<std::size_t>(axis)] = total_axis;
        std::int64_t outer = 1, inner = 1;
        for (int dd = 0; dd < axis; ++dd) outer *= first.shape[static_cast<std::size_t>(dd)];
        for (int dd = axis + 1; dd < r; ++dd) inner *= first.shape[static_cast<std::size_t>(dd)];
        Tensor<Real> out(out_shape);
        std::vector<std::int64_t> widths;
        std::int64_t off = 0;
        for (Var p : parts) {
            const Tensor<Real>& pv = val(p);
            const std::int64_t w = pv.shape[static_cast<std::size_t>(axis)] * inner;
            widths.push_back(w);
            for (std::int64_t o = 0; o < outer; ++o) {
                std::memcpy(out.data.data() + o * total_axis * inner + off,
                            pv.data.data() + o * w, sizeof(Real) * static_cast<std::size_t>(w));
            }
            off += w;
        }
        bool req = false;
        std::vector<std::int32_t> ids;
        for (Var p : parts) {
            ids.push_back(p.id);
            req = req || requires_grad(p);
        }
        const std::int64_t row = total_axis * inner;
        return push(std::move(out), req, [ids, widths, outer, row](Tape& t, const Node& self) {
            std::int64_t off2 = 0;
            for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                Node& pp = t.nodes_[static_cast<std::size_t>(ids[pi])];
                const std::int64_t w = widths[pi];
                if (pp.requires_grad) {
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const Real* src = self.grad.data.data() + o * row + off2;
                        Real* dst = pp.grad.data.data() + o * w;
                        for (std::int64_t j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                off2 += w;
            }
        });
    }

    // ---- reductions ----

    Var reduce_sum(Var a, int axis, bool keepdim = false) {
        const Tensor<Real>& av = val(a);
        const auto [outer, n, inner] = axis_split(av.shape, axis, "reduce_sum");
        Shape out_shape;
        for (int dd = 0; dd < av.rank(); ++dd) {
            if (dd == axis) {
                if (keepdim) out_shape.push_back(1);
            } else {
                out_shape.push_back(av.shape[static_cast<std::size_t>(dd)]);
            }
        }
        Tensor<Real> out(out_shape);
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t in = 0; in < inner; ++in) {
                Real s = Real(0);
                for (std::int64_t k = 0; k < n; ++k) s += av[o * n * inner + k * inner + in];
                out[o * inner + in] = s;
            }
        }
        const std::int32_t ida = a.id;
        const std::int64_t no = outer, nn = n, ni = inner;
        return push(std::move(out), requires_grad(a), [ida, no, nn, ni](Tape& t, const Node& self) {
            Node& pa = t.nodes_[static_cast<std::size_t>(ida)];
            if (!pa.requires_grad) return;
            for (std::int64_t o = 0; o < no; ++o) {
                for (std::int64_t in = 0; in < ni; ++in) {
                    const Real g = self.grad[o * ni + in];
                    for (std::int64_t k = 0; k < nn; ++k) pa.grad[o * nn * ni + k * ni + in] += g;
                }
            }
        });
    }

    Var reduce_mean(Var a, int axis, bool keepdim = false) {
        const std::int64_t n = val(a).shape[static_cast<std::size_t>(axis)];
        return mul_scalar(reduce_sum(a, axis, keepdim), Real(1) / Real(n));
    }

    Var sum_all(Var a) {
        const Tensor<Real>& av = val(a);
        Real s = Real(0);
        for (auto v : av.data) s += v;
        const std::int32_t ida = a.id;
        return push(Tensor<Real>::scalar(s), requires_grad(a), [ida](Tape& t, const Node& self) {
            Node& pa = t.nodes_[static_cast<std::size_t>(ida)];
            if (!pa.requires_grad) return;
            const Real g = self.grad[0];
            for (std::int64_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += g;
        });
    }

    Var mean_all(Var a) {
        const std::int64_t n = val(a).size();
        if (n == 0) throw ValueError("mean_all of empty tensor");
        return mul_scalar(sum_all(a), Real(1) / Real(n));
    }

    // ---- losses ----

    // Mean cross-entropy of row logits [M,B] against integer targets; rows
    // with target < 0 are excluded from the mean.
    Var cross_entropy(Var logits, const std::vector<std::int64_t>& targets) {
        const Tensor<Real>& lv = val(logits);
        if (lv.rank() != 2) throw ShapeError("cross_entropy expects [rows,classes] logits, got " + shape_str(lv.shape));
        const std::int64_t m = lv.shape[0], b = lv.shape[1];
        if (static_cast<std::int64_t>(targets.size()) != m) {
            throw ShapeError("cross_entropy target count mismatch");
        }
        std::int64_t count = 0;
        Real loss = Real(0);
        for (std::int64_t r = 0; r < m; ++r) {
            const std::int64_t tgt = targets[static_cast<std::size_t>(r)];
            if (tgt < 0) continue;
            if (tgt >= b) throw ValueError("cross_entropy target " + std::to_string(tgt) + " out of range");
            const Real* row = lv.data.data() + r * b;
            Real mx = row[0];
            for (std::int64_t j = 1; j < b; ++j) mx = std::max(mx, row[j]);
            Real se = Real(0);
            for (std::int64_t j = 0; j < b; ++j) se += std::exp(row[j] - mx);
            loss += (std::log(se) + mx) - row[tgt];
            ++count;
        }
        if (count == 0) throw ValueError("cross_entropy with no valid targets");
        loss /= Real(count);
        const std::int32_t idl = logits.id;
        auto tgt_shared = std::make_shared<std::vector<std::int64_t>>(targets);
        return push(Tensor<Real>::scalar(loss), requires_grad(logits),
                    [idl, tgt_shared, m, b, count](Tape& t, const Node& self) {
                        Node& pl = t.nodes_[static_cast<std::size_t>(idl)];
                        if (!pl.requires_grad) return;
                        const Real g = self.grad[0] / Real(count);
                        const Tensor<Real>& lv2 = pl.value;
                        for (std::int64_t r = 0; r < m; ++r) {
                            const std::int64_t tgt = (*tgt_shared)[static_cast<std::size_t>(r)];
                            if (tgt < 0) continue;
                            const Real* row = lv2.data.data() + r * b;
                            Real mx = row[0];
                            for (std::int64_t j = 1; j < b; ++j) mx = std::max(mx, row[j]);
                            Real se = Real(0);
                            for (std::int64_t j = 0; j < b; ++j) se += std::exp(row[j] - mx);
                            Real* gr = pl.grad.data.data() + r * b;
                            for (std::int64_t j = 0; j < b; ++j) {
                                Real p = std::exp(row[j] - mx) / se;
                                gr[j] += g * (p - (j == tgt ? Real(1) : Real(0)));
                            }
                        }
                    });
    }

    // Mean binary cross-entropy with logits over entries where mask != 0.
    Var bce_with_logits(Var logits, const Tensor<Real>& targets, const Tensor<Real>& mask) {
        const Tensor<Real>& lv = val(logits);
        if (lv.shape != targets.shape || lv.shape != mask.shape) {
            throw ShapeError("bce_with_logits shape mismatch: logits " + shape_str(lv.shape) +
                             " targets " + shape_str(targets.shape) + " mask " + shape_str(mask.shape));
        }
        Real count = Real(0);
        Real loss = Real(0);
        for (std::int64_t i = 0; i < lv.size(); ++i) {
            if (mask[i] == Real(0)) continue;
            const Real z = lv[i], y = targets[i];
            // max(z,0) - z*y + log(1+exp(-|z|))
            loss += std::max(z, Real(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
            count += Real(1);
        }
        if (count == Real(0)) throw ValueError("bce_with_logits with empty mask");
        loss /= count;
        const std::int32_t idl = logits.id;
        auto tg = std::make_shared<Tensor<Real>>(targets);
        auto mk = std::make_shared<Tensor<Real>>(mask);
        return push(Tensor<Real>::scalar(loss), requires_grad(logits),
                    [idl, tg, mk, count](Tape& t, const Node& self) {
                        Node& pl = t.nodes_[static_cast<std::size_t>(idl)];
                        if (!pl.requires_grad) return;
                        const Real g = self.grad[0] / count;
                        for (std::int64_t i = 0; i < pl.value.size(); ++i) {
                            if ((*mk)[i] == Real(0)) continue;
                            const Real z = pl.value[i];
                            const Real s = z >= Real(0) ? Real(1) / (Real(1) + std::exp(-z))
                                                        : std::exp(z) / (Real(1) + std::exp(z));
                            pl.grad[i] += g * (s - (*tg)[i]);
                        }
                    });
    }

    // ---- backward ----

    void backward(Var loss) {
        const std::size_t lid = check_id(loss);
        if (nodes_[lid].value.size() != 1) {
            throw ValueError("backward requires a scalar loss, got shape " +
                             shape_str(nodes_[lid].value.shape));
        }
        if (!nodes_[lid].requires_grad) {
            throw ValueError("backward on a loss that does not require grad");
        }
        for (std::size_t i = 0; i <= lid; ++i) {
            Node& n = nodes_[i];
            if (n.requires_grad) {
                n.grad = Tensor<Real>(n.value.shape);
            }
        }
        nodes_[lid].grad[0] = Real(1);
        for (std::size_t i = lid + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.backward) n.backward(*this, n);
        }
    }

private:
    struct Node {
        Tensor<Real> value;
        Tensor<Real> grad;
        bool requires_grad = false;
        std::function<void(Tape&, const Node&)> backward;
    };

    std::vector<Node> nodes_;

    std::size_t check_id(Var v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
            throw ValueError("invalid tape variable");
        }
        return static_cast<std::size_t>(v.id);
    }

    Var push(Tensor<Real> value, bool needs_grad, std::function<void(Tape&, const Node&)> bw) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = needs_grad;
        if (needs_grad) n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    // C += A * B with row-major operands, ikj loop order.
    static void gemm(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t k,
                     std::int64_t n) {
        for (std::int64_t i = 0; i < m; ++i) {
            Real* crow = c + i * n;
            const Real* arow = a + i * k;
            for (std::int64_t p = 0; p < k; ++p) {
                const Real av = arow[p];
                if (av == Real(0)) continue;
                const Real* brow = b + p * n;
                for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }

    void matmul_backward(std::int32_t ida, std::int32_t idb, const Real* gc, std::int64_t m,
                         std::int64_t k, std::int64_t n, std::int64_t batch_index) {
        Node& pa = nodes_[static_cast<std::size_t>(ida)];
        Node& pb = nodes_[static_cast<std::size_t>(idb)];
        const Real* av = pa.value.data.data() + batch_index * m * k;
        const Real* bv = pb.value.data.data() + batch_index * k * n;
        if (pa.requires_grad) {
            Real* ga = pa.grad.data.data() + batch_index * m * k;
            for (std::int64_t i = 0; i < m; ++i) {
                const Real* gr = gc + i * n;
                for (std::int64_t p = 0; p < k; ++p) {
                    const Real* brow = bv + p * n;
                    Real s = Real(0);
                    for (std::int64_t j = 0; j < n; ++j) s += gr[j] * brow[j];
                    ga[i * k + p] += s;
                }
            }
        }
        if (pb.requires_grad) {
            Real* gb = pb.grad.data.data() + batch_index * k * n;
            for (std::int64_t i = 0; i < m; ++i) {
                const Real* gr = gc + i * n;
                const Real* arow = av + i * k;
                for (std::int64_t p = 0; p < k; ++p) {
                    const Real a = arow[p];
                    if (a == Real(0)) continue;
                    Real* gbrow = gb + p * n;
                    for (std::int64_t j = 0; j < n; ++j) gbrow[j] += a * gr[j];
                }
            }
        }
    }

    static void permute_copy(const Tensor<Real>& src, Tensor<Real>& dst,
                             const std::vector<int>& perm) {
        const int r = src.rank();
        if (r == 0) {
            dst.data = src.data;
            return;
        }
        const auto src_strides = row_major_strides<Real>(src.shape);
        std::vector<std::int64_t> stride(perm.size());
        for (int d = 0; d < r; ++d) stride[static_cast<std::size_t>(d)] = src_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
        std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
        std::int64_t soff = 0;
        const std::int64_t total = dst.size();
        for (std::int64_t c = 0; c < total; ++c) {
            dst[c] = src[soff];
            for (int d = r - 1; d >= 0; --d) {
                idx[static_cast<std::size_t>(d)]++;
                soff += stride[static_cast<std::size_t>(d)];
                if (idx[static_cast<std::size_t>(d)] < dst.shape[static_cast<std::size_t>(d)]) break;
                soff -= stride[static_cast<std::size_t>(d)] * dst.shape[static_cast<std::size_t>(d)];
                idx[static_cast<std::size_t>(d)] = 0;
            }
        }
    }

    static std::tuple<std::int64_t, std::int64_t, std::int64_t> axis_split(const Shape& shape,
                                                                           int axis,
                                                                           const char* op) {
        if (axis < 0 || axis >= static_cast<int>(shape.size())) {
            throw ShapeError(std::string(op) + " axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(shape));
        }
        std::int64_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= shape[static_cast<std::size_t>(d)];
        for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d) inner *= shape[d];
        return {outer, shape[static_cast<std::size_t>(axis)], inner};
    }

    // ---- broadcasting machinery ----

    struct BcastPlan {
        Shape out_shape;
        std::vector<std::int64_t> dims;
        std::vector<std::int64_t> stride_a, stride_b;
        bool same_shape = false;
    };

    static BcastPlan make_bcast(const Shape& sa, const Shape& sb, const char* op) {
        BcastPlan plan;
        if (sa == sb) {
            plan.out_shape = sa;
            plan.same_shape = true;
            return plan;
        }
        const int ra = static_cast<int>(sa.size()), rb = static_cast<int>(sb.size());
        const int r = std::max(ra, rb);
        plan.dims.resize(static_cast<std::size_t>(r));
        plan.stride_a.resize(static_cast<std::size_t>(r));
        plan.stride_b.resize(static_cast<std::size_t>(r));
        const auto stra = row_major_strides<Real>(sa);
        const auto strb = row_major_strides<Real>(sb);
        for (int d = 0; d < r; ++d) {
            const int ia = ra - r + d, ib = rb - r + d;
            const std::int64_t da = ia >= 0 ? sa[static_cast<std::size_t>(ia)] : 1;
            const std::int64_t db = ib >= 0 ? sb[static_cast<std::size_t>(ib)] : 1;
            if (da != db && da != 1 && db != 1) {
                throw ShapeError(std::string(op) + " cannot broadcast " + shape_str(sa) + " with " +
                                 shape_str(sb));
            }
            const std::int64_t dd = std::max(da, db);
            plan.dims[static_cast<std::size_t>(d)] = dd;
            plan.stride_a[static_cast<std::size_t>(d)] = (ia >= 0 && da != 1) ? stra[static_cast<std::size_t>(ia)] : 0;
            plan.stride_b[static_cast<std::size_t>(d)] = (ib >= 0 && db != 1) ? strb[static_cast<std::size_t>(ib)] : 0;
            plan.out_shape.push_back(dd);
        }
        return plan;
    }

    template <typename Body>
    static void bcast_apply(const BcastPlan& plan, const Tensor<Real>& a, const Tensor<Real>& b,
                            Body&& body) {
        if (plan.same_shape) {
            const std::int64_t total = a.size();
            for (std::int64_t c = 0; c < total; ++c) body(c, c, c);
            return;
        }
        const int r = static_cast<int>(plan.dims.size());
        std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
        std::int64_t ia = 0, ib = 0;
        const std::int64_t total = numel(plan.out_shape);
        (void)a;
        (void)b;
        for (std::int64_t c = 0; c < total; ++c) {
            body(c, ia, ib);
            for (int d = r - 1; d >= 0; --d) {
                idx[static_cast<std::size_t>(d)]++;
                ia += plan.stride_a[static_cast<std::size_t>(d)];
                ib += plan.stride_b[static_cast<std::size_t>(d)];
                if (idx[static_cast<std::size_t>(d)] < plan.dims[static_cast<std::size_t>(d)]) break;
                ia -= plan.stride_a[static_cast<std::size_t>(d)] * plan.dims[static_cast<std::size_t>(d)];
                ib -= plan.stride_b[static_cast<std::size_t>(d)] * plan.dims[static_cast<std::size_t>(d)];
                idx[static_cast<std::size_t>(d)] = 0;
            }
        }
    }

    template <typename F, typename DA, typename DB>
    Var ew_binary(Var a, Var b, F&& f, DA&& dfda, DB&& dfdb, const char* op) {
        const Tensor<Real>& av = val(a);
        const Tensor<Real>& bv = val(b);
        BcastPlan plan = make_bcast(av.shape, bv.shape, op);
        Tensor<Real> out(plan.out_shape);
        bcast_apply(plan, av, bv, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            out[o] = f(av[ia], bv[ib]);
        });
        const std::int32_t ida = a.id, idb = b.id;
        const bool req = requires_grad(a) || requires_grad(b);
        if (!req) return push(std::move(out), false, nullptr);
        auto plan_shared = std::make_shared<BcastPlan>(std::move(plan));
        return push(std::move(out), true,
                    [ida, idb, plan_shared, dfda, dfdb](Tape& t, const Node& self) {
                        Node& pa = t.nodes_[static_cast<std::size_t>(ida)];
                        Node& pb = t.nodes_[static_cast<std::size_t>(idb)];
                        const bool ga = pa.requires_grad, gb = pb.requires_grad;
                        const Tensor<Real>& avv = pa.value;
                        const Tensor<Real>& bvv = pb.value;
                        bcast_apply(*plan_shared, avv, bvv,
                                    [&](std::int64_t o, std::int64_t ia2, std::int64_t ib2) {
                                        const Real g = self.grad[o];
                                        if (ga) pa.grad[ia2] += g * dfda(avv[ia2], bvv[ib2], self.value[o]);
                                        if (gb) pb.grad[ib2] += g * dfdb(avv[ia2], bvv[ib2], self.value[o]);
                                    });
                    });
    }

    template <typename F, typename DF>
    Var ew_unary(Var a, F&& f, DF&& dfdx) {
        const Tensor<Real>& av = val(a);
        Tensor<Real> out(av.shape);
        const std::int64_t total = av.size();
        for (std::int64_t i = 0; i < total; ++i) out[i] = f(av[i]);
        const std::int32_t ida = a.id;
        if (!requires_grad(a)) return push(std::move(out), false, nullptr);
        return push(std::move(out), true, [ida, dfdx](Tape& t, const Node& self) {
            Node& pa = t.nodes_[static_cast<std::size_t>(ida)];
            if (!pa.requires_grad) return;
            const std::int64_t n = pa.value.size();
            for (std::int64_t i = 0; i < n; ++i) {
                pa.grad[i] += self.grad[i] * dfdx(pa.value[i], self.value[i]);
            }
        });
    }
};

template <typename Real>
using Var = typename Tape<Real>::Var;

}  // namespace tgt
