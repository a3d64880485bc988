#pragma once

// Built-in verification suite behind the `verify` CLI subcommand: gradient
// checks, naive-loop oracle equivalence, reduction identities, noise limits,
// binning and solver oracles. Everything runs in about a second at double
// precision.

#include <functional>
#include <string>
#include <vector>

#include "tgt/bench.hpp"
#include "tgt/datagen.hpp"
#include "tgt/grad_check.hpp"
#include "tgt/model.hpp"
#include "tgt/noising.hpp"
#include "tgt/pipeline.hpp"
#include "tgt/reference.hpp"
#include "tgt/tsp.hpp"

namespace tgt {

struct VerifyCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail_verify {

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline reference::TripletParams random_triplet_params(std::int64_t de, int ht, std::int64_t dt,
                                                      Rng& rng) {
    auto dir = [&]() {
        reference::TripletDirParams p;
        p.wq = Tensor<double>::randn(Shape{de, ht * dt}, rng, 0.5);
        p.wp = Tensor<double>::randn(Shape{de, ht * dt}, rng, 0.5);
        p.wv = Tensor<double>::randn(Shape{de, ht * dt}, rng, 0.5);
        p.wb = Tensor<double>::randn(Shape{de, ht}, rng, 0.5);
        p.bb = Tensor<double>::randn(Shape{ht}, rng, 0.2);
        p.wg = Tensor<double>::randn(Shape{de, ht}, rng, 0.5);
        p.bg = Tensor<double>::randn(Shape{ht}, rng, 0.2);
        return p;
    };
    reference::TripletParams p;
    p.in = dir();
    p.out = dir();
    p.wo = Tensor<double>::randn(Shape{2 * ht * dt, de}, rng, 0.5);
    p.bo = Tensor<double>::randn(Shape{de}, rng, 0.2);
    return p;
}

inline TripletVars<double> bind_triplet(Tape<double>& t, const reference::TripletParams& p) {
    TripletVars<double> v;
    v.in = {t.constant(p.in.wq), t.constant(p.in.wp), t.constant(p.in.wv), t.constant(p.in.wb),
            t.constant(p.in.bb), t.constant(p.in.wg), t.constant(p.in.bg)};
    v.out = {t.constant(p.out.wq), t.constant(p.out.wp), t.constant(p.out.wv), t.constant(p.out.wb),
             t.constant(p.out.bb), t.constant(p.out.wg), t.constant(p.out.bg)};
    v.wo = t.constant(p.wo);
    v.bo = t.constant(p.bo);
    return v;
}

}  // namespace detail_verify

inline std::vector<VerifyCheck> run_verification() {
    using detail_verify::bind_triplet;
    using detail_verify::max_abs_diff;
    using detail_verify::random_triplet_params;
    std::vector<VerifyCheck> checks;
    auto add = [&](const std::string& name, std::function<std::pair<bool, std::string>()> fn) {
        VerifyCheck c;
        c.name = name;
        try {
            auto [ok, detail] = fn();
            c.passed = ok;
            c.detail = detail;
        } catch (const std::exception& e) {
            c.passed = false;
            c.detail = std::string("exception: ") + e.what();
        }
        checks.push_back(std::move(c));
    };

    add("softmax normalization", [] {
        Rng rng(1);
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            Tape<double> t;
            auto y = t.softmax(t.constant(Tensor<double>::randn(Shape{4, 7}, rng, 3.0)), 1);
            for (int r = 0; r < 4; ++r) {
                double s = 0.0;
                for (int c = 0; c < 7; ++c) s += t.val(y)[r * 7 + c];
                worst = std::max(worst, std::abs(s - 1.0));
            }
        }
        return std::make_pair(worst < 1e-12, "max |sum-1| = " + format_real(worst));
    });

    add("gradients: sigmoid sum vs central differences", [] {
        Rng rng(2);
        const double err = grad_check(
            [](Tape<double>& t, Tape<double>::Var v) { return t.sum_all(t.sigmoid(v)); },
            Tensor<double>::randn(Shape{6}, rng), 1e-6);
        return std::make_pair(err < 1e-7, "max rel err = " + format_real(err));
    });

    add("gradients: softmax cross-entropy vs central differences", [] {
        Rng rng(3);
        const double err = grad_check(
            [](Tape<double>& t, Tape<double>::Var v) { return t.cross_entropy(v, {2, 0, 4}); },
            Tensor<double>::randn(Shape{3, 5}, rng), 1e-6);
        return std::make_pair(err < 1e-6, "max rel err = " + format_real(err));
    });

    for (int mech = 0; mech < 4; ++mech) {
        const char* names[] = {"triplet attention", "triplet aggregation", "axial attention",
                               "triangular update"};
        add(std::string("oracle: ") + names[mech] + " vs naive loops", [mech] {
            Rng rng(100 + static_cast<std::uint64_t>(mech));
            double worst = 0.0;
            for (int trial = 0; trial < 10; ++trial) {
                const int n = 1 + static_cast<int>(rng.below(8));
                Tensor<double> e = Tensor<double>::randn(Shape{n, n, 4}, rng);
                Tape<double> t;
                Tensor<double> naive;
                Tape<double>::Var out;
                if (mech == 3) {
                    reference::TriangularParams p;
                    p.wa_in = Tensor<double>::randn(Shape{4, 8}, rng, 0.5);
                    p.wb_in = Tensor<double>::randn(Shape{4, 8}, rng, 0.5);
                    p.wa_out = Tensor<double>::randn(Shape{4, 8}, rng, 0.5);
                    p.wb_out = Tensor<double>::randn(Shape{4, 8}, rng, 0.5);
                    p.wo = Tensor<double>::randn(Shape{16, 4}, rng, 0.5);
                    p.bo = Tensor<double>::randn(Shape{4}, rng, 0.2);
                    TriangularVars<double> v{t.constant(p.wa_in), t.constant(p.wb_in),
                                             t.constant(p.wa_out), t.constant(p.wb_out),
                                             t.constant(p.wo), t.constant(p.bo)};
                    out = triangular_update(t, t.constant(e), v);
                    naive = reference::triangular_update(e, p);
                } else {
                    auto p = detail_verify::random_triplet_params(4, 2, 3, rng);
                    auto v = bind_triplet(t, p);
                    if (mech == 0) {
                        out = triplet_attention(t, t.constant(e), v, 2);
                        naive = reference::triplet_attention(e, p, 2);
                    } else if (mech == 1) {
                        out = triplet_aggregation(t, t.constant(e), v, 2);
                        naive = reference::triplet_aggregation(e, p, 2);
                    } else {
                        out = axial_attention(t, t.constant(e), v, 2);
                        naive = reference::axial_attention(e, p, 2);
                    }
                }
                worst = std::max(worst, max_abs_diff(t.val(out), naive));
            }
            return std::make_pair(worst <= 1e-12, "max |diff| = " + format_real(worst));
        });
    }

    add("reduction identity: zeroed q,k attention == aggregation", [] {
        Rng rng(201);
        double worst = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            const int n = 2 + static_cast<int>(rng.below(5));
            auto p = detail_verify::random_triplet_params(4, 2, 3, rng);
            auto zeroed = p;
            zeroed.in.wq.fill(0.0);
            zeroed.in.wp.fill(0.0);
            zeroed.out.wq.fill(0.0);
            zeroed.out.wp.fill(0.0);
            Tensor<double> e = Tensor<double>::randn(Shape{n, n, 4}, rng);
            Tape<double> t;
            auto att = triplet_attention(t, t.constant(e), bind_triplet(t, zeroed), 2);
            auto agg = triplet_aggregation(t, t.constant(e), bind_triplet(t, p), 2);
            worst = std::max(worst, max_abs_diff(t.val(att), t.val(agg)));
        }
        return std::make_pair(worst <= 1e-10, "max |diff| = " + format_real(worst));
    });

    add("reduction identity: no-bias saturated-gate attention == axial", [] {
        Rng rng(202);
        double worst = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            const int n = 2 + static_cast<int>(rng.below(5));
            auto p = detail_verify::random_triplet_params(4, 2, 3, rng);
            auto reduced = p;
            for (auto* dir : {&reduced.in, &reduced.out}) {
                dir->wb.fill(0.0);
                dir->bb.fill(0.0);
                dir->wg.fill(0.0);
                dir->bg.fill(800.0);
            }
            Tensor<double> e = Tensor<double>::randn(Shape{n, n, 4}, rng);
            Tape<double> t;
            auto att = triplet_attention(t, t.constant(e), bind_triplet(t, reduced), 2);
            auto ax = axial_attention(t, t.constant(e), bind_triplet(t, p), 2);
            worst = std::max(worst, max_abs_diff(t.val(att), t.val(ax)));
        }
        return std::make_pair(worst <= 1e-10, "max |diff| = " + format_real(worst));
    });

    add("reduction identity: ungated == gated with saturated gates", [] {
        Rng rng(203);
        double worst = 0.0;
        for (int trial = 0; trial < 5; ++trial) {
            const int n = 2 + static_cast<int>(rng.below(5));
            auto p = detail_verify::random_triplet_params(4, 2, 3, rng);
            auto saturated = p;
            for (auto* dir : {&saturated.in, &saturated.out}) {
                dir->wg.fill(0.0);
                dir->bg.fill(800.0);
            }
            Tensor<double> e = Tensor<double>::randn(Shape{n, n, 4}, rng);
            Tape<double> t;
            auto a = triplet_aggregation(t, t.constant(e), bind_triplet(t, saturated), 2, true);
            auto u = triplet_aggregation(t, t.constant(e), bind_triplet(t, p), 2, false);
            worst = std::max(worst, max_abs_diff(t.val(a), t.val(u)));
        }
        return std::make_pair(worst <= 1e-10, "max |diff| = " + format_real(worst));
    });

    for (Variant variant : {Variant::none, Variant::axial, Variant::triangular, Variant::triplet_agg,
                            Variant::triplet_att, Variant::ungated_agg, Variant::ungated_att}) {
        add(std::string("gradients: 1-layer model (") + variant_name(variant) + ")", [variant] {
            TGTConfig cfg;
            cfg.num_layers = 1;
            cfg.node_dim = 8;
            cfg.edge_dim = 6;
            cfg.heads = 2;
            cfg.triplet_heads = variant == Variant::none ? 0 : 2;
            cfg.variant = variant;
            cfg.node_ffn_dim = 8;
            cfg.edge_ffn_dim = 6;
            cfg.bins = {4, 8.0};
            cfg.encoding = EncodingKind::rbf;
            cfg.rbf_kernels = 3;
            cfg.max_hops = 8;
            cfg.graph_head = true;
            TgtModel<double> model(cfg, 5);
            GeometryDatasetConfig gc;
            gc.max_hops = 8;
            Rng grng(7);
            const auto graph = gen_geometry_instance(4, gc, grng);
            const auto dists = to_real_vec<double>(*graph.target_distances);
            std::vector<Tensor<double>> points;
            for (std::size_t i = 0; i < model.params().size(); ++i) {
                points.push_back(model.params().entry(static_cast<int>(i)).value);
            }
            const double err = grad_check_multi(
                [&](Tape<double>& t, const std::vector<Tape<double>::Var>& leaves) {
                    Rng rng(1);
                    auto out = model.forward_with_params(t, leaves, graph,
                                                         Mode::deterministic_eval, rng, &dists);
                    auto ce = distance_ce(t, out, graph, cfg.bins);
                    return t.add(out.graph_scalar, ce);
                },
                points, 1e-6);
            return std::make_pair(err < 1e-4, "max rel err = " + format_real(err));
        });
    }

    add("noise: nu -> inf preserves pairwise distances", [] {
        const double sigma = 0.5;
        NoiseConfig cfg{sigma, 1e9};
        Rng coord_rng(17), rng(3);
        std::vector<double> coords;
        for (int i = 0; i < 24; ++i) coords.push_back(coord_rng.uniform(0.0, 6.0));
        const auto noised = smooth_noise(coords, 8, 3, cfg, rng);
        const auto before = pairwise_distances(coords, 8, 3);
        const auto after = pairwise_distances(noised, 8, 3);
        double worst = 0.0;
        for (std::size_t i = 0; i < before.size(); ++i) {
            worst = std::max(worst, std::abs(before[i] - after[i]));
        }
        return std::make_pair(worst <= 1e-6 * sigma, "max distance change = " + format_real(worst));
    });

    add("noise: nu -> 0 gives i.i.d. Gaussian displacements", [] {
        const double sigma = 0.3;
        NoiseConfig cfg{sigma, 1e-3};
        std::vector<double> coords{0, 0, 0, 10, 0, 0, 0, 10, 0};
        double var = 0.0;
        const int draws = 2000;
        for (int d = 0; d < draws; ++d) {
            Rng rng(500 + static_cast<std::uint64_t>(d));
            const auto noised = smooth_noise(coords, 3, 3, cfg, rng);
            for (int c = 0; c < 3; ++c) {
                const double disp = noised[static_cast<std::size_t>(c)] - coords[static_cast<std::size_t>(c)];
                var += disp * disp;
            }
        }
        var /= 3.0 * draws;
        const double rel = std::abs(var - sigma * sigma) / (sigma * sigma);
        return std::make_pair(rel < 0.1, "relative variance error = " + format_real(rel));
    });

    add("noise: displacement field translation-equivariant", [] {
        NoiseConfig cfg{0.4, 1.0};
        Rng grid(77);
        std::vector<double> coords;
        for (int i = 0; i < 15; ++i) coords.push_back(static_cast<double>(grid.below(1 << 20)) / (1 << 16));
        auto shifted = coords;
        for (int i = 0; i < 5; ++i) {
            shifted[static_cast<std::size_t>(i) * 3] += 7.0;
            shifted[static_cast<std::size_t>(i) * 3 + 1] += -2.0;
            shifted[static_cast<std::size_t>(i) * 3 + 2] += 3.0;
        }
        Rng r1(9), r2(9);
        const auto d1 = smooth_displacement(coords, 5, 3, cfg, r1);
        const auto d2 = smooth_displacement(shifted, 5, 3, cfg, r2);
        return std::make_pair(d1 == d2, "bitwise displacement comparison");
    });

    add("binning: monotone with bounded round-trip error", [] {
        BinSpec spec{256, 8.0};
        Rng rng(4);
        bool ok = true;
        for (int i = 0; i < 10000; ++i) {
            const double d = rng.uniform(0.0, spec.range * (1 - 1e-12));
            const int b = bin_distance(d, spec);
            ok = ok && std::abs(bin_center(b, spec) - d) <= spec.range / (2.0 * spec.num_bins) + 1e-12;
        }
        ok = ok && bin_distance(spec.range + 3.0, spec) == spec.num_bins - 1;
        return std::make_pair(ok, "10^4 random distances");
    });

    add("hop encoding vs Floyd-Warshall", [] {
        Rng rng(99);
        bool ok = true;
        for (int trial = 0; trial < 20; ++trial) {
            const int n = 2 + static_cast<int>(rng.below(9));
            std::vector<GraphInstance::Edge> edges;
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j)
                    if (rng.bernoulli(0.3)) edges.push_back({i, j, 0});
            const int max_hops = 1 + static_cast<int>(rng.below(6));
            const auto hop = compute_hops(edges, n, max_hops);
            const auto fw = reference::floyd_warshall(edges, n);
            for (int i = 0; i < n * n; ++i) {
                const int expect = fw[static_cast<std::size_t>(i)] > (1 << 19)
                                       ? max_hops + 1
                                       : std::min(fw[static_cast<std::size_t>(i)], max_hops);
                ok = ok && hop[static_cast<std::size_t>(i)] == expect;
            }
        }
        return std::make_pair(ok, "20 random graphs, n <= 10");
    });

    add("Held-Karp vs brute-force enumeration", [] {
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 4; ++seed) {
            Rng rng(seed);
            std::vector<double> pts;
            for (int i = 0; i < 16; ++i) pts.push_back(rng.uniform());
            const auto dist = pairwise_distances(pts, 8, 2);
            const auto tour = held_karp_tour(dist, 8);
            worst = std::max(worst, std::abs(tour_length(dist, 8, tour) -
                                             reference::brute_force_tsp_length(dist, 8)));
        }
        return std::make_pair(worst <= 1e-9, "max |len diff| = " + format_real(worst));
    });

    return checks;
}

}  // namespace tgt
