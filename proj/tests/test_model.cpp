#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tgt/datagen.hpp"
#include "tgt/grad_check.hpp"
#include "tgt/model.hpp"

using namespace tgt;
using DTape = Tape<double>;
using DVar = DTape::Var;

namespace {

TGTConfig small_config(Variant v) {
    TGTConfig cfg;
    cfg.num_layers = 2;
    cfg.node_dim = 8;
    cfg.edge_dim = 6;
    cfg.heads = 2;
    cfg.triplet_heads = v == Variant::none ? 0 : 2;
    cfg.variant = v;
    cfg.node_ffn_dim = 12;
    cfg.edge_ffn_dim = 8;
    cfg.bins = {8, 8.0};
    cfg.encoding = EncodingKind::rbf;
    cfg.rbf_kernels = 4;
    cfg.max_hops = 8;
    cfg.graph_head = true;
    cfg.distance_head = true;
    return cfg;
}

GraphInstance test_graph(std::uint64_t seed, int n = 5) {
    GeometryDatasetConfig cfg;
    cfg.max_hops = 8;
    Rng rng(seed);
    return gen_geometry_instance(n, cfg, rng);
}

std::vector<double> input_dists(const GraphInstance& g) {
    return *g.target_distances;
}

GraphInstance permute_graph(const GraphInstance& g, const std::vector<int>& perm) {
    const int n = g.n;
    std::vector<int> inv(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
    GraphInstance out;
    out.n = n;
    out.node_types.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.node_types[static_cast<std::size_t>(i)] =
            g.node_types[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    for (const auto& e : g.edges) {
        out.edges.push_back({inv[static_cast<std::size_t>(e.i)], inv[static_cast<std::size_t>(e.j)], e.bond_type});
    }
    out.hop.resize(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out.hop[static_cast<std::size_t>(i) * n + j] =
                g.hop[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * n + perm[static_cast<std::size_t>(j)]];
    out.coord_dim = g.coord_dim;
    if (g.has_coords()) {
        out.coords.resize(g.coords.size());
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < g.coord_dim; ++c)
                out.coords[static_cast<std::size_t>(i) * g.coord_dim + c] =
                    g.coords[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * g.coord_dim + c];
    }
    if (g.target_distances) {
        std::vector<double> d(static_cast<std::size_t>(n) * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                d[static_cast<std::size_t>(i) * n + j] =
                    (*g.target_distances)[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * n +
                                          perm[static_cast<std::size_t>(j)]];
        out.target_distances = std::move(d);
    }
    out.target_scalar = g.target_scalar;
    return out;
}

}  // namespace

TEST(ModelConfig, LayerGroupsFollowMultiplier) {
    auto cfg = small_config(Variant::triplet_agg);
    cfg.num_layers = 4;
    cfg.layer_multiplier = 2;
    TgtModel<double> model(cfg, 1);
    EXPECT_EQ(model.group_of_layer(0), 0);
    EXPECT_EQ(model.group_of_layer(1), 0);
    EXPECT_EQ(model.group_of_layer(2), 1);
    EXPECT_EQ(model.group_of_layer(3), 1);
    EXPECT_EQ(model.num_groups(), 2);
}

TEST(ModelConfig, InvalidConfigsRejected) {
    auto cfg = small_config(Variant::triplet_agg);
    cfg.num_layers = 3;
    cfg.layer_multiplier = 2;  // not divisible
    EXPECT_THROW(TgtModel<double>(cfg, 1), ValueError);

    cfg = small_config(Variant::none);
    cfg.triplet_heads = 2;  // must be 0 for variant none
    EXPECT_THROW(TgtModel<double>(cfg, 1), ValueError);

    cfg = small_config(Variant::triplet_att);
    cfg.triplet_heads = 0;
    EXPECT_THROW(TgtModel<double>(cfg, 1), ValueError);
}

TEST(ModelParams, SharingHalvesLayerStackParams) {
    auto cfg = small_config(Variant::triplet_att);
    cfg.num_layers = 4;
    cfg.layer_multiplier = 1;
    TgtModel<double> full(cfg, 1);
    cfg.layer_multiplier = 2;
    TgtModel<double> shared(cfg, 1);
    EXPECT_EQ(shared.count_params("layers.") * 2, full.count_params("layers."));
    // total params: embeddings and heads unaffected by sharing
    EXPECT_EQ(full.count_params() - full.count_params("layers."),
              shared.count_params() - shared.count_params("layers."));
}

TEST(ModelParams, ZeroLayersLeavesOnlyEmbeddingsAndHeads) {
    auto cfg = small_config(Variant::none);
    cfg.triplet_heads = 0;
    cfg.num_layers = 0;
    TgtModel<double> model(cfg, 1);
    EXPECT_EQ(model.count_params("layers."), 0);
    EXPECT_GT(model.count_params("embed."), 0);
    EXPECT_GT(model.count_params("head."), 0);
    EXPECT_EQ(model.count_params(),
              model.count_params("embed.") + model.count_params("head.") + model.count_params("enc."));

    // forward still runs: embeddings -> final norm -> heads
    const auto g = test_graph(3);
    DTape tape;
    Rng rng(1);
    auto dists = input_dists(g);
    auto out = model.forward(tape, g, Mode::deterministic_eval, rng, &dists);
    EXPECT_EQ(tape.val(out.distance_logits).shape, (Shape{g.n, g.n, 8}));
}

TEST(ModelParams, CountMatchesCheckpointEnumeration) {
    // independent minimal reader of the checkpoint container
    auto cfg = small_config(Variant::triplet_att);
    TgtModel<double> model(cfg, 7);
    const std::string path = std::filesystem::temp_directory_path() / "tgt_count.ckpt";
    model.params().save(path);

    std::ifstream in(path, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    std::int64_t total = 0;
    for (std::uint32_t t = 0; t < count; ++t) {
        std::uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), 4);
        in.seekg(name_len, std::ios::cur);
        std::uint32_t rank = 0;
        in.read(reinterpret_cast<char*>(&rank), 4);
        std::int64_t elems = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            std::int64_t d = 0;
            in.read(reinterpret_cast<char*>(&d), 8);
            elems *= d;
        }
        std::uint8_t sb = 0;
        in.read(reinterpret_cast<char*>(&sb), 1);
        in.seekg(elems * sb, std::ios::cur);
        total += elems;
    }
    EXPECT_EQ(total, model.count_params());
    std::filesystem::remove(path);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    auto cfg = small_config(Variant::triplet_agg);
    TgtModel<double> a(cfg, 7);
    TgtModel<double> b(cfg, 8);  // different init
    const std::string path = std::filesystem::temp_directory_path() / "tgt_rt.ckpt";
    a.params().save(path);
    b.params().load(path);
    EXPECT_EQ(a.params().content_hash(), b.params().content_hash());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        EXPECT_EQ(a.params().entry(static_cast<int>(i)).value.data,
                  b.params().entry(static_cast<int>(i)).value.data);
    }
    std::filesystem::remove(path);
}

TEST(Checkpoint, MissingAndMismatchedTensorsError) {
    auto cfg = small_config(Variant::triplet_agg);
    TgtModel<double> a(cfg, 7);
    const std::string path = std::filesystem::temp_directory_path() / "tgt_miss.ckpt";
    a.params().save(path);

    // different variant: tensor sets differ
    TgtModel<double> other(small_config(Variant::triplet_att), 7);
    EXPECT_THROW(other.params().load(path), IoError);

    // same tensor names but a different shape: error names the tensor
    auto cfg2 = small_config(Variant::triplet_agg);
    cfg2.node_ffn_dim = 16;
    TgtModel<double> wider(cfg2, 7);
    try {
        wider.params().load(path);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("ffn_h.w1"), std::string::npos) << e.what();
    }
    std::filesystem::remove(path);
}

TEST(ModelForward, DeterministicEvalIsBitIdentical) {
    auto cfg = small_config(Variant::triplet_att);
    TgtModel<double> model(cfg, 11);
    const auto g = test_graph(5);
    const auto dists = input_dists(g);
    auto run = [&]() {
        DTape tape;
        Rng rng(99);
        auto out = model.forward(tape, g, Mode::deterministic_eval, rng, &dists);
        return std::make_pair(tape.val(out.graph_scalar)[0], tape.val(out.distance_logits).data);
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
}

TEST(ModelForward, StochasticEvalSeedControlsDraws) {
    auto cfg = small_config(Variant::triplet_att);
    cfg.dropout = {0.2, 0.1, 0.1, 0.1};
    TgtModel<double> model(cfg, 11);
    const auto g = test_graph(5);
    const auto dists = input_dists(g);
    auto run = [&](std::uint64_t seed) {
        DTape tape;
        Rng rng(seed);
        auto out = model.forward(tape, g, Mode::stochastic_eval, rng, &dists);
        return tape.val(out.graph_scalar)[0];
    };
    EXPECT_EQ(run(1), run(1));
    EXPECT_NE(run(1), run(2));
}

TEST(ModelForward, DistanceLogitsAreSymmetric) {
    auto cfg = small_config(Variant::triplet_agg);
    TgtModel<double> model(cfg, 13);
    const auto g = test_graph(7, 6);
    const auto dists = input_dists(g);
    DTape tape;
    Rng rng(1);
    auto out = model.forward(tape, g, Mode::deterministic_eval, rng, &dists);
    const auto& lv = tape.val(out.distance_logits);
    const int n = g.n, b = cfg.bins.num_bins;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < b; ++k)
                EXPECT_DOUBLE_EQ(lv[(static_cast<std::int64_t>(i) * n + j) * b + k],
                                 lv[(static_cast<std::int64_t>(j) * n + i) * b + k]);
}

TEST(ModelForward, PermutationInvarianceAndEquivariance) {
    for (Variant variant : {Variant::none, Variant::triplet_att, Variant::triangular}) {
        auto cfg = small_config(variant);
        if (variant == Variant::none) cfg.triplet_heads = 0;
        TgtModel<double> model(cfg, 21);
        const auto g = test_graph(9, 6);
        const std::vector<int> perm{4, 2, 0, 5, 1, 3};
        const auto gp = permute_graph(g, perm);
        const auto d1 = input_dists(g);
        const auto d2 = input_dists(gp);

        DTape t1, t2;
        Rng r1(1), r2(1);
        auto o1 = model.forward(t1, g, Mode::deterministic_eval, r1, &d1);
        auto o2 = model.forward(t2, gp, Mode::deterministic_eval, r2, &d2);
        EXPECT_NEAR(t1.val(o1.graph_scalar)[0], t2.val(o2.graph_scalar)[0], 1e-9);
        const int n = g.n, b = cfg.bins.num_bins;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                for (int k = 0; k < b; ++k) {
                    EXPECT_NEAR(
                        t2.val(o2.distance_logits)[(static_cast<std::int64_t>(i) * n + j) * b + k],
                        t1.val(o1.distance_logits)[(static_cast<std::int64_t>(perm[static_cast<std::size_t>(i)]) * n +
                                                    perm[static_cast<std::size_t>(j)]) *
                                                       b +
                                                   k],
                        1e-9);
                }
            }
        }
    }
}

TEST(ModelGradients, EndToEndGradCheckOneVariant) {
    // all seven variants run in the acceptance suite; one compact check here
    auto cfg = small_config(Variant::triplet_agg);
    cfg.num_layers = 1;
    TgtModel<double> model(cfg, 31);
    const auto g = test_graph(17, 4);
    const auto dists_d = input_dists(g);

    std::vector<Tensor<double>> points;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        points.push_back(model.params().entry(static_cast<int>(i)).value);
    }
    std::vector<std::int64_t> bin_targets;
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j)
            bin_targets.push_back(i == j ? -1
                                         : bin_distance((*g.target_distances)[static_cast<std::size_t>(i) * g.n + j],
                                                        cfg.bins));
    const double err = grad_check_multi(
        [&](DTape& t, const std::vector<DVar>& leaves) {
            Rng rng(1);
            auto out = model.forward_with_params(t, leaves, g, Mode::deterministic_eval, rng, &dists_d);
            auto ce = t.cross_entropy(
                t.reshape(out.distance_logits, Shape{static_cast<std::int64_t>(g.n) * g.n, cfg.bins.num_bins}),
                bin_targets);
            return t.add(out.graph_scalar, ce);
        },
        points, 1e-6);
    EXPECT_LT(err, 1e-4);
}

TEST(ModelGradients, SharedGroupGradEqualsSumOfPerLayerGrads) {
    auto cfg = small_config(Variant::triplet_agg);
    cfg.num_layers = 2;
    cfg.layer_multiplier = 2;
    TgtModel<double> shared(cfg, 41);
    cfg.layer_multiplier = 1;
    TgtModel<double> unshared(cfg, 41);

    // tie the unshared model: both layer groups get the shared group's values
    for (std::size_t i = 0; i < unshared.params().size(); ++i) {
        const std::string& name = unshared.params().entry(static_cast<int>(i)).name;
        std::string src = name;
        if (name.rfind("layers.1.", 0) == 0) src = "layers.0." + name.substr(9);
        unshared.params().value(static_cast<int>(i)) =
            shared.params().value(shared.params().find(src));
    }

    const auto g = test_graph(51, 5);
    const auto dists = input_dists(g);
    auto loss_of = [&](TgtModel<double>& m, DTape& tape) {
        Rng rng(1);
        auto out = m.forward(tape, g, Mode::train, rng, &dists);
        auto loss = tape.add(out.graph_scalar, tape.mean_all(tape.mul(out.distance_logits,
                                                                      out.distance_logits)));
        tape.backward(loss);
        return out;
    };
    DTape t1, t2;
    auto o1 = loss_of(shared, t1);
    auto o2 = loss_of(unshared, t2);

    for (std::size_t i = 0; i < shared.params().size(); ++i) {
        const std::string& name = shared.params().entry(static_cast<int>(i)).name;
        const auto& g_shared = t1.grad(o1.leaves[i]);
        if (name.rfind("layers.0.", 0) == 0) {
            const auto& ga = t2.grad(o2.leaves[static_cast<std::size_t>(unshared.params().find(name))]);
            const auto& gb = t2.grad(o2.leaves[static_cast<std::size_t>(
                unshared.params().find("layers.1." + name.substr(9)))]);
            for (std::int64_t k = 0; k < g_shared.size(); ++k) {
                EXPECT_NEAR(g_shared[k], ga[k] + gb[k], 1e-10) << name;
            }
        } else {
            const auto& gu = t2.grad(o2.leaves[static_cast<std::size_t>(unshared.params().find(name))]);
            for (std::int64_t k = 0; k < g_shared.size(); ++k) {
                EXPECT_NEAR(g_shared[k], gu[k], 1e-10) << name;
            }
        }
    }
}
