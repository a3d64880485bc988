#pragma once

#include <vector>

#include "tgt/graph.hpp"
#include "tgt/rng.hpp"

namespace tgt {

struct GeometryDatasetConfig {
    int count = 1000;
    int n_min = 6;
    int n_max = 12;
    int knn = 3;
    int max_hops = 16;
    int num_node_types = 8;
    double box_side = 6.0;
    std::uint64_t seed = 1;
};

inline int quantize_edge_length(double d) {
    // 4 length buckets at the empirical quartiles of K-NN edge lengths in the
    // unit-density box, so each bucket carries real information.
    if (d < 1.9) return 0;
    if (d < 2.6) return 1;
    if (d < 3.3) return 2;
    return 3;
}

// Synthetic geometry task: random 3D point clouds whose K-NN graph is the
// observed 2D structure; targets are the exact pairwise distances and the
// exactly computable scalar sum_{i<j} 1/d_ij.
inline GraphInstance gen_geometry_instance(int n, const GeometryDatasetConfig& cfg, Rng& rng) {
    check(n >= 4 && n <= 24, "gen_geometry_instance: n must be in [4,24], got " + std::to_string(n));
    GraphInstance g;
    g.n = n;
    g.coord_dim = 3;
    for (;;) {  // resample degenerate coincident points
        g.coords.clear();
        for (int i = 0; i < n * 3; ++i) g.coords.push_back(rng.uniform(0.0, cfg.box_side));
        const auto dist = pairwise_distances(g.coords, n, 3);
        double min_d = 1e300;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                min_d = std::min(min_d, dist[static_cast<std::size_t>(i) * n + j]);
        if (min_d > 1e-3) {
            g.target_distances = dist;
            break;
        }
    }
    const auto& dist = *g.target_distances;
    g.node_types.resize(static_cast<std::size_t>(n));
    for (auto& t : g.node_types) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_node_types)));
    for (auto [i, j] : knn_edges(dist, n, cfg.knn)) {
        g.edges.push_back({i, j, quantize_edge_length(dist[static_cast<std::size_t>(i) * n + j])});
    }
    g.hop = compute_hops(g.edges, n, cfg.max_hops);
    double scalar = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) scalar += 1.0 / dist[static_cast<std::size_t>(i) * n + j];
    g.target_scalar = scalar;
    return g;
}

inline std::vector<GraphInstance> gen_geometry_dataset(const GeometryDatasetConfig& cfg) {
    check(cfg.n_min >= 4 && cfg.n_max <= 24 && cfg.n_min <= cfg.n_max,
          "gen_geometry_dataset: n range must be within [4,24]");
    std::vector<GraphInstance> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) {
        // per-instance derived seed so generation can be parallelized or resumed
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        const int n = cfg.n_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_max - cfg.n_min + 1)));
        out.push_back(gen_geometry_instance(n, cfg, rng));
    }
    return out;
}

}  // namespace tgt
