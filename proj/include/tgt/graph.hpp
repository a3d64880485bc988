#pragma once

#include <cmath>
#include <optional>
#include <queue>
#include <vector>

#include "tgt/common.hpp"

namespace tgt {

// One graph sample. Pairwise matrices are row-major n x n. Optional fields
// are present only when the generating task defines them.
struct GraphInstance {
    int n = 0;
    std::vector<int> node_types;                       // size n
    struct Edge {
        int i = 0, j = 0;
        int bond_type = 0;
    };
    std::vector<Edge> edges;                           // undirected, i<j once
    std::vector<int> hop;                              // n*n clipped shortest-path

    int coord_dim = 0;                                 // 0 when coords absent
    std::vector<double> coords;                        // n*coord_dim

    std::optional<std::vector<double>> target_distances;  // n*n
    std::optional<double> target_scalar;
    std::optional<std::vector<std::uint8_t>> edge_labels;  // n*n binary
    bool labels_exact = true;

    bool has_coords() const { return coord_dim > 0; }

    int hop_at(int i, int j) const { return hop[static_cast<std::size_t>(i) * n + j]; }
};

// BFS shortest-path hops, clipped to max_hops. Unreachable pairs get the
// dedicated bucket max_hops + 1, so hop values fit an embedding table of
// max_hops + 2 entries.
inline std::vector<int> compute_hops(const std::vector<GraphInstance::Edge>& edges, int n,
                                     int max_hops) {
    check(n >= 0, "compute_hops: negative node count");
    check(max_hops >= 1, "compute_hops: max_hops must be >= 1");
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (const auto& e : edges) {
        if (e.i < 0 || e.i >= n || e.j < 0 || e.j >= n) {
            throw ValueError("compute_hops: edge (" + std::to_string(e.i) + "," +
                             std::to_string(e.j) + ") out of range for n=" + std::to_string(n));
        }
        adj[static_cast<std::size_t>(e.i)].push_back(e.j);
        adj[static_cast<std::size_t>(e.j)].push_back(e.i);
    }
    const int unreachable = max_hops + 1;
    std::vector<int> hop(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), unreachable);
    std::vector<int> dist(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        std::fill(dist.begin(), dist.end(), -1);
        dist[static_cast<std::size_t>(s)] = 0;
        std::queue<int> q;
        q.push(s);
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            for (int v : adj[static_cast<std::size_t>(u)]) {
                if (dist[static_cast<std::size_t>(v)] < 0) {
                    dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
                    q.push(v);
                }
            }
        }
        for (int t = 0; t < n; ++t) {
            const int d = dist[static_cast<std::size_t>(t)];
            hop[static_cast<std::size_t>(s) * n + t] = d < 0 ? unreachable : std::min(d, max_hops);
        }
    }
    return hop;
}

inline std::vector<double> pairwise_distances(const std::vector<double>& coords, int n, int dim) {
    std::vector<double> d(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (int c = 0; c < dim; ++c) {
                const double diff = coords[static_cast<std::size_t>(i) * dim + c] -
                                    coords[static_cast<std::size_t>(j) * dim + c];
                s += diff * diff;
            }
            const double dist = std::sqrt(s);
            d[static_cast<std::size_t>(i) * n + j] = dist;
            d[static_cast<std::size_t>(j) * n + i] = dist;
        }
    }
    return d;
}

// Symmetrized K-NN edge set: (i,j) is an edge if either endpoint ranks the
// other among its k nearest.
inline std::vector<std::pair<int, int>> knn_edges(const std::vector<double>& dist, int n, int k) {
    std::vector<std::vector<bool>> sel(static_cast<std::size_t>(n),
                                       std::vector<bool>(static_cast<std::size_t>(n), false));
    for (int i = 0; i < n; ++i) {
        std::vector<int> order;
        for (int j = 0; j < n; ++j)
            if (j != i) order.push_back(j);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double da = dist[static_cast<std::size_t>(i) * n + a];
            const double db = dist[static_cast<std::size_t>(i) * n + b];
            return da == db ? a < b : da < db;
        });
        for (int r = 0; r < std::min<int>(k, static_cast<int>(order.size())); ++r) {
            sel[static_cast<std::size_t>(i)][static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = true;
        }
    }
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (sel[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ||
                sel[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]) {
                edges.emplace_back(i, j);
            }
        }
    }
    return edges;
}

}  // namespace tgt
