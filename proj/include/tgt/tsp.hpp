#pragma once

#include <algorithm>
#include <vector>

#include "tgt/graph.hpp"
#include "tgt/rng.hpp"

namespace tgt {

// Largest instance the exact Held-Karp solver accepts (O(2^m m^2)).
inline constexpr int kTspExactCap = 16;

inline double tour_length(const std::vector<double>& dist, int n, const std::vector<int>& tour) {
    double len = 0.0;
    for (int i = 0; i < n; ++i) {
        len += dist[static_cast<std::size_t>(tour[static_cast<std::size_t>(i)]) * n +
                    tour[static_cast<std::size_t>((i + 1) % n)]];
    }
    return len;
}

// Exact TSP via Held-Karp bitmask DP. Returns the optimal cyclic tour
// starting at node 0.
inline std::vector<int> held_karp_tour(const std::vector<double>& dist, int m) {
    check(m >= 2, "held_karp_tour: need at least 2 points");
    check(m <= kTspExactCap, "held_karp_tour: m=" + std::to_string(m) + " exceeds exact cap " +
                                 std::to_string(kTspExactCap));
    const int nsub = 1 << (m - 1);  // subsets of nodes 1..m-1
    const double inf = 1e300;
    std::vector<double> dp(static_cast<std::size_t>(nsub) * static_cast<std::size_t>(m - 1), inf);
    std::vector<std::int8_t> parent(dp.size(), -1);
    auto d = [&](int a, int b) { return dist[static_cast<std::size_t>(a) * m + b]; };
    for (int j = 0; j < m - 1; ++j) {
        dp[static_cast<std::size_t>(1 << j) * (m - 1) + j] = d(0, j + 1);
    }
    for (int mask = 1; mask < nsub; ++mask) {
        for (int j = 0; j < m - 1; ++j) {
            if (!(mask & (1 << j))) continue;
            const double cur = dp[static_cast<std::size_t>(mask) * (m - 1) + j];
            if (cur >= inf) continue;
            for (int t = 0; t < m - 1; ++t) {
                if (mask & (1 << t)) continue;
                const int nmask = mask | (1 << t);
                const double cand = cur + d(j + 1, t + 1);
                auto& slot = dp[static_cast<std::size_t>(nmask) * (m - 1) + t];
                if (cand < slot) {
                    slot = cand;
                    parent[static_cast<std::size_t>(nmask) * (m - 1) + t] = static_cast<std::int8_t>(j);
                }
            }
        }
    }
    const int full = nsub - 1;
    double best = inf;
    int best_last = 0;
    for (int j = 0; j < m - 1; ++j) {
        const double cand = dp[static_cast<std::size_t>(full) * (m - 1) + j] + d(j + 1, 0);
        if (cand < best) {
            best = cand;
            best_last = j;
        }
    }
    std::vector<int> tour;
    int mask = full, last = best_last;
    while (last >= 0) {
        tour.push_back(last + 1);
        const int prev = parent[static_cast<std::size_t>(mask) * (m - 1) + last];
        mask ^= 1 << last;
        last = prev;
    }
    tour.push_back(0);
    std::reverse(tour.begin(), tour.end());
    return tour;
}

// 2-opt local search from a nearest-neighbour start; used beyond the exact cap.
inline std::vector<int> two_opt_tour(const std::vector<double>& dist, int m, Rng& rng) {
    std::vector<int> tour;
    std::vector<bool> used(static_cast<std::size_t>(m), false);
    int cur = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    tour.push_back(cur);
    used[static_cast<std::size_t>(cur)] = true;
    for (int step = 1; step < m; ++step) {
        int best = -1;
        double bd = 1e300;
        for (int j = 0; j < m; ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            const double dj = dist[static_cast<std::size_t>(cur) * m + j];
            if (dj < bd) {
                bd = dj;
                best = j;
            }
        }
        tour.push_back(best);
        used[static_cast<std::size_t>(best)] = true;
        cur = best;
    }
    bool improved = true;
    while (improved) {
        improved = false;
        for (int a = 0; a < m - 1; ++a) {
            for (int b = a + 1; b < m; ++b) {
                const int ia = tour[static_cast<std::size_t>(a)];
                const int ib = tour[static_cast<std::size_t>(b)];
                const int ia1 = tour[static_cast<std::size_t>((a + m - 1) % m)];
                const int ib1 = tour[static_cast<std::size_t>((b + 1) % m)];
                if (ia1 == ib || ib1 == ia) continue;
                const double before = dist[static_cast<std::size_t>(ia1) * m + ia] +
                                      dist[static_cast<std::size_t>(ib) * m + ib1];
                const double after = dist[static_cast<std::size_t>(ia1) * m + ib] +
                                     dist[static_cast<std::size_t>(ia) * m + ib1];
                if (after < before - 1e-12) {
                    std::reverse(tour.begin() + a, tour.begin() + b + 1);
                    improved = true;
                }
            }
        }
    }
    return tour;
}

struct TSPInstance {
    std::vector<double> points;  // m x 2 in the unit square
    int m = 0;
    int k = 0;
    std::vector<int> optimal_tour;
    GraphInstance graph;
};

// Random Euclidean TSP instance with a K-NN observation graph; edge labels
// mark K-NN edges that lie on the optimal tour. Exact labels (Held-Karp) up
// to kTspExactCap nodes; beyond that the caller must opt in to 2-opt labels,
// which are flagged non-exact.
inline TSPInstance gen_tsp_instance(int m, int k, std::uint64_t seed, int max_hops = 16,
                                    bool allow_heuristic = false) {
    check(m >= 3, "gen_tsp_instance: need at least 3 points");
    check(k >= 1 && k < m, "gen_tsp_instance: require 1 <= k < m");
    if (m > kTspExactCap && !allow_heuristic) {
        throw ValueError("gen_tsp_instance: m=" + std::to_string(m) + " exceeds the exact cap of " +
                         std::to_string(kTspExactCap) +
                         "; pass allow_heuristic=true for 2-opt labels (marked non-exact)");
    }
    Rng rng(seed);
    TSPInstance inst;
    inst.m = m;
    inst.k = k;
    for (int i = 0; i < 2 * m; ++i) inst.points.push_back(rng.uniform());
    const auto dist = pairwise_distances(inst.points, m, 2);
    inst.optimal_tour = m <= kTspExactCap ? held_karp_tour(dist, m) : two_opt_tour(dist, m, rng);

    GraphInstance& g = inst.graph;
    g.n = m;
    g.coord_dim = 2;
    g.coords = inst.points;
    g.node_types.assign(static_cast<std::size_t>(m), 0);
    g.target_distances = dist;
    g.labels_exact = m <= kTspExactCap;
    for (auto [i, j] : knn_edges(dist, m, k)) g.edges.push_back({i, j, 0});
    g.hop = compute_hops(g.edges, m, max_hops);

    std::vector<std::uint8_t> on_tour(static_cast<std::size_t>(m) * static_cast<std::size_t>(m), 0);
    for (int i = 0; i < m; ++i) {
        const int a = inst.optimal_tour[static_cast<std::size_t>(i)];
        const int b = inst.optimal_tour[static_cast<std::size_t>((i + 1) % m)];
        on_tour[static_cast<std::size_t>(a) * m + b] = 1;
        on_tour[static_cast<std::size_t>(b) * m + a] = 1;
    }
    std::vector<std::uint8_t> labels(on_tour.size(), 0);
    for (const auto& e : g.edges) {
        if (on_tour[static_cast<std::size_t>(e.i) * m + e.j]) {
            labels[static_cast<std::size_t>(e.i) * m + e.j] = 1;
            labels[static_cast<std::size_t>(e.j) * m + e.i] = 1;
        }
    }
    g.edge_labels = std::move(labels);
    return inst;
}

}  // namespace tgt
