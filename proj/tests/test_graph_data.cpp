#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tgt/datagen.hpp"
#include "tgt/dataset_io.hpp"
#include "tgt/graph.hpp"
#include "tgt/reference.hpp"
#include "tgt/tsp.hpp"

using namespace tgt;
using reference::brute_force_tsp_length;
using reference::floyd_warshall;

TEST(ComputeHops, PathGraph) {
    std::vector<GraphInstance::Edge> edges{{0, 1, 0}, {1, 2, 0}};
    const auto hop = compute_hops(edges, 3, 32);
    const std::vector<int> expect{0, 1, 2, 1, 0, 1, 2, 1, 0};
    EXPECT_EQ(hop, expect);
}

TEST(ComputeHops, DisconnectedUsesUnreachableBucket) {
    const auto hop = compute_hops({}, 2, 32);
    EXPECT_EQ(hop[0], 0);
    EXPECT_EQ(hop[1], 33);
    EXPECT_EQ(hop[2], 33);
    EXPECT_EQ(hop[3], 0);
}

TEST(ComputeHops, OutOfRangeEdgeRejected) {
    EXPECT_THROW(compute_hops({{0, 5, 0}}, 3, 8), ValueError);
}

TEST(ComputeHops, MatchesFloydWarshallOnRandomGraphs) {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(9));  // n <= 10
        std::vector<GraphInstance::Edge> edges;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (rng.bernoulli(0.3)) edges.push_back({i, j, 0});
        const int max_hops = 1 + static_cast<int>(rng.below(6));
        const auto hop = compute_hops(edges, n, max_hops);
        const auto fw = floyd_warshall(edges, n);
        for (int i = 0; i < n * n; ++i) {
            const int expect = fw[static_cast<std::size_t>(i)] > (1 << 19)
                                   ? max_hops + 1
                                   : std::min(fw[static_cast<std::size_t>(i)], max_hops);
            EXPECT_EQ(hop[static_cast<std::size_t>(i)], expect);
        }
    }
}

TEST(GeometryData, TwoPointScalar) {
    // scalar = sum 1/d over pairs; a single pair at distance 2 gives 0.5
    std::vector<double> coords{0, 0, 0, 2, 0, 0};
    const auto dist = pairwise_distances(coords, 2, 3);
    EXPECT_DOUBLE_EQ(dist[1], 2.0);
    double scalar = 1.0 / dist[1];
    EXPECT_DOUBLE_EQ(scalar, 0.5);
}

TEST(GeometryData, UnitTriangleScalar) {
    std::vector<double> coords{0, 0, 0, 1, 0, 0, 0.5, std::sqrt(3.0) / 2.0, 0};
    const auto dist = pairwise_distances(coords, 3, 3);
    double scalar = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) scalar += 1.0 / dist[static_cast<std::size_t>(i) * 3 + j];
    EXPECT_NEAR(scalar, 3.0, 1e-12);
}

TEST(GeometryData, ScalarMatchesDirectRecomputation) {
    GeometryDatasetConfig cfg;
    cfg.count = 20;
    cfg.seed = 5;
    const auto ds = gen_geometry_dataset(cfg);
    ASSERT_EQ(ds.size(), 20u);
    for (const auto& g : ds) {
        ASSERT_TRUE(g.target_distances);
        ASSERT_TRUE(g.target_scalar);
        double s = 0.0;
        for (int i = 0; i < g.n; ++i)
            for (int j = i + 1; j < g.n; ++j)
                s += 1.0 / (*g.target_distances)[static_cast<std::size_t>(i) * g.n + j];
        EXPECT_NEAR(*g.target_scalar, s, 1e-12);
    }
}

TEST(GeometryData, DistancesAreMetricLike) {
    GeometryDatasetConfig cfg;
    cfg.count = 30;
    cfg.seed = 17;
    for (const auto& g : gen_geometry_dataset(cfg)) {
        const auto& d = *g.target_distances;
        for (int i = 0; i < g.n; ++i) {
            EXPECT_EQ(d[static_cast<std::size_t>(i) * g.n + i], 0.0);
            for (int j = 0; j < g.n; ++j) {
                EXPECT_EQ(d[static_cast<std::size_t>(i) * g.n + j], d[static_cast<std::size_t>(j) * g.n + i]);
                for (int k = 0; k < g.n; ++k) {
                    EXPECT_LE(d[static_cast<std::size_t>(i) * g.n + j],
                              d[static_cast<std::size_t>(i) * g.n + k] +
                                  d[static_cast<std::size_t>(k) * g.n + j] + 1e-9);
                }
            }
        }
    }
}

TEST(GeometryData, RangeValidation) {
    GeometryDatasetConfig cfg;
    cfg.n_min = 2;  // below the supported range
    EXPECT_THROW(gen_geometry_dataset(cfg), ValueError);
}

TEST(Tsp, UnitSquareCornersTourIsPerimeter) {
    std::vector<double> pts{0, 0, 1, 0, 1, 1, 0, 1};
    const auto dist = pairwise_distances(pts, 4, 2);
    const auto tour = held_karp_tour(dist, 4);
    EXPECT_NEAR(tour_length(dist, 4, tour), 4.0, 1e-12);
    // perimeter tour: every step has length 1
    for (int i = 0; i < 4; ++i) {
        const int a = tour[static_cast<std::size_t>(i)], b = tour[static_cast<std::size_t>((i + 1) % 4)];
        EXPECT_NEAR(dist[static_cast<std::size_t>(a) * 4 + b], 1.0, 1e-12);
    }
}

TEST(Tsp, TriangleTourIsPerimeter) {
    std::vector<double> pts{0, 0, 1, 0, 0.3, 0.8};
    const auto dist = pairwise_distances(pts, 3, 2);
    const auto tour = held_karp_tour(dist, 3);
    double perim = dist[1] + dist[static_cast<std::size_t>(1) * 3 + 2] + dist[static_cast<std::size_t>(2) * 3 + 0];
    EXPECT_NEAR(tour_length(dist, 3, tour), perim, 1e-12);
}

TEST(Tsp, HeldKarpMatchesBruteForceOnEightPoints) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        Rng rng(seed);
        std::vector<double> pts;
        for (int i = 0; i < 16; ++i) pts.push_back(rng.uniform());
        const auto dist = pairwise_distances(pts, 8, 2);
        const auto tour = held_karp_tour(dist, 8);
        EXPECT_NEAR(tour_length(dist, 8, tour), brute_force_tsp_length(dist, 8), 1e-9);
    }
}

TEST(Tsp, HeldKarpNoWorseThanRandomPermutations) {
    Rng rng(123);
    std::vector<double> pts;
    for (int i = 0; i < 24; ++i) pts.push_back(rng.uniform());
    const int m = 12;
    const auto dist = pairwise_distances(pts, m, 2);
    const double opt = tour_length(dist, m, held_karp_tour(dist, m));
    std::vector<int> perm;
    for (int i = 0; i < m; ++i) perm.push_back(i);
    for (int trial = 0; trial < 100; ++trial) {
        rng.shuffle(perm);
        EXPECT_LE(opt, tour_length(dist, m, perm) + 1e-12);
    }
}

TEST(Tsp, ExactCapEnforced) {
    EXPECT_THROW(gen_tsp_instance(20, 5, 1), ValueError);
    const auto inst = gen_tsp_instance(20, 5, 1, 16, /*allow_heuristic=*/true);
    EXPECT_FALSE(inst.graph.labels_exact);
}

TEST(Tsp, LabelsMarkTourEdgesInKnnGraph) {
    const auto inst = gen_tsp_instance(12, 4, 7);
    const auto& g = inst.graph;
    ASSERT_TRUE(g.edge_labels);
    std::vector<std::uint8_t> in_knn(static_cast<std::size_t>(g.n) * g.n, 0);
    for (const auto& e : g.edges) {
        in_knn[static_cast<std::size_t>(e.i) * g.n + e.j] = 1;
        in_knn[static_cast<std::size_t>(e.j) * g.n + e.i] = 1;
    }
    std::vector<std::uint8_t> on_tour(in_knn.size(), 0);
    for (int i = 0; i < g.n; ++i) {
        const int a = inst.optimal_tour[static_cast<std::size_t>(i)];
        const int b = inst.optimal_tour[static_cast<std::size_t>((i + 1) % g.n)];
        on_tour[static_cast<std::size_t>(a) * g.n + b] = on_tour[static_cast<std::size_t>(b) * g.n + a] = 1;
    }
    for (std::size_t p = 0; p < in_knn.size(); ++p) {
        EXPECT_EQ((*g.edge_labels)[p], in_knn[p] && on_tour[p] ? 1 : 0);
    }
}

TEST(DatasetIo, RoundTripIsFieldExact) {
    GeometryDatasetConfig cfg;
    cfg.count = 50;
    cfg.seed = 31;
    auto ds = gen_geometry_dataset(cfg);
    for (std::uint64_t s = 0; s < 50; ++s) {
        ds.push_back(gen_tsp_instance(8, 3, s).graph);
    }
    const std::string path = std::filesystem::temp_directory_path() / "tgt_io_test.jsonl";
    write_dataset(path, ds);
    const auto back = read_dataset(path);
    ASSERT_EQ(back.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& a = ds[i];
        const auto& b = back[i];
        EXPECT_EQ(a.n, b.n);
        EXPECT_EQ(a.node_types, b.node_types);
        ASSERT_EQ(a.edges.size(), b.edges.size());
        for (std::size_t e = 0; e < a.edges.size(); ++e) {
            EXPECT_EQ(a.edges[e].i, b.edges[e].i);
            EXPECT_EQ(a.edges[e].j, b.edges[e].j);
            EXPECT_EQ(a.edges[e].bond_type, b.edges[e].bond_type);
        }
        EXPECT_EQ(a.hop, b.hop);
        EXPECT_EQ(a.coord_dim, b.coord_dim);
        EXPECT_EQ(a.coords, b.coords);  // %.17g round trip is bit-exact
        EXPECT_EQ(a.target_distances.has_value(), b.target_distances.has_value());
        if (a.target_distances) {
            EXPECT_EQ(*a.target_distances, *b.target_distances);
        }
        EXPECT_EQ(a.target_scalar.has_value(), b.target_scalar.has_value());
        if (a.target_scalar) {
            EXPECT_EQ(*a.target_scalar, *b.target_scalar);
        }
        EXPECT_EQ(a.edge_labels, b.edge_labels);
        EXPECT_EQ(a.labels_exact, b.labels_exact);
    }
    std::filesystem::remove(path);
}

TEST(DatasetIo, EmptyFileGivesEmptyDataset) {
    const std::string path = std::filesystem::temp_directory_path() / "tgt_io_empty.jsonl";
    std::ofstream(path).close();
    EXPECT_TRUE(read_dataset(path).empty());
    std::filesystem::remove(path);
}

TEST(DatasetIo, TruncatedRecordNamesLine) {
    const std::string path = std::filesystem::temp_directory_path() / "tgt_io_bad.jsonl";
    {
        std::ofstream out(path);
        out << serialize_graph(gen_tsp_instance(6, 2, 3).graph) << '\n';
        out << "n=3;types=0,0,0\n";  // missing edges & hop
    }
    try {
        read_dataset(path);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
    std::filesystem::remove(path);
}

TEST(DatasetIo, MissingFileIsAnError) {
    EXPECT_THROW(read_dataset("/nonexistent/dir/data.jsonl"), IoError);
}
