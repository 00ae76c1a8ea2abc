#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "trigon/triangles.hpp"

using namespace trigon;

namespace {

Graph complete(std::size_t n) {
  std::vector<Edge> e;
  for (Node u = 0; u < n; ++u)
    for (Node v = u + 1; v < n; ++v) e.push_back({u, v});
  return Graph(n, EdgeList::canonical(std::move(e)));
}

}  // namespace

TEST(Triangle, MakeCanonicalizes) {
  auto t = Triangle::make(5, 1, 3, kSourceKnn);
  EXPECT_EQ(t.nodes(), (std::array<Node, 3>{1, 3, 5}));
  EXPECT_THROW(Triangle::make(1, 1, 2, kSourceKnn), InputError);
}

TEST(Enumerate, SmallCases) {
  EXPECT_EQ(enumerate_triangles(complete(4)).size(), 4u);
  auto c5 = build_graph(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}});
  EXPECT_TRUE(enumerate_triangles(c5).empty());
}

TEST(Enumerate, MatchesBruteForce) {
  Rng rng(12);
  for (int rep = 0; rep < 60; ++rep) {
    const std::size_t n = 3 + rng.below(38);
    auto g = oracle::random_graph(n, rng.uniform(0.1, 0.5), rng);
    auto got = enumerate_triangles(g);
    auto want = oracle::brute_triangles(g);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t r = 0; r < got.size(); ++r) {
      EXPECT_EQ(std::make_tuple(got[r].i, got[r].j, got[r].k), want[r]);
      EXPECT_EQ(got[r].sources, kSourceOriginal);
    }
  }
}

TEST(EdgeCounts, CompleteTreeAndBruteForce) {
  for (const auto& [e, t] : triangle_count_per_edge(complete(4))) EXPECT_EQ(t, 2u) << e.u << "," << e.v;
  auto tree = build_graph(5, {{0, 1}, {0, 2}, {2, 3}, {2, 4}});
  for (const auto& [e, t] : triangle_count_per_edge(tree)) EXPECT_EQ(t, 0u);

  Rng rng(13);
  auto g = oracle::random_graph(30, 0.3, rng);
  auto a = oracle::dense_adj(g);
  auto counts = triangle_count_per_edge(g);
  std::size_t total = 0;
  for (const auto& [e, t] : counts) {
    std::size_t bf = 0;
    for (Node w = 0; w < 30; ++w) bf += a[e.u][w] && a[e.v][w];
    EXPECT_EQ(t, bf);
    total += t;
  }
  EXPECT_EQ(counts.size(), g.num_edges());
  EXPECT_EQ(total, 3 * enumerate_triangles(g).size());
}

TEST(Candidates, DedupAcrossSources) {
  auto k3 = build_graph(4, {{0, 1}, {1, 2}, {0, 2}});
  auto set = build_candidates(k3, k3, std::vector<Triangle>{Triangle::make(0, 1, 2, kSourceDelaunay)});
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set[0].sources, kAllSources);
}

TEST(Candidates, EmptySources) {
  Graph none(5, EdgeList{});
  EXPECT_TRUE(build_candidates(none, none, {}).empty());
}

TEST(Candidates, TwoViews) {
  auto orig = build_graph(4, {{0, 1}, {1, 2}, {0, 2}});
  auto knn = build_graph(4, {{1, 2}, {2, 3}, {1, 3}});
  auto set = build_candidates(orig, knn, {});
  ASSERT_EQ(set.size(), 2u);
  EXPECT_EQ(set[0].sources, kSourceOriginal);
  EXPECT_EQ(set[1].sources, kSourceKnn);
  EXPECT_EQ(set.incident(1).size(), 2u);
  EXPECT_EQ(set.incident(0).size(), 1u);
  EXPECT_EQ(set.union_graph().num_edges(), 5u);
  EXPECT_EQ(set.filter_sources(kSourceKnn).size(), 1u);
}

TEST(Candidates, Idempotent) {
  Rng rng(14);
  auto a = oracle::random_graph(25, 0.3, rng);
  auto b = oracle::random_graph(25, 0.3, rng);
  auto set = build_candidates(a, b, {});
  auto again = build_candidates(set.union_graph(), Graph(25, EdgeList{}), set.triangles());
  // feeding the triangles back reproduces every candidate
  for (const auto& t : set.triangles()) {
    auto it = std::lower_bound(again.triangles().begin(), again.triangles().end(), t);
    ASSERT_NE(it, again.triangles().end());
    EXPECT_TRUE(it->same_nodes(t));
  }
  CandidateTriangleSet direct(25, set.triangles());
  EXPECT_EQ(direct, set);
}

TEST(Candidates, IncidenceConsistent) {
  Rng rng(15);
  auto g = oracle::random_graph(20, 0.4, rng);
  auto set = build_candidates(g, Graph(20, EdgeList{}), {});
  std::size_t sum = 0;
  for (Node v = 0; v < 20; ++v) {
    for (auto idx : set.incident(v)) {
      auto n = set[idx].nodes();
      EXPECT_NE(std::find(n.begin(), n.end(), v), n.end());
    }
    sum += set.incident(v).size();
  }
  EXPECT_EQ(sum, 3 * set.size());
}

TEST(Candidates, CapSubsamplesDeterministically) {
  Rng rng(16);
  auto g = oracle::random_graph(30, 0.5, rng);
  auto full = build_candidates(g, Graph(30, EdgeList{}), {});
  auto a = build_candidates(g, Graph(30, EdgeList{}), {}, 50, 7);
  auto b = build_candidates(g, Graph(30, EdgeList{}), {}, 50, 7);
  ASSERT_GT(full.size(), 50u);
  EXPECT_EQ(a.size(), 50u);
  EXPECT_EQ(a, b);
}

TEST(Candidates, SerializationRoundTrip) {
  Rng rng(17);
  auto set = build_candidates(oracle::random_graph(15, 0.4, rng), oracle::random_graph(15, 0.4, rng), {});
  std::stringstream io;
  write_candidates(io, set);
  EXPECT_EQ(read_candidates(io), set);
}
