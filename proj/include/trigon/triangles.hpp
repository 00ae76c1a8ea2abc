#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "trigon/graph.hpp"
#include "trigon/rng.hpp"
#include "trigon/triangle.hpp"

namespace trigon {

/// All triangles of `g`, each once, sorted lexicographically.
///
/// Edges are oriented from lower to higher (degree, index) rank; each
/// triangle is then found exactly once by intersecting out-neighborhoods.
inline std::vector<Triangle> enumerate_triangles(const Graph& g, std::uint8_t sources = kSourceOriginal) {
  const std::size_t n = g.num_nodes();
  auto rank_less = [&](Node a, Node b) {
    const auto da = g.degree(a), db = g.degree(b);
    return da != db ? da < db : a < b;
  };
  std::vector<std::vector<Node>> out(n);
  for (Node u = 0; u < n; ++u) {
    for (Node v : g.neighbors(u)) {
      if (rank_less(u, v)) out[u].push_back(v);
    }
  }
  std::vector<char> mark(n, 0);
  std::vector<Triangle> tris;
  for (Node u = 0; u < n; ++u) {
    for (Node w : out[u]) mark[w] = 1;
    for (Node v : out[u]) {
      for (Node w : out[v]) {
        if (mark[w]) tris.push_back(Triangle::make(u, v, w, sources));
      }
    }
    for (Node w : out[u]) mark[w] = 0;
  }
  std::sort(tris.begin(), tris.end());
  return tris;
}

/// Per-edge triangle counts t(u, v) = |N(u) ∩ N(v)|, keyed by canonical edge.
using EdgeTriangleCounts = std::map<Edge, std::size_t>;

inline std::size_t common_neighbors(const Graph& g, Node u, Node v) {
  auto a = g.neighbors(u);
  auto b = g.neighbors(v);
  std::size_t count = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++count, ++i, ++j;
    }
  }
  return count;
}

inline EdgeTriangleCounts triangle_count_per_edge(const Graph& g) {
  EdgeTriangleCounts counts;
  g.for_each_edge([&](Node u, Node v) { counts.emplace_hint(counts.end(), Edge{u, v}, common_neighbors(g, u, v)); });
  return counts;
}

/// Deduplicated union of candidate triangles from several views.
class CandidateTriangleSet {
 public:
  CandidateTriangleSet() = default;

  /// Merges triangles (any order, possibly repeated); source masks are OR-ed.
  CandidateTriangleSet(std::size_t num_nodes, std::vector<Triangle> triangles) : num_nodes_(num_nodes) {
    std::sort(triangles.begin(), triangles.end());
    for (const auto& t : triangles) {
      if (t.k >= num_nodes) throw InputError("candidate triangle references node outside [0, n)");
      if (!triangles_.empty() && triangles_.back().same_nodes(t)) {
        triangles_.back().sources |= t.sources;
      } else {
        triangles_.push_back(t);
      }
    }
    incidence_.assign(num_nodes_, {});
    for (std::uint32_t idx = 0; idx < triangles_.size(); ++idx) {
      for (Node v : triangles_[idx].nodes()) incidence_[v].push_back(idx);
    }
  }

  [[nodiscard]] std::size_t num_nodes() const { return num_nodes_; }
  [[nodiscard]] std::size_t size() const { return triangles_.size(); }
  [[nodiscard]] bool empty() const { return triangles_.empty(); }
  [[nodiscard]] const std::vector<Triangle>& triangles() const { return triangles_; }
  const Triangle& operator[](std::size_t i) const { return triangles_[i]; }

  /// Indices of triangles that contain node v.
  [[nodiscard]] std::span<const std::uint32_t> incident(Node v) const { return incidence_[v]; }

  /// Triangle counts per edge of the graph formed by the union of all candidates.
  [[nodiscard]] EdgeTriangleCounts edge_counts() const {
    EdgeTriangleCounts counts;
    for (const auto& t : triangles_) {
      for (auto e : t.edges()) ++counts[e];
    }
    return counts;
  }

  /// Graph on num_nodes() whose edges are the union of all candidate edges.
  [[nodiscard]] Graph union_graph() const {
    std::vector<Edge> edges;
    edges.reserve(3 * triangles_.size());
    for (const auto& t : triangles_) {
      for (auto e : t.edges()) edges.push_back(e);
    }
    return Graph(num_nodes_, EdgeList::canonical(std::move(edges)));
  }

  /// Candidates carrying any of the bits in `mask`.
  [[nodiscard]] CandidateTriangleSet filter_sources(std::uint8_t mask) const {
    std::vector<Triangle> kept;
    for (auto t : triangles_) {
      t.sources &= mask;
      if (t.sources) kept.push_back(t);
    }
    return CandidateTriangleSet(num_nodes_, std::move(kept));
  }

  /// Seeded uniform subsample without replacement of `count` candidates
  /// (order of the survivors is preserved).
  [[nodiscard]] CandidateTriangleSet subsample(std::size_t count, Rng& rng) const {
    if (count >= triangles_.size()) return *this;
    std::vector<std::uint32_t> idx(triangles_.size());
    for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = i + rng.below(idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    std::vector<Triangle> kept;
    kept.reserve(count);
    for (auto i : idx) kept.push_back(triangles_[i]);
    return CandidateTriangleSet(num_nodes_, std::move(kept));
  }

  friend bool operator==(const CandidateTriangleSet& a, const CandidateTriangleSet& b) {
    return a.num_nodes_ == b.num_nodes_ && a.triangles_ == b.triangles_;
  }

 private:
  std::size_t num_nodes_ = 0;
  std::vector<Triangle> triangles_;
  std::vector<std::vector<std::uint32_t>> incidence_;
};

inline constexpr std::size_t kDefaultCandidateCap = 500'000;

/// Union of the triangles of the original graph, the k-NN graph and a
/// Delaunay triangle list. When the union exceeds `cap`, a seeded uniform
/// subsample of size `cap` is kept.
inline CandidateTriangleSet build_candidates(const Graph& original, const Graph& knn,
                                             std::span<const Triangle> delaunay_triangles,
                                             std::size_t cap = kDefaultCandidateCap,
                                             std::optional<std::uint64_t> cap_seed = std::nullopt) {
  if (original.num_nodes() != knn.num_nodes()) throw InputError("candidate views disagree on node count");
  std::vector<Triangle> all = enumerate_triangles(original, kSourceOriginal);
  auto from_knn = enumerate_triangles(knn, kSourceKnn);
  all.insert(all.end(), from_knn.begin(), from_knn.end());
  for (auto t : delaunay_triangles) {
    t.sources = kSourceDelaunay;
    all.push_back(t);
  }
  CandidateTriangleSet set(original.num_nodes(), std::move(all));
  if (set.size() > cap) {
    Rng rng = Rng::stream(cap_seed.value_or(0), "candidate-cap");
    return set.subsample(cap, rng);
  }
  return set;
}

// Text format: one "i j k source_mask" line per candidate.

inline void write_candidates(std::ostream& out, const CandidateTriangleSet& set) {
  out << "# n " << set.num_nodes() << '\n';
  for (const auto& t : set.triangles()) {
    out << t.i << ' ' << t.j << ' ' << t.k << ' ' << static_cast<int>(t.sources) << '\n';
  }
}

inline CandidateTriangleSet read_candidates(std::istream& in) {
  std::size_t n = 0;
  bool have_n = false;
  std::vector<Triangle> tris;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key;
      if (ls >> hash >> key >> n && key == "n") have_n = true;
      continue;
    }
    long long i = -1, j = -1, k = -1;
    int mask = 0;
    if (!(ls >> i >> j >> k >> mask) || i < 0 || j < 0 || k < 0 || mask <= 0 || mask > kAllSources) {
      throw InputError("candidate line " + std::to_string(line_no) + ": expected 'i j k source_mask'");
    }
    tris.push_back(Triangle::make(static_cast<Node>(i), static_cast<Node>(j), static_cast<Node>(k),
                                  static_cast<std::uint8_t>(mask)));
  }
  if (!have_n) {
    for (const auto& t : tris) n = std::max<std::size_t>(n, t.k + 1);
  }
  return CandidateTriangleSet(n, std::move(tris));
}

}  // namespace trigon
