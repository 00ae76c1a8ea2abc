#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trigon/error.hpp"

namespace trigon {

using Node = std::uint32_t;

struct Edge {
  Node u = 0;
  Node v = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Canonical edge list: u < v, sorted, deduplicated.
class EdgeList {
 public:
  EdgeList() = default;

  /// Canonicalizes arbitrary pairs. Self-loops are dropped.
  static EdgeList canonical(std::span<const std::pair<Node, Node>> pairs) {
    EdgeList out;
    out.edges_.reserve(pairs.size());
    for (auto [a, b] : pairs) {
      if (a == b) continue;
      out.edges_.push_back(a < b ? Edge{a, b} : Edge{b, a});
    }
    out.normalize();
    return out;
  }
  static EdgeList canonical(std::initializer_list<std::pair<Node, Node>> pairs) {
    return canonical(std::span<const std::pair<Node, Node>>(pairs.begin(), pairs.size()));
  }
  static EdgeList canonical(std::vector<Edge> edges) {
    EdgeList out;
    out.edges_.reserve(edges.size());
    for (auto e : edges) {
      if (e.u == e.v) continue;
      out.edges_.push_back(e.u < e.v ? e : Edge{e.v, e.u});
    }
    out.normalize();
    return out;
  }

  [[nodiscard]] std::size_t size() const { return edges_.size(); }
  [[nodiscard]] bool empty() const { return edges_.empty(); }
  [[nodiscard]] const std::vector<Edge>& edges() const { return edges_; }
  auto begin() const { return edges_.begin(); }
  auto end() const { return edges_.end(); }
  const Edge& operator[](std::size_t i) const { return edges_[i]; }

  friend bool operator==(const EdgeList&, const EdgeList&) = default;

 private:
  void normalize() {
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  }

  std::vector<Edge> edges_;
};

/// Immutable undirected simple graph in CSR form with sorted neighbor lists.
class Graph {
 public:
  Graph() : offsets_(1, 0) {}

  /// Builds a graph on `n` nodes. Self-loops are dropped and duplicates merged.
  /// Throws InputError if an endpoint is outside [0, n).
  Graph(std::size_t n, const EdgeList& edges) : n_(n), offsets_(n + 1, 0) {
    for (const auto& e : edges) {
      if (e.u >= n || e.v >= n) {
        throw InputError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                         ") has endpoint outside [0, " + std::to_string(n) + ")");
      }
    }
    m_ = edges.size();
    for (const auto& e : edges) {
      ++offsets_[e.u + 1];
      ++offsets_[e.v + 1];
    }
    for (std::size_t i = 0; i < n; ++i) offsets_[i + 1] += offsets_[i];
    neighbors_.resize(2 * m_);
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (const auto& e : edges) {
      neighbors_[cursor[e.u]++] = e.v;
      neighbors_[cursor[e.v]++] = e.u;
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::sort(neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
                neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]));
    }
  }

  [[nodiscard]] std::size_t num_nodes() const { return n_; }
  [[nodiscard]] std::size_t num_edges() const { return m_; }

  [[nodiscard]] std::span<const Node> neighbors(Node i) const {
    return {neighbors_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  [[nodiscard]] std::size_t degree(Node i) const { return offsets_[i + 1] - offsets_[i]; }

  [[nodiscard]] bool has_edge(Node u, Node v) const {
    if (u >= n_ || v >= n_) return false;
    auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), v);
  }

  [[nodiscard]] std::size_t min_degree() const {
    std::size_t d = n_ == 0 ? 0 : std::numeric_limits<std::size_t>::max();
    for (Node i = 0; i < n_; ++i) d = std::min(d, degree(i));
    return d;
  }

  /// Canonical (u < v) edge list in lexicographic order.
  [[nodiscard]] EdgeList edge_list() const {
    std::vector<Edge> out;
    out.reserve(m_);
    for_each_edge([&](Node u, Node v) { out.push_back({u, v}); });
    return EdgeList::canonical(std::move(out));
  }

  template <class F>
  void for_each_edge(F&& f) const {
    for (Node u = 0; u < n_; ++u) {
      for (Node v : neighbors(u)) {
        if (u < v) f(u, v);
      }
    }
  }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.n_ == b.n_ && a.offsets_ == b.offsets_ && a.neighbors_ == b.neighbors_;
  }

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<Node> neighbors_;
};

inline Graph build_graph(std::size_t n, const EdgeList& edges) { return Graph(n, edges); }

inline Graph build_graph(std::size_t n, std::initializer_list<std::pair<Node, Node>> pairs) {
  return Graph(n, EdgeList::canonical(pairs));
}

inline std::size_t degree(const Graph& g, Node i) {
  if (i >= g.num_nodes()) throw InputError("node " + std::to_string(i) + " out of range");
  return g.degree(i);
}

inline std::size_t volume(const Graph& g, std::span<const Node> nodes) {
  std::size_t vol = 0;
  for (Node i : nodes) vol += degree(g, i);
  return vol;
}

inline std::size_t volume(const Graph& g) { return 2 * g.num_edges(); }

/// Hop distance; std::nullopt stands for an infinite distance.
using Distance = std::optional<std::size_t>;

/// BFS distances from `source`; unreachable nodes get SIZE_MAX.
inline std::vector<std::size_t> bfs_distances(const Graph& g, Node source) {
  constexpr auto kUnreached = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(g.num_nodes(), kUnreached);
  std::vector<Node> frontier{source};
  dist[source] = 0;
  for (std::size_t head = 0; head < frontier.size(); ++head) {
    Node u = frontier[head];
    for (Node v : g.neighbors(u)) {
      if (dist[v] == kUnreached) {
        dist[v] = dist[u] + 1;
        frontier.push_back(v);
      }
    }
  }
  return dist;
}

inline Distance bfs_eccentricity(const Graph& g, Node i) {
  if (i >= g.num_nodes()) throw InputError("node " + std::to_string(i) + " out of range");
  std::size_t ecc = 0;
  for (auto d : bfs_distances(g, i)) {
    if (d == std::numeric_limits<std::size_t>::max()) return std::nullopt;
    ecc = std::max(ecc, d);
  }
  return ecc;
}

/// Exact diameter via all-sources BFS. Disconnected graphs yield std::nullopt.
inline Distance diameter(const Graph& g) {
  std::size_t diam = 0;
  for (Node i = 0; i < g.num_nodes(); ++i) {
    auto ecc = bfs_eccentricity(g, i);
    if (!ecc) return std::nullopt;
    diam = std::max(diam, *ecc);
  }
  return diam;
}

inline std::string to_string(const Distance& d) { return d ? std::to_string(*d) : "inf"; }

/// Connected component id per node, numbered in order of smallest member.
inline std::vector<std::size_t> connected_components(const Graph& g, std::size_t* count = nullptr) {
  constexpr auto kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> comp(g.num_nodes(), kNone);
  std::size_t next = 0;
  std::vector<Node> stack;
  for (Node s = 0; s < g.num_nodes(); ++s) {
    if (comp[s] != kNone) continue;
    comp[s] = next;
    stack.assign(1, s);
    while (!stack.empty()) {
      Node u = stack.back();
      stack.pop_back();
      for (Node v : g.neighbors(u)) {
        if (comp[v] == kNone) {
          comp[v] = next;
          stack.push_back(v);
        }
      }
    }
    ++next;
  }
  if (count) *count = next;
  return comp;
}

inline bool is_connected(const Graph& g) {
  std::size_t count = 0;
  connected_components(g, &count);
  return count <= 1;
}

/// Subgraph induced by `nodes` (relabelled 0..k-1 in the given order).
inline Graph induced_subgraph(const Graph& g, std::span<const Node> nodes) {
  std::vector<std::int64_t> index(g.num_nodes(), -1);
  for (std::size_t k = 0; k < nodes.size(); ++k) index[nodes[k]] = static_cast<std::int64_t>(k);
  std::vector<Edge> edges;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    for (Node v : g.neighbors(nodes[k])) {
      if (index[v] >= 0 && static_cast<std::size_t>(index[v]) > k) {
        edges.push_back({static_cast<Node>(k), static_cast<Node>(index[v])});
      }
    }
  }
  return Graph(nodes.size(), EdgeList::canonical(std::move(edges)));
}

/// Dense adjacency matrix.
inline Eigen::MatrixXd adjacency_matrix(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  g.for_each_edge([&](Node u, Node v) {
    a(u, v) = 1.0;
    a(v, u) = 1.0;
  });
  return a;
}

/// Combinatorial Laplacian D - A.
inline Eigen::MatrixXd laplacian_matrix(const Graph& g) {
  Eigen::MatrixXd l = -adjacency_matrix(g);
  for (Node i = 0; i < g.num_nodes(); ++i) l(i, i) = static_cast<double>(g.degree(i));
  return l;
}

/// I - D^{-1/2} A D^{-1/2}. Isolated nodes get a zero row and column
/// (their D^{-1/2} entry is taken as 0 and the diagonal is set to 0).
inline Eigen::MatrixXd normalized_laplacian(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Eigen::VectorXd inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto d = g.degree(static_cast<Node>(i));
    inv_sqrt(i) = d == 0 ? 0.0 : 1.0 / std::sqrt(static_cast<double>(d));
  }
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) l(i, i) = inv_sqrt(i) > 0.0 ? 1.0 : 0.0;
  g.for_each_edge([&](Node u, Node v) {
    const double w = inv_sqrt(u) * inv_sqrt(v);
    l(u, v) = -w;
    l(v, u) = -w;
  });
  return l;
}

// ---------------------------------------------------------------------------
// Edge-list text format: one "u<TAB>v" per line, '#' starts a comment line.

inline EdgeList read_edge_list(std::istream& in, std::size_t* max_node = nullptr) {
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  std::size_t hi = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    long long a = -1;
    long long b = -1;
    if (!(ls >> a >> b) || a < 0 || b < 0) {
      throw InputError("edge list line " + std::to_string(line_no) + ": expected two node ids");
    }
    edges.push_back({static_cast<Node>(a), static_cast<Node>(b)});
    hi = std::max<std::size_t>(hi, static_cast<std::size_t>(std::max(a, b)));
    any = true;
  }
  if (max_node) *max_node = any ? hi + 1 : 0;
  return EdgeList::canonical(std::move(edges));
}

inline EdgeList read_edge_list(const std::string& path, std::size_t* max_node = nullptr) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open edge list '" + path + "'");
  return read_edge_list(in, max_node);
}

inline void write_edge_list(std::ostream& out, const EdgeList& edges) {
  for (const auto& e : edges) out << e.u << '\t' << e.v << '\n';
}

}  // namespace trigon
