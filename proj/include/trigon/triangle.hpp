#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <tuple>

#include "trigon/graph.hpp"

namespace trigon {

/// Bit flags naming where a candidate triangle came from.
enum Source : std::uint8_t {
  kSourceOriginal = 1u << 0,
  kSourceKnn = 1u << 1,
  kSourceDelaunay = 1u << 2,
};

inline constexpr std::uint8_t kAllSources = kSourceOriginal | kSourceKnn | kSourceDelaunay;

/// Node triple with i < j < k.
struct Triangle {
  Node i = 0;
  Node j = 0;
  Node k = 0;
  std::uint8_t sources = 0;

  static Triangle make(Node a, Node b, Node c, std::uint8_t sources) {
    std::array<Node, 3> v{a, b, c};
    std::sort(v.begin(), v.end());
    if (v[0] == v[1] || v[1] == v[2]) {
      throw InputError("triangle with repeated node " + std::to_string(v[1]));
    }
    return {v[0], v[1], v[2], sources};
  }

  [[nodiscard]] std::array<Node, 3> nodes() const { return {i, j, k}; }
  [[nodiscard]] std::array<Edge, 3> edges() const { return {Edge{i, j}, Edge{j, k}, Edge{i, k}}; }

  /// Ordering and equality ignore the source mask.
  [[nodiscard]] bool same_nodes(const Triangle& o) const { return i == o.i && j == o.j && k == o.k; }
  friend bool operator<(const Triangle& a, const Triangle& b) {
    return std::tie(a.i, a.j, a.k) < std::tie(b.i, b.j, b.k);
  }
  friend bool operator==(const Triangle&, const Triangle&) = default;
};

}  // namespace trigon
