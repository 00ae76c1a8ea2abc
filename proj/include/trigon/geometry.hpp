#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trigon/error.hpp"
#include "trigon/graph.hpp"
#include "trigon/rng.hpp"
#include "trigon/triangle.hpp"

namespace trigon {

/// Dense N x d node feature (or embedding) matrix; row i belongs to node i.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
    if (!values_.allFinite()) throw InputError("feature matrix contains NaN or Inf");
  }

  [[nodiscard]] std::size_t rows() const { return static_cast<std::size_t>(values_.rows()); }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(values_.cols()); }
  [[nodiscard]] const Eigen::MatrixXd& values() const { return values_; }
  [[nodiscard]] auto row(std::size_t i) const { return values_.row(static_cast<Eigen::Index>(i)); }

  friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) {
    return a.values_.rows() == b.values_.rows() && a.values_.cols() == b.values_.cols() &&
           a.values_ == b.values_;
  }

 private:
  Eigen::MatrixXd values_;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

using PlanarPointSet = std::vector<Point2>;

enum class Metric { kEuclidean, kCosine };

namespace detail {

inline double metric_distance(const Eigen::MatrixXd& x, const Eigen::VectorXd& norms, Eigen::Index a,
                              Eigen::Index b, Metric metric) {
  if (metric == Metric::kEuclidean) return (x.row(a) - x.row(b)).squaredNorm();
  const double denom = norms(a) * norms(b);
  if (denom == 0.0) return 1.0;
  return 1.0 - x.row(a).dot(x.row(b)) / denom;
}

}  // namespace detail

/// The k nearest neighbors of every node (exact, ties broken by smaller index).
inline std::vector<std::vector<Node>> knn_lists(const FeatureMatrix& features, std::size_t k,
                                                Metric metric = Metric::kEuclidean) {
  const std::size_t n = features.rows();
  if (k < 1 || k >= n) {
    throw InputError("k-NN requires 1 <= k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  }
  const auto& x = features.values();
  Eigen::VectorXd norms = x.rowwise().norm();
  std::vector<std::vector<Node>> out(n);
  std::vector<std::pair<double, Node>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back(detail::metric_distance(x, norms, static_cast<Eigen::Index>(i),
                                                static_cast<Eigen::Index>(j), metric),
                        static_cast<Node>(j));
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    out[i].reserve(k);
    for (std::size_t r = 0; r < k; ++r) out[i].push_back(cand[r].second);
  }
  return out;
}

/// Union-symmetrized k-NN graph: (i, j) is an edge iff j is among the k
/// nearest neighbors of i or i is among those of j.
inline Graph knn_graph(const FeatureMatrix& features, std::size_t k, Metric metric = Metric::kEuclidean) {
  auto lists = knn_lists(features, k, metric);
  std::vector<Edge> edges;
  edges.reserve(features.rows() * k);
  for (std::size_t i = 0; i < lists.size(); ++i) {
    for (Node j : lists[i]) edges.push_back({static_cast<Node>(i), j});
  }
  return Graph(features.rows(), EdgeList::canonical(std::move(edges)));
}

/// Projects the rows of `features` onto their top two principal directions.
///
/// Rows are centered first. Each principal direction is signed so that its
/// largest-magnitude loading is positive. If fewer than two directions carry
/// variance, the missing axes are filled with a deterministic per-node jitter
/// so the returned points stay distinct.
inline PlanarPointSet project_2d(const FeatureMatrix& features) {
  const std::size_t n = features.rows();
  if (n < 3) throw InputError("projection needs at least 3 points");
  Eigen::MatrixXd centered = features.values().rowwise() - features.values().colwise().mean();

  Eigen::MatrixXd coords = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 2);
  double top = 0.0;
  int usable = 0;
  if (centered.cols() > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    top = sv.size() > 0 ? sv(0) : 0.0;
    const double tol = 1e-10 * std::max(1.0, top);
    for (Eigen::Index a = 0; a < std::min<Eigen::Index>(2, sv.size()); ++a) {
      if (sv(a) <= tol) break;
      Eigen::VectorXd dir = svd.matrixV().col(a);
      Eigen::Index arg = 0;
      dir.cwiseAbs().maxCoeff(&arg);
      if (dir(arg) < 0) dir = -dir;
      coords.col(a) = centered * dir;
      ++usable;
    }
  }
  if (usable < 2) {
    const double scale = 1e-6 * std::max(1.0, top / std::sqrt(static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) {
      for (int a = usable; a < 2; ++a) {
        const std::uint64_t h = mix64(mix64(i) + static_cast<std::uint64_t>(a) * 0x5851F42D4C957F2DULL);
        const double u = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0, 1)
        coords(static_cast<Eigen::Index>(i), a) = scale * (2.0 * u - 1.0);
      }
    }
  }
  PlanarPointSet out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = {coords(static_cast<Eigen::Index>(i), 0), coords(static_cast<Eigen::Index>(i), 1)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Predicates

/// Twice the signed area of (a, b, c); positive when counter-clockwise.
inline double orient2d(const Point2& a, const Point2& b, const Point2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

/// In-circle determinant for counter-clockwise (a, b, c) and query d, divided
/// by the fourth power of the largest coordinate span among the four points so
/// the 1e-9 tolerance band is scale free. Positive means d is inside.
inline double incircle_normalized(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  const double ad = adx * adx + ady * ady;
  const double bd = bdx * bdx + bdy * bdy;
  const double cd = cdx * cdx + cdy * cdy;
  const double det = adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
  const double scale = std::max({ad, bd, cd});
  if (scale == 0.0) return 0.0;
  return det / (scale * scale);
}

inline constexpr double kIncircleTolerance = 1e-9;

struct DelaunayResult {
  Graph graph;
  std::vector<Triangle> triangles;
};

namespace detail {

/// Incremental Bowyer-Watson over ghost triangles. Hull edges are closed off
/// by triangles whose third vertex is the point at infinity, which avoids a
/// finite super-triangle and its precision problems.
class BowyerWatson {
 public:
  static constexpr std::uint32_t kGhost = std::numeric_limits<std::uint32_t>::max();

  explicit BowyerWatson(const std::vector<Point2>& pts) : pts_(pts) {}

  /// Returns counter-clockwise real triangles as vertex triples.
  std::vector<std::array<std::uint32_t, 3>> run() {
    const std::size_t n = pts_.size();
    // First three non-collinear points seed the triangulation.
    std::uint32_t a = 0, b = 1, c = kGhost;
    for (std::uint32_t i = 2; i < n; ++i) {
      if (std::abs(orient2d(pts_[a], pts_[b], pts_[i])) > kOrientEps * span_sq(a, b, i)) {
        c = i;
        break;
      }
    }
    if (c == kGhost) throw DegenerateError("Delaunay triangulation: all points are collinear");
    if (orient2d(pts_[a], pts_[b], pts_[c]) < 0) std::swap(a, b);

    const auto t0 = add({a, b, c});
    const auto g0 = add({b, a, kGhost});
    const auto g1 = add({c, b, kGhost});
    const auto g2 = add({a, c, kGhost});
    link(t0, g0);
    link(t0, g1);
    link(t0, g2);
    link(g0, g1);
    link(g1, g2);
    link(g2, g0);

    for (std::uint32_t p = 0; p < n; ++p) {
      if (p == a || p == b || p == c) continue;
      insert(p);
    }

    std::vector<std::array<std::uint32_t, 3>> out;
    for (const auto& t : tris_) {
      if (t.alive && t.v[2] != kGhost) out.push_back(t.v);
    }
    return out;
  }

 private:
  static constexpr double kOrientEps = 1e-13;
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  struct Tri {
    // Real triangles are counter-clockwise. Ghost triangles are (x, y, ghost):
    // the hull edge x->y with the exterior on its left.
    std::array<std::uint32_t, 3> v{};
    std::array<std::uint32_t, 3> nb{kNone, kNone, kNone};  // nb[e] shares edge (v[e], v[e+1])
    bool alive = true;
  };

  double span_sq(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
    auto d2 = [&](std::uint32_t x, std::uint32_t y) {
      const double dx = pts_[x].x - pts_[y].x, dy = pts_[x].y - pts_[y].y;
      return dx * dx + dy * dy;
    };
    return std::max({d2(i, j), d2(j, k), d2(i, k)});
  }

  bool positive_orient(std::uint32_t x, std::uint32_t y, std::uint32_t p) const {
    return orient2d(pts_[x], pts_[y], pts_[p]) > kOrientEps * span_sq(x, y, p);
  }

  std::uint32_t add(std::array<std::uint32_t, 3> v) {
    if (v[0] == kGhost) v = {v[1], v[2], v[0]};
    else if (v[1] == kGhost) v = {v[2], v[0], v[1]};
    Tri t;
    t.v = v;
    tris_.push_back(t);
    return static_cast<std::uint32_t>(tris_.size() - 1);
  }

  // Links two triangles that share an edge (in opposite orientation).
  void link(std::uint32_t s, std::uint32_t t) {
    for (int e = 0; e < 3; ++e) {
      const auto x = tris_[s].v[e], y = tris_[s].v[(e + 1) % 3];
      for (int f = 0; f < 3; ++f) {
        if (tris_[t].v[f] == y && tris_[t].v[(f + 1) % 3] == x) {
          tris_[s].nb[e] = t;
          tris_[t].nb[f] = s;
          return;
        }
      }
    }
  }

  bool in_conflict(const Tri& t, std::uint32_t p) const {
    const auto& q = pts_[p];
    if (t.v[2] == kGhost) {
      const auto& x = pts_[t.v[0]];
      const auto& y = pts_[t.v[1]];
      const double o = orient2d(x, y, q);
      const double s = span_sq(t.v[0], t.v[1], p);
      if (o > kOrientEps * s) return true;
      if (o < -kOrientEps * s) return false;
      // Collinear with the hull edge: conflict only strictly inside the segment.
      const double dot = (q.x - x.x) * (y.x - x.x) + (q.y - x.y) * (y.y - x.y);
      const double len = (y.x - x.x) * (y.x - x.x) + (y.y - x.y) * (y.y - x.y);
      return dot > 0 && dot < len;
    }
    return incircle_normalized(pts_[t.v[0]], pts_[t.v[1]], pts_[t.v[2]], q) > kIncircleTolerance;
  }

  bool contains(const Tri& t, std::uint32_t p) const {
    if (t.v[2] == kGhost) return false;
    for (int e = 0; e < 3; ++e) {
      const auto x = t.v[e], y = t.v[(e + 1) % 3];
      if (orient2d(pts_[x], pts_[y], pts_[p]) < -kOrientEps * span_sq(x, y, p)) return false;
    }
    return true;
  }

  std::uint32_t locate(std::uint32_t p) const {
    std::uint32_t ghost_hit = kNone;
    for (std::uint32_t t = 0; t < tris_.size(); ++t) {
      if (!tris_[t].alive) continue;
      if (contains(tris_[t], p)) return t;
      if (ghost_hit == kNone && tris_[t].v[2] == kGhost && in_conflict(tris_[t], p)) ghost_hit = t;
    }
    if (ghost_hit == kNone) throw DegenerateError("Delaunay triangulation: point location failed");
    return ghost_hit;
  }

  void insert(std::uint32_t p) {
    std::vector<std::uint32_t> cavity{locate(p)};
    std::vector<char> in_cavity(tris_.size(), 0);
    in_cavity[cavity[0]] = 1;
    for (std::size_t h = 0; h < cavity.size(); ++h) {
      for (auto nb : tris_[cavity[h]].nb) {
        if (nb != kNone && !in_cavity[nb] && in_conflict(tris_[nb], p)) {
          in_cavity[nb] = 1;
          cavity.push_back(nb);
        }
      }
    }

    struct Boundary {
      std::uint32_t x, y, outside;
    };
    std::vector<Boundary> boundary;
    // Grow the cavity until every real boundary edge sees p strictly on its left.
    for (bool grown = true; grown;) {
      grown = false;
      boundary.clear();
      for (auto t : cavity) {
        for (int e = 0; e < 3; ++e) {
          const auto nb = tris_[t].nb[e];
          if (in_cavity[nb]) continue;
          const auto x = tris_[t].v[e], y = tris_[t].v[(e + 1) % 3];
          if (x != kGhost && y != kGhost && !positive_orient(x, y, p)) {
            in_cavity[nb] = 1;
            cavity.push_back(nb);
            grown = true;
            break;
          }
          boundary.push_back({x, y, nb});
        }
        if (grown) break;
      }
    }

    for (auto t : cavity) tris_[t].alive = false;
    std::vector<std::uint32_t> created;
    created.reserve(boundary.size());
    for (const auto& e : boundary) {
      const auto t = add({e.x, e.y, p});
      created.push_back(t);
      link(t, e.outside);
    }
    // Stitch the fan around p.
    std::unordered_map<std::uint64_t, std::uint32_t> by_start;
    for (auto t : created) {
      // Edge leaving p within triangle t.
      const auto& v = tris_[t].v;
      int ip = v[0] == p ? 0 : (v[1] == p ? 1 : 2);
      by_start[v[(ip + 1) % 3]] = t;
    }
    for (auto t : created) {
      const auto& v = tris_[t].v;
      int ip = v[0] == p ? 0 : (v[1] == p ? 1 : 2);
      const auto before = v[(ip + 2) % 3];  // edge (before, p) in t
      auto it = by_start.find(before);
      if (it != by_start.end()) link(t, it->second);
    }
  }

  const std::vector<Point2>& pts_;
  std::vector<Tri> tris_;
};

}  // namespace detail

/// Delaunay triangulation of a planar point set (Bowyer-Watson).
///
/// Coordinates are normalized to the unit box before triangulating. Exact
/// duplicate points are separated by a deterministic offset of magnitude
/// 1e-9 * index so that every input index owns a vertex.
inline DelaunayResult delaunay(const PlanarPointSet& points) {
  const std::size_t n = points.size();
  if (n < 3) throw InputError("Delaunay triangulation needs at least 3 points");
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InputError("non-finite point coordinate");
  }
  double lo_x = points[0].x, hi_x = lo_x, lo_y = points[0].y, hi_y = lo_y;
  for (const auto& p : points) {
    lo_x = std::min(lo_x, p.x), hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y), hi_y = std::max(hi_y, p.y);
  }
  const double span = std::max(hi_x - lo_x, hi_y - lo_y);
  const double inv = span > 0 ? 1.0 / span : 1.0;
  std::vector<Point2> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = {(points[i].x - lo_x) * inv, (points[i].y - lo_y) * inv};

  std::vector<std::uint32_t> order(n);
  for (std::uint32_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return std::tie(pts[a].x, pts[a].y, a) < std::tie(pts[b].x, pts[b].y, b);
  });
  constexpr double kGolden = std::numbers::pi * (3.0 - 2.2360679774997896964);
  for (std::size_t r = 1; r < n; ++r) {
    const auto i = order[r];
    if (points[i] == points[order[r - 1]] || pts[i] == pts[order[r - 1]]) {
      const double eps = 1e-9 * static_cast<double>(i);
      pts[i].x += eps * std::cos(kGolden * i);
      pts[i].y += eps * std::sin(kGolden * i);
    }
  }

  detail::BowyerWatson bw(pts);
  auto raw = bw.run();
  DelaunayResult out;
  out.triangles.reserve(raw.size());
  std::vector<Edge> edges;
  edges.reserve(3 * raw.size());
  for (const auto& t : raw) {
    out.triangles.push_back(Triangle::make(t[0], t[1], t[2], kSourceDelaunay));
    edges.push_back({t[0], t[1]});
    edges.push_back({t[1], t[2]});
    edges.push_back({t[0], t[2]});
  }
  std::sort(out.triangles.begin(), out.triangles.end());
  out.graph = Graph(n, EdgeList::canonical(std::move(edges)));
  return out;
}

inline void write_points_csv(std::ostream& out, const PlanarPointSet& pts) {
  out.precision(17);
  out << "x,y\n";
  for (const auto& p : pts) out << p.x << ',' << p.y << '\n';
}

}  // namespace trigon
