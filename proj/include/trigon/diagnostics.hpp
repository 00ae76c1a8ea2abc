#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trigon/error.hpp"
#include "trigon/graph.hpp"
#include "trigon/rng.hpp"
#include "trigon/triangles.hpp"

namespace trigon {

// ---------------------------------------------------------------------------
// Balanced Forman curvature

/// Motif counts entering the balanced Forman curvature of one edge.
struct EdgeMotifs {
  std::size_t triangles = 0;    // t(u, v)
  std::size_t squares_u = 0;    // gamma_u
  std::size_t squares_v = 0;    // gamma_v
  std::size_t gamma_max = 0;    // Gamma_max(u, v)
};

/// Counts triangles and chordless 4-cycles u-k-w-v based at edge (u, v).
///
/// A 4-cycle u-k-w-v is chordless when k is not adjacent to v and w is not
/// adjacent to u. gamma_u counts the distinct k, gamma_v the distinct w, and
/// gamma_max is the largest number of such cycles passing through a single
/// node other than u and v.
inline EdgeMotifs edge_motifs(const Graph& g, Node u, Node v) {
  if (!g.has_edge(u, v)) {
    throw InputError("(" + std::to_string(u) + ", " + std::to_string(v) + ") is not an edge");
  }
  EdgeMotifs m;
  m.triangles = common_neighbors(g, u, v);
  std::map<Node, std::size_t> through_k;
  std::map<Node, std::size_t> through_w;
  for (Node k : g.neighbors(u)) {
    if (k == v || g.has_edge(k, v)) continue;
    for (Node w : g.neighbors(k)) {
      if (w == u || w == v || !g.has_edge(w, v) || g.has_edge(w, u)) continue;
      ++through_k[k];
      ++through_w[w];
    }
  }
  m.squares_u = through_k.size();
  m.squares_v = through_w.size();
  for (const auto& [node, c] : through_k) m.gamma_max = std::max(m.gamma_max, c);
  for (const auto& [node, c] : through_w) m.gamma_max = std::max(m.gamma_max, c);
  return m;
}

/// Balanced Forman curvature from degrees and motif counts. The 4-cycle
/// term is 0 when gamma_max is 0.
inline double balanced_forman_from_counts(std::size_t du, std::size_t dv, const EdgeMotifs& m) {
  const double a = static_cast<double>(du);
  const double b = static_cast<double>(dv);
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  const double t = static_cast<double>(m.triangles);
  double c = 2.0 / a + 2.0 / b - 2.0 + 2.0 * t / hi + t / lo;
  if (m.gamma_max > 0) {
    c += static_cast<double>(m.squares_u + m.squares_v) / (static_cast<double>(m.gamma_max) * hi);
  }
  return c;
}

inline double balanced_forman_curvature(const Graph& g, Node u, Node v) {
  return balanced_forman_from_counts(g.degree(u), g.degree(v), edge_motifs(g, u, v));
}

inline std::map<Edge, double> balanced_forman_curvature(const Graph& g) {
  std::map<Edge, double> out;
  g.for_each_edge([&](Node u, Node v) { out.emplace_hint(out.end(), Edge{u, v}, balanced_forman_curvature(g, u, v)); });
  return out;
}

// ---------------------------------------------------------------------------
// Effective resistance

inline constexpr std::size_t kDenseSwitchover = 3000;

/// Moore-Penrose pseudoinverse of the combinatorial Laplacian, computed per
/// connected component as (L_c + J/n_c)^{-1} - J/n_c.
inline Eigen::MatrixXd laplacian_pseudoinverse(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  std::size_t count = 0;
  auto comp = connected_components(g, &count);
  std::vector<std::vector<Node>> members(count);
  for (Node i = 0; i < g.num_nodes(); ++i) members[comp[i]].push_back(i);
  Eigen::MatrixXd pinv = Eigen::MatrixXd::Zero(n, n);
  for (const auto& nodes : members) {
    const auto k = static_cast<Eigen::Index>(nodes.size());
    if (k == 1) continue;
    Graph sub = induced_subgraph(g, nodes);
    Eigen::MatrixXd l = laplacian_matrix(sub);
    l.array() += 1.0 / static_cast<double>(k);
    Eigen::MatrixXd inv = l.llt().solve(Eigen::MatrixXd::Identity(k, k));
    inv.array() -= 1.0 / static_cast<double>(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) pinv(nodes[a], nodes[b]) = inv(a, b);
    }
  }
  return pinv;
}

namespace detail {

/// Jacobi-preconditioned CG for L x = b restricted to one component.
/// `b` must sum to zero over the component.
inline Eigen::VectorXd laplacian_cg(const Graph& g, const Eigen::VectorXd& b, double tol = 1e-12,
                                    std::size_t max_iter = 0) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  if (max_iter == 0) max_iter = 10 * static_cast<std::size_t>(n) + 100;
  auto apply = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd y(n);
    for (Node i = 0; i < g.num_nodes(); ++i) {
      double s = static_cast<double>(g.degree(i)) * x(i);
      for (Node j : g.neighbors(i)) s -= x(j);
      y(i) = s;
    }
    return y;
  };
  Eigen::VectorXd inv_diag(n);
  for (Node i = 0; i < g.num_nodes(); ++i) inv_diag(i) = g.degree(i) > 0 ? 1.0 / static_cast<double>(g.degree(i)) : 0.0;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd r = b;
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  const double stop = tol * std::max(b.norm(), 1e-300);
  for (std::size_t it = 0; it < max_iter && r.norm() > stop; ++it) {
    Eigen::VectorXd ap = apply(p);
    const double alpha = rz / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return x;
}

}  // namespace detail

/// Effective resistance between node pairs on the unit-weight combinatorial
/// Laplacian. Pairs in different components get +infinity.
///
/// Uses a dense pseudoinverse up to `dense_limit` nodes and per-pair
/// conjugate-gradient solves above.
inline std::vector<double> effective_resistance(const Graph& g, std::span<const std::pair<Node, Node>> pairs,
                                                std::size_t dense_limit = kDenseSwitchover) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  for (auto [u, v] : pairs) {
    if (u >= g.num_nodes() || v >= g.num_nodes()) throw InputError("resistance pair out of range");
  }
  auto comp = connected_components(g);
  std::vector<double> out;
  out.reserve(pairs.size());
  if (g.num_nodes() <= dense_limit) {
    Eigen::MatrixXd pinv = laplacian_pseudoinverse(g);
    for (auto [u, v] : pairs) {
      if (u == v) {
        out.push_back(0.0);
      } else if (comp[u] != comp[v]) {
        out.push_back(kInf);
      } else {
        out.push_back(pinv(u, u) + pinv(v, v) - 2.0 * pinv(u, v));
      }
    }
    return out;
  }
  for (auto [u, v] : pairs) {
    if (u == v) {
      out.push_back(0.0);
      continue;
    }
    if (comp[u] != comp[v]) {
      out.push_back(kInf);
      continue;
    }
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.num_nodes()));
    b(u) = 1.0;
    b(v) = -1.0;
    Eigen::VectorXd x = detail::laplacian_cg(g, b);
    out.push_back(x(u) - x(v));
  }
  return out;
}

inline std::vector<double> effective_resistance(const Graph& g, std::initializer_list<std::pair<Node, Node>> pairs,
                                                std::size_t dense_limit = kDenseSwitchover) {
  return effective_resistance(g, std::span<const std::pair<Node, Node>>(pairs.begin(), pairs.size()), dense_limit);
}

/// Resistance of every edge, in canonical edge order.
inline std::map<Edge, double> edge_resistances(const Graph& g, std::size_t dense_limit = kDenseSwitchover) {
  std::vector<std::pair<Node, Node>> pairs;
  pairs.reserve(g.num_edges());
  g.for_each_edge([&](Node u, Node v) { pairs.emplace_back(u, v); });
  auto r = effective_resistance(g, pairs, dense_limit);
  std::map<Edge, double> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) out.emplace_hint(out.end(), Edge{pairs[i].first, pairs[i].second}, r[i]);
  return out;
}

struct ResistanceBoundViolation {
  Edge edge;
  std::size_t triangles = 0;
  double resistance = 0.0;
  double bound = 0.0;
};

/// Edges where R_eff(u, v) > 2 / (t(u, v) + 2) + tolerance.
inline std::vector<ResistanceBoundViolation> resistance_triangle_bound_check(const Graph& g, double tolerance = 1e-9) {
  auto counts = triangle_count_per_edge(g);
  auto res = edge_resistances(g);
  std::vector<ResistanceBoundViolation> out;
  for (const auto& [e, t] : counts) {
    const double bound = 2.0 / (static_cast<double>(t) + 2.0);
    const double r = res.at(e);
    if (r > bound + tolerance) out.push_back({e, t, r, bound});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral gap

namespace detail {

/// y = L_norm x without materializing the matrix.
inline Eigen::VectorXd normalized_laplacian_apply(const Graph& g, const Eigen::VectorXd& inv_sqrt,
                                                  const Eigen::VectorXd& x) {
  Eigen::VectorXd y(x.size());
  for (Node i = 0; i < g.num_nodes(); ++i) {
    double s = inv_sqrt(i) > 0.0 ? x(i) : 0.0;
    for (Node j : g.neighbors(i)) s -= inv_sqrt(i) * inv_sqrt(j) * x(j);
    y(i) = s;
  }
  return y;
}

}  // namespace detail

/// Smallest eigenvalue of L_norm restricted to the complement of its known
/// null vector D^{1/2} 1, by Lanczos with full reorthogonalization.
inline double lanczos_spectral_gap(const Graph& g, std::size_t max_steps = 300, double tol = 1e-10,
                                   std::uint64_t seed = 0x5EED) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  if (n < 2) return 0.0;
  Eigen::VectorXd inv_sqrt(n);
  Eigen::VectorXd null(n);
  for (Node i = 0; i < g.num_nodes(); ++i) {
    const double d = static_cast<double>(g.degree(i));
    inv_sqrt(i) = d > 0 ? 1.0 / std::sqrt(d) : 0.0;
    null(i) = std::sqrt(d);
  }
  if (null.norm() > 0) null.normalize();

  auto project = [&](Eigen::VectorXd& v) { v -= null.dot(v) * null; };
  Rng rng(seed);
  Eigen::VectorXd q(n);
  for (Eigen::Index i = 0; i < n; ++i) q(i) = rng.normal();
  project(q);
  q.normalize();

  const auto steps = static_cast<Eigen::Index>(std::min<std::size_t>(max_steps, static_cast<std::size_t>(n - 1)));
  Eigen::MatrixXd basis(n, steps);
  std::vector<double> alpha, beta;
  double ritz = 0.0;
  for (Eigen::Index k = 0; k < steps; ++k) {
    basis.col(k) = q;
    Eigen::VectorXd w = detail::normalized_laplacian_apply(g, inv_sqrt, q);
    project(w);
    alpha.push_back(q.dot(w));
    // Full reorthogonalization (twice for stability).
    for (int pass = 0; pass < 2; ++pass) {
      w -= basis.leftCols(k + 1) * (basis.leftCols(k + 1).transpose() * w);
      project(w);
    }
    const double b = w.norm();

    const auto m = static_cast<Eigen::Index>(alpha.size());
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      t(i, i) = alpha[i];
      if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    ritz = es.eigenvalues()(0);
    const double residual = std::abs(b * es.eigenvectors()(m - 1, 0));
    if (residual < tol || b < 1e-14) break;
    beta.push_back(b);
    q = w / b;
  }
  return std::max(0.0, ritz);
}

/// All eigenvalues of L_norm, ascending.
inline Eigen::VectorXd normalized_laplacian_spectrum(const Graph& g) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normalized_laplacian(g), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

/// Second-smallest eigenvalue of the normalized Laplacian. Dense eigensolve up
/// to `dense_limit` nodes, Lanczos above.
inline double spectral_gap(const Graph& g, std::size_t dense_limit = kDenseSwitchover) {
  if (g.num_nodes() == 0) throw InputError("spectral gap of an empty graph");
  if (g.num_nodes() == 1) return 0.0;
  if (g.num_nodes() <= dense_limit) {
    const double l2 = normalized_laplacian_spectrum(g)(1);
    return std::clamp(l2, 0.0, 2.0);
  }
  return lanczos_spectral_gap(g);
}

// ---------------------------------------------------------------------------
// Cheeger constant and bounds

enum class CheegerForm {
  kVolumeBalanced,  // |dS| / min(vol S, vol(V\S)) over nonempty proper S
  kHalfCardinality  // |dS| / vol S over 0 < |S| <= |V|/2
};

inline constexpr std::size_t kExactCheegerLimit = 14;

/// Exact Cheeger constant by exhaustive subset search (n <= 14).
/// Disconnected graphs have h = 0.
inline double exact_cheeger_constant(const Graph& g, CheegerForm form = CheegerForm::kVolumeBalanced) {
  const std::size_t n = g.num_nodes();
  if (n > kExactCheegerLimit) throw InputError("exact Cheeger constant limited to n <= 14");
  if (n < 2) throw InputError("Cheeger constant needs at least 2 nodes");
  if (!is_connected(g)) return 0.0;
  const std::size_t total = volume(g);
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    std::size_t vol = 0;
    std::size_t cut = 0;
    for (Node i = 0; i < n; ++i) {
      if (!(mask >> i & 1u)) continue;
      vol += g.degree(i);
      for (Node j : g.neighbors(i)) {
        if (!(mask >> j & 1u)) ++cut;
      }
    }
    double denom = 0.0;
    if (form == CheegerForm::kVolumeBalanced) {
      denom = static_cast<double>(std::min(vol, total - vol));
    } else {
      if (2 * size > n) continue;
      denom = static_cast<double>(vol);
    }
    if (denom == 0.0) continue;
    best = std::min(best, static_cast<double>(cut) / denom);
  }
  return best;
}

struct CheegerBounds {
  double lambda2 = 0.0;
  double lower = 0.0;  // lambda2 / 2
  double upper = 0.0;  // sqrt(2 lambda2)
  std::optional<double> exact;
};

/// Bounds on h(G) from the Cheeger inequality; exact h when n <= 14.
inline CheegerBounds cheeger_bounds(const Graph& g, CheegerForm form = CheegerForm::kVolumeBalanced) {
  CheegerBounds b;
  if (!is_connected(g)) {
    b.exact = 0.0;
    return b;
  }
  b.lambda2 = spectral_gap(g);
  b.lower = b.lambda2 / 2.0;
  b.upper = std::sqrt(2.0 * b.lambda2);
  if (g.num_nodes() >= 2 && g.num_nodes() <= kExactCheegerLimit) b.exact = exact_cheeger_constant(g, form);
  return b;
}

struct DiameterBoundReport {
  double h = 0.0;
  std::size_t diameter = 0;
  std::size_t min_degree = 0;
  std::size_t volume = 0;
  /// d_min * (vol^{2/diam} - 1)
  double rearranged_rhs = 0.0;
  /// h >= rearranged_rhs - 1e-9 (the rearranged form as commonly quoted)
  bool rearranged_holds = false;
  /// 2 ln(vol) / ln(1 + h / d_min)
  double diameter_rhs = 0.0;
  /// diam <= diameter_rhs + 1e-9 (the diameter bound itself)
  bool diameter_bound_holds = false;
};

/// Evaluates the Cheeger-based diameter bound on a connected graph with
/// n <= 14, in both its original and rearranged forms.
inline DiameterBoundReport diameter_bound_check(const Graph& g, CheegerForm form = CheegerForm::kVolumeBalanced) {
  auto diam = diameter(g);
  if (!diam) throw InputError("diameter bound requires a connected graph");
  DiameterBoundReport r;
  r.h = exact_cheeger_constant(g, form);
  r.diameter = *diam;
  r.min_degree = g.min_degree();
  r.volume = volume(g);
  const double vol = static_cast<double>(r.volume);
  const double dmin = static_cast<double>(r.min_degree);
  r.rearranged_rhs = dmin * (std::pow(vol, 2.0 / static_cast<double>(r.diameter)) - 1.0);
  r.rearranged_holds = r.h >= r.rearranged_rhs - 1e-9;
  const double denom = std::log1p(r.h / dmin);
  r.diameter_rhs = denom > 0 ? 2.0 * std::log(vol) / denom : std::numeric_limits<double>::infinity();
  r.diameter_bound_holds = static_cast<double>(r.diameter) <= r.diameter_rhs + 1e-9;
  return r;
}

// ---------------------------------------------------------------------------
// Top-p resistance curve

struct CurvePoint {
  double p = 0.0;
  double mean_resistance = 0.0;
};

/// Mean resistance of the ceil(p * m) highest-resistance edges, per p.
inline std::vector<CurvePoint> top_p_resistance_curve(std::span<const double> edge_resistance,
                                                      std::span<const double> ps) {
  std::vector<double> sorted(edge_resistance.begin(), edge_resistance.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<double> prefix(sorted.size() + 1, 0.0);
  for (std::size_t i = 0; i < sorted.size(); ++i) prefix[i + 1] = prefix[i] + sorted[i];
  std::vector<CurvePoint> out;
  for (double p : ps) {
    if (!(p > 0.0 && p <= 1.0)) throw InputError("top-p fraction must lie in (0, 1]");
    if (sorted.empty()) {
      out.push_back({p, 0.0});
      continue;
    }
    auto count = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size()) - 1e-12));
    count = std::clamp<std::size_t>(count, 1, sorted.size());
    out.push_back({p, prefix[count] / static_cast<double>(count)});
  }
  return out;
}

inline std::vector<CurvePoint> top_p_resistance_curve(const Graph& g, std::span<const double> ps) {
  auto res = edge_resistances(g);
  std::vector<double> values;
  values.reserve(res.size());
  for (const auto& [e, r] : res) values.push_back(r);
  return top_p_resistance_curve(values, ps);
}

/// Default p-grid used for plotted curves.
inline std::vector<double> default_p_grid() {
  return {0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
}

// ---------------------------------------------------------------------------
// Report

struct DiagnosticsReport {
  std::size_t num_nodes = 0;
  std::size_t num_edges = 0;
  std::size_t num_components = 0;
  std::size_t num_triangles = 0;
  std::map<Edge, double> curvature;
  std::map<Edge, double> resistance;
  std::map<Edge, std::size_t> triangle_counts;
  double lambda2 = 0.0;
  Distance diameter;
  double cheeger_lower = 0.0;
  double cheeger_upper = 0.0;
  std::optional<double> cheeger_exact;
  std::vector<CurvePoint> curve;
};

inline DiagnosticsReport diagnose(const Graph& g, std::span<const double> ps) {
  DiagnosticsReport r;
  r.num_nodes = g.num_nodes();
  r.num_edges = g.num_edges();
  connected_components(g, &r.num_components);
  r.num_triangles = enumerate_triangles(g).size();
  r.curvature = balanced_forman_curvature(g);
  r.resistance = edge_resistances(g);
  r.triangle_counts = triangle_count_per_edge(g);
  r.lambda2 = g.num_nodes() > 0 ? spectral_gap(g) : 0.0;
  r.diameter = diameter(g);
  if (g.num_nodes() >= 2) {
    auto cb = cheeger_bounds(g);
    r.cheeger_lower = cb.lower;
    r.cheeger_upper = cb.upper;
    r.cheeger_exact = cb.exact;
  }
  std::vector<double> values;
  for (const auto& [e, v] : r.resistance) values.push_back(v);
  r.curve = top_p_resistance_curve(values, ps);
  return r;
}

/// Key-value header followed by a per-edge table; stable and diffable.
inline void write_report(std::ostream& out, const DiagnosticsReport& r) {
  out.precision(12);
  out << "nodes = " << r.num_nodes << '\n'
      << "edges = " << r.num_edges << '\n'
      << "components = " << r.num_components << '\n'
      << "triangles = " << r.num_triangles << '\n'
      << "lambda2 = " << r.lambda2 << '\n'
      << "diameter = " << to_string(r.diameter) << '\n'
      << "cheeger_lower = " << r.cheeger_lower << '\n'
      << "cheeger_upper = " << r.cheeger_upper << '\n'
      << "cheeger_exact = ";
  if (r.cheeger_exact) {
    out << *r.cheeger_exact;
  } else {
    out << "n/a";
  }
  out << '\n';
  double mean_curv = 0.0, min_curv = std::numeric_limits<double>::infinity();
  for (const auto& [e, c] : r.curvature) mean_curv += c, min_curv = std::min(min_curv, c);
  if (!r.curvature.empty()) mean_curv /= static_cast<double>(r.curvature.size());
  out << "curvature_mean = " << (r.curvature.empty() ? 0.0 : mean_curv) << '\n'
      << "curvature_min = " << (r.curvature.empty() ? 0.0 : min_curv) << '\n';
  out << "\n[edges]\nu\tv\ttriangles\tcurvature\tresistance\n";
  for (const auto& [e, c] : r.curvature) {
    out << e.u << '\t' << e.v << '\t' << r.triangle_counts.at(e) << '\t' << c << '\t' << r.resistance.at(e) << '\n';
  }
}

inline void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
  out.precision(12);
  out << "p,mean_resistance\n";
  for (const auto& c : curve) out << c.p << ',' << c.mean_resistance << '\n';
}

}  // namespace trigon
