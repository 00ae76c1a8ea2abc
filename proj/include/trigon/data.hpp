#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trigon/error.hpp"
#include "trigon/geometry.hpp"
#include "trigon/graph.hpp"
#include "trigon/rng.hpp"

namespace trigon {

using Label = std::uint32_t;

enum class Role : std::uint8_t { kTrain, kVal, kTest };

/// Disjoint train/validation/test node lists (each sorted).
struct Split {
  std::vector<Node> train;
  std::vector<Node> val;
  std::vector<Node> test;
  bool stratified = true;

  [[nodiscard]] std::vector<Role> roles(std::size_t n) const {
    std::vector<Role> r(n, Role::kTest);
    for (Node i : train) r[i] = Role::kTrain;
    for (Node i : val) r[i] = Role::kVal;
    return r;
  }
  friend bool operator==(const Split& a, const Split& b) {
    return a.train == b.train && a.val == b.val && a.test == b.test;
  }
};

struct Dataset {
  std::string name;
  Graph graph;
  FeatureMatrix features;
  std::vector<Label> labels;
  std::size_t num_classes = 0;
  Split split;
  /// Human-readable messages produced while loading or generating.
  std::vector<std::string> notes;

  [[nodiscard]] std::size_t num_nodes() const { return graph.num_nodes(); }
};

/// Fraction of edges whose endpoints share a label.
inline double edge_homophily(const Graph& g, std::span<const Label> labels) {
  if (g.num_edges() == 0) return 0.0;
  std::size_t same = 0;
  g.for_each_edge([&](Node u, Node v) { same += labels[u] == labels[v]; });
  return static_cast<double>(same) / static_cast<double>(g.num_edges());
}

inline std::size_t count_classes(std::span<const Label> labels) {
  Label hi = 0;
  for (auto l : labels) hi = std::max(hi, l);
  return labels.empty() ? 0 : hi + 1;
}

/// Validates the invariants every Dataset must satisfy.
inline void validate(const Dataset& d) {
  const std::size_t n = d.graph.num_nodes();
  if (d.features.rows() != n) throw InputError("feature rows (" + std::to_string(d.features.rows()) + ") != nodes (" + std::to_string(n) + ")");
  if (d.labels.size() != n) throw InputError("label count does not match node count");
  for (auto l : d.labels) {
    if (l >= d.num_classes) throw InputError("label outside [0, C)");
  }
  std::vector<int> seen(n, 0);
  for (const auto* part : {&d.split.train, &d.split.val, &d.split.test}) {
    for (Node i : *part) {
      if (i >= n) throw InputError("split references node outside [0, n)");
      ++seen[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (seen[i] != 1) throw InputError("split masks are not a partition (node " + std::to_string(i) + ")");
  }
}

// ---------------------------------------------------------------------------
// Splits

/// Stratified 60/20/20 split with a seeded shuffle per class. Each class
/// contributes round(0.6 n_c) training and round(0.2 n_c) validation nodes;
/// the remainder goes to test. Falls back to an unstratified split when some
/// class has fewer than 3 nodes.
inline Split make_split(std::size_t n, std::span<const Label> labels, std::uint64_t seed) {
  if (n < 5) throw InputError("split needs at least 5 nodes");
  if (labels.size() != n) throw InputError("label count does not match node count");
  Rng rng = Rng::stream(seed, "split");
  const std::size_t classes = count_classes(labels);
  std::vector<std::vector<Node>> by_class(classes);
  for (Node i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  bool stratify = true;
  for (const auto& members : by_class) {
    if (!members.empty() && members.size() < 3) stratify = false;
  }
  if (!stratify) {
    by_class.assign(1, {});
    for (Node i = 0; i < n; ++i) by_class[0].push_back(i);
  }
  Split s;
  s.stratified = stratify;
  for (auto& members : by_class) {
    rng.shuffle(members);
    const double nc = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(0.6 * nc));
    const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::llround(0.2 * nc)));
    for (std::size_t r = 0; r < members.size(); ++r) {
      auto& dst = r < n_train ? s.train : (r < n_train + n_val ? s.val : s.test);
      dst.push_back(members[r]);
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// ---------------------------------------------------------------------------
// Directory format

namespace detail {

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("missing file '" + p.string() + "'");
  return in;
}

inline bool skip_line(const std::string& line) {
  auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

}  // namespace detail

/// Loads `edges.tsv`, `features.tsv`, `labels.tsv` and optional `split.tsv`
/// from `dir`. Node ids are compacted in ascending order of the ids listed in
/// features.tsv; class ids are compacted the same way. Without split.tsv a
/// stratified split is drawn with `split_seed`.
inline Dataset load_dataset(const std::filesystem::path& dir, std::uint64_t split_seed = 0) {
  Dataset d;
  d.name = dir.filename().string();
  if (d.name.empty()) d.name = dir.parent_path().filename().string();

  // features.tsv: id then d reals
  std::map<long long, std::vector<double>> rows;
  {
    auto in = detail::open_in(dir / "features.tsv");
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    bool first = true;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::skip_line(line)) continue;
      std::istringstream ls(line);
      long long id;
      if (!(ls >> id)) throw InputError("features.tsv line " + std::to_string(line_no) + ": missing node id");
      std::vector<double> vals;
      std::string tok;
      while (ls >> tok) {
        try {
          std::size_t used = 0;
          vals.push_back(std::stod(tok, &used));
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw InputError("features.tsv line " + std::to_string(line_no) + ": bad number '" + tok + "'");
        }
      }
      if (first) {
        width = vals.size();
        first = false;
      } else if (vals.size() != width) {
        throw InputError("features.tsv line " + std::to_string(line_no) + ": ragged row (" + std::to_string(vals.size()) +
                         " values, expected " + std::to_string(width) + ")");
      }
      if (!rows.emplace(id, std::move(vals)).second) {
        throw InputError("features.tsv: duplicate node id " + std::to_string(id));
      }
    }
  }
  std::map<long long, Node> index;
  for (const auto& [id, vals] : rows) index.emplace(id, static_cast<Node>(index.size()));
  const std::size_t n = index.size();
  if (n == 0) throw InputError("features.tsv has no rows");
  const auto width = static_cast<Eigen::Index>(rows.begin()->second.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), width);
  for (const auto& [id, vals] : rows) {
    for (Eigen::Index c = 0; c < width; ++c) x(index.at(id), c) = vals[static_cast<std::size_t>(c)];
  }
  d.features = FeatureMatrix(std::move(x));

  auto lookup = [&](long long id, const char* file, std::size_t line_no) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw InputError(std::string(file) + " line " + std::to_string(line_no) + ": unknown node id " + std::to_string(id));
    }
    return it->second;
  };

  // labels.tsv
  {
    auto in = detail::open_in(dir / "labels.tsv");
    std::vector<long long> raw(n, 0);
    std::vector<char> have(n, 0);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::skip_line(line)) continue;
      std::istringstream ls(line);
      long long id, cls;
      if (!(ls >> id >> cls)) throw InputError("labels.tsv line " + std::to_string(line_no) + ": expected 'id class'");
      const Node i = lookup(id, "labels.tsv", line_no);
      raw[i] = cls;
      have[i] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!have[i]) throw InputError("labels.tsv: no label for node " + std::to_string(i));
    }
    std::map<long long, Label> classes;
    for (auto c : raw) classes.emplace(c, 0);
    Label next = 0;
    bool gap = false;
    for (auto& [c, dense] : classes) {
      if (c != static_cast<long long>(next)) gap = true;
      dense = next++;
    }
    if (gap) {
      std::string msg = "labels remapped:";
      for (const auto& [c, dense] : classes) msg += " " + std::to_string(c) + "->" + std::to_string(dense);
      d.notes.push_back(msg);
    }
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.labels[i] = classes.at(raw[i]);
    d.num_classes = classes.size();
  }

  // edges.tsv
  {
    auto in = detail::open_in(dir / "edges.tsv");
    std::vector<Edge> edges;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::skip_line(line)) continue;
      std::istringstream ls(line);
      long long a, b;
      if (!(ls >> a >> b)) throw InputError("edges.tsv line " + std::to_string(line_no) + ": expected two node ids");
      edges.push_back({lookup(a, "edges.tsv", line_no), lookup(b, "edges.tsv", line_no)});
    }
    d.graph = Graph(n, EdgeList::canonical(std::move(edges)));
  }

  // split.tsv (optional)
  const auto split_path = dir / "split.tsv";
  if (std::filesystem::exists(split_path)) {
    auto in = detail::open_in(split_path);
    std::vector<int> role(n, -1);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::skip_line(line)) continue;
      std::istringstream ls(line);
      long long id;
      std::string which;
      if (!(ls >> id >> which)) throw InputError("split.tsv line " + std::to_string(line_no) + ": expected 'id role'");
      const Node i = lookup(id, "split.tsv", line_no);
      if (which == "train") role[i] = 0;
      else if (which == "val") role[i] = 1;
      else if (which == "test") role[i] = 2;
      else throw InputError("split.tsv line " + std::to_string(line_no) + ": unknown role '" + which + "'");
    }
    for (Node i = 0; i < n; ++i) {
      if (role[i] < 0) throw InputError("split.tsv: node " + std::to_string(i) + " has no role");
      (role[i] == 0 ? d.split.train : role[i] == 1 ? d.split.val : d.split.test).push_back(i);
    }
  } else if (n < 5) {
    d.split.train.resize(n);
    std::iota(d.split.train.begin(), d.split.train.end(), Node{0});
    d.split.stratified = false;
    d.notes.push_back("fewer than 5 nodes and no split.tsv; every node is a training node");
  } else {
    d.split = make_split(n, d.labels, split_seed);
    if (!d.split.stratified) d.notes.push_back("a class has fewer than 3 nodes; split is unstratified");
  }
  validate(d);
  return d;
}

/// Writes the directory format with compact ids; load_dataset reads it back unchanged.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "edges.tsv");
    write_edge_list(out, d.graph.edge_list());
  }
  {
    std::ofstream out(dir / "features.tsv");
    out.precision(17);
    for (std::size_t i = 0; i < d.features.rows(); ++i) {
      out << i;
      for (std::size_t c = 0; c < d.features.dim(); ++c) out << '\t' << d.features.row(i)(static_cast<Eigen::Index>(c));
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "labels.tsv");
    for (std::size_t i = 0; i < d.labels.size(); ++i) out << i << '\t' << d.labels[i] << '\n';
  }
  {
    std::ofstream out(dir / "split.tsv");
    auto roles = d.split.roles(d.num_nodes());
    for (std::size_t i = 0; i < roles.size(); ++i) {
      out << i << '\t' << (roles[i] == Role::kTrain ? "train" : roles[i] == Role::kVal ? "val" : "test") << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generators

struct SbmConfig {
  std::size_t n = 400;
  std::size_t blocks = 2;
  double p_intra = 0.02;
  double p_inter = 0.10;
  /// Distance between any two class means, in units of the noise std.
  double separation = 1.5;
  double noise = 1.0;
  std::size_t dim = 16;
};

/// Block of node i: contiguous, balanced blocks.
inline Label sbm_block(std::size_t i, std::size_t n, std::size_t blocks) {
  return static_cast<Label>(i * blocks / n);
}

/// One SBM draw (may be disconnected).
inline Graph sbm_graph(std::size_t n, std::size_t blocks, double p_intra, double p_inter, Rng& rng) {
  std::vector<Edge> edges;
  for (Node u = 0; u < n; ++u) {
    for (Node v = u + 1; v < n; ++v) {
      const double p = sbm_block(u, n, blocks) == sbm_block(v, n, blocks) ? p_intra : p_inter;
      if (rng.bernoulli(p)) edges.push_back({u, v});
    }
  }
  return Graph(n, EdgeList::canonical(std::move(edges)));
}

namespace detail {

/// Keeps the largest connected component (smallest id wins ties).
inline void keep_largest_component(Dataset& d) {
  std::size_t count = 0;
  auto comp = connected_components(d.graph, &count);
  std::vector<std::size_t> size(count, 0);
  for (auto c : comp) ++size[c];
  const auto best = static_cast<std::size_t>(std::max_element(size.begin(), size.end()) - size.begin());
  std::vector<Node> keep;
  for (Node i = 0; i < d.graph.num_nodes(); ++i) {
    if (comp[i] == best) keep.push_back(i);
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(d.features.dim()));
  std::vector<Label> labels;
  for (std::size_t r = 0; r < keep.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = d.features.row(keep[r]);
    labels.push_back(d.labels[keep[r]]);
  }
  d.graph = induced_subgraph(d.graph, keep);
  d.features = FeatureMatrix(std::move(x));
  // Compact labels in case a class vanished.
  std::map<Label, Label> remap;
  for (auto l : labels) remap.emplace(l, 0);
  Label next = 0;
  for (auto& [l, dense] : remap) dense = next++;
  for (auto& l : labels) l = remap.at(l);
  d.labels = std::move(labels);
  d.num_classes = remap.size();
  d.notes.push_back("kept largest connected component (" + std::to_string(keep.size()) + " nodes)");
}

inline constexpr int kConnectRetries = 20;

}  // namespace detail

/// Stochastic block model with Gaussian class-conditional features. Class
/// means sit on a scaled simplex (c-th basis vector) so every pair of means is
/// `separation * noise` apart. Disconnected draws are retried with derived
/// seeds up to 20 times; after that the largest component is kept.
inline Dataset synth_sbm(const SbmConfig& cfg, std::uint64_t seed) {
  if (cfg.p_intra < 0 || cfg.p_intra > 1 || cfg.p_inter < 0 || cfg.p_inter > 1) {
    throw InputError("SBM probabilities must lie in [0, 1]");
  }
  if (cfg.blocks < 1 || cfg.n < cfg.blocks) throw InputError("SBM needs 1 <= blocks <= n");
  if (cfg.dim < cfg.blocks) throw InputError("SBM feature dim must be >= number of blocks");
  Dataset d;
  d.name = "sbm";
  int attempt = 0;
  for (;; ++attempt) {
    Rng rng = Rng::stream(seed, "sbm", static_cast<std::uint64_t>(attempt));
    d.graph = sbm_graph(cfg.n, cfg.blocks, cfg.p_intra, cfg.p_inter, rng);
    if (is_connected(d.graph) || attempt + 1 >= detail::kConnectRetries) break;
  }
  if (attempt > 0) d.notes.push_back("SBM retried " + std::to_string(attempt) + " time(s) for connectivity");

  Rng feat = Rng::stream(seed, "sbm-features");
  const double scale = cfg.separation * cfg.noise / std::sqrt(2.0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cfg.n), static_cast<Eigen::Index>(cfg.dim));
  d.labels.resize(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const Label c = sbm_block(i, cfg.n, cfg.blocks);
    d.labels[i] = c;
    for (std::size_t a = 0; a < cfg.dim; ++a) {
      const double mean = (cfg.blocks > 1 && a == c) ? scale : 0.0;
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = mean + cfg.noise * feat.normal();
    }
  }
  d.features = FeatureMatrix(std::move(x));
  d.num_classes = cfg.blocks;
  if (!is_connected(d.graph)) detail::keep_largest_component(d);
  d.split = make_split(d.num_nodes(), d.labels, seed);
  return d;
}

/// Two interleaving half-moons; raw 2-D coordinates are the features and a
/// geometric graph (pairs closer than `radius`, grown by 10% until
/// connected) is the topology.
inline Dataset synth_two_moons(std::size_t n, double noise, std::uint64_t seed, double radius = 0.3) {
  if (n < 5) throw InputError("two-moons needs at least 5 nodes");
  Rng rng = Rng::stream(seed, "moons");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 2);
  Dataset d;
  d.name = "two_moons";
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Label c = static_cast<Label>(i % 2);
    const double t = std::numbers::pi * rng.uniform();
    double px = c == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double py = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
    px += noise * rng.normal();
    py += noise * rng.normal();
    x(static_cast<Eigen::Index>(i), 0) = px;
    x(static_cast<Eigen::Index>(i), 1) = py;
    d.labels[i] = c;
  }
  d.features = FeatureMatrix(x);
  d.num_classes = 2;
  for (int grow = 0;; ++grow) {
    std::vector<Edge> edges;
    const double r2 = radius * radius;
    for (Node u = 0; u < n; ++u) {
      for (Node v = u + 1; v < n; ++v) {
        if ((x.row(u) - x.row(v)).squaredNorm() < r2) edges.push_back({u, v});
      }
    }
    d.graph = Graph(n, EdgeList::canonical(std::move(edges)));
    if (is_connected(d.graph) || grow >= 60) break;
    radius *= 1.1;
  }
  if (!is_connected(d.graph)) detail::keep_largest_component(d);
  d.split = make_split(d.num_nodes(), d.labels, seed);
  return d;
}

}  // namespace trigon
