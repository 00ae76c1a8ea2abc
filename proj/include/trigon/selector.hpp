#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "trigon/autodiff.hpp"
#include "trigon/data.hpp"
#include "trigon/error.hpp"
#include "trigon/gcn.hpp"
#include "trigon/geometry.hpp"
#include "trigon/graph.hpp"
#include "trigon/rng.hpp"
#include "trigon/triangles.hpp"

namespace trigon {

// ---------------------------------------------------------------------------
// Model

/// Dense layers with ReLU between them; ReLU after the last layer only when
/// `final_relu` is set.
struct Mlp {
  std::vector<ad::Parameter> layers;  // W0, b0, W1, b1, ...
  bool final_relu = false;

  static Mlp make(std::span<const std::size_t> dims, bool final_relu, Rng& rng, const std::string& prefix) {
    Mlp m;
    m.final_relu = final_relu;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      m.layers.push_back({prefix + ".W" + std::to_string(l),
                          ad::glorot(static_cast<Eigen::Index>(dims[l]), static_cast<Eigen::Index>(dims[l + 1]), rng)});
      m.layers.push_back({prefix + ".b" + std::to_string(l), ad::Matrix::Zero(1, static_cast<Eigen::Index>(dims[l + 1]))});
    }
    return m;
  }

  [[nodiscard]] std::size_t in_dim() const { return static_cast<std::size_t>(layers.front().value.rows()); }
  [[nodiscard]] std::size_t out_dim() const { return static_cast<std::size_t>(layers.back().value.cols()); }

  /// `leaves` holds one tape leaf per entry of `layers`.
  ad::Tensor forward(ad::Tensor x, std::span<const ad::Tensor> leaves) const {
    const std::size_t depth = layers.size() / 2;
    for (std::size_t l = 0; l < depth; ++l) {
      x = ad::add_row(ad::matmul(x, leaves[2 * l]), leaves[2 * l + 1]);
      if (l + 1 < depth || final_relu) x = ad::relu(x);
    }
    return x;
  }
};

/// Triangle encoder, selection head, temperature and per-class participation targets.
struct SelectorModel {
  Mlp encoder;  // 3d -> d'
  Mlp head;     // d' -> 2
  ad::Parameter pi{"pi", ad::Matrix()};  // C x 1
  double temperature = 1.0;

  static SelectorModel make(std::size_t feature_dim, std::size_t hidden, std::size_t classes, double temperature,
                            Rng& rng) {
    if (temperature <= 0.0) throw InputError("temperature must be positive");
    SelectorModel s;
    const std::size_t enc[] = {3 * feature_dim, hidden, hidden};
    const std::size_t hd[] = {hidden, 2};
    s.encoder = Mlp::make(enc, true, rng, "encoder");
    s.head = Mlp::make(hd, false, rng, "head");
    s.pi.value = ad::Matrix::Zero(static_cast<Eigen::Index>(classes), 1);
    s.temperature = temperature;
    return s;
  }

  [[nodiscard]] std::size_t feature_dim() const { return encoder.in_dim() / 3; }

  /// Pointers to every trainable parameter (encoder, head, pi) in a fixed order.
  std::vector<ad::Parameter*> parameters() {
    std::vector<ad::Parameter*> out;
    for (auto& p : encoder.layers) out.push_back(&p);
    for (auto& p : head.layers) out.push_back(&p);
    out.push_back(&pi);
    return out;
  }
  [[nodiscard]] std::vector<ad::Parameter> snapshot() const {
    std::vector<ad::Parameter> out(encoder.layers.begin(), encoder.layers.end());
    out.insert(out.end(), head.layers.begin(), head.layers.end());
    out.push_back(pi);
    return out;
  }
};

/// Tape leaves for one SelectorModel, aligned with SelectorModel::parameters().
struct SelectorLeaves {
  std::vector<ad::Tensor> encoder;
  std::vector<ad::Tensor> head;
  ad::Tensor pi;

  static SelectorLeaves record(ad::Tape& tape, const SelectorModel& s) {
    SelectorLeaves l;
    for (const auto& p : s.encoder.layers) l.encoder.push_back(tape.parameter(p.value));
    for (const auto& p : s.head.layers) l.head.push_back(tape.parameter(p.value));
    l.pi = tape.parameter(s.pi.value);
    return l;
  }
  [[nodiscard]] std::vector<ad::Tensor> all() const {
    std::vector<ad::Tensor> out(encoder);
    out.insert(out.end(), head.begin(), head.end());
    out.push_back(pi);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Encoding and selection

/// Rows [x_i | x_j | x_k] -> encoder, one row per candidate in canonical order.
inline ad::Tensor encode_triangles(ad::Tape& tape, const SelectorModel& s, const SelectorLeaves& leaves,
                                   const FeatureMatrix& x, const CandidateTriangleSet& t) {
  if (t.empty()) throw DegenerateError("empty candidate triangle set");
  if (x.dim() != s.feature_dim()) {
    throw InputError("encoder expects feature dim " + std::to_string(s.feature_dim()) + ", got " + std::to_string(x.dim()));
  }
  std::vector<std::uint32_t> a, b, c;
  a.reserve(t.size()), b.reserve(t.size()), c.reserve(t.size());
  for (const auto& tri : t.triangles()) {
    a.push_back(tri.i);
    b.push_back(tri.j);
    c.push_back(tri.k);
  }
  ad::Tensor xs = tape.constant(x.values());
  ad::Tensor z = ad::concat_cols({ad::gather_rows(xs, std::move(a)), ad::gather_rows(xs, std::move(b)),
                                  ad::gather_rows(xs, std::move(c))});
  return s.encoder.forward(z, leaves.encoder);
}

inline ad::Matrix encode_triangles(const SelectorModel& s, const FeatureMatrix& x, const CandidateTriangleSet& t) {
  ad::Tape tape;
  auto leaves = SelectorLeaves::record(tape, s);
  return encode_triangles(tape, s, leaves, x, t).value();
}

/// Selection probability p = softmax((s + G) / tau)[1] as a |T| x 1 tensor.
/// In train mode G is i.i.d. Gumbel(0, 1) from `rng`; in eval mode G = 0,
/// i.e. p = sigmoid((s1 - s0) / tau).
inline ad::Tensor gumbel_select(ad::Tape& tape, ad::Tensor logits, double tau, bool train, Rng* rng) {
  if (tau <= 0.0) throw InputError("temperature must be positive");
  if (logits.cols() != 2) throw InputError("selection logits must have 2 columns, got " + ad::Tape::shape_str(logits.value()));
  ad::Matrix diff_op(2, 1);
  diff_op << -1.0, 1.0;
  ad::Tensor diff = ad::matmul(logits, tape.constant(diff_op));
  if (train) {
    if (!rng) throw InputError("train-mode Gumbel selection needs a random stream");
    ad::Matrix noise(logits.rows(), 1);
    for (Eigen::Index r = 0; r < noise.rows(); ++r) {
      const double g0 = rng->gumbel();
      const double g1 = rng->gumbel();
      noise(r, 0) = g1 - g0;
    }
    diff = ad::add(diff, tape.constant(std::move(noise)));
  }
  return ad::sigmoid(ad::scalar_mul(diff, 1.0 / tau));
}

/// Value-only selection from a |T| x 2 logit matrix.
inline Eigen::VectorXd gumbel_select(const ad::Matrix& logits, double tau, std::uint64_t seed, bool train) {
  ad::Tape tape;
  Rng rng(seed);
  return gumbel_select(tape, tape.constant(logits), tau, train, &rng).value().col(0);
}

inline constexpr double kSelectThreshold = 0.5;

struct SelectionState {
  Eigen::VectorXd probabilities;
  std::vector<char> selected;  // p >= 0.5
  EdgeList edges;              // union of the edges of selected triangles
  std::size_t num_selected = 0;
};

/// Union of the three edges of every triangle with p >= 0.5.
inline EdgeList selected_edges(const CandidateTriangleSet& t, const Eigen::VectorXd& p) {
  if (static_cast<std::size_t>(p.size()) != t.size()) throw InputError("probability count does not match candidates");
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (p(static_cast<Eigen::Index>(i)) >= kSelectThreshold) {
      for (auto e : t[i].edges()) edges.push_back(e);
    }
  }
  return EdgeList::canonical(std::move(edges));
}

struct Reconstruction {
  Graph graph;
  bool empty = false;  // no triangle selected
};

inline Reconstruction reconstruct_graph(const CandidateTriangleSet& t, const Eigen::VectorXd& p, std::size_t n) {
  if (t.num_nodes() > n) throw InputError("candidate set references more nodes than the target graph");
  auto edges = selected_edges(t, p);
  Reconstruction r;
  r.empty = edges.empty();
  r.graph = Graph(n, edges);
  return r;
}

inline SelectionState make_selection(const CandidateTriangleSet& t, Eigen::VectorXd p) {
  SelectionState s;
  s.selected.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    s.selected[i] = p(static_cast<Eigen::Index>(i)) >= kSelectThreshold;
    s.num_selected += s.selected[i];
  }
  s.edges = selected_edges(t, p);
  s.probabilities = std::move(p);
  return s;
}

// ---------------------------------------------------------------------------
// Losses

/// y = 1 when at least two of the triangle's nodes carry the same label,
/// using only labels of nodes marked visible (training nodes). Triangles
/// with fewer than two visible labels get y = 0.
inline Eigen::VectorXd triangle_targets(const CandidateTriangleSet& t, std::span<const Label> labels,
                                        std::span<const char> visible) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(t.size()));
  for (std::size_t r = 0; r < t.size(); ++r) {
    std::vector<Label> seen;
    for (Node v : t[r].nodes()) {
      if (visible[v]) seen.push_back(labels[v]);
    }
    bool pair = false;
    for (std::size_t a = 0; a < seen.size(); ++a) {
      for (std::size_t b = a + 1; b < seen.size(); ++b) pair = pair || seen[a] == seen[b];
    }
    y(static_cast<Eigen::Index>(r)) = pair ? 1.0 : 0.0;
  }
  return y;
}

inline std::vector<char> visibility_mask(std::size_t n, std::span<const Node> train) {
  std::vector<char> v(n, 0);
  for (Node i : train) v[i] = 1;
  return v;
}

/// mean over candidates of (1 - y) p^2 + y max(0, 1 - p)^2.
inline ad::Tensor loss_contrastive(ad::Tensor p, const Eigen::VectorXd& y) {
  ad::Tape& tape = *p.tape();
  if (p.rows() != y.size()) throw InputError("contrastive loss: target count does not match probabilities");
  ad::Tensor yt = tape.constant(y);
  ad::Tensor not_y = tape.constant((1.0 - y.array()).matrix());
  ad::Tensor neg = ad::elementwise_mul(not_y, ad::square(p));
  ad::Tensor pos = ad::elementwise_mul(yt, ad::square(ad::relu(ad::add_scalar(ad::scalar_mul(p, -1.0), 1.0))));
  return ad::mean(ad::add(neg, pos));
}

/// Sum of pairwise feature distances of each candidate triangle.
inline Eigen::VectorXd triangle_perimeters(const CandidateTriangleSet& t, const FeatureMatrix& x) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(t.size()));
  for (std::size_t r = 0; r < t.size(); ++r) {
    const auto& tri = t[r];
    out(static_cast<Eigen::Index>(r)) = (x.row(tri.i) - x.row(tri.j)).norm() + (x.row(tri.j) - x.row(tri.k)).norm() +
                                        (x.row(tri.k) - x.row(tri.i)).norm();
  }
  return out;
}

/// Mean perimeter of the selection, with each candidate weighted by its
/// selection probability: sum(p * perimeter) / sum(p). Equals the plain mean
/// over T_sel when p is 0/1. Zero when nothing carries weight.
inline ad::Tensor loss_structural(ad::Tensor p, const Eigen::VectorXd& perimeters) {
  ad::Tape& tape = *p.tape();
  if (p.rows() != perimeters.size()) throw InputError("structural loss: perimeter count does not match probabilities");
  const double mass = p.value().sum();
  if (mass <= 0.0) return ad::scalar_mul(ad::sum(p), 0.0);
  ad::Tensor weighted = ad::sum(ad::elementwise_mul(p, tape.constant(perimeters)));
  return ad::div_scalar(weighted, ad::sum(p));
}

/// Node x candidate incidence matrix (1 where the node belongs to the triangle).
inline std::shared_ptr<const ad::SparseMatrix> triangle_incidence(const CandidateTriangleSet& t, std::size_t n) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(3 * t.size());
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (Node v : t[r].nodes()) trips.emplace_back(v, static_cast<int>(r), 1.0);
  }
  auto m = std::make_shared<ad::SparseMatrix>(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t.size()));
  m->setFromTriplets(trips.begin(), trips.end());
  return m;
}

/// (1/|V_train|) sum_{i in train} (soft_count_i - pi_{y_i})^2 with
/// soft_count_i = sum of p over candidates containing i.
inline ad::Tensor loss_participation(ad::Tensor p, const std::shared_ptr<const ad::SparseMatrix>& incidence,
                                     std::span<const Label> labels, std::span<const Node> train, ad::Tensor pi) {
  if (train.empty()) throw InputError("participation loss needs training nodes");
  ad::Tensor counts = ad::sparse_matmul(incidence, p);
  std::vector<std::uint32_t> rows(train.begin(), train.end());
  std::vector<std::uint32_t> cls;
  cls.reserve(train.size());
  for (Node i : train) cls.push_back(labels[i]);
  ad::Tensor diff = ad::sub(ad::gather_rows(counts, std::move(rows)), ad::gather_rows(pi, std::move(cls)));
  return ad::mean(ad::square(diff));
}

// Value-only conveniences.

inline double loss_contrastive(const Eigen::VectorXd& p, const Eigen::VectorXd& y) {
  ad::Tape tape;
  return loss_contrastive(tape.constant(p), y).item();
}

inline double loss_structural(const Eigen::VectorXd& p, const Eigen::VectorXd& perimeters) {
  ad::Tape tape;
  return loss_structural(tape.constant(p), perimeters).item();
}

inline double loss_participation(const Eigen::VectorXd& p, const CandidateTriangleSet& t, std::span<const Label> labels,
                                 std::span<const Node> train, const Eigen::VectorXd& pi) {
  ad::Tape tape;
  return loss_participation(tape.constant(p), triangle_incidence(t, t.num_nodes()), labels, train, tape.constant(pi))
      .item();
}

/// Class-wise mean soft participation count of training nodes.
inline Eigen::VectorXd classwise_mean_counts(const Eigen::VectorXd& p, const CandidateTriangleSet& t,
                                             std::span<const Label> labels, std::span<const Node> train,
                                             std::size_t classes) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes));
  Eigen::VectorXd cnt = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes));
  for (Node i : train) {
    double c = 0.0;
    for (auto idx : t.incident(i)) c += p(idx);
    sum(labels[i]) += c;
    cnt(labels[i]) += 1.0;
  }
  for (Eigen::Index c = 0; c < sum.size(); ++c) {
    if (cnt(c) > 0) sum(c) /= cnt(c);
  }
  return sum;
}

// ---------------------------------------------------------------------------
// One selector optimization step

struct LossWeights {
  bool contrastive = true;
  bool structural = true;
  bool participation = true;
};

struct LossBreakdown {
  double contrastive = 0.0;
  double structural = 0.0;
  double participation = 0.0;
  double total = 0.0;
};

/// Per-candidate quantities that stay fixed while the candidate set does.
struct SelectorBatch {
  const CandidateTriangleSet* candidates = nullptr;
  Eigen::VectorXd targets;
  Eigen::VectorXd perimeters;
  std::shared_ptr<const ad::SparseMatrix> incidence;

  static SelectorBatch make(const CandidateTriangleSet& t, const FeatureMatrix& x, std::span<const Label> labels,
                            std::span<const Node> train) {
    SelectorBatch b;
    b.candidates = &t;
    b.targets = triangle_targets(t, labels, visibility_mask(t.num_nodes(), train));
    b.perimeters = triangle_perimeters(t, x);
    b.incidence = triangle_incidence(t, t.num_nodes());
    return b;
  }
};

struct SelectorForward {
  ad::Tensor p;
  ad::Tensor contrastive, structural, participation, total;
  SelectorLeaves leaves;
};

/// Records the composite selector loss on `tape`.
inline SelectorForward selector_forward(ad::Tape& tape, const SelectorModel& s, const FeatureMatrix& x,
                                        const SelectorBatch& batch, std::span<const Label> labels,
                                        std::span<const Node> train, const LossWeights& w, bool train_mode,
                                        Rng* gumbel_rng) {
  SelectorForward f;
  f.leaves = SelectorLeaves::record(tape, s);
  ad::Tensor emb = encode_triangles(tape, s, f.leaves, x, *batch.candidates);
  ad::Tensor logits = s.head.forward(emb, f.leaves.head);
  f.p = gumbel_select(tape, logits, s.temperature, train_mode, gumbel_rng);
  f.contrastive = loss_contrastive(f.p, batch.targets);
  f.structural = loss_structural(f.p, batch.perimeters);
  f.participation = loss_participation(f.p, batch.incidence, labels, train, f.leaves.pi);
  ad::Tensor zero = ad::scalar_mul(f.contrastive, 0.0);
  f.total = ad::add(ad::add(w.contrastive ? f.contrastive : zero, w.structural ? f.structural : zero),
                    w.participation ? f.participation : zero);
  return f;
}

/// Eval-mode selection probabilities for every candidate.
inline Eigen::VectorXd selector_probabilities(const SelectorModel& s, const FeatureMatrix& x,
                                              const CandidateTriangleSet& t) {
  ad::Tape tape;
  auto leaves = SelectorLeaves::record(tape, s);
  ad::Tensor logits = s.head.forward(encode_triangles(tape, s, leaves, x, t), leaves.head);
  return gumbel_select(tape, logits, s.temperature, false, nullptr).value().col(0);
}

struct SelectorOptimizer {
  ad::AdamConfig config{0.005, 5e-5};
  ad::AdamState state;
};

struct SelectorStepResult {
  LossBreakdown losses;
  SelectionState selection;
};

/// One optimizer step of encoder, head and pi on the composite loss with
/// train-mode Gumbel noise drawn from `seed`; then re-selects in eval mode.
inline SelectorStepResult selector_step(SelectorModel& s, const FeatureMatrix& x, const SelectorBatch& batch,
                                        std::span<const Label> labels, std::span<const Node> train,
                                        SelectorOptimizer& opt, std::uint64_t seed, const LossWeights& w = {}) {
  if (batch.candidates == nullptr || batch.candidates->empty()) throw DegenerateError("empty candidate triangle set");
  ad::Tape tape;
  Rng rng(seed);
  auto f = selector_forward(tape, s, x, batch, labels, train, w, true, &rng);
  tape.backward(f.total);
  SelectorStepResult r;
  r.losses = {f.contrastive.item(), f.structural.item(), f.participation.item(), f.total.item()};
  auto params = s.parameters();
  auto leaves = f.leaves.all();
  std::vector<ad::Matrix> grads;
  grads.reserve(leaves.size());
  for (const auto& l : leaves) grads.push_back(l.grad());
  ad::adam_step(params, grads, opt.state, opt.config);
  r.selection = make_selection(*batch.candidates, selector_probabilities(s, x, *batch.candidates));
  return r;
}

// ---------------------------------------------------------------------------
// Alternating training

enum class SelectionMode {
  kLearned,  // TRIGON
  kAll,      // every candidate triangle
  kRandom,   // fixed seeded random fraction of candidates
};

struct TrigonConfig {
  GcnConfig gcn;
  std::size_t knn_k = 10;
  Metric metric = Metric::kEuclidean;
  std::uint8_t views = kAllSources;
  std::size_t refresh_period = 10;
  std::size_t candidate_cap = kDefaultCandidateCap;
  std::size_t selector_hidden = 64;
  double selector_lr = 0.005;
  double selector_weight_decay = 5e-5;
  double temperature = 1.0;
  /// When set, temperature is annealed linearly to this value over max_epochs.
  std::optional<double> temperature_final;
  LossWeights losses;
  SelectionMode mode = SelectionMode::kLearned;
  double random_fraction = 0.3;
  /// Optional pre-built selector (its feature dim must match the dataset).
  std::optional<SelectorModel> initial_selector;
  bool train_selector = true;
};

struct TraceRow {
  std::size_t epoch = 0;
  std::size_t candidates = 0;
  std::size_t selected = 0;
  std::size_t edges = 0;
  LossBreakdown losses;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  bool fallback = false;
};

struct TrigonResult {
  Graph graph;  // G* at the best validation epoch
  GcnModel model;
  SelectorModel selector;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  double test_acc = 0.0;
  bool diverged = false;
  std::vector<TraceRow> trace;
  std::vector<std::string> log;
};

/// What the per-epoch callback sees. `probabilities` is empty outside the
/// learned mode.
struct EpochView {
  const TraceRow& row;
  const CandidateTriangleSet& candidates;
  const Eigen::VectorXd& probabilities;
  const Graph& graph;
};

/// Candidate set for the current embeddings; views not in `cfg.views` are empty.
inline CandidateTriangleSet build_views(const Dataset& data, const Graph& knn, const FeatureMatrix& embedding,
                                        const TrigonConfig& cfg, std::uint64_t seed) {
  const std::size_t n = data.num_nodes();
  Graph none(n, EdgeList{});
  std::vector<Triangle> del;
  if (cfg.views & kSourceDelaunay) del = delaunay(project_2d(embedding)).triangles;
  return build_candidates(cfg.views & kSourceOriginal ? data.graph : none, cfg.views & kSourceKnn ? knn : none, del,
                          cfg.candidate_cap, seed);
}

/// Alternates selector updates and GCN updates on the reconstructed graph.
///
/// Per epoch: refresh the Delaunay view from the current penultimate GCN
/// embeddings every `refresh_period` epochs (raw features at epoch 0), take
/// one selector step, rebuild G*, then one GCN step on G*. Early stopping on
/// validation accuracy; the graph and model of the best epoch are returned.
inline TrigonResult run_trigon(const Dataset& data, const TrigonConfig& cfg, std::uint64_t seed,
                               const std::function<void(const EpochView&)>& on_epoch = {}) {
  validate(data);
  if (data.num_classes < 2) throw InputError("TRIGON needs at least two classes");
  if (cfg.views == 0) throw InputError("at least one candidate view must be enabled");
  const std::size_t n = data.num_nodes();
  TrigonResult res;

  Graph knn = (cfg.views & kSourceKnn) ? knn_graph(data.features, std::min(cfg.knn_k, n - 1), cfg.metric)
                                       : Graph(n, EdgeList{});
  CandidateTriangleSet candidates = build_views(data, knn, data.features, cfg, seed);
  if (candidates.empty()) throw DegenerateError("no candidate triangles in the enabled views");

  Rng init = Rng::stream(seed, "selector-init");
  SelectorModel selector = cfg.initial_selector
                               ? *cfg.initial_selector
                               : SelectorModel::make(data.features.dim(), cfg.selector_hidden, data.num_classes,
                                                     cfg.temperature, init);
  if (selector.feature_dim() != data.features.dim()) throw InputError("initial selector feature dim mismatch");
  SelectorOptimizer sopt{{cfg.selector_lr, cfg.selector_weight_decay}, {}};
  auto batch = SelectorBatch::make(candidates, data.features, data.labels, data.split.train);
  if (cfg.mode == SelectionMode::kLearned && !cfg.initial_selector) {
    selector.pi.value = classwise_mean_counts(selector_probabilities(selector, data.features, candidates), candidates,
                                              data.labels, data.split.train, data.num_classes);
  }

  Rng gcn_init = Rng::stream(seed, "gcn-init");
  Rng drop = Rng::stream(seed, "dropout");
  GcnModel model(data.features.dim(), cfg.gcn.hidden, data.num_classes, cfg.gcn.layers, cfg.gcn.dropout, gcn_init);
  GcnOptimizer gopt{{cfg.gcn.lr, cfg.gcn.weight_decay}, {}};
  Graph current(n, EdgeList{});

  auto random_pick = [&](const CandidateTriangleSet& t) {
    Rng r = Rng::stream(seed, "random-selection");
    const auto keep = static_cast<std::size_t>(std::llround(cfg.random_fraction * static_cast<double>(t.size())));
    auto sub = t.subsample(keep, r);
    std::vector<Edge> edges;
    for (const auto& tri : sub.triangles()) {
      for (auto e : tri.edges()) edges.push_back(e);
    }
    return EdgeList::canonical(std::move(edges));
  };

  double best_val = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.gcn.max_epochs; ++epoch) {
    TraceRow row;
    row.epoch = epoch;
    if (epoch > 0 && cfg.refresh_period > 0 && epoch % cfg.refresh_period == 0 && (cfg.views & kSourceDelaunay)) {
      auto ev = gcn_eval(model, gcn_propagation_matrix(current), data.features);
      auto refreshed = build_views(data, knn, FeatureMatrix(ev.hidden), cfg, seed);
      if (!refreshed.empty()) {
        candidates = std::move(refreshed);
        batch = SelectorBatch::make(candidates, data.features, data.labels, data.split.train);
      }
    }
    row.candidates = candidates.size();

    EdgeList edges;
    Eigen::VectorXd probs;
    if (cfg.mode == SelectionMode::kLearned) {
      if (cfg.temperature_final && cfg.gcn.max_epochs > 1) {
        const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.gcn.max_epochs - 1);
        selector.temperature = cfg.temperature + (*cfg.temperature_final - cfg.temperature) * frac;
      }
      SelectionState sel;
      if (cfg.train_selector) {
        auto step = selector_step(selector, data.features, batch, data.labels, data.split.train, sopt,
                                  Rng::stream(seed, "gumbel", epoch).next(), cfg.losses);
        row.losses = step.losses;
        sel = std::move(step.selection);
      } else {
        sel = make_selection(candidates, selector_probabilities(selector, data.features, candidates));
      }
      row.selected = sel.num_selected;
      edges = std::move(sel.edges);
      probs = std::move(sel.probabilities);
    } else if (cfg.mode == SelectionMode::kAll) {
      row.selected = candidates.size();
      edges = candidates.union_graph().edge_list();
    } else {
      edges = random_pick(candidates);
      row.selected = static_cast<std::size_t>(std::llround(cfg.random_fraction * static_cast<double>(candidates.size())));
    }
    if (edges.empty()) {
      row.fallback = true;
      edges = candidates.union_graph().edge_list();
      res.log.push_back("epoch " + std::to_string(epoch) + ": empty selection, using all candidate edges");
    }
    current = Graph(n, edges);
    row.edges = current.num_edges();

    auto prop = gcn_propagation_matrix(current);
    row.train_loss = train_gnn_epoch(model, prop, data.features, data.labels, data.split.train, gopt, drop);
    if (!std::isfinite(row.train_loss)) {
      res.diverged = true;
      res.log.push_back("epoch " + std::to_string(epoch) + ": non-finite GCN loss");
      res.trace.push_back(row);
      break;
    }
    auto ev = gcn_eval(model, prop, data.features);
    row.val_acc = accuracy(ev.log_probs, data.labels, data.split.val);
    row.test_acc = accuracy(ev.log_probs, data.labels, data.split.test);
    res.trace.push_back(row);
    if (on_epoch) on_epoch(EpochView{row, candidates, probs, current});

    if (row.val_acc > best_val) {
      best_val = row.val_acc;
      res.best_epoch = epoch;
      res.best_val_acc = row.val_acc;
      res.test_acc = row.test_acc;
      res.graph = current;
      res.model = model;
      res.selector = selector;
      since_best = 0;
    } else if (++since_best >= cfg.gcn.patience) {
      break;
    }
  }
  if (res.graph.num_nodes() == 0) {
    res.graph = current;
    res.model = model;
    res.selector = selector;
  }
  return res;
}

}  // namespace trigon
