#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "trigon/autodiff.hpp"
#include "trigon/data.hpp"
#include "trigon/error.hpp"
#include "trigon/graph.hpp"
#include "trigon/rng.hpp"

namespace trigon {

using PropagationMatrix = std::shared_ptr<const ad::SparseMatrix>;

/// Symmetric GCN propagation matrix D~^{-1/2} (A + I) D~^{-1/2}.
inline PropagationMatrix gcn_propagation_matrix(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n) + 2 * g.num_edges());
  Eigen::VectorXd inv_sqrt(n);
  for (Node i = 0; i < g.num_nodes(); ++i) inv_sqrt(i) = 1.0 / std::sqrt(static_cast<double>(g.degree(i) + 1));
  for (Node i = 0; i < g.num_nodes(); ++i) {
    trips.emplace_back(i, i, inv_sqrt(i) * inv_sqrt(i));
    for (Node j : g.neighbors(i)) trips.emplace_back(i, j, inv_sqrt(i) * inv_sqrt(j));
  }
  auto m = std::make_shared<ad::SparseMatrix>(n, n);
  m->setFromTriplets(trips.begin(), trips.end());
  return m;
}

struct GcnConfig {
  std::size_t layers = 2;
  std::size_t hidden = 32;
  double dropout = 0.5;
  double lr = 0.005;
  double weight_decay = 5e-5;
  std::size_t max_epochs = 500;
  std::size_t patience = 100;
};

/// Stack of graph-convolution layers; the last one is linear followed by
/// log-softmax, the others use ReLU.
class GcnModel {
 public:
  GcnModel() = default;

  GcnModel(std::size_t in_dim, std::size_t hidden, std::size_t classes, std::size_t layers, double dropout, Rng& rng)
      : dropout_(dropout) {
    if (layers < 1) throw InputError("GCN needs at least one layer");
    if (dropout < 0.0 || dropout >= 1.0) throw InputError("dropout must lie in [0, 1)");
    std::size_t d = in_dim;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t out = l + 1 == layers ? classes : hidden;
      params_.push_back({"W" + std::to_string(l), ad::glorot(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(out), rng)});
      params_.push_back({"b" + std::to_string(l), ad::Matrix::Zero(1, static_cast<Eigen::Index>(out))});
      d = out;
    }
  }

  /// Builds a model from explicit weights (biases zero).
  static GcnModel from_weights(std::vector<ad::Matrix> weights, double dropout = 0.0) {
    GcnModel m;
    m.dropout_ = dropout;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (l > 0 && weights[l].rows() != weights[l - 1].cols()) throw InputError("layer shapes do not chain");
      const auto out = weights[l].cols();
      m.params_.push_back({"W" + std::to_string(l), std::move(weights[l])});
      m.params_.push_back({"b" + std::to_string(l), ad::Matrix::Zero(1, out)});
    }
    return m;
  }

  [[nodiscard]] std::size_t num_layers() const { return params_.size() / 2; }
  [[nodiscard]] std::size_t num_classes() const { return static_cast<std::size_t>(params_.back().value.cols()); }
  [[nodiscard]] std::size_t input_dim() const { return static_cast<std::size_t>(params_.front().value.rows()); }
  [[nodiscard]] double dropout() const { return dropout_; }
  std::vector<ad::Parameter>& params() { return params_; }
  [[nodiscard]] const std::vector<ad::Parameter>& params() const { return params_; }

 private:
  std::vector<ad::Parameter> params_;
  double dropout_ = 0.0;
};

struct GcnForward {
  ad::Tensor log_probs;            // N x C
  ad::Tensor hidden;               // input of the last layer (penultimate embeddings)
  std::vector<ad::Tensor> params;  // leaves, aligned with GcnModel::params()
};

/// Records a forward pass on `tape`. Dropout is applied to the input of every
/// layer in train mode.
inline GcnForward gcn_forward(ad::Tape& tape, const GcnModel& model, const PropagationMatrix& prop,
                              const FeatureMatrix& x, bool train, Rng& dropout_rng) {
  if (x.rows() != static_cast<std::size_t>(prop->rows())) {
    throw InputError("feature rows (" + std::to_string(x.rows()) + ") != graph nodes (" + std::to_string(prop->rows()) + ")");
  }
  if (x.dim() != model.input_dim()) {
    throw InputError("feature dim " + std::to_string(x.dim()) + " != model input dim " + std::to_string(model.input_dim()));
  }
  GcnForward f;
  for (const auto& p : model.params()) f.params.push_back(tape.parameter(p.value));
  ad::Tensor h = tape.constant(x.values());
  const std::size_t layers = model.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    if (l + 1 == layers) f.hidden = h;
    ad::Tensor in = ad::dropout(h, model.dropout(), train, dropout_rng);
    ad::Tensor z = ad::add_row(ad::sparse_matmul(prop, ad::matmul(in, f.params[2 * l])), f.params[2 * l + 1]);
    h = l + 1 == layers ? z : ad::relu(z);
  }
  f.log_probs = ad::log_softmax(h);
  return f;
}

/// Mean negative log-likelihood over `nodes`.
inline ad::Tensor cross_entropy(ad::Tensor log_probs, std::span<const Label> labels, std::span<const Node> nodes) {
  if (nodes.empty()) throw InputError("cross entropy over an empty node set");
  ad::Tape& tape = *log_probs.tape();
  std::vector<std::uint32_t> idx(nodes.begin(), nodes.end());
  ad::Matrix onehot = ad::Matrix::Zero(static_cast<Eigen::Index>(nodes.size()), log_probs.cols());
  for (std::size_t r = 0; r < nodes.size(); ++r) onehot(static_cast<Eigen::Index>(r), labels[nodes[r]]) = 1.0;
  ad::Tensor picked = ad::elementwise_mul(ad::gather_rows(log_probs, std::move(idx)), tape.constant(std::move(onehot)));
  return ad::scalar_mul(ad::sum(picked), -1.0 / static_cast<double>(nodes.size()));
}

inline double accuracy(const ad::Matrix& log_probs, std::span<const Label> labels, std::span<const Node> nodes) {
  if (nodes.empty()) return 0.0;
  std::size_t hit = 0;
  for (Node i : nodes) {
    Eigen::Index arg = 0;
    log_probs.row(i).maxCoeff(&arg);
    hit += static_cast<Label>(arg) == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(nodes.size());
}

/// Optimizer bound to one model.
struct GcnOptimizer {
  ad::AdamConfig config;
  ad::AdamState state;
};

/// One full-graph optimizer step on the mean cross-entropy over `train`.
/// Returns the loss before the step.
inline double train_gnn_epoch(GcnModel& model, const PropagationMatrix& prop, const FeatureMatrix& x,
                              std::span<const Label> labels, std::span<const Node> train, GcnOptimizer& opt,
                              Rng& dropout_rng) {
  if (train.empty()) throw InputError("empty training mask");
  ad::Tape tape;
  auto f = gcn_forward(tape, model, prop, x, true, dropout_rng);
  auto loss = cross_entropy(f.log_probs, labels, train);
  tape.backward(loss);
  std::vector<ad::Parameter*> ps;
  std::vector<ad::Matrix> grads;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    ps.push_back(&model.params()[i]);
    grads.push_back(f.params[i].grad());
  }
  ad::adam_step(ps, grads, opt.state, opt.config);
  return loss.item();
}

struct GcnEval {
  ad::Matrix log_probs;
  ad::Matrix hidden;
};

inline GcnEval gcn_eval(const GcnModel& model, const PropagationMatrix& prop, const FeatureMatrix& x) {
  ad::Tape tape;
  Rng unused(0);
  auto f = gcn_forward(tape, model, prop, x, false, unused);
  return {f.log_probs.value(), f.hidden.value()};
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

struct GcnTrainResult {
  GcnModel model;  // parameters at the best validation epoch
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  double test_acc = 0.0;  // test accuracy at the best validation epoch
  bool diverged = false;
  std::vector<EpochMetrics> history;
};

/// Trains a fresh GCN on `graph` with early stopping on validation accuracy.
inline GcnTrainResult train_gcn(const Dataset& data, const Graph& graph, const GcnConfig& cfg, std::uint64_t seed) {
  if (graph.num_nodes() != data.num_nodes()) throw InputError("graph and dataset disagree on node count");
  Rng init = Rng::stream(seed, "gcn-init");
  Rng drop = Rng::stream(seed, "dropout");
  GcnTrainResult r;
  GcnModel model(data.features.dim(), cfg.hidden, data.num_classes, cfg.layers, cfg.dropout, init);
  GcnOptimizer opt{{cfg.lr, cfg.weight_decay}, {}};
  auto prop = gcn_propagation_matrix(graph);
  r.model = model;
  double best_val = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double loss = train_gnn_epoch(model, prop, data.features, data.labels, data.split.train, opt, drop);
    if (!std::isfinite(loss)) {
      r.diverged = true;
      break;
    }
    auto ev = gcn_eval(model, prop, data.features);
    EpochMetrics m{epoch, loss, accuracy(ev.log_probs, data.labels, data.split.val),
                   accuracy(ev.log_probs, data.labels, data.split.test)};
    r.history.push_back(m);
    if (m.val_acc > best_val) {
      best_val = m.val_acc;
      r.best_epoch = epoch;
      r.best_val_acc = m.val_acc;
      r.test_acc = m.test_acc;
      r.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return r;
}

}  // namespace trigon
