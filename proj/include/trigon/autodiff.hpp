#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "trigon/error.hpp"
#include "trigon/rng.hpp"

namespace trigon::ad {

using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class Tape;

/// Handle to a value recorded on a Tape.
class Tensor {
 public:
  Tensor() = default;

  [[nodiscard]] const Matrix& value() const;
  /// Gradient accumulated by Tape::backward (zero matrix if none reached it).
  [[nodiscard]] Matrix grad() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 tensor.
  [[nodiscard]] double item() const;
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive operations in execution order. Reverse traversal of the
/// record accumulates gradients into every leaf marked requires_grad.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value) { return push(std::move(value), false, {}, nullptr); }
  Tensor parameter(Matrix value) { return push(std::move(value), true, {}, nullptr); }
  Tensor scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Reverse pass from a 1x1 loss. Allowed once per tape.
  void backward(Tensor loss) {
    check(loss);
    if (loss.value().rows() != 1 || loss.value().cols() != 1) {
      throw InputError("backward requires a scalar (1x1) loss, got " + shape_str(loss.value()));
    }
    if (backward_done_) throw InputError("backward already ran on this tape");
    backward_done_ = true;
    nodes_[loss.id_].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.requires_grad || node.grad.size() == 0 || !node.backward) continue;
      node.backward(node.grad);
    }
  }

  // Internal API used by the primitives below.
  using Backward = std::function<void(const Matrix& upstream)>;

  Tensor push(Matrix value, bool requires_grad, std::initializer_list<Tensor> parents, Backward backward) {
    bool rg = requires_grad;
    for (const auto& p : parents) {
      check(p);
      rg = rg || nodes_[p.id_].requires_grad;
    }
    nodes_.push_back({std::move(value), Matrix(), rg, rg ? std::move(backward) : Backward{}});
    return {this, nodes_.size() - 1};
  }

  void accumulate(Tensor t, const Matrix& g) {
    auto& node = nodes_[t.id_];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  [[nodiscard]] bool wants_grad(Tensor t) const { return nodes_[t.id_].requires_grad; }
  [[nodiscard]] const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }
  [[nodiscard]] bool requires_grad_of(std::size_t id) const { return nodes_[id].requires_grad; }

  static std::string shape_str(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
  }

  void check(Tensor t) const {
    if (t.tape_ != this || t.id_ >= nodes_.size()) throw InputError("tensor does not belong to this tape");
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Matrix& Tensor::value() const { return tape_->value_of(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad_of(id_); }
inline Matrix Tensor::grad() const {
  const auto& g = tape_->grad_of(id_);
  if (g.size() == 0) return Matrix::Zero(value().rows(), value().cols());
  return g;
}
inline double Tensor::item() const {
  if (value().size() != 1) throw InputError("item() on non-scalar tensor " + Tape::shape_str(value()));
  return value()(0, 0);
}

namespace detail {

inline void same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InputError(std::string(op) + ": shape mismatch " + Tape::shape_str(a.value()) + " vs " +
                     Tape::shape_str(b.value()));
  }
}

inline Tape& tape_of(const Tensor& a, const Tensor& b) {
  if (a.tape() != b.tape()) throw InputError("tensors recorded on different tapes");
  return *a.tape();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Tensor matmul(Tensor a, Tensor b) {
  if (a.cols() != b.rows()) {
    throw InputError("matmul: shape mismatch " + Tape::shape_str(a.value()) + " x " + Tape::shape_str(b.value()));
  }
  Tape& t = detail::tape_of(a, b);
  return t.push(a.value() * b.value(), false, {a, b}, [&t, a, b](const Matrix& g) {
    if (t.wants_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.wants_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

/// Sparse (constant) left factor times dense tensor.
inline Tensor sparse_matmul(std::shared_ptr<const SparseMatrix> s, Tensor b) {
  if (s->cols() != b.rows()) {
    throw InputError("sparse_matmul: shape mismatch (" + std::to_string(s->rows()) + "x" + std::to_string(s->cols()) +
                     ") x " + Tape::shape_str(b.value()));
  }
  Tape& t = *b.tape();
  Matrix out = *s * b.value();
  return t.push(std::move(out), false, {b}, [&t, s, b](const Matrix& g) {
    t.accumulate(b, s->transpose() * g);
  });
}

inline Tensor add(Tensor a, Tensor b) {
  detail::same_shape("add", a, b);
  Tape& t = detail::tape_of(a, b);
  return t.push(a.value() + b.value(), false, {a, b}, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

/// a (n x c) plus a 1 x c row vector broadcast over rows.
inline Tensor add_row(Tensor a, Tensor row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw InputError("add_row: shape mismatch " + Tape::shape_str(a.value()) + " vs row " +
                     Tape::shape_str(row.value()));
  }
  Tape& t = detail::tape_of(a, row);
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), false, {a, row}, [&t, a, row](const Matrix& g) {
    t.accumulate(a, g);
    if (t.wants_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

inline Tensor sub(Tensor a, Tensor b) {
  detail::same_shape("sub", a, b);
  Tape& t = detail::tape_of(a, b);
  return t.push(a.value() - b.value(), false, {a, b}, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

inline Tensor scalar_mul(Tensor a, double s) {
  Tape& t = *a.tape();
  return t.push(s * a.value(), false, {a}, [&t, a, s](const Matrix& g) { t.accumulate(a, s * g); });
}

inline Tensor add_scalar(Tensor a, double s) {
  Tape& t = *a.tape();
  Matrix out = a.value().array() + s;
  return t.push(std::move(out), false, {a}, [&t, a](const Matrix& g) { t.accumulate(a, g); });
}

inline Tensor elementwise_mul(Tensor a, Tensor b) {
  detail::same_shape("elementwise_mul", a, b);
  Tape& t = detail::tape_of(a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), false, {a, b}, [&t, a, b](const Matrix& g) {
    if (t.wants_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.wants_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

/// a divided by a 1x1 tensor s.
inline Tensor div_scalar(Tensor a, Tensor s) {
  if (s.rows() != 1 || s.cols() != 1) throw InputError("div_scalar: divisor must be 1x1, got " + Tape::shape_str(s.value()));
  Tape& t = detail::tape_of(a, s);
  const double d = s.item();
  Matrix out = a.value() / d;
  return t.push(std::move(out), false, {a, s}, [&t, a, s, d](const Matrix& g) {
    if (t.wants_grad(a)) t.accumulate(a, g / d);
    if (t.wants_grad(s)) t.accumulate(s, Matrix::Constant(1, 1, -(g.cwiseProduct(a.value())).sum() / (d * d)));
  });
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw InputError("concat_cols: no inputs");
  Tape& t = *parts[0].tape();
  const auto rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw InputError("tensors recorded on different tapes");
    if (p.rows() != rows) {
      throw InputError("concat_cols: shape mismatch " + Tape::shape_str(parts[0].value()) + " vs " +
                       Tape::shape_str(p.value()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Tensor> copy(parts.begin(), parts.end());
  // Parents are recorded through requires_grad propagation below.
  bool rg = false;
  for (const auto& p : parts) rg = rg || t.wants_grad(p);
  Tensor res = t.push(std::move(out), rg, {}, [&t, copy](const Matrix& g) {
    Eigen::Index o = 0;
    for (const auto& p : copy) {
      t.accumulate(p, g.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
  return res;
}

inline Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

/// Rows of `a` selected by `index` (repeats allowed).
inline Tensor gather_rows(Tensor a, std::vector<std::uint32_t> index) {
  Tape& t = *a.tape();
  Matrix out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a.rows()) throw InputError("gather_rows: row index " + std::to_string(index[r]) + " out of range");
    out.row(static_cast<Eigen::Index>(r)) = a.value().row(index[r]);
  }
  return t.push(std::move(out), false, {a}, [&t, a, idx = std::move(index)](const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    t.accumulate(a, ga);
  });
}

inline Tensor relu(Tensor a) {
  Tape& t = *a.tape();
  Matrix out = a.value().cwiseMax(0.0);
  return t.push(std::move(out), false, {a}, [&t, a](const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).cast<double>().matrix().cwiseProduct(g));
  });
}

inline Tensor sigmoid(Tensor a) {
  Tape& t = *a.tape();
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  Matrix s = out;
  return t.push(std::move(out), false, {a}, [&t, a, s = std::move(s)](const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

/// Row-wise log-softmax.
inline Tensor log_softmax(Tensor a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  Matrix probs = out.array().exp();
  return t.push(std::move(out), false, {a}, [&t, a, p = std::move(probs)](const Matrix& g) {
    Eigen::VectorXd gs = g.rowwise().sum();
    Matrix ga = g - (p.array().colwise() * gs.array()).matrix();
    t.accumulate(a, ga);
  });
}

inline Tensor square(Tensor a) {
  Tape& t = *a.tape();
  Matrix out = a.value().array().square();
  return t.push(std::move(out), false, {a}, [&t, a](const Matrix& g) {
    t.accumulate(a, 2.0 * a.value().cwiseProduct(g));
  });
}

inline Tensor sum(Tensor a) {
  Tape& t = *a.tape();
  return t.push(Matrix::Constant(1, 1, a.value().sum()), false, {a}, [&t, a](const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

inline Tensor mean(Tensor a) {
  if (a.value().size() == 0) throw InputError("mean of an empty tensor");
  Tape& t = *a.tape();
  const double n = static_cast<double>(a.value().size());
  return t.push(Matrix::Constant(1, 1, a.value().sum() / n), false, {a}, [&t, a, n](const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

/// Inverted dropout with an explicit seeded mask; identity when !train or rate == 0.
inline Tensor dropout(Tensor a, double rate, bool train, Rng& rng) {
  if (!train || rate <= 0.0) return a;
  if (rate >= 1.0) throw InputError("dropout rate must be < 1");
  Tape& t = *a.tape();
  const double keep = 1.0 - rate;
  Matrix mask(a.rows(), a.cols());
  // Column-major fill keeps the stream order independent of Eigen internals.
  for (Eigen::Index c = 0; c < mask.cols(); ++c) {
    for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  }
  Matrix out = a.value().cwiseProduct(mask);
  return t.push(std::move(out), false, {a}, [&t, a, m = std::move(mask)](const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(m));
  });
}

// ---------------------------------------------------------------------------
// Parameters and optimizer

struct Parameter {
  std::string name;
  Matrix value;
};

struct AdamConfig {
  double lr = 0.005;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;
};

/// One Adam update with decoupled weight decay (AdamW).
inline void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw InputError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size()) throw InputError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i]->value;
    const auto& g = grads[i];
    if (g.rows() != w.rows() || g.cols() != w.cols()) {
      throw InputError("adam_step: gradient shape " + Tape::shape_str(g) + " does not match parameter '" +
                       params[i]->name + "' " + Tape::shape_str(w));
    }
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    if (cfg.weight_decay != 0.0) w -= cfg.lr * cfg.weight_decay * w;
    Matrix mhat = state.m[i] / bc1;
    Matrix vhat = state.v[i] / bc2;
    w.array() -= cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.eps);
  }
}

/// Glorot-uniform initialisation.
inline Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) w(r, c) = rng.uniform(-limit, limit);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Checkpoints: "TRGNCKPT", version byte, u32 count, then per parameter
// u32 name length, name bytes, u64 rows, u64 cols, rows*cols little-endian
// float64 values in row-major order.

inline constexpr char kCheckpointMagic[8] = {'T', 'R', 'G', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw InputError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, std::span<const Parameter> params) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint8_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.rows()));
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.cols()));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) detail::put<double>(out, p.value(r, c));
    }
  }
}

inline std::vector<Parameter> load_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw InputError("not a checkpoint (bad magic)");
  }
  const auto version = detail::get<std::uint8_t>(in);
  if (version != kCheckpointVersion) throw InputError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get<std::uint32_t>(in);
  std::vector<Parameter> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get<std::uint32_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw InputError("checkpoint truncated");
    const auto rows = detail::get<std::uint64_t>(in);
    const auto cols = detail::get<std::uint64_t>(in);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = detail::get<double>(in);
    }
    out.push_back({std::move(name), std::move(m)});
  }
  return out;
}

}  // namespace trigon::ad
