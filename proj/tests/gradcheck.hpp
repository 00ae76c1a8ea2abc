#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "trigon/autodiff.hpp"

namespace gradcheck {

using trigon::ad::Matrix;
using trigon::ad::Tape;
using trigon::ad::Tensor;

// Builds a scalar loss from leaves recorded on a fresh tape.
using Builder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Max over every input entry of |analytic - central difference| /
// max(|analytic|, |numeric|, floor).
inline double max_rel_error(const Builder& f, const std::vector<Matrix>& inputs, double h = 1e-6,
                            double floor = 1e-3) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& x : inputs) leaves.push_back(tape.parameter(x));
    auto loss = f(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(l.grad());
  }
  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& x : xs) leaves.push_back(tape.constant(x));
    return f(tape, leaves).item();
  };
  double worst = 0.0;
  std::vector<Matrix> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (Eigen::Index r = 0; r < xs[k].rows(); ++r) {
      for (Eigen::Index c = 0; c < xs[k].cols(); ++c) {
        const double orig = xs[k](r, c);
        xs[k](r, c) = orig + h;
        const double up = eval(xs);
        xs[k](r, c) = orig - h;
        const double down = eval(xs);
        xs[k](r, c) = orig;
        const double num = (up - down) / (2 * h);
        const double a = analytic[k](r, c);
        worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor}));
      }
    }
  }
  return worst;
}

}  // namespace gradcheck
