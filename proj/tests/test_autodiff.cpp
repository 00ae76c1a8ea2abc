#include <gtest/gtest.h>

#include <sstream>

#include "gradcheck.hpp"
#include "trigon/autodiff.hpp"

using namespace trigon;
using namespace trigon::ad;

namespace {

Matrix rand_mat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

std::shared_ptr<const SparseMatrix> rand_sparse(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::vector<Eigen::Triplet<double>> t;
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      if (rng.bernoulli(0.4)) t.emplace_back(i, j, rng.normal());
  auto s = std::make_shared<SparseMatrix>(r, c);
  s->setFromTriplets(t.begin(), t.end());
  return s;
}

constexpr double kTol = 1e-4;

}  // namespace

TEST(Autodiff, MatmulValue) {
  Tape t;
  Matrix a(1, 2), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  EXPECT_EQ(matmul(t.constant(a), t.constant(b)).item(), 11.0);
}

TEST(Autodiff, ShapeMismatchNamesShapes) {
  Tape t;
  try {
    matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3)));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
}

TEST(Autodiff, ReluBackward) {
  Tape t;
  Matrix x(1, 2);
  x << -1, 2;
  auto p = t.parameter(x);
  t.backward(sum(relu(p)));
  EXPECT_EQ(p.grad()(0, 0), 0.0);
  EXPECT_EQ(p.grad()(0, 1), 1.0);
}

TEST(Autodiff, SumAndMeanSquareGrads) {
  {
    Tape t;
    auto w = t.parameter(Matrix::Constant(2, 2, 0.7));
    t.backward(sum(w));
    EXPECT_EQ(w.grad(), Matrix::Ones(2, 2));
  }
  {
    Tape t;
    auto w = t.parameter(Matrix::Constant(1, 1, 3.0));
    t.backward(mean(square(w)));
    EXPECT_EQ(w.grad()(0, 0), 6.0);
  }
}

TEST(Autodiff, NonScalarBackwardThrows) {
  Tape t;
  auto w = t.parameter(Matrix::Ones(2, 2));
  EXPECT_THROW(t.backward(w), InputError);
}

TEST(Autodiff, LogSoftmaxRowsNormalized) {
  Rng rng(1);
  Tape t;
  auto y = log_softmax(t.constant(rand_mat(6, 4, rng) * 30));
  for (Eigen::Index r = 0; r < 6; ++r) EXPECT_NEAR(y.value().row(r).array().exp().sum(), 1.0, 1e-9);
}

TEST(Autodiff, PrimitiveGradients) {
  Rng rng(2);
  const Matrix a = rand_mat(5, 4, rng), b = rand_mat(4, 3, rng), c = rand_mat(5, 4, rng), row = rand_mat(1, 4, rng);
  auto sp = rand_sparse(6, 5, rng);
  using gradcheck::max_rel_error;
  using L = const std::vector<Tensor>&;
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(matmul(x[0], x[1]))); }, {a, b}), kTol);
  EXPECT_LT(max_rel_error([&](Tape&, L x) { return sum(square(sparse_matmul(sp, x[0]))); }, {a}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(add(x[0], x[1]))); }, {a, c}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(sub(x[0], x[1]))); }, {a, c}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(add_row(x[0], x[1]))); }, {a, row}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(scalar_mul(x[0], -2.5))); }, {a}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(add_scalar(x[0], 0.3))); }, {a}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(elementwise_mul(x[0], x[1])); }, {a, c}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return div_scalar(sum(square(x[0])), sum(square(x[1]))); }, {a, c}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(concat_cols({x[0], x[1]}))); }, {a, c}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(gather_rows(x[0], {4, 0, 0, 2}))); }, {a}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(relu(x[0]))); }, {a}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return sum(square(sigmoid(x[0]))); }, {a}), kTol);
  EXPECT_LT(max_rel_error([&](Tape& t, L x) { return sum(elementwise_mul(log_softmax(x[0]), t.constant(c))); }, {a}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) { return mean(square(x[0])); }, {a}), kTol);
  EXPECT_LT(max_rel_error([](Tape&, L x) {
              Rng r(5);
              return sum(square(dropout(x[0], 0.4, true, r)));
            }, {a}), kTol);
}

TEST(Autodiff, CompositeMlpGradient) {
  Rng rng(3);
  const Matrix x = rand_mat(5, 4, rng), w1 = rand_mat(4, 3, rng), b1 = rand_mat(1, 3, rng), w2 = rand_mat(3, 3, rng),
               w3 = rand_mat(3, 2, rng);
  auto f = [&](Tape& t, const std::vector<Tensor>& p) {
    auto h = relu(add_row(matmul(t.constant(x), p[0]), p[1]));
    h = sigmoid(matmul(h, p[2]));
    return mean(square(log_softmax(matmul(h, p[3]))));
  };
  EXPECT_LT(gradcheck::max_rel_error(f, {w1, b1, w2, w3}), kTol);
  auto g = [&](Tape& t, const std::vector<Tensor>& p) { return mean(relu(matmul(t.constant(x), p[0]))); };
  EXPECT_LT(gradcheck::max_rel_error(g, {w1}), kTol);
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  Tape t;
  auto w = t.parameter(Matrix::Constant(1, 1, 2.0));
  t.backward(sum(add(square(w), scalar_mul(w, 3.0))));
  EXPECT_EQ(w.grad()(0, 0), 7.0);
}

TEST(Autodiff, DropoutEvalIsIdentityAndSeeded) {
  Rng rng(4);
  Tape t;
  auto x = t.constant(rand_mat(4, 4, rng));
  Rng r1(9), r2(9);
  EXPECT_EQ(dropout(x, 0.5, false, r1).id(), x.id());
  auto a = dropout(x, 0.5, true, r1).value();
  auto b = dropout(x, 0.5, true, r2).value();
  EXPECT_EQ(a, b);
}

TEST(Adam, ZeroGradientNoDecayUnchanged) {
  Parameter p{"w", Matrix::Constant(2, 2, 1.5)};
  Parameter* ps[] = {&p};
  Matrix g[] = {Matrix::Zero(2, 2)};
  AdamState s;
  adam_step(ps, g, s, {0.1, 0.0});
  EXPECT_EQ(p.value, Matrix::Constant(2, 2, 1.5));
}

TEST(Adam, DescendsAndConverges) {
  Parameter p{"w", Matrix::Constant(1, 1, 1.0)};
  Parameter* ps[] = {&p};
  AdamState s;
  Matrix g[] = {2 * p.value};
  adam_step(ps, g, s, {0.1, 0.0});
  EXPECT_LT(p.value(0, 0), 1.0);

  Parameter q{"v", Matrix::Constant(3, 1, 2.0)};
  Parameter* qs[] = {&q};
  AdamState st;
  std::size_t steps = 0;
  for (; steps < 2000 && q.value.cwiseAbs().maxCoeff() > 1e-6; ++steps) {
    Matrix gq[] = {2 * q.value};
    adam_step(qs, gq, st, {0.1 * std::pow(0.99, double(steps)), 0.0});
  }
  EXPECT_LE(q.value.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Checkpoint, RoundTripAndBadMagic) {
  Rng rng(6);
  std::vector<Parameter> ps{{"W0", rand_mat(3, 2, rng)}, {"b0", rand_mat(1, 2, rng)}};
  std::stringstream io;
  save_checkpoint(io, ps);
  auto back = load_checkpoint(io);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "W0");
  EXPECT_EQ(back[0].value, ps[0].value);
  EXPECT_EQ(back[1].value, ps[1].value);
  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(load_checkpoint(bad), InputError);
}

TEST(Autodiff, DeterministicForwardAndGradients) {
  auto run = [] {
    Rng rng(7);
    Tape t;
    auto w = t.parameter(rand_mat(4, 3, rng));
    auto x = t.constant(rand_mat(5, 4, rng));
    Rng d(1);
    t.backward(mean(square(dropout(relu(matmul(x, w)), 0.3, true, d))));
    return w.grad();
  };
  EXPECT_EQ(run(), run());
}
