#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "flop/binary_io.hpp"
#include "flop/errors.hpp"
#include "flop/gradcheck.hpp"
#include "flop/graph.hpp"
#include "flop/ops.hpp"
#include "flop/optim.hpp"
#include "flop/rng.hpp"

using namespace flop;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.storage()) x = rng.normal() * scale;
  return t;
}

}  // namespace

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Matmul, IdentityFactor) {
  Graph g;
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  Var c = matmul(g.constant(a), g.constant(Tensor::identity(2)));
  EXPECT_EQ(c.value(), a);
  Var d = matmul(g.constant(Tensor::identity(2)), g.constant(a));
  EXPECT_EQ(d.value(), a);
}

TEST(Matmul, Annihilation) {
  Graph g;
  Var c = matmul(g.constant(Tensor::matrix({{1, 0}, {0, 0}})), g.constant(Tensor::matrix({{0}, {5}})));
  EXPECT_EQ(c.value(), Tensor::matrix({{0}, {0}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph g;
  try {
    matmul(g.constant(Tensor(Shape{2, 3})), g.constant(Tensor(Shape{2, 3})));
    FAIL() << "expected a dimension error";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] * [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  Parameter a("a", random_tensor({3, 4}, rng));
  Parameter b("b", random_tensor({4, 2}, rng));
  auto report = check_gradients(
      [&](Graph& g) { return sum(square(matmul(g.parameter(a), g.parameter(b)))); }, {&a, &b}, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}

TEST(Elementwise, SigmoidAtZero) {
  Graph g;
  EXPECT_EQ(sigmoid(g.constant(Tensor::scalar(0.0))).value().item(), 0.5);
}

TEST(Elementwise, SigmoidGradientAtTwo) {
  Parameter x("x", Tensor::scalar(2.0));
  auto report = check_gradients([&](Graph& g) { return sum(sigmoid(g.parameter(x))); }, {&x}, 1e-5, 1e-6);
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
  const double s = 1.0 / (1.0 + std::exp(-2.0));
  Graph g;
  x.zero_grad();
  g.backward(sum(sigmoid(g.parameter(x))));
  EXPECT_NEAR(x.grad().item(), s * (1 - s), 1e-15);
}

TEST(Elementwise, ClampSaturates) {
  Parameter x("x", Tensor::vector({1.3, 1.0, 0.0, 0.5, -0.2}));
  Graph g;
  Var y = clamp(g.parameter(x), 0.0, 1.0);
  EXPECT_EQ(y.value()[0], 1.0);
  g.backward(sum(y));
  // Outside and exactly at the bounds the gradient is zero; inside it is one.
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 0.0);
  EXPECT_EQ(x.grad()[3], 1.0);
  EXPECT_EQ(x.grad()[4], 0.0);
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
  Graph g;
  EXPECT_THROW(log(g.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  EXPECT_THROW(log(g.constant(Tensor::scalar(-1.0))), DomainError);
}

TEST(Elementwise, BroadcastOnlyScalarOrEqual) {
  Graph g;
  Var a = g.constant(Tensor(Shape{2, 2}, 1.0));
  EXPECT_NO_THROW(add(a, g.constant(Tensor::scalar(2.0))));
  EXPECT_THROW(add(a, g.constant(Tensor(Shape{2}))), DimensionError);
}

TEST(Graph, NonFiniteForwardIsRejected) {
  Graph g;
  Var big = g.constant(Tensor::scalar(1e308));
  EXPECT_THROW(scale(big, 10.0), NumericError);
}

TEST(Backward, SumGivesOnes) {
  Parameter w("w", Tensor::matrix({{1, 2}, {3, 4}}));
  Graph g;
  g.backward(sum(g.parameter(w)));
  EXPECT_EQ(w.grad(), Tensor(Shape{2, 2}, 1.0));
}

TEST(Backward, SquareSum) {
  Parameter w("w", Tensor::matrix({{1, 2}}));
  Graph g;
  Var v = g.parameter(w);
  g.backward(sum(mul(v, v)));
  EXPECT_EQ(w.grad(), Tensor::matrix({{2, 4}}));
}

TEST(Backward, RejectsNonScalarAndDoubleCalls) {
  Parameter w("w", Tensor::vector({1, 2}));
  Graph g;
  Var v = g.parameter(w);
  EXPECT_THROW(g.backward(v), DimensionError);
  Var loss = sum(v);
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), GraphError);
  g.reset();
  w.zero_grad();
  EXPECT_NO_THROW(g.backward(sum(g.parameter(w))));
}

TEST(Backward, EveryReachableNodeHasMatchingGradient) {
  Rng rng(5);
  Parameter a("a", random_tensor({3, 2}, rng));
  Graph g;
  Var x = g.parameter(a);
  Var h = tanh(x);
  Var loss = sum(h);
  g.backward(loss);
  EXPECT_EQ(h.grad().shape(), h.shape());
  EXPECT_EQ(x.grad().shape(), x.shape());
}

// Every differentiable op against central differences on random inputs.
TEST(GradCheck, AllOperationsOnRandomInstances) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Parameter a("a", random_tensor({3, 4}, rng));
    Parameter b("b", random_tensor({4, 5}, rng));
    Parameter c("c", random_tensor({3, 4}, rng));
    Parameter v("v", random_tensor({4}, rng));
    Parameter pos("pos", Tensor(Shape{3, 4}));
    for (double& x : pos.value().storage()) x = 0.5 + rng.uniform();
    Parameter bt("bt", random_tensor({5, 4}, rng));
    const std::vector<std::size_t> idx{2, 0, 2};
    const std::vector<std::size_t> cols{3, 1};
    const std::vector<std::size_t> targets{1, 4, 0};

    auto build = [&](Graph& g) {
      Var A = g.parameter(a), B = g.parameter(b), C = g.parameter(c), V = g.parameter(v);
      Var terms = sum(square(matmul(A, B)));
      terms = add(terms, sum(mul(sigmoid(A), tanh(C))));
      terms = add(terms, sum(log(g.parameter(pos))));
      terms = add(terms, mean(sub(scale(A, 0.7), add_scalar(C, 0.3))));
      terms = add(terms, sum(mul_row(add_row(A, V), V)));
      terms = add(terms, sum(square(gather(V, idx))));
      terms = add(terms, sum(square(gather_rows(A, idx))));
      terms = add(terms, sum(tanh(gather_cols(C, cols))));
      terms = add(terms, sum(square(slice_rows(A, 1, 2))));
      std::vector<Var> parts{A, C};
      terms = add(terms, sum(tanh(concat_rows(parts))));
      terms = add(terms, sum(square(matmul_nt(A, g.parameter(bt)))));
      terms = add(terms, cross_entropy(matmul(A, B), targets));
      terms = add(terms, sum(abs(add_scalar(C, 10.0))));
      return terms;
    };
    auto report = check_gradients(build, {&a, &b, &c, &v, &pos, &bt}, 1e-5, 1e-4);
    ASSERT_TRUE(report.passed()) << "trial " << trial << " max rel error " << report.max_rel_error();
  }
}

TEST(GradCheck, AssembleRows) {
  Rng rng(12);
  Parameter p0("p0", random_tensor({2, 3}, rng));
  Parameter p1("p1", random_tensor({1, 3}, rng));
  auto report = check_gradients(
      [&](Graph& g) {
        std::vector<Var> parts{g.parameter(p0), g.parameter(p1)};
        Var m = assemble_rows(parts, {{0, 2}, {1}}, 3, 3);
        return sum(square(tanh(m)));
      },
      {&p0, &p1});
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Graph g;
  Var ce = cross_entropy(g.constant(Tensor(Shape{4, 64}, 0.25)), std::vector<std::size_t>{0, 5, 63, 17});
  EXPECT_NEAR(ce.value().item(), std::log(64.0), 1e-12);
}

TEST(Determinism, IdenticalSeedsGiveIdenticalOutputs) {
  auto run = [] {
    Rng rng(99);
    Parameter a("a", random_tensor({8, 8}, rng));
    Graph g;
    return tanh(matmul(g.parameter(a), g.parameter(a))).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
  Rng rng(1);
  Parameter w("w", random_tensor({3, 3}, rng));
  const Tensor before = w.value();
  Sgd sgd({&w}, {});
  Adam adam({&w}, {});
  for (int i = 0; i < 3; ++i) {
    w.zero_grad();
    sgd.step();
    adam.step();
  }
  EXPECT_EQ(w.value(), before);
}

TEST(Optimizer, SgdMomentumArithmetic) {
  Parameter w("w", Tensor::scalar(1.0));
  SgdOptions o;
  o.momentum = 0.5;
  o.schedule = {0.1, 0};
  Sgd sgd({&w}, o);
  w.grad() = Tensor::scalar(2.0);
  sgd.step();  // v = 2, w = 1 - 0.2
  EXPECT_DOUBLE_EQ(w.value().item(), 0.8);
  sgd.step();  // v = 0.5 * 2 + 2 = 3
  EXPECT_DOUBLE_EQ(w.value().item(), 0.8 - 0.3);
}

TEST(Optimizer, InverseSqrtSchedule) {
  InverseSqrtSchedule s{1.0, 4};
  EXPECT_DOUBLE_EQ(s.at(0), 0.25);
  EXPECT_DOUBLE_EQ(s.at(3), 1.0);
  EXPECT_DOUBLE_EQ(s.at(15), 0.5);
  EXPECT_DOUBLE_EQ((InverseSqrtSchedule{0.3, 0}).at(1000), 0.3);
}

TEST(Optimizer, ClipGradNorm) {
  Parameter a("a", Tensor::vector({0, 0}));
  a.grad() = Tensor::vector({3, 4});
  EXPECT_DOUBLE_EQ(clip_grad_norm({&a}, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(a.grad()[1], 0.8, 1e-15);
}

TEST(Rng, StateRoundTrip) {
  Rng a(7);
  a.normal();
  const std::string s = a.state();
  const double x = a.uniform();
  Rng b;
  b.set_state(s);
  EXPECT_EQ(b.uniform(), x);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.open_uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(BinaryIo, RoundTripIsLittleEndianAndExact) {
  std::stringstream ss;
  BinaryWriter w(ss, Precision::f64);
  w.u32(0x01020304u);
  w.u64(5);
  w.f64(-0.1);
  w.str("gate");
  w.tensor(Tensor::matrix({{1.0 / 3.0, 2}, {3, 4}}));
  const std::string bytes = ss.str();
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0x04);
  BinaryReader r(ss, Precision::f64);
  EXPECT_EQ(r.u32(), 0x01020304u);
  EXPECT_EQ(r.u64(), 5u);
  EXPECT_EQ(r.f64(), -0.1);
  EXPECT_EQ(r.str(), "gate");
  EXPECT_EQ(r.tensor(), Tensor::matrix({{1.0 / 3.0, 2}, {3, 4}}));
  EXPECT_THROW(r.u8(), FormatError);
}
