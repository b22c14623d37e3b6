#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "flop/embedding.hpp"
#include "flop/errors.hpp"
#include "flop/gradcheck.hpp"
#include "flop/layers.hpp"
#include "flop/ops.hpp"

using namespace flop;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.storage()) x = rng.normal() * scale;
  return t;
}

MaskContext injected(std::vector<double> u) {
  MaskContext ctx;
  ctx.mode = GateMode::sample;
  ctx.uniforms = [u](std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = u[i % u.size()];
    return out;
  };
  return ctx;
}

MaskContext deterministic() {
  MaskContext ctx;
  ctx.mode = GateMode::deterministic;
  return ctx;
}

void set_alpha(ComponentGate& gate, std::vector<double> alpha) {
  gate.hard_concrete()->alpha().value() = Tensor::vector(std::move(alpha));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Dense reference: x (P diag(z) Q)^T + b.
Tensor dense_reference(const Tensor& x, const Tensor& p, const Tensor& q, const std::vector<double>& z,
                       const Tensor* bias) {
  Tensor y(Shape{x.rows(), p.rows()});
  for (std::size_t n = 0; n < x.rows(); ++n)
    for (std::size_t o = 0; o < p.rows(); ++o) {
      double acc = bias ? (*bias)[o] : 0.0;
      for (std::size_t k = 0; k < p.cols(); ++k) {
        double qx = 0.0;
        for (std::size_t i = 0; i < q.cols(); ++i) qx += q.at(k, i) * x.at(n, i);
        acc += p.at(o, k) * z[k] * qx;
      }
      y.at(n, o) = acc;
    }
  return y;
}

}  // namespace

TEST(StartingRank, Formula) {
  EXPECT_EQ(starting_rank(512, 512), 256u);
  EXPECT_EQ(starting_rank(1024, 4096), 819u);
  EXPECT_EQ(starting_rank(1, 1), 1u);
  for (std::size_t d1 : {3u, 17u, 100u})
    for (std::size_t d2 : {5u, 64u, 333u}) {
      const std::size_t r = starting_rank(d1, d2);
      EXPECT_LE(r * (d1 + d2), d1 * d2);
      EXPECT_LE(r, std::min(d1, d2));
    }
}

TEST(FactorizedLinear, OpenGatesEqualUnfactorizedProduct) {
  Rng rng(1);
  FactorizedLinear layer("f", 6, 4, 3, GateKind::hard_concrete, true, {}, rng);
  layer.bias()->value() = random_tensor({4}, rng);
  const Tensor x = random_tensor({5, 6}, rng);
  Graph g;
  layer.begin_batch(g, {});
  Var y = layer.forward(g, g.constant(x));
  const Tensor ref = dense_reference(x, layer.p().value(), layer.q().value(), {1, 1, 1}, &layer.bias()->value());
  EXPECT_LT(max_abs_diff(y.value(), ref), 1e-12);
}

TEST(FactorizedLinear, ClosedGatesGiveBiasOnly) {
  Rng rng(2);
  FactorizedLinear layer("f", 6, 4, 3, GateKind::hard_concrete, true, {}, rng);
  layer.bias()->value() = Tensor::vector({1, 2, 3, 4});
  set_alpha(layer.gate(), {-50, -50, -50});
  Graph g;
  layer.begin_batch(g, injected({0.5}));
  Var y = layer.forward(g, g.constant(random_tensor({2, 6}, rng)));
  EXPECT_EQ(layer.last_inner_dim(), 0u);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o) EXPECT_EQ(y.value().at(n, o), static_cast<double>(o + 1));
}

TEST(FactorizedLinear, ActiveSubsetEqualsFullMaskedProduct) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    FactorizedLinear layer("f", 6, 4, 4, GateKind::hard_concrete, false, {}, rng);
    set_alpha(layer.gate(), {0.5, -0.2, 1.0, -3.0});
    const std::vector<double> u{0.3, 0.02, 0.8, 0.6};
    const Tensor x = random_tensor({3, 6}, rng);
    Graph g;
    layer.begin_batch(g, injected(u));
    Var y = layer.forward(g, g.constant(x));
    std::vector<double> z(4);
    for (std::size_t k = 0; k < 4; ++k)
      z[k] = hard_concrete_sample(layer.gate().hard_concrete()->alpha().value()[k], u[k], {});
    std::size_t nonzero = 0;
    for (double v : z) nonzero += v != 0.0;
    EXPECT_EQ(layer.last_inner_dim(), nonzero);
    EXPECT_LT(max_abs_diff(y.value(), dense_reference(x, layer.p().value(), layer.q().value(), z, nullptr)), 1e-12);
  }
}

TEST(FactorizedLinear, ForwardWithoutBeginBatchFails) {
  Rng rng(4);
  FactorizedLinear layer("f", 3, 3, 2, GateKind::hard_concrete, false, {}, rng);
  Graph g;
  EXPECT_THROW(layer.forward(g, g.constant(Tensor(Shape{1, 3}))), GraphError);
  layer.begin_batch(g, {});
  EXPECT_THROW(layer.forward(g, g.constant(Tensor(Shape{1, 4}))), DimensionError);
}

TEST(FactorizedLinear, SharedMaskAcrossBatchRows) {
  Rng rng(5);
  FactorizedLinear layer("f", 4, 4, 4, GateKind::hard_concrete, false, {}, rng);
  set_alpha(layer.gate(), {0, 0, 0, 0});
  MaskContext ctx;
  ctx.mode = GateMode::sample;
  ctx.rng = &rng;
  Graph g;
  layer.begin_batch(g, ctx);
  const Tensor x = random_tensor({1, 4}, rng);
  Tensor twice(Shape{2, 4});
  for (std::size_t i = 0; i < 4; ++i) twice.at(0, i) = twice.at(1, i) = x.at(0, i);
  Var y = layer.forward(g, g.constant(twice));
  Var y2 = layer.forward(g, g.constant(twice));
  EXPECT_EQ(layer.gate().samples_drawn(), 1u);
  for (std::size_t o = 0; o < 4; ++o) {
    EXPECT_EQ(y.value().at(0, o), y.value().at(1, o));
    EXPECT_EQ(y.value().at(0, o), y2.value().at(0, o));
  }
}

TEST(FactorizedLinear, GatedGradientsMatchFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    FactorizedLinear layer("f", 5, 3, 4, GateKind::hard_concrete, true, {}, rng);
    set_alpha(layer.gate(), {0.2, -0.5, 1.1, 0.4});
    layer.bias()->value() = random_tensor({3}, rng);
    const Tensor x = random_tensor({2, 5}, rng);
    const std::vector<double> u{0.45, 0.7, 0.3, 0.6};
    auto build = [&](Graph& g) {
      layer.begin_batch(g, injected(u));
      return sum(square(tanh(layer.forward(g, g.constant(x)))));
    };
    auto report = check_gradients(build, layer.parameters(), 1e-5, 1e-4);
    ASSERT_TRUE(report.passed()) << report.max_rel_error();
  }
}

TEST(FactorizedLinear, CompactionTwoByTwoHandCase) {
  const Tensor p = Tensor::matrix({{1, 2}, {3, 4}});
  ComponentGate gate(GateKind::hard_concrete, "g", {4.0, 4.0}, {}, 2.2);
  set_alpha(gate, {50.0, -50.0});  // z = (1, 0)
  FactorizedLinear layer("f", p, Tensor::identity(2), std::nullopt, std::move(gate));
  auto compacted = layer.compact(KeptValue::rectified_mean, nullptr);
  auto* c = dynamic_cast<CompactedLinear*>(compacted.get());
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->p().value(), Tensor::matrix({{1}, {3}}));
  EXPECT_EQ(c->q().value(), Tensor::matrix({{1, 0}}));
  const Tensor x = Tensor::matrix({{5, 7}});
  Graph g;
  compacted->begin_batch(g, {});
  // masked W = [[1, 0], [3, 0]], so y = (5, 15)
  EXPECT_EQ(compacted->forward(g, g.constant(x)).value(), Tensor::matrix({{5, 15}}));
  EXPECT_EQ(compacted->counts().total, 4.0);
}

TEST(FactorizedLinear, CompactionAllKeptAtOneIsIdentity) {
  Rng rng(7);
  FactorizedLinear layer("f", 3, 2, 2, GateKind::hard_concrete, false, {}, rng);
  set_alpha(layer.gate(), {50, 50});
  auto compacted = layer.compact(KeptValue::rectified_mean, nullptr);
  auto* c = dynamic_cast<CompactedLinear*>(compacted.get());
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->p().value(), layer.p().value());
  EXPECT_EQ(c->q().value(), layer.q().value());
}

TEST(FactorizedLinear, CompactionMatchesDeterministicMask) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    FactorizedLinear layer("f", 12, 10, 8, GateKind::hard_concrete, true, {}, rng);
    std::vector<double> alpha(8);
    for (double& a : alpha) a = rng.normal() * 3;
    set_alpha(layer.gate(), alpha);
    layer.bias()->value() = random_tensor({10}, rng);
    const Tensor x = random_tensor({4, 12}, rng);
    Graph g;
    layer.begin_batch(g, deterministic());
    const Tensor masked = layer.forward(g, g.constant(x)).value();
    std::vector<std::string> warnings;
    auto compacted = layer.compact(KeptValue::rectified_mean, &warnings);
    Graph g2;
    compacted->begin_batch(g2, {});
    EXPECT_LT(max_abs_diff(masked, compacted->forward(g2, g2.constant(x)).value()), 1e-10);
    const std::size_t k = layer.gate().frozen(KeptValue::rectified_mean).kept.size();
    EXPECT_EQ(compacted->counts().total, static_cast<double>(k * 22 + 10));
    EXPECT_EQ(warnings.empty(), k > 0);
  }
}

TEST(FactorizedLinear, CountsWithTwoKept) {
  Rng rng(9);
  FactorizedLinear layer("f", 8, 8, 4, GateKind::hard_concrete, true, {}, rng);
  set_alpha(layer.gate(), {50, 50, -50, -50});
  const ParamCounts c = layer.counts();
  EXPECT_EQ(c.total, 4.0 * 16 + 8);
  EXPECT_EQ(c.prunable, 64.0);
  EXPECT_EQ(c.kept_actual, 32.0);
  EXPECT_EQ(c.total_kept_actual(), 32.0 + 8);
}

TEST(FactorizedLinear, FreshModelExpectsNearlyAllKept) {
  Rng rng(10);
  FactorizedLinear layer("f", 16, 16, 8, GateKind::hard_concrete, false, {}, rng);
  const ParamCounts c = layer.counts();
  const double p0 = hard_concrete_open_probability(2.2, {});
  EXPECT_NEAR(c.kept_expected / c.prunable, p0, 1e-12);
  EXPECT_NEAR(p0, 0.99, 0.005);
}

TEST(ColumnGatedLinear, EqualsFactorizedWithIdentityFactor) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w = random_tensor({4, 6}, rng);
    const Tensor b = random_tensor({4}, rng);
    std::vector<double> alpha(6);
    for (double& a : alpha) a = rng.normal() * 2;
    std::vector<double> u(6);
    for (double& x : u) x = rng.open_uniform();

    ComponentGate cg(GateKind::hard_concrete, "c", std::vector<double>(6, 4.0), {}, 2.2);
    set_alpha(cg, alpha);
    ColumnGatedLinear col("c", w, b, std::move(cg));
    ComponentGate fg(GateKind::hard_concrete, "f", std::vector<double>(6, 10.0), {}, 2.2);
    set_alpha(fg, alpha);
    FactorizedLinear fac("f", w, Tensor::identity(6), b, std::move(fg));

    const Tensor x = random_tensor({3, 6}, rng);
    Graph g1, g2;
    col.begin_batch(g1, injected(u));
    fac.begin_batch(g2, injected(u));
    Var y1 = col.forward(g1, g1.constant(x));
    Var y2 = fac.forward(g2, g2.constant(x));
    EXPECT_EQ(y1.value(), y2.value());

    for (Parameter* p : col.parameters()) p->zero_grad();
    for (Parameter* p : fac.parameters()) p->zero_grad();
    g1.backward(sum(square(tanh(y1))));
    g2.backward(sum(square(tanh(y2))));
    EXPECT_EQ(col.w().grad(), fac.p().grad());
    EXPECT_EQ(col.bias()->grad(), fac.bias()->grad());
    EXPECT_EQ(col.gate().hard_concrete()->alpha().grad(), fac.gate().hard_concrete()->alpha().grad());
  }
}

TEST(ColumnGatedLinear, CompactionMatchesDeterministicMask) {
  Rng rng(12);
  ColumnGatedLinear layer("c", 7, 5, GateKind::hard_concrete, true, {}, rng);
  std::vector<double> alpha(7);
  for (double& a : alpha) a = rng.normal() * 3;
  set_alpha(layer.gate(), alpha);
  const Tensor x = random_tensor({3, 7}, rng);
  Graph g;
  layer.begin_batch(g, deterministic());
  const Tensor masked = layer.forward(g, g.constant(x)).value();
  auto compacted = layer.compact(KeptValue::rectified_mean, nullptr);
  Graph g2;
  compacted->begin_batch(g2, {});
  EXPECT_LT(max_abs_diff(masked, compacted->forward(g2, g2.constant(x)).value()), 1e-12);
  const std::size_t k = layer.gate().frozen(KeptValue::rectified_mean).kept.size();
  EXPECT_EQ(compacted->counts().total, static_cast<double>(k * 5 + 5));
}

TEST(Projection, SerializationRoundTripIsBitExact) {
  Rng rng(13);
  std::vector<std::unique_ptr<Projection>> layers;
  layers.push_back(std::make_unique<FactorizedLinear>("f", 5, 4, 3, GateKind::hard_concrete, true,
                                                      FactorInit{0, 2.2, 0.5, {}}, rng));
  layers.push_back(std::make_unique<FactorizedLinear>("a", 5, 4, 3, GateKind::diagonal, false, FactorInit{}, rng));
  layers.push_back(std::make_unique<ColumnGatedLinear>("c", 5, 4, GateKind::hard_concrete, true, FactorInit{}, rng));
  layers.push_back(std::make_unique<DenseLinear>("d", 5, 4, true, rng));
  layers.push_back(layers[0]->compact(KeptValue::rectified_mean, nullptr));
  const Tensor x = random_tensor({2, 5}, rng);
  for (auto& layer : layers) {
    std::stringstream ss;
    BinaryWriter w(ss, Precision::f64);
    layer->save(w);
    BinaryReader r(ss, Precision::f64);
    auto loaded = Projection::load(r);
    EXPECT_EQ(loaded->tag(), layer->tag());
    Graph g1, g2;
    layer->begin_batch(g1, deterministic());
    loaded->begin_batch(g2, deterministic());
    EXPECT_EQ(layer->forward(g1, g1.constant(x)).value(), loaded->forward(g2, g2.constant(x)).value());
  }
}

TEST(AdaptiveEmbedding, DefaultLayout) {
  const auto c = default_cluster_layout(100, 64);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].begin, 0u);
  EXPECT_EQ(c[0].end, 20u);
  EXPECT_EQ(c[1].end, 50u);
  EXPECT_EQ(c[2].end, 100u);
  EXPECT_EQ(c[0].dim, 64u);
  EXPECT_EQ(c[1].dim, 32u);
  EXPECT_EQ(c[2].dim, 16u);
}

TEST(AdaptiveEmbedding, MatchesExplicitDenseConstruction) {
  Rng rng(14);
  AdaptiveEmbedding emb("e", 3, {{0, 3, 4}, {3, 7, 4}}, GateKind::hard_concrete, {}, rng);
  const std::vector<std::vector<double>> alpha{{0.5, -1.0, 2.0, -0.3}, {1.0, 0.1, -2.0, 0.7}};
  for (std::size_t i = 0; i < 2; ++i) set_alpha(emb.clusters()[i].gate, alpha[i]);
  const std::vector<double> u{0.6, 0.3, 0.9, 0.5};
  const std::vector<std::size_t> ids{0, 4, 2, 6, 3};
  Graph g;
  emb.begin_batch(g, injected(u));
  const Tensor out = emb.lookup(g, ids).value();
  ASSERT_EQ(out.shape(), (Shape{5, 3}));
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const std::size_t ci = emb.cluster_of(ids[n]);
    const auto& c = emb.clusters()[ci];
    const std::size_t row = ids[n] - c.spec.begin;
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 4; ++k)
        ref += c.e.value().at(row, k) * hard_concrete_sample(alpha[ci][k], u[k], {}) * c.o.value().at(k, j);
      EXPECT_NEAR(out.at(n, j), ref, 1e-14);
    }
  }
}

TEST(AdaptiveEmbedding, OpenAndClosedGates) {
  Rng rng(15);
  AdaptiveEmbedding emb("e", 3, {{0, 2, 2}, {2, 4, 1}}, GateKind::hard_concrete, {}, rng);
  Graph g;
  emb.begin_batch(g, {});
  const Tensor open = emb.lookup(g, std::vector<std::size_t>{1}).value();
  const auto& c0 = emb.clusters()[0];
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_NEAR(open.at(0, j), c0.e.value().at(1, 0) * c0.o.value().at(0, j) + c0.e.value().at(1, 1) * c0.o.value().at(1, j),
                1e-15);
  for (auto& c : emb.clusters()) set_alpha(c.gate, std::vector<double>(c.spec.dim, -50.0));
  Graph g2;
  emb.begin_batch(g2, injected({0.5}));
  const Tensor closed = emb.lookup(g2, std::vector<std::size_t>{1, 3}).value();
  for (double v : closed.storage()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(emb.lookup(g2, std::vector<std::size_t>{4}), DimensionError);
}

TEST(AdaptiveEmbedding, BudgetAdditivityAndCompaction) {
  Rng rng(16);
  AdaptiveEmbedding emb("e", 8, default_cluster_layout(30, 8), GateKind::hard_concrete, {}, rng);
  for (auto& c : emb.clusters()) {
    std::vector<double> a(c.spec.dim);
    for (double& x : a) x = rng.normal() * 3;
    set_alpha(c.gate, a);
  }
  double budget = 0.0;
  for (const auto& c : emb.clusters())
    budget += static_cast<double>(c.gate.frozen(KeptValue::rectified_mean).kept.size() * (c.spec.count() + 8));
  EXPECT_EQ(emb.counts().kept_actual, budget);

  std::vector<std::size_t> ids(30);
  for (std::size_t i = 0; i < 30; ++i) ids[i] = i;
  Graph g;
  emb.begin_batch(g, deterministic());
  const Tensor masked = emb.lookup(g, ids).value();
  auto compacted = emb.compact(KeptValue::rectified_mean, nullptr);
  Graph g2;
  compacted->begin_batch(g2, {});
  EXPECT_LT(max_abs_diff(masked, compacted->lookup(g2, ids).value()), 1e-12);
  EXPECT_EQ(compacted->counts().total, budget);
}

TEST(AdaptiveEmbedding, GradientsMatchFiniteDifferences) {
  Rng rng(17);
  AdaptiveEmbedding emb("e", 3, {{0, 3, 3}, {3, 6, 2}}, GateKind::hard_concrete, {}, rng);
  set_alpha(emb.clusters()[0].gate, {0.3, -0.2, 0.8});
  set_alpha(emb.clusters()[1].gate, {0.1, 0.5});
  const std::vector<std::size_t> ids{0, 5, 2, 3, 0};
  auto build = [&](Graph& g) {
    emb.begin_batch(g, injected({0.4, 0.65, 0.5}));
    return sum(square(tanh(emb.lookup(g, ids))));
  };
  auto report = check_gradients(build, emb.parameters(), 1e-5, 1e-4);
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}

TEST(DiagonalMask, PrunedEntriesAreStructuralZeros) {
  Rng rng(18);
  FactorizedLinear layer("a", 4, 4, 4, GateKind::diagonal, false, {}, rng);
  DiagonalMask& mask = *layer.gate().diagonal();
  mask.prune(1);
  mask.prune(3);
  EXPECT_EQ(mask.kept_count(), 2u);
  MaskContext ctx;
  ctx.mode = GateMode::sample;
  Graph g;
  layer.begin_batch(g, ctx);
  layer.forward(g, g.constant(random_tensor({2, 4}, rng)));
  EXPECT_EQ(layer.last_inner_dim(), 2u);
  EXPECT_EQ(layer.counts().kept_actual, 16.0);
}
