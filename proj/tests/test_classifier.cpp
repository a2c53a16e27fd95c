#include <gtest/gtest.h>

#include <cmath>

#include "ccsafe/bias.hpp"
#include "ccsafe/classifier.hpp"
#include "ccsafe/conservative.hpp"
#include "ccsafe/gradcheck.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

namespace ccsafe {
namespace {

using testing::graded_instance;
using testing::rebuilt_posterior;

MLPParams two_two_two() {
  MLPParams p;
  DenseLayer l1{Matrix<double>(2, 2), {0.5, -1.0}};
  l1.weights.data() = {1.0, -1.0, 2.0, 0.5};
  DenseLayer l2{Matrix<double>(2, 2), {0.1, -0.2}};
  l2.weights.data() = {1.0, 2.0, -1.0, 0.5};
  p.layers = {l1, l2};
  return p;
}

TEST(Forward, ZeroNetGivesZeroLogits) {
  Rng rng(1);
  const auto p = MLPParams::zeros_like(MLPParams::create(3, {4}, 2, rng));
  EXPECT_EQ(forward(p, std::vector<double>{1.0, -2.0, 3.0}), (std::vector<double>{0.0, 0.0}));
}

TEST(Forward, IdentityLayerPassesInputThrough) {
  MLPParams p;
  DenseLayer l{Matrix<double>(3, 3), {0.0, 0.0, 0.0}};
  for (std::size_t i = 0; i < 3; ++i) l.weights(i, i) = 1.0;
  p.layers = {l};
  const std::vector<double> x{-1.5, 0.0, 2.0};
  EXPECT_EQ(forward(p, x), x);
}

// Hidden pre-activations (-0.5, 2) rectify to (0, 2); output = (0 + 4 + 0.1, 0 + 1 - 0.2).
TEST(Forward, HandComputedTwoTwoTwo) {
  const auto z = forward(two_two_two(), std::vector<double>{1.0, 2.0});
  ASSERT_EQ(z.size(), 2u);
  EXPECT_DOUBLE_EQ(z[0], 4.1);
  EXPECT_DOUBLE_EQ(z[1], 0.8);
  EXPECT_THROW(forward(two_two_two(), std::vector<double>{1.0}), ValidationError);
}

TEST(Forward, BatchMatchesRowwise) {
  Rng rng(4);
  const auto p = MLPParams::create(3, {5, 4}, 2, rng);
  Matrix<double> x(6, 3);
  for (auto& v : x.data()) v = rng.normal();
  const auto z = forward_batch(p, x);
  for (std::size_t r = 0; r < 6; ++r) {
    const auto row = forward(p, x.row(r));
    EXPECT_EQ(row[0], z(r, 0));
    EXPECT_EQ(row[1], z(r, 1));
  }
}

TEST(MLPParams, ShapesAndValidation) {
  Rng rng(2);
  const auto p = MLPParams::create(4, {8, 6}, 3, rng);
  EXPECT_EQ(p.input_dim(), 4u);
  EXPECT_EQ(p.output_dim(), 3u);
  EXPECT_EQ(p.num_parameters(), 4u * 8 + 8 + 8 * 6 + 6 + 6 * 3 + 3);
  EXPECT_NO_THROW(p.validate());
  auto bad = p;
  bad.layers[1].weights = Matrix<double>(6, 7);
  EXPECT_THROW(bad.validate(), ValidationError);
  auto nan = p;
  nan.layers[0].bias[0] = std::nan("");
  EXPECT_THROW(nan.validate(), ValidationError);
}

TEST(Backward, ZeroLogitGradientGivesZero) {
  const auto g = backward(two_two_two(), std::vector<double>{1.0, 2.0}, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(g, MLPParams::zeros_like(two_two_two()));
}

TEST(Backward, IsLinearInTheLogitGradient) {
  Rng rng(3);
  const auto p = MLPParams::create(3, {5}, 2, rng);
  const std::vector<double> x{0.3, -0.2, 1.0};
  const std::vector<double> g1{1.0, -2.0}, g2{0.5, 3.0}, g12{1.5, 1.0};
  auto sum = backward(p, x, g1);
  sum.add_scaled(backward(p, x, g2), 1.0);
  const auto joint = backward(p, x, g12);
  for (std::size_t l = 0; l < sum.layers.size(); ++l) {
    for (std::size_t k = 0; k < sum.layers[l].weights.data().size(); ++k) {
      EXPECT_NEAR(sum.layers[l].weights.data()[k], joint.layers[l].weights.data()[k], 1e-12);
    }
  }
}

TEST(Backward, MatchesCentralDifferencesOnRandomNets) {
  Rng rng(11);
  const auto r = check_mlp(100, 1e-6, rng);
  EXPECT_EQ(r.instances, 100u);
  EXPECT_LE(r.max_rel, 1e-5);
}

TEST(Backward, HandComputedTwoTwoTwo) {
  // d z0 / d b2[0] = 1; d z0 / d W2[0][1] = h1 = 2; the dead first hidden unit passes nothing back.
  const auto g = backward(two_two_two(), std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 0.0});
  EXPECT_EQ(g.layers[1].bias, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(g.layers[1].weights.data(), (std::vector<double>{0.0, 2.0, 0.0, 0.0}));
  EXPECT_EQ(g.layers[0].bias, (std::vector<double>{0.0, 2.0}));
  EXPECT_EQ(g.layers[0].weights.data(), (std::vector<double>{0.0, 0.0, 2.0, 4.0}));
}

MLPParams scalar_net(double w, double b) {
  MLPParams p;
  DenseLayer l{Matrix<double>(1, 1, w), {b}};
  p.layers = {l};
  return p;
}

TEST(TrainStep, ZeroGradientLeavesParamsUnchanged) {
  const auto p = two_two_two();
  const std::vector<TrainSample> batch{{{1.0, 2.0}, {0.0, 0.0}}, {{-1.0, 0.5}, {0.0, 0.0}}};
  EXPECT_EQ(train_step(p, batch, TrainOptions{0.1, 0.0, 5e-4}), p);
}

TEST(TrainStep, SingleParameterMovesByLearningRateTimesGradient) {
  const auto p = scalar_net(2.0, 0.0);
  const double g = 3e-4, lr = 0.5;
  const auto next = train_step(p, {{{1.0}, {g}}}, TrainOptions{lr, 0.0, 5e-4});
  EXPECT_DOUBLE_EQ(next.layers[0].weights(0, 0), 2.0 - lr * g);
  EXPECT_DOUBLE_EQ(next.layers[0].bias[0], -lr * g);
  EXPECT_THROW(train_step(p, {}, TrainOptions{0.0, 0.0, 5e-4}), ValidationError);
}

TEST(TrainStep, ClipsReceivedGradients) {
  const auto p = scalar_net(1.0, 0.0);
  const auto next = train_step(p, {{{1.0}, {10.0}}}, TrainOptions{1.0, 0.0, 5e-4});
  EXPECT_DOUBLE_EQ(next.layers[0].weights(0, 0), 1.0 - 5e-4);
  const auto neg = train_step(p, {{{1.0}, {-10.0}}}, TrainOptions{1.0, 0.0, 5e-4});
  EXPECT_DOUBLE_EQ(neg.layers[0].weights(0, 0), 1.0 + 5e-4);
}

TEST(TrainStep, RegularizationShrinksLogits) {
  // Gradient of reg * z^2 / batch at z = w x = 2 is 2 * reg * z * x.
  const auto p = scalar_net(2.0, 0.0);
  const auto next = train_step(p, {{{1.0}, {0.0}}}, TrainOptions{0.1, 0.5, 5e-4});
  EXPECT_DOUBLE_EQ(next.layers[0].weights(0, 0), 2.0 - 0.1 * 2.0 * 0.5 * 2.0);
}

double mean_cross_entropy(const MLPParams& p, const std::vector<std::vector<double>>& xs,
                          const std::vector<std::size_t>& ys) {
  double total = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto z = forward(p, xs[k]);
    const double top = std::max(z[0], z[1]);
    const double lse = top + std::log(std::exp(z[0] - top) + std::exp(z[1] - top));
    total += lse - z[ys[k]];
  }
  return total / static_cast<double>(xs.size());
}

TEST(TrainStep, ToySeparableLossDecreases) {
  Rng rng(21);
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
  for (int k = 0; k < 64; ++k) {
    const std::size_t y = k % 2;
    xs.push_back({rng.normal(y == 1 ? 2.0 : -2.0, 0.5), rng.normal()});
    ys.push_back(y);
  }
  auto p = MLPParams::create(2, {8}, 2, rng);
  const double before = mean_cross_entropy(p, xs, ys);
  const TrainOptions opt{0.5, 0.0, 1e9};
  for (int step = 0; step < 100; ++step) {
    std::vector<TrainSample> batch;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const auto z = forward(p, xs[k]);
      const double p1 = 1.0 / (1.0 + std::exp(z[0] - z[1]));
      const double n = static_cast<double>(xs.size());
      batch.push_back({xs[k], {((1.0 - p1) - (ys[k] == 0 ? 1.0 : 0.0)) / n, (p1 - (ys[k] == 1 ? 1.0 : 0.0)) / n}});
    }
    p = train_step(p, batch, opt);
  }
  EXPECT_LT(mean_cross_entropy(p, xs, ys), 0.5 * before);
}

TEST(CrossEntropy, WarmStartReducesLoss) {
  Rng rng(6);
  InternalTestSet data(2);
  for (int k = 0; k < 200; ++k) {
    const std::size_t y = rng.index(2);
    data.add({{rng.normal(y == 1 ? 1.5 : -1.5, 1.0), rng.normal()}, y});
  }
  auto p = MLPParams::create(2, {16}, 2, rng);
  const double first = train_cross_entropy(p, data, {1, 32, 1e-2}, rng);
  const double later = train_cross_entropy(p, data, {20, 32, 1e-2}, rng);
  EXPECT_LT(later, first);
}

TEST(MLPCheckpoint, JsonRoundTripIsExact) {
  testing::TempDir dir;
  Rng rng(8);
  const auto p = MLPParams::create(5, {7, 3}, 2, rng);
  EXPECT_EQ(mlp_from_json(to_json(p)), p);
  save_mlp(p, dir / "m.json");
  EXPECT_EQ(load_mlp(dir / "m.json"), p);
  auto j = to_json(p);
  j["version"] = 99;
  EXPECT_THROW(mlp_from_json(j), ValidationError);
  testing::write_text(dir / "bad.json", "{not json");
  EXPECT_THROW(load_mlp(dir / "bad.json"), ParseError);
}

TEST(MLPParams, LipschitzBoundHoldsOnRandomPairs) {
  Rng rng(13);
  for (int net = 0; net < 10; ++net) {
    const auto p = MLPParams::create(3, {6, 6}, 2, rng);
    const double bound = p.lipschitz_bound();
    for (int t = 0; t < 100; ++t) {
      std::vector<double> x(3), y(3);
      for (auto& v : x) v = rng.normal();
      for (auto& v : y) v = rng.normal();
      const auto fx = forward(p, x), fy = forward(p, y);
      const double dout = std::hypot(fx[0] - fy[0], fx[1] - fy[1]);
      const double din = std::sqrt((x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]) +
                                   (x[2] - y[2]) * (x[2] - y[2]));
      EXPECT_LE(dout, bound * din + 1e-12);
    }
  }
  Matrix<double> diag(2, 2);
  diag(0, 0) = 3.0;
  diag(1, 1) = -5.0;
  EXPECT_NEAR(spectral_norm(diag), 5.0, 1e-12);
}

const std::vector<double> kHalf{0.5, 0.5};

TEST(BiasCorrect, AlreadyAtTargetLeavesZeroOffset) {
  Rng rng(30);
  const auto g = graded_instance(rng, 400, 3.0);
  const auto probe = bias_correct(g.logits, g.labels, 2, g.xi, kHalf, 0.1);
  const double p0 = rebuilt_posterior(g, kHalf, probe.safe_class, 0.0);
  const auto res = bias_correct(g.logits, g.labels, 2, g.xi, kHalf, p0);
  EXPECT_EQ(res.bias.v, (std::vector<double>{0.0, 0.0}));
  EXPECT_TRUE(res.achieved);
}

TEST(BiasCorrect, VacuousThresholdIsAlwaysMet) {
  Rng rng(31);
  const auto g = graded_instance(rng, 300, 2.0);
  const auto res = bias_correct(g.logits, g.labels, 2, g.xi, kHalf, 1.0);
  EXPECT_TRUE(res.achieved);
  EXPECT_LE(res.posterior, 1.0);
}

// Full table rebuild at the returned offset is the oracle; the gap must fit inside the last posterior jump.
TEST(BiasCorrect, GradedInstancesMeetTheTarget) {
  Rng rng(32);
  for (int t = 0; t < 30; ++t) {
    const auto g = graded_instance(rng, 300 + rng.index(300), rng.uniform(1.5, 4.0));
    const auto res = bias_correct(g.logits, g.labels, 2, g.xi, kHalf, g.r_t);
    ASSERT_TRUE(res.bracketed) << "instance " << t;
    const double rebuilt = rebuilt_posterior(g, kHalf, res.safe_class, res.bias.v[res.safe_class]);
    EXPECT_NEAR(rebuilt, res.posterior, 1e-12);
    EXPECT_LE(rebuilt, g.r_t + kProbTol);
    EXPECT_TRUE(res.achieved);
    EXPECT_LE(res.gap, res.jump + 1e-12);
    EXPECT_EQ(res.bias.v[1 - res.safe_class], 0.0);
    const auto table = build_normal_table(g.labels, 2, apply_bias(g.logits, res.bias), g.xi);
    EXPECT_NO_THROW(table.validate());
  }
}

TEST(BiasCorrect, IsDeterministic) {
  Rng a(40), b(40);
  const auto ga = graded_instance(a, 500, 2.5), gb = graded_instance(b, 500, 2.5);
  const auto ra = bias_correct(ga.logits, ga.labels, 2, ga.xi, kHalf, 0.05);
  const auto rb = bias_correct(gb.logits, gb.labels, 2, gb.xi, kHalf, 0.05);
  EXPECT_EQ(ra.bias, rb.bias);
  EXPECT_EQ(ra.posterior, rb.posterior);
}

TEST(BiasCorrect, Errors) {
  Rng rng(41);
  const auto g = graded_instance(rng, 50, 2.0);
  BiasCorrectionOptions opt;
  opt.unit_step = 0.0;
  EXPECT_THROW(bias_correct(g.logits, g.labels, 2, g.xi, kHalf, 0.1, opt), ValidationError);
  opt.unit_step = 0.01;
  opt.unsafe_state = 2;
  EXPECT_THROW(bias_correct(g.logits, g.labels, 2, g.xi, kHalf, 0.1, opt), ValidationError);
  EXPECT_THROW(bias_correct(Matrix<double>(0, 2), std::vector<std::size_t>{}, 2, 0.0, kHalf, 0.1), ValidationError);
}

TEST(BiasCorrect, ModelFormMatchesLogitForm) {
  Rng rng(42);
  const auto p = MLPParams::create(2, {6}, 2, rng);
  InternalTestSet set(2);
  for (int k = 0; k < 300; ++k) {
    const std::size_t y = rng.index(2);
    set.add({{rng.normal(y == 1 ? 1.0 : -1.0, 1.0), rng.normal()}, y});
  }
  std::vector<std::vector<double>> rows;
  for (const auto& r : set.records()) rows.push_back(forward(p, r.measurement));
  const auto direct = bias_correct(to_matrix(rows), set.labels(), 2, 0.1, kHalf, 0.2);
  const auto via_model = bias_correct(p, set, 0.1, kHalf, 0.2);
  EXPECT_EQ(direct.bias, via_model.bias);
}

TEST(ApplyBias, AddsToEveryRow) {
  const auto m = apply_bias(to_matrix({{1.0, 2.0}, {3.0, 4.0}}), BiasVector{{0.5, -1.0}});
  EXPECT_EQ(m, to_matrix({{1.5, 1.0}, {3.5, 3.0}}));
  EXPECT_THROW(apply_bias(std::vector<double>{1.0}, BiasVector{{0.5, -1.0}}), ValidationError);
}

}  // namespace
}  // namespace ccsafe
