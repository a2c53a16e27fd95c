#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ccsafe/prodplan.hpp"
#include "ccsafe/prodplan_experiment.hpp"
#include "ccsafe/qp.hpp"
#include "grid_oracle.hpp"

namespace ccsafe::prodplan {
namespace {

using testing::GridBest;
using testing::grid_search;
using testing::objective_of;
using testing::refined_grid;

PlanningInstance loose_instance() {
  PlanningInstance inst;
  inst.p = {4.0, 3.0, 2.0, 5.0};
  inst.k = {1.0, 0.5, 1.5, 1.0};
  inst.b = {100.0, 100.0, 100.0, 100.0};
  return inst;
}

TEST(PlanProduction, MatchesGridOracleOnRandomInstances) {
  Rng rng(100);
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    Vec4 o;
    for (auto& v : o) v = rng.uniform(0.0, kMaxDemand);
    Mask4 stop{};
    for (auto& s : stop) s = rng.uniform() < 0.2;
    const auto d = plan_production(o, stop, inst);
    const auto g = refined_grid(o, stop, inst);
    const double solved = objective_of(d.u, o, inst);
    EXPECT_LE(material_residual(d, inst), 1e-9);
    EXPECT_LE(solved, g.value + 1e-9) << "instance " << t;
    EXPECT_LE(g.value - solved, 1e-3) << "instance " << t;
    // The Hessian is diag(2k), so a grid point with objective gap delta lies within sqrt(delta / min k) of the
    // optimum. Along a flat active face that radius can exceed the grid spacing.
    const double k_min = *std::min_element(inst.k.begin(), inst.k.end());
    const double radius = std::max(0.02, std::sqrt(std::max(0.0, g.value - solved) / k_min) + 1e-9);
    for (std::size_t i = 0; i < kNumProducts; ++i) {
      EXPECT_NEAR(d.u[i], g.u[i], radius) << "instance " << t << " product " << i;
      EXPECT_GE(d.u[i], 0.0);
      EXPECT_LE(d.u[i], kMaxQuantity + 1e-12);
      if (stop[i]) {
        EXPECT_EQ(d.u[i], 0.0);
      }
    }
    EXPECT_DOUBLE_EQ(planning_objective(d.u, o, inst), solved);
  }
}

// Two free products on a dense 0.01 grid with no refinement.
TEST(PlanProduction, MatchesDenseGridWithTwoFreeProducts) {
  Rng rng(101);
  for (int t = 0; t < 10; ++t) {
    const auto inst = random_instance(rng);
    Vec4 o;
    for (auto& v : o) v = rng.uniform(0.0, kMaxDemand);
    const Mask4 stop{false, true, false, true};
    const auto d = plan_production(o, stop, inst);
    const auto g = grid_search(o, stop, inst, {0, 0, 0, 0}, {10, 10, 10, 10}, 0.01);
    EXPECT_LE(objective_of(d.u, o, inst), g.value + 1e-9);
    EXPECT_LE(g.value - objective_of(d.u, o, inst), 1e-2);
    EXPECT_NEAR(d.u[0], g.u[0], 0.02);
    EXPECT_NEAR(d.u[2], g.u[2], 0.02);
  }
}

TEST(PlanProduction, StopAllGivesZero) {
  const auto inst = loose_instance();
  const auto d = plan_production({5, 5, 5, 5}, {true, true, true, true}, inst);
  EXPECT_EQ(d.u, (Vec4{0, 0, 0, 0}));
  EXPECT_EQ(revenue(d, {5, 5, 5, 5}, inst), 0.0);
}

TEST(PlanProduction, SingleProductUsesTheUnconstrainedMaximizer) {
  const auto inst = loose_instance();
  const Mask4 only_first{false, true, true, true};
  for (double o : {0.0, 1.0, 3.0, 5.0}) {
    const auto d = plan_production({o, 0, 0, 0}, only_first, inst);
    const double expected = std::clamp((inst.p[0] + inst.k[0] * o) / (2.0 * inst.k[0]), 0.0, kMaxQuantity);
    EXPECT_NEAR(d.u[0], expected, 1e-12);
  }
  // (3 + 0.5 * 30) / 1 = 18 clamps to the box.
  const auto d = plan_production({0, 30, 0, 0}, {true, false, true, true}, inst);
  EXPECT_NEAR(d.u[1], kMaxQuantity, 1e-12);
}

TEST(PlanProduction, ResidualStaysNonPositive) {
  Rng rng(102);
  for (int t = 0; t < 500; ++t) {
    const auto inst = random_instance(rng);
    Vec4 o;
    for (auto& v : o) v = rng.uniform(0.0, kMaxDemand);
    EXPECT_LE(material_residual(plan_production(o, {}, inst), inst), 1e-9);
  }
}

TEST(PlanWithLoss, ZeroLambdaMatchesPlanProduction) {
  Rng rng(103);
  const auto inst = random_instance(rng);
  const Vec4 o{4, 5, 6, 7}, s{1, 2, 3, 4};
  const auto a = plan_production(o, {}, inst);
  const auto b = plan_with_loss(o, s, 0.0, {}, inst);
  for (std::size_t i = 0; i < kNumProducts; ++i) EXPECT_NEAR(a.u[i], b.u[i], 1e-12);
  EXPECT_THROW(plan_with_loss(o, s, -1.0, {}, inst), ValidationError);
}

TEST(Revenue, Examples) {
  const auto inst = loose_instance();
  EXPECT_EQ(revenue(Vec4{0, 0, 0, 0}, Vec4{3, 3, 3, 3}, inst.p, inst.k), 0.0);
  const Vec4 s{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(revenue(s, s, inst.p, inst.k), 4.0 * 1 + 3.0 * 2 + 2.0 * 3 + 5.0 * 4);
  EXPECT_DOUBLE_EQ(revenue(std::vector<double>{2}, std::vector<double>{3}, std::vector<double>{4},
                           std::vector<double>{1}),
                   10.0);
}

std::vector<std::vector<double>> histories(std::vector<double> a, std::vector<double> b, std::vector<double> c,
                                           std::vector<double> d) {
  return {std::move(a), std::move(b), std::move(c), std::move(d)};
}

TEST(MeanVarPlan, Examples) {
  const auto inst = loose_instance();
  const std::vector<double> fives(kHistory, 5.0), twos(kHistory, 2.0);
  std::vector<double> alternating(kHistory);
  for (std::size_t t = 0; t < kHistory; ++t) alternating[t] = t % 2 ? 4.0 : 2.0;

  const auto d0 = mean_var_plan(histories(fives, fives, fives, fives), 0.0, inst);
  EXPECT_EQ(d0.stopped, (Mask4{false, false, false, false}));
  EXPECT_NEAR(d0.u[0], (inst.p[0] + inst.k[0] * 5.0) / (2.0 * inst.k[0]), 1e-12);

  for (double coeff : {-5.0, 0.0, 10.0}) {
    EXPECT_TRUE(mean_var_plan(histories(twos, fives, fives, fives), coeff, inst).stopped[0]);
  }
  // mu = 3, sigma = 1: 3 - 1 < 3 stops; coefficient -1 gives 4 and keeps producing.
  const auto d1 = mean_var_plan(histories(fives, alternating, fives, fives), 1.0, inst);
  EXPECT_TRUE(d1.stopped[1]);
  EXPECT_EQ(d1.u[1], 0.0);
  EXPECT_FALSE(mean_var_plan(histories(fives, alternating, fives, fives), -1.0, inst).stopped[1]);
  EXPECT_THROW(mean_var_plan(histories(fives, fives, fives, {1.0}), 0.0, inst), ValidationError);
}

TEST(TwoStagePlan, StopsEstimatesBelowThree) {
  Rng rng(104);
  const auto inst = random_instance(rng);
  const auto d = twostage_plan({5, 2, 4, 2.999}, inst);
  EXPECT_EQ(d.stopped, (Mask4{false, true, false, true}));
  EXPECT_EQ(d.u[1], 0.0);
  EXPECT_EQ(d.u[3], 0.0);
  const auto manual = plan_production({5, 2, 4, 2.999}, {false, true, false, true}, inst);
  EXPECT_EQ(d.u, manual.u);
  EXPECT_EQ(twostage_plan({1, 1, 1, 1}, inst).u, (Vec4{0, 0, 0, 0}));
  EXPECT_EQ(twostage_plan({3, 3, 3, 3}, inst).stopped, (Mask4{false, false, false, false}));
}

TEST(AsymmetricLoss, ValuesAndGradient) {
  EXPECT_DOUBLE_EQ(asymmetric_loss(5.0, 3.0, 1.0), 0.5 * 2.0 * 4.0);
  EXPECT_DOUBLE_EQ(asymmetric_loss(1.0, 3.0, 1.0), 0.5 * 4.0);
  Rng rng(105);
  const double h = 1e-6;
  for (int t = 0; t < 200; ++t) {
    const double s = rng.uniform(0, 10), r = rng.uniform(0, 100);
    double o = rng.uniform(0, 10);
    if (std::abs(o - s) < 1e-3) o += 0.01;
    const double fd = (asymmetric_loss(o + h, s, r) - asymmetric_loss(o - h, s, r)) / (2.0 * h);
    EXPECT_NEAR(asymmetric_loss_gradient(o, s, r), fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(EstimateLoss, GradientMatchesCentralDifferences) {
  Rng rng(106);
  const double h = 1e-6;
  int compared = 0;
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    Vec4 o, s;
    for (auto& v : o) v = rng.uniform(0.0, 8.0);
    for (auto& v : s) v = rng.uniform(0.0, 8.0);
    Mask4 stop{};
    stop[rng.index(kNumProducts)] = true;
    const double lambda = 0.005, reg = 5e-5;
    const auto e = estimate_loss(o, s, stop, inst, lambda, reg);
    bool ok = true;
    std::array<double, kNumProducts> fd{};
    for (std::size_t i = 0; i < kNumProducts; ++i) {
      Vec4 op = o, om = o;
      op[i] += h;
      om[i] -= h;
      const auto ep = estimate_loss(op, s, stop, inst, lambda, reg), em = estimate_loss(om, s, stop, inst, lambda, reg);
      // Skip points where the active set changes inside the difference window.
      for (std::size_t j = 0; j < kNumProducts; ++j) {
        if ((ep.plan.u[j] == 0.0) != (em.plan.u[j] == 0.0)) ok = false;
      }
      fd[i] = (ep.value - em.value) / (2.0 * h);
    }
    if (!ok) continue;
    for (std::size_t i = 0; i < kNumProducts; ++i) {
      EXPECT_NEAR(e.gradient[i], fd[i], 1e-4 * std::max(1.0, std::abs(fd[i]))) << "instance " << t;
    }
    ++compared;
  }
  EXPECT_GE(compared, 80);
}

TEST(EstimateLoss, ApproachesRealizedRevenueLoss) {
  // As lambda shrinks, the value tends to -revenue at the J-bar plan plus the regression term.
  Rng rng(107);
  const auto inst = random_instance(rng);
  const Vec4 o{5, 6, 4, 7}, s{4, 6, 5, 8};
  const auto e = estimate_loss(o, s, {}, inst, 1e-7, 0.0);
  EXPECT_NEAR(e.value, -revenue(e.plan, s, inst), 1e-4);
  EXPECT_THROW(estimate_loss(o, s, {}, inst, 0.0, 0.0), ValidationError);
}

TEST(GenDemand, SeededSeriesAreDeterministicAndBounded) {
  const auto a = gen_demand(7, 2000), b = gen_demand(7, 2000), c = gen_demand(8, 2000);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  ASSERT_EQ(a.size(), kNumProducts);
  for (const auto& series : a) {
    ASSERT_EQ(series.size(), 2000u);
    for (double v : series) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, kMaxDemand);
    }
  }
  EXPECT_THROW(gen_demand(1, 47), ValidationError);
}

TEST(GenDemand, LowDemandFractionLiesInBand) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& series : gen_demand(seed, 11284)) {
      const double f = fraction_below(series, kLowDemand);
      EXPECT_GE(f, 0.1);
      EXPECT_LE(f, 0.4);
    }
  }
}

TEST(GenDemand, PureSinusoidMatchesClosedForm) {
  Rng rng(9);
  DemandComponent c;
  c.mean = 5.0;
  c.amplitude = 4.0;
  c.noise_sd = 0.0;
  c.period = 24.0;
  c.phase = 0.3;
  const auto series = gen_demand(std::vector<DemandComponent>{c}, 24 * 1000, rng);
  // P(sin < x) = 1/2 + asin(x) / pi with x = (3 - 5) / 4.
  const double expected = 0.5 + std::asin(-0.5) / std::numbers::pi;
  EXPECT_NEAR(expected, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(sinusoid_below_fraction(5.0, 4.0, 3.0), expected, 1e-12);
  EXPECT_NEAR(fraction_below(series[0], 3.0), expected, 1.0 / 24.0);
  EXPECT_EQ(sinusoid_below_fraction(5.0, 0.0, 3.0), 0.0);
  EXPECT_EQ(sinusoid_below_fraction(1.0, 0.0, 3.0), 1.0);
}

TEST(RandomInstance, RespectsDeclaredRanges) {
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    EXPECT_NO_THROW(inst.validate());
    for (std::size_t i = 0; i < kNumProducts; ++i) {
      EXPECT_GE(inst.p[i], 2.0);
      EXPECT_LE(inst.p[i], 5.0);
      EXPECT_GE(inst.k[i], 0.5);
      EXPECT_LE(inst.b[i], 16.0);
    }
  }
  PlanningInstance bad = loose_instance();
  bad.k[0] = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(DiagonalQp, UnconstrainedAndActiveBound) {
  // min 0.5 (x0^2 + 2 x1^2) - (2 x0 + 2 x1): unconstrained optimum (2, 1).
  const std::vector<double> h{1.0, 2.0}, g{2.0, 2.0};
  Matrix<double> none(0, 2);
  const auto free = solve_diagonal_qp(h, g, none, std::vector<double>{});
  EXPECT_NEAR(free.x[0], 2.0, 1e-12);
  EXPECT_NEAR(free.x[1], 1.0, 1e-12);
  // x0 + x1 <= 1: KKT gives x0 = 2 - mu, x1 = 1 - mu / 2, so mu = 4/3.
  Matrix<double> G(1, 2, 1.0);
  const auto bound = solve_diagonal_qp(h, g, G, std::vector<double>{1.0});
  EXPECT_NEAR(bound.x[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(bound.x[1], 1.0 / 3.0, 1e-12);
  ASSERT_EQ(bound.multipliers.size(), 1u);
  EXPECT_NEAR(bound.multipliers[0], 4.0 / 3.0, 1e-12);
}

TEST(DiagonalQp, Errors) {
  const std::vector<double> h{1.0}, g{0.0};
  Matrix<double> G(2, 1);
  G(0, 0) = 1.0;
  G(1, 0) = -1.0;
  EXPECT_THROW(solve_diagonal_qp(h, g, G, std::vector<double>{-1.0, -1.0}), ValidationError);
  Matrix<double> many(21, 1, 1.0);
  EXPECT_THROW(solve_diagonal_qp(h, g, many, std::vector<double>(21, 1.0)), ValidationError);
  EXPECT_THROW(solve_diagonal_qp(std::vector<double>{0.0}, g, Matrix<double>(0, 1), std::vector<double>{}),
               ValidationError);
}

TEST(Experiment, LagWindowsScaleTheHistory) {
  std::vector<double> series(30);
  for (std::size_t t = 0; t < series.size(); ++t) series[t] = static_cast<double>(t % 10);
  const auto w = lag_windows(series, 24, 26);
  ASSERT_EQ(w.rows(), 2u);
  ASSERT_EQ(w.cols(), kHistory);
  EXPECT_DOUBLE_EQ(w(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(w(0, 23), 0.3);
  EXPECT_DOUBLE_EQ(w(1, 23), 0.4);
}

TEST(Experiment, AggregateAndBestRevenue) {
  SeedResult a, b;
  a.points = {{"framework", 0.1, 100.0, 10, 5, 0}, {"twostage", 1.0, 90.0, 10, 5, 1}};
  b.points = {{"framework", 0.1, 110.0, 10, 5, 0}, {"twostage", 1.0, 80.0, 10, 5, 0}};
  const auto agg = aggregate({a, b});
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_EQ(agg[0].method, "framework");
  EXPECT_DOUBLE_EQ(agg[0].mean_revenue, 105.0);
  EXPECT_DOUBLE_EQ(agg[1].mean_violation, 0.05);
  EXPECT_EQ(agg[0].seeds, 2u);
  EXPECT_DOUBLE_EQ(*best_revenue_within(agg, "framework", 0.01), 105.0);
  EXPECT_FALSE(best_revenue_within(agg, "twostage", 0.01).has_value());
  EXPECT_DOUBLE_EQ(*best_revenue_within(agg, "twostage", 0.05), 85.0);
}

TEST(Experiment, SmallSeedRunsAllMethods) {
  ExperimentConfig cfg;
  cfg.train_hours = 200;
  cfg.internal_train_hours = 100;
  cfg.internal_val_hours = 200;
  cfg.eval_hours = 300;
  cfg.warm_start_epochs = 5;
  cfg.framework_epochs = 1;
  cfg.twostage_epochs = 5;
  const auto r = run_seed(cfg, 3);
  std::size_t framework = 0, twostage = 0, meanvar = 0;
  for (const auto& p : r.points) {
    EXPECT_EQ(p.decisions, cfg.eval_hours * kNumProducts);
    EXPECT_LE(p.violations, p.produced);
    framework += p.method == "framework";
    twostage += p.method == "twostage";
    meanvar += p.method == "meanvar";
  }
  EXPECT_EQ(framework, cfg.val_rts.size());
  EXPECT_EQ(twostage, cfg.twostage_rs.size());
  EXPECT_EQ(meanvar, cfg.meanvar_coeffs.size());
  const auto again = run_seed(cfg, 3);
  EXPECT_DOUBLE_EQ(again.points.front().revenue, r.points.front().revenue);
}

}  // namespace
}  // namespace ccsafe::prodplan
