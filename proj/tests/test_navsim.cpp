#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "ccsafe/navsim.hpp"
#include "ccsafe/navsim_train.hpp"

namespace ccsafe::navsim {
namespace {

WorldConfig five_by_five(int horizon) {
  WorldConfig c;
  c.width = 5;
  c.height = 5;
  c.num_hazards = 3;
  c.horizon = horizon;
  return c;
}

// Goal in the top-right corner, hazards on the middle row and next to the goal.
GridWorld fixture(int horizon) {
  return make_world(five_by_five(horizon), {0, 4}, {4, 0}, {{2, 2}, {1, 2}, {3, 0}});
}

TEST(GridWorld, ApplyMoveClampsAtWalls) {
  const auto w = fixture(0);
  EXPECT_EQ(apply_move(w, {0, 0}, Move::Up), (Cell{0, 0}));
  EXPECT_EQ(apply_move(w, {0, 0}, Move::Left), (Cell{0, 0}));
  EXPECT_EQ(apply_move(w, {4, 4}, Move::Right), (Cell{4, 4}));
  EXPECT_EQ(apply_move(w, {2, 3}, Move::Up), (Cell{2, 2}));
  EXPECT_EQ(apply_move(w, {2, 3}, Move::Stay), (Cell{2, 3}));
}

TEST(GridWorld, NominalMovePrefersTheLongerAxis) {
  const auto w = fixture(0);
  EXPECT_EQ(nominal_move(w, {0, 4}), Move::Right);  // dx = 4, dy = -4: ties go horizontal
  EXPECT_EQ(nominal_move(w, {4, 3}), Move::Up);
  EXPECT_EQ(nominal_move(w, {4, 0}), Move::Stay);
}

TEST(GridWorld, MakeWorldValidates) {
  EXPECT_THROW(make_world(five_by_five(0), {2, 2}, {4, 0}, {{2, 2}}), ValidationError);
  EXPECT_THROW(make_world(five_by_five(0), {1, 1}, {1, 1}, {}), ValidationError);
  EXPECT_THROW(make_world(five_by_five(0), {1, 1}, {7, 1}, {}), ValidationError);
  WorldConfig bad = five_by_five(0);
  bad.false_alarm = 0.5;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = five_by_five(0);
  bad.horizon = -1;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Step, HazardEntryCollidesAndRelocates) {
  auto w = fixture(0);
  w.agent = {2, 3};
  Rng rng(1);
  const auto r = step(w, Move::Up, rng);
  EXPECT_TRUE(r.collided);
  EXPECT_FALSE(r.reached_goal);
  EXPECT_DOUBLE_EQ(r.reward, w.step_reward);
  EXPECT_FALSE(w.is_hazard(w.agent));
  EXPECT_FALSE(w.agent == w.goal);
}

TEST(Step, GoalPaysAndMoves) {
  auto w = fixture(0);
  w.agent = {4, 1};
  Rng rng(2);
  const auto r = step(w, Move::Up, rng);
  EXPECT_TRUE(r.reached_goal);
  EXPECT_DOUBLE_EQ(r.reward, w.step_reward + w.goal_reward);
  EXPECT_EQ(w.agent, (Cell{4, 0}));
  EXPECT_FALSE(w.goal == w.agent);
  EXPECT_FALSE(w.is_hazard(w.goal));
}

TEST(Step, PlainMoveCostsOneStep) {
  auto w = fixture(0);
  Rng rng(3);
  const auto r = step(w, Move::Right, rng);
  EXPECT_FALSE(r.collided);
  EXPECT_EQ(w.agent, (Cell{1, 4}));
  EXPECT_DOUBLE_EQ(r.reward, -0.01);
}

TEST(LabelAction, DirectHazardIsUnsafe) {
  auto w = fixture(0);
  w.agent = {2, 3};
  EXPECT_EQ(label_action(w, Move::Up), kUnsafe);
  EXPECT_EQ(label_action(w, Move::Down), kSafe);
}

TEST(LabelAction, HazardBeyondTheHorizonIsSafe) {
  // From (0, 3) moving Up reaches (0, 2); the nominal path then enters (1, 2) one step later.
  auto w0 = fixture(0);
  w0.agent = {0, 3};
  EXPECT_EQ(label_action(w0, Move::Up), kSafe);
  auto w1 = fixture(1);
  w1.agent = {0, 3};
  EXPECT_EQ(label_action(w1, Move::Up), kUnsafe);
}

// Independent rollout: greedy steps toward the goal on the true map, horizontal when |dx| >= |dy|.
std::size_t rollout_label(const GridWorld& w, Move first, int horizon) {
  auto clamp_step = [&](Cell c, int dx, int dy) {
    const Cell n{c.x + dx, c.y + dy};
    return (n.x >= 0 && n.y >= 0 && n.x < w.width && n.y < w.height) ? n : c;
  };
  static const std::map<Move, std::pair<int, int>> deltas{
      {Move::Up, {0, -1}}, {Move::Down, {0, 1}}, {Move::Left, {-1, 0}}, {Move::Right, {1, 0}}};
  Cell c = clamp_step(w.agent, deltas.at(first).first, deltas.at(first).second);
  for (int h = 0; h <= horizon; ++h) {
    if (w.hazards[static_cast<std::size_t>(c.y * w.width + c.x)]) return kUnsafe;
    if (c == w.goal) return kSafe;
    const int dx = w.goal.x - c.x, dy = w.goal.y - c.y;
    c = std::abs(dx) >= std::abs(dy) ? clamp_step(c, dx > 0 ? 1 : -1, 0) : clamp_step(c, 0, dy > 0 ? 1 : -1);
  }
  return kSafe;
}

TEST(LabelAction, MatchesIndependentRolloutOnFixture) {
  for (int horizon : {0, 1, 3}) {
    auto w = fixture(horizon);
    std::size_t unsafe = 0;
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 5; ++x) {
        const Cell c{x, y};
        if (w.is_hazard(c) || c == w.goal) continue;
        w.agent = c;
        for (Move m : {Move::Up, Move::Down, Move::Left, Move::Right}) {
          EXPECT_EQ(label_action(w, m), rollout_label(w, m, horizon))
              << "H=" << horizon << " cell (" << x << "," << y << ") move " << static_cast<int>(m);
          unsafe += label_action(w, m);
        }
      }
    }
    EXPECT_GT(unsafe, 0u);
  }
}

TEST(LabelAction, MatchesIndependentRolloutOnRandomWorlds) {
  Rng rng(4);
  WorldConfig c;
  c.horizon = 3;
  for (int t = 0; t < 200; ++t) {
    const auto w = generate_world(c, rng);
    for (Move m : {Move::Up, Move::Down, Move::Left, Move::Right}) {
      EXPECT_EQ(label_action(w, m), rollout_label(w, m, 3));
    }
  }
}

TEST(Measure, NoiselessReadingsMatchTheMap) {
  WorldConfig c = five_by_five(0);
  c.false_alarm = 0.0;
  auto w = make_world(c, {2, 3}, {4, 0}, {{2, 2}, {1, 2}, {3, 0}});
  Rng rng(5);
  const auto y = measure(w, rng);
  ASSERT_EQ(y.size(), kMeasurementDim);
  // N, NE, E, SE, S, SW, W, NW of (2, 3).
  EXPECT_EQ(std::vector<double>(y.begin(), y.begin() + 8),
            (std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0}));
  EXPECT_DOUBLE_EQ(y[8], 2.0 / 5.0);
  EXPECT_DOUBLE_EQ(y[9], -3.0 / 5.0);
  w.agent = {0, 0};
  const auto corner = measure(w, rng);
  EXPECT_EQ(corner[0], 0.0);
  EXPECT_EQ(corner[6], 0.0);
  EXPECT_EQ(corner[7], 0.0);
}

TEST(Measure, FalseAlarmAndMissRatesMatchConfiguration) {
  WorldConfig c = five_by_five(0);
  c.false_alarm = 0.15;
  c.miss_rate = 0.2;
  const auto w = make_world(c, {2, 3}, {4, 0}, {{2, 2}, {1, 2}, {3, 0}});
  Rng rng(6);
  const int n = 20000;
  double north = 0.0, east = 0.0;
  for (int t = 0; t < n; ++t) {
    const auto y = measure(w, rng);
    north += y[0];
    east += y[2];
  }
  const double sd = std::sqrt(0.25 / n);
  EXPECT_NEAR(north / n, 0.8, 4.0 * sd);
  EXPECT_NEAR(east / n, 0.15, 4.0 * sd);
}

TEST(ClassifierInput, AppendsOneHotMove) {
  const std::vector<double> y(kMeasurementDim, 0.5);
  const auto x = classifier_input(y, Move::Left);
  ASSERT_EQ(x.size(), kInputDim);
  EXPECT_EQ(std::vector<double>(x.end() - 4, x.end()), (std::vector<double>{0.0, 0.0, 1.0, 0.0}));
  EXPECT_THROW(classifier_input(y, Move::Stay), ValidationError);
  EXPECT_THROW(classifier_input(std::vector<double>(3, 0.0), Move::Up), ValidationError);
}

TEST(Policy, DistributionPutsGreedyMassOnNominalMove) {
  const auto w = fixture(0);
  const auto p = policy_distribution(w, PolicyConfig{0.2});
  EXPECT_DOUBLE_EQ(p[static_cast<std::size_t>(Move::Right)], 0.8 + 0.05);
  EXPECT_DOUBLE_EQ(p[static_cast<std::size_t>(Move::Up)], 0.05);
  EXPECT_NEAR(p[0] + p[1] + p[2] + p[3], 1.0, 1e-15);
}

TEST(Policy, CandidateOrderIsAPermutationLedByTheDistribution) {
  Rng rng(7);
  const std::array<double, kNumMoves> dist{0.1, 0.2, 0.3, 0.4};
  std::array<int, kNumMoves> first{};
  const int n = 20000;
  for (int t = 0; t < n; ++t) {
    const auto order = candidate_order(dist, rng);
    ASSERT_EQ(order.size(), kNumMoves);
    EXPECT_EQ(std::set<Move>(order.begin(), order.end()).size(), kNumMoves);
    ++first[static_cast<std::size_t>(order.front())];
  }
  for (std::size_t m = 0; m < kNumMoves; ++m) EXPECT_NEAR(first[m] / static_cast<double>(n), dist[m], 0.015);
  const auto zeros = candidate_order({1.0, 0.0, 0.0, 0.0}, rng);
  EXPECT_EQ(zeros, (std::vector<Move>{Move::Up, Move::Down, Move::Left, Move::Right}));
}

TEST(Collection, TwoRecordsAreBalanced) {
  // Dense hazards make both labels common within the 200-step budget.
  WorldConfig dense;
  dense.num_hazards = 30;
  dense.horizon = 2;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = collect_internal_test(dense, PolicyConfig{}, 2, seed);
    EXPECT_EQ(r.set.per_state_counts(), (std::vector<std::size_t>{1, 1})) << "seed " << seed;
    EXPECT_FALSE(r.set.partial);
  }
  EXPECT_THROW(collect_internal_test(WorldConfig{}, PolicyConfig{}, 1, 9), ValidationError);
}

TEST(Collection, FlagsPartialSetWhenBalanceIsOutOfReach) {
  WorldConfig empty;
  empty.num_hazards = 0;
  const auto r = collect_internal_test(empty, PolicyConfig{}, 10, 3);
  EXPECT_TRUE(r.set.partial);
  EXPECT_EQ(r.set.per_state_counts(), (std::vector<std::size_t>{5, 0}));
}

TEST(Collection, IsDeterministicAndBalanced) {
  const auto a = collect_internal_test(WorldConfig{}, PolicyConfig{}, 101, 10);
  const auto b = collect_internal_test(WorldConfig{}, PolicyConfig{}, 101, 10);
  EXPECT_EQ(a.set.records(), b.set.records());
  EXPECT_EQ(a.set.per_state_counts(), (std::vector<std::size_t>{51, 50}));
  const auto c = collect_internal_test(WorldConfig{}, PolicyConfig{}, 101, 11);
  EXPECT_NE(a.set.records(), c.set.records());
}

TEST(Collection, LabelsReplayFromGroundTruth) {
  WorldConfig cfg;
  cfg.horizon = 2;
  const auto r = collect_internal_test(cfg, PolicyConfig{}, 300, 12, true);
  ASSERT_EQ(r.truth.size(), r.set.size());
  for (std::size_t k = 0; k < r.set.size(); ++k) {
    EXPECT_EQ(label_action(r.truth[k].world, r.truth[k].move), r.set[k].label);
    EXPECT_EQ(rollout_label(r.truth[k].world, r.truth[k].move, 2), r.set[k].label);
    const auto m = static_cast<std::size_t>(r.truth[k].move);
    EXPECT_EQ(r.set[k].measurement[kMeasurementDim + m], 1.0);
  }
}

TEST(ExactPosteriorModel, CutHitsTheThreshold) {
  for (double rt : {0.3, 0.1, 0.01, 0.001}) {
    const double cut = ExactPosteriorModel::cut_for_threshold(rt, 1.0);
    const ExactPosteriorModel m(1.0, cut);
    EXPECT_NEAR(m.column(kSafe)[kUnsafe], rt, 1e-9);
    // Closed form at prior 0.5: Phi(cut - 1) / (Phi(cut - 1) + Phi(cut + 1)).
    auto phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    EXPECT_NEAR(phi(cut - 1.0) / (phi(cut - 1.0) + phi(cut + 1.0)), rt, 1e-9);
    const auto col = m.column(kUnsafe);
    EXPECT_NEAR(col[0] + col[1], 1.0, 1e-15);
  }
  EXPECT_THROW(ExactPosteriorModel(0.0, 0.0), ValidationError);
}

// Oracle model that always reports the true label with certainty.
class PerfectModel : public SafetyModel {
 public:
  std::vector<double> posterior(const GridWorld& world, std::span<const double>, Move move, Rng&) const override {
    return label_action(world, move) == kUnsafe ? std::vector<double>{0.0, 1.0} : std::vector<double>{1.0, 0.0};
  }
};

EvalConfig small_eval(double rt) {
  EvalConfig e;
  e.episodes = 5;
  e.episode_steps = 200;
  e.r_t = rt;
  e.seed = 13;
  return e;
}

TEST(RunEval, NeverRejectingMatchesTheBarePolicy) {
  WorldConfig w;
  w.horizon = 1;
  const auto bare = run_eval(w, PolicyConfig{}, nullptr, small_eval(0.1));
  const ExactPosteriorModel model(1.0, 0.0);
  const auto framework = run_eval(w, PolicyConfig{}, &model, small_eval(1.0 + 1e-5));
  EXPECT_EQ(framework.default_used, 0u);
  EXPECT_EQ(framework.collisions, bare.collisions);
  EXPECT_EQ(framework.violations, bare.violations);
  EXPECT_EQ(framework.goals, bare.goals);
  EXPECT_DOUBLE_EQ(framework.reward, bare.reward);
  EXPECT_GT(bare.violations, 0u);
}

TEST(RunEval, PerfectClassifierNeverViolates) {
  WorldConfig w;
  w.horizon = 2;
  const PerfectModel model;
  std::size_t decisions = 0;
  const auto m = run_eval(w, PolicyConfig{}, &model, small_eval(1e-4), [&](const Decision&) { ++decisions; });
  EXPECT_EQ(m.violations, 0u);
  EXPECT_EQ(m.collisions_non_default, 0u);
  EXPECT_EQ(decisions, m.decisions);
  EXPECT_EQ(m.decisions, 5u * 200u);
}

TEST(RunEval, IsDeterministic) {
  const ExactPosteriorModel model(1.0, ExactPosteriorModel::cut_for_threshold(0.1, 1.0));
  const auto a = run_eval(WorldConfig{}, PolicyConfig{}, &model, small_eval(0.1));
  const auto b = run_eval(WorldConfig{}, PolicyConfig{}, &model, small_eval(0.1));
  EXPECT_EQ(a.violations, b.violations);
  EXPECT_EQ(a.default_used, b.default_used);
  EXPECT_DOUBLE_EQ(a.reward, b.reward);
}

TEST(RunEval, ExactModelStaysWithinBinomialBand) {
  const double rt = 0.1;
  const ExactPosteriorModel model(1.0, ExactPosteriorModel::cut_for_threshold(rt, 1.0));
  auto cfg = small_eval(rt);
  cfg.episodes = 40;
  const auto m = run_eval(WorldConfig{}, PolicyConfig{}, &model, cfg);
  ASSERT_GT(m.chance_decisions, 1000u);
  const double n = static_cast<double>(m.chance_decisions);
  EXPECT_LE(m.violation_rate(), rt + 3.0 * std::sqrt(rt * (1.0 - rt) / n));
}

TEST(EpisodeMetrics, RatesAndMerge) {
  EpisodeMetrics a;
  EXPECT_EQ(a.violation_rate(), 0.0);
  a.decisions = 10;
  a.chance_decisions = 8;
  a.violations = 2;
  a.collisions = 1;
  EpisodeMetrics b = a;
  b.merge(a);
  EXPECT_EQ(b.decisions, 20u);
  EXPECT_DOUBLE_EQ(b.violation_rate(), 0.25);
  EXPECT_DOUBLE_EQ(b.collision_rate(), 0.1);
}

TEST(MlpSafetyModel, ColumnIsTheUpperRowOfThePrediction) {
  Rng rng(14);
  const auto p = MLPParams::create(kInputDim, {8}, 2, rng);
  const auto data = collect_internal_test(WorldConfig{}, PolicyConfig{}, 200, 15);
  const std::vector<double> priors{0.5, 0.5};
  const MlpSafetyModel model(p, BiasVector{}, data.set, 0.0, priors);
  ASSERT_EQ(model.upper().rows(), 2u);
  const auto y = data.set[0].measurement;
  const std::vector<double> meas(y.begin(), y.begin() + kMeasurementDim);
  const auto w = fixture(0);
  const std::size_t cls = model.predict(meas, Move::Up);
  const auto col = model.posterior(w, meas, Move::Up, rng);
  EXPECT_EQ(col[0], model.upper()(cls, 0));
  EXPECT_EQ(col[1], model.upper()(cls, 1));
}

TEST(NavsimApproxLoss, MatchesTheTwoStageLoss) {
  TrainConfig cfg;
  cfg.lambda = 1e-5;
  cfg.beta = 1e4;
  cfg.r_t = 0.01;
  Matrix<double> upper(2, 2);
  upper(0, 0) = 0.995;
  upper(0, 1) = 0.005;
  upper(1, 0) = 0.5;
  upper(1, 1) = 0.5;
  // Both candidates predicted safe and feasible: the first is executed.
  EXPECT_NEAR(navsim_approx_loss({0, 0}, {kSafe, kUnsafe}, upper, cfg), 0.0, 1e-6);
  EXPECT_NEAR(navsim_approx_loss({0, 0}, {kUnsafe, kSafe}, upper, cfg), cfg.unsafe_loss, 1e-3);
  // Every candidate predicted unsafe: the default is executed.
  EXPECT_NEAR(navsim_approx_loss({1, 1}, {kSafe, kSafe}, upper, cfg), cfg.default_loss, 1e-3);
  EXPECT_THROW(navsim_approx_loss({0}, {kSafe, kSafe}, upper, cfg), ValidationError);
}

TEST(Pipeline, DefaultSizedRunProducesACorrectedModel) {
  PipelineConfig pc;
  pc.train.hidden = {32, 32};
  pc.train.warm_start_epochs = 20;
  pc.train.steps = 200;
  pc.train_records = 2000;
  pc.internal_records = 2000;
  pc.r_t = 0.2;
  pc.seed = 16;
  const auto pipe = build_pipeline(WorldConfig{}, PolicyConfig{}, pc);
  EXPECT_EQ(pipe.internal.set.size(), 2000u);
  EXPECT_TRUE(pipe.bias.bracketed);
  EXPECT_LE(pipe.bias.posterior, 0.2 + kProbTol);
  EXPECT_FALSE(pipe.training.approx_loss_history.empty());
  EXPECT_LE(pipe.model.upper()(pipe.bias.safe_class, kUnsafe), 0.2 + kProbTol);
}

}  // namespace
}  // namespace ccsafe::navsim
