#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ccsafe/bias.hpp"
#include "ccsafe/classifier.hpp"
#include "ccsafe/conservative.hpp"
#include "ccsafe/core.hpp"
#include "ccsafe/optimizer.hpp"
#include "ccsafe/rng.hpp"

namespace ccsafe::navsim {

enum class Move : int { Up = 0, Down = 1, Left = 2, Right = 3, Stay = 4 };

inline constexpr std::size_t kNumMoves = 4;          // Up, Down, Left, Right; Stay is the default action
inline constexpr std::size_t kMeasurementDim = 10;   // 8 neighbour readings + goal offset
inline constexpr std::size_t kInputDim = kMeasurementDim + kNumMoves;
inline constexpr std::size_t kSafe = 0;
inline constexpr std::size_t kUnsafe = 1;

struct Cell {
  int x = 0;
  int y = 0;

  bool operator==(const Cell&) const = default;
};

struct WorldConfig {
  int width = 10;
  int height = 10;
  int num_hazards = 10;
  double false_alarm = 0.15;   // probability a free neighbour reads as a hazard
  double miss_rate = 0.0;      // probability a hazard neighbour reads as free
  int horizon = 0;             // further nominal-policy steps checked by the unsafe label
  double step_reward = -0.01;
  double goal_reward = 1.0;

  void validate() const;
};

struct GridWorld {
  int width = 0;
  int height = 0;
  Cell agent;
  Cell goal;
  std::vector<std::uint8_t> hazards;  // row-major, 1 = hazard
  double false_alarm = 0.0;
  double miss_rate = 0.0;
  int horizon = 0;
  double step_reward = -0.01;
  double goal_reward = 1.0;

  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  bool is_hazard(Cell c) const { return in_bounds(c) && hazards[static_cast<std::size_t>(c.y * width + c.x)] != 0; }
  void set_hazard(Cell c, bool on) { hazards.at(static_cast<std::size_t>(c.y * width + c.x)) = on ? 1 : 0; }
};

/// Empty world of the configured size with the agent and goal at the given cells.
GridWorld make_world(const WorldConfig& config, Cell agent, Cell goal, const std::vector<Cell>& hazards);

/// Random world whose free cells are connected, with agent and goal on distinct free cells.
GridWorld generate_world(const WorldConfig& config, Rng& rng);

/// Target cell of a move; walls clamp.
Cell apply_move(const GridWorld& world, Cell from, Move move);

/// Greedy step toward the goal that ignores hazards (the nominal policy); Stay at the goal.
Move nominal_move(const GridWorld& world, Cell from);

struct StepResult {
  double reward = 0.0;
  bool collided = false;
  bool reached_goal = false;
};

/// Moves the agent. Reaching the goal relocates it; entering a hazard resets the agent to a random free cell.
StepResult step(GridWorld& world, Move move, Rng& rng);

/// 1 if the move enters a hazard, or if following the nominal policy for `horizon` further steps
/// does. Uses the true hazard map, so sensor errors play no part. Reaching the goal ends the lookahead.
std::size_t label_action(const GridWorld& world, Move move);

/// Noisy readings of the 8 neighbours (N, NE, E, SE, S, SW, W, NW; off-grid reads 0) then the goal
/// offset divided by the grid size.
std::vector<double> measure(const GridWorld& world, Rng& rng);

/// Measurement followed by a one-hot move encoding.
std::vector<double> classifier_input(std::span<const double> measurement, Move move);

struct PolicyConfig {
  double epsilon = 0.1;  // mass spread uniformly over the four moves
};

/// Epsilon-greedy distribution over the four moves around the nominal move.
std::array<double, kNumMoves> policy_distribution(const GridWorld& world, const PolicyConfig& policy);

/// Sequential sampling without replacement (Plackett-Luce) from the policy distribution.
std::vector<Move> candidate_order(const std::array<double, kNumMoves>& distribution, Rng& rng);

/// Ground truth kept alongside an internal-test record so its label can be replayed.
struct GroundTruth {
  GridWorld world;
  Move move = Move::Stay;
};

struct CollectionResult {
  InternalTestSet set{2};
  std::vector<GroundTruth> truth;  // filled when requested, one per record
};

/// Rolls out the unfiltered policy, samples a uniformly random move every 10 steps, and keeps the
/// (input, label) pair unless its label already has its share of n. Flags the set as partial when
/// 100 * n environment steps do not reach balance.
CollectionResult collect_internal_test(const WorldConfig& world_config, const PolicyConfig& policy, std::size_t n,
                                       std::uint64_t seed, bool keep_truth = false, int episode_steps = 200);

/// Source of posterior columns over {safe, unsafe} for a candidate move.
class SafetyModel {
 public:
  virtual ~SafetyModel() = default;
  virtual std::vector<double> posterior(const GridWorld& world, std::span<const double> measurement, Move move,
                                        Rng& rng) const = 0;
};

/// Trained classifier plus bias; the posterior column is the conservative upper-bound row of the
/// predicted class, computed once from the internal test set.
class MlpSafetyModel : public SafetyModel {
 public:
  MlpSafetyModel(MLPParams params, BiasVector bias, Matrix<double> upper);
  MlpSafetyModel(MLPParams params, BiasVector bias, const InternalTestSet& test_set, double xi,
                 std::span<const double> priors);

  std::vector<double> posterior(const GridWorld& world, std::span<const double> measurement, Move move,
                                Rng& rng) const override;
  std::size_t predict(std::span<const double> measurement, Move move) const;
  const Matrix<double>& upper() const { return upper_; }

 private:
  MLPParams params_;
  BiasVector bias_;
  Matrix<double> upper_;
};

/// Synthetic classifier whose Bayes posterior is known in closed form: a score is drawn from
/// N(-1, sigma) for safe and N(+1, sigma) for unsafe moves, and the output is "safe" iff the score
/// is at most `cut`. The reported column is the exact posterior under `prior_unsafe`.
class ExactPosteriorModel : public SafetyModel {
 public:
  ExactPosteriorModel(double sigma, double cut, double prior_unsafe = 0.5);

  /// Cut placing the exact posterior of the unsafe state given a "safe" output at r_t.
  static double cut_for_threshold(double r_t, double sigma, double prior_unsafe = 0.5);

  std::vector<double> posterior(const GridWorld& world, std::span<const double> measurement, Move move,
                                Rng& rng) const override;
  std::vector<double> column(std::size_t output) const;

 private:
  double sigma_;
  double cut_;
  double prior_;
};

struct EvalConfig {
  std::size_t episodes = 10;
  int episode_steps = 200;
  double r_t = 0.1;
  double default_objective = 1.0;  // J-bar of the default action; moves have J-bar = 0
  std::uint64_t seed = 0;
};

struct EpisodeMetrics {
  double reward = 0.0;
  std::size_t collisions = 0;             // every hazard entry
  std::size_t collisions_non_default = 0; // hazard entries on steps that executed a candidate
  std::size_t decisions = 0;
  std::size_t default_used = 0;
  std::size_t chance_decisions = 0;       // decisions that executed a chance-evaluated candidate
  std::size_t violations = 0;             // executed candidates whose true label is unsafe
  std::size_t goals = 0;

  double violation_rate() const;
  double collision_rate() const;
  void merge(const EpisodeMetrics& other);
};

using DecisionSink = std::function<void(const Decision&)>;

/// Runs the framework: each step every candidate move is scored by the model, select_action
/// picks the first feasible move in policy order (or Stay), and the environment advances.
/// With a null model the first candidate is always executed (the bare policy).
EpisodeMetrics run_eval(const WorldConfig& world_config, const PolicyConfig& policy, const SafetyModel* model,
                        const EvalConfig& config, const DecisionSink& sink = {});

/// Chance constraint "the move's true state is safe" over the {safe, unsafe} state space.
ConstraintSpec safety_constraint();

}  // namespace ccsafe::navsim
