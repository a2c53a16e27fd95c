#include "ccsafe/navsim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace ccsafe::navsim {

namespace {

constexpr int kSampleEvery = 10;
constexpr std::array<Cell, 8> kNeighbours{{{0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}}};

Cell random_free_cell(const GridWorld& world, Rng& rng, Cell avoid) {
  std::vector<Cell> free;
  for (int y = 0; y < world.height; ++y) {
    for (int x = 0; x < world.width; ++x) {
      const Cell c{x, y};
      if (!world.is_hazard(c) && !(c == avoid)) free.push_back(c);
    }
  }
  if (free.empty()) throw ValidationError("world has no free cell");
  return free[rng.index(free.size())];
}

bool free_cells_connected(const GridWorld& world) {
  std::vector<std::uint8_t> seen(world.hazards.size(), 0);
  std::deque<Cell> queue{world.agent};
  seen[static_cast<std::size_t>(world.agent.y * world.width + world.agent.x)] = 1;
  std::size_t reached = 1;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (Move m : {Move::Up, Move::Down, Move::Left, Move::Right}) {
      const Cell n = apply_move(world, c, m);
      const auto idx = static_cast<std::size_t>(n.y * world.width + n.x);
      if (world.is_hazard(n) || seen[idx]) continue;
      seen[idx] = 1;
      ++reached;
      queue.push_back(n);
    }
  }
  const auto free = static_cast<std::size_t>(std::count(world.hazards.begin(), world.hazards.end(), 0));
  return reached == free;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

void WorldConfig::validate() const {
  if (width < 2 || height < 2) throw ValidationError("grid must be at least 2x2");
  if (num_hazards < 0 || num_hazards > width * height - 2) throw ValidationError("too many hazards for the grid");
  if (!(false_alarm >= 0.0 && false_alarm < 0.5)) throw ValidationError("false_alarm must lie in [0, 0.5)");
  if (!(miss_rate >= 0.0 && miss_rate < 0.5)) throw ValidationError("miss_rate must lie in [0, 0.5)");
  if (horizon < 0) throw ValidationError("horizon must be non-negative");
}

GridWorld make_world(const WorldConfig& config, Cell agent, Cell goal, const std::vector<Cell>& hazards) {
  config.validate();
  GridWorld w;
  w.width = config.width;
  w.height = config.height;
  w.hazards.assign(static_cast<std::size_t>(w.width * w.height), 0);
  w.false_alarm = config.false_alarm;
  w.miss_rate = config.miss_rate;
  w.horizon = config.horizon;
  w.step_reward = config.step_reward;
  w.goal_reward = config.goal_reward;
  for (const Cell& h : hazards) {
    if (!w.in_bounds(h)) throw ValidationError("hazard outside the grid");
    w.set_hazard(h, true);
  }
  if (!w.in_bounds(agent) || !w.in_bounds(goal)) throw ValidationError("agent and goal must lie on the grid");
  if (w.is_hazard(agent) || w.is_hazard(goal)) throw ValidationError("agent and goal must not start on a hazard");
  if (agent == goal) throw ValidationError("agent and goal must differ");
  w.agent = agent;
  w.goal = goal;
  return w;
}

GridWorld generate_world(const WorldConfig& config, Rng& rng) {
  config.validate();
  const int cells = config.width * config.height;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    GridWorld w = make_world(config, {0, 0}, {1, 0}, {});
    std::vector<int> order(static_cast<std::size_t>(cells));
    for (int i = 0; i < cells; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < config.num_hazards; ++i) w.hazards[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    const int a = order[static_cast<std::size_t>(config.num_hazards)];
    const int g = order[static_cast<std::size_t>(config.num_hazards + 1)];
    w.agent = {a % config.width, a / config.width};
    w.goal = {g % config.width, g / config.width};
    if (free_cells_connected(w)) return w;
  }
  throw ValidationError("could not generate a connected world; reduce num_hazards");
}

Cell apply_move(const GridWorld& world, Cell from, Move move) {
  Cell to = from;
  switch (move) {
    case Move::Up: to.y -= 1; break;
    case Move::Down: to.y += 1; break;
    case Move::Left: to.x -= 1; break;
    case Move::Right: to.x += 1; break;
    case Move::Stay: break;
  }
  return world.in_bounds(to) ? to : from;
}

Move nominal_move(const GridWorld& world, Cell from) {
  const int dx = world.goal.x - from.x, dy = world.goal.y - from.y;
  if (dx == 0 && dy == 0) return Move::Stay;
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? Move::Right : Move::Left;
  return dy > 0 ? Move::Down : Move::Up;
}

StepResult step(GridWorld& world, Move move, Rng& rng) {
  StepResult r;
  r.reward = world.step_reward;
  world.agent = apply_move(world, world.agent, move);
  if (world.is_hazard(world.agent)) {
    r.collided = true;
    world.agent = random_free_cell(world, rng, world.goal);
    return r;
  }
  if (world.agent == world.goal) {
    r.reached_goal = true;
    r.reward += world.goal_reward;
    world.goal = random_free_cell(world, rng, world.agent);
  }
  return r;
}

std::size_t label_action(const GridWorld& world, Move move) {
  Cell c = apply_move(world, world.agent, move);
  for (int h = 0;; ++h) {
    if (world.is_hazard(c)) return kUnsafe;
    if (c == world.goal || h == world.horizon) return kSafe;
    c = apply_move(world, c, nominal_move(world, c));
  }
}

std::vector<double> measure(const GridWorld& world, Rng& rng) {
  std::vector<double> y;
  y.reserve(kMeasurementDim);
  for (const Cell& d : kNeighbours) {
    const Cell c{world.agent.x + d.x, world.agent.y + d.y};
    if (!world.in_bounds(c)) {
      y.push_back(0.0);
      continue;
    }
    bool reading = world.is_hazard(c);
    if (rng.bernoulli(reading ? world.miss_rate : world.false_alarm)) reading = !reading;
    y.push_back(reading ? 1.0 : 0.0);
  }
  y.push_back(static_cast<double>(world.goal.x - world.agent.x) / world.width);
  y.push_back(static_cast<double>(world.goal.y - world.agent.y) / world.height);
  return y;
}

std::vector<double> classifier_input(std::span<const double> measurement, Move move) {
  if (measurement.size() != kMeasurementDim) throw ValidationError("measurement has the wrong dimension");
  const auto m = static_cast<std::size_t>(move);
  if (m >= kNumMoves) throw ValidationError("only the four moves are classified");
  std::vector<double> x(measurement.begin(), measurement.end());
  for (std::size_t k = 0; k < kNumMoves; ++k) x.push_back(k == m ? 1.0 : 0.0);
  return x;
}

std::array<double, kNumMoves> policy_distribution(const GridWorld& world, const PolicyConfig& policy) {
  std::array<double, kNumMoves> p;
  p.fill(policy.epsilon / kNumMoves);
  const Move greedy = nominal_move(world, world.agent);
  if (greedy == Move::Stay) {
    p.fill(1.0 / kNumMoves);
  } else {
    p[static_cast<std::size_t>(greedy)] += 1.0 - policy.epsilon;
  }
  return p;
}

std::vector<Move> candidate_order(const std::array<double, kNumMoves>& distribution, Rng& rng) {
  std::array<double, kNumMoves> w = distribution;
  std::vector<Move> order;
  for (std::size_t k = 0; k < kNumMoves; ++k) {
    double total = 0.0;
    for (double v : w) total += v;
    double u = rng.uniform() * total;
    std::size_t pick = kNumMoves;
    for (std::size_t m = 0; m < kNumMoves; ++m) {
      if (w[m] <= 0.0) continue;
      pick = m;
      if (u < w[m]) break;
      u -= w[m];
    }
    if (pick == kNumMoves) {
      // Only zero-weight moves remain; append them in index order.
      for (std::size_t m = 0; m < kNumMoves; ++m) {
        if (std::find(order.begin(), order.end(), static_cast<Move>(m)) == order.end()) order.push_back(static_cast<Move>(m));
      }
      break;
    }
    order.push_back(static_cast<Move>(pick));
    w[pick] = 0.0;
  }
  return order;
}

CollectionResult collect_internal_test(const WorldConfig& world_config, const PolicyConfig& policy, std::size_t n,
                                       std::uint64_t seed, bool keep_truth, int episode_steps) {
  if (n < 2) throw ValidationError("internal test collection needs n >= 2");
  if (episode_steps < 1) throw ValidationError("episode_steps must be positive");
  world_config.validate();
  Rng root(seed);
  Rng world_rng = root.split(0), sense = root.split(1), act = root.split(2), env = root.split(3), pick = root.split(4);

  CollectionResult out;
  const std::array<std::size_t, 2> quota{n - n / 2, n / 2};
  std::array<std::size_t, 2> have{0, 0};
  const std::size_t max_steps = 100 * n;
  GridWorld world = generate_world(world_config, world_rng);
  for (std::size_t t = 0; t < max_steps && out.set.size() < n; ++t) {
    if (t > 0 && t % static_cast<std::size_t>(episode_steps) == 0) world = generate_world(world_config, world_rng);
    if (t % kSampleEvery == 0) {
      const auto move = static_cast<Move>(pick.index(kNumMoves));
      const auto y = measure(world, sense);
      const std::size_t label = label_action(world, move);
      if (have[label] < quota[label]) {
        ++have[label];
        out.set.add({classifier_input(y, move), label});
        if (keep_truth) out.truth.push_back({world, move});
      }
    }
    const auto dist = policy_distribution(world, policy);
    const Move m = candidate_order(dist, act).front();
    step(world, m, env);
  }
  out.set.partial = out.set.size() < n;
  return out;
}

MlpSafetyModel::MlpSafetyModel(MLPParams params, BiasVector bias, Matrix<double> upper)
    : params_(std::move(params)), bias_(std::move(bias)), upper_(std::move(upper)) {
  if (bias_.v.empty()) bias_.v.assign(params_.output_dim(), 0.0);
  if (bias_.v.size() != params_.output_dim()) throw ValidationError("bias length does not match the network output");
  if (upper_.rows() != params_.output_dim()) throw ValidationError("posterior table rows must match the outputs");
}

MlpSafetyModel::MlpSafetyModel(MLPParams params, BiasVector bias, const InternalTestSet& test_set, double xi,
                               std::span<const double> priors)
    : params_(std::move(params)), bias_(std::move(bias)) {
  if (bias_.v.empty()) bias_.v.assign(params_.output_dim(), 0.0);
  if (test_set.empty()) throw ValidationError("empty internal test set");
  Matrix<double> inputs(test_set.size(), test_set.dimension());
  for (std::size_t k = 0; k < test_set.size(); ++k) {
    std::copy(test_set[k].measurement.begin(), test_set[k].measurement.end(), inputs.row(k).begin());
  }
  const auto logits = apply_bias(forward_batch(params_, inputs), bias_);
  const auto labels = test_set.labels();
  upper_ = posterior_upper(build_normal_table(labels, test_set.num_states(), logits, xi), priors);
}

std::size_t MlpSafetyModel::predict(std::span<const double> measurement, Move move) const {
  const auto z = apply_bias(forward(params_, classifier_input(measurement, move)), bias_);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

std::vector<double> MlpSafetyModel::posterior(const GridWorld&, std::span<const double> measurement, Move move,
                                              Rng&) const {
  auto row = upper_.row(predict(measurement, move));
  return {row.begin(), row.end()};
}

ExactPosteriorModel::ExactPosteriorModel(double sigma, double cut, double prior_unsafe)
    : sigma_(sigma), cut_(cut), prior_(prior_unsafe) {
  if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
  if (!(prior_unsafe > 0.0 && prior_unsafe < 1.0)) throw ValidationError("prior must lie in (0, 1)");
}

double ExactPosteriorModel::cut_for_threshold(double r_t, double sigma, double prior_unsafe) {
  if (!(r_t > 0.0)) throw ValidationError("threshold must be positive");
  ExactPosteriorModel probe(sigma, 0.0, prior_unsafe);
  double lo = -50.0 * sigma - 1.0, hi = 50.0 * sigma + 1.0;
  if (r_t >= prior_unsafe) return hi;
  for (int it = 0; it < 200; ++it) {
    probe.cut_ = 0.5 * (lo + hi);
    if (probe.column(kSafe)[kUnsafe] <= r_t) {
      lo = probe.cut_;
    } else {
      hi = probe.cut_;
    }
  }
  return lo;
}

std::vector<double> ExactPosteriorModel::column(std::size_t output) const {
  // Likelihood of a "safe" output (score <= cut) under each state.
  const double safe_given_safe = normal_cdf((cut_ + 1.0) / sigma_);
  const double safe_given_unsafe = normal_cdf((cut_ - 1.0) / sigma_);
  const double ls = output == kSafe ? safe_given_safe : 1.0 - safe_given_safe;
  const double lu = output == kSafe ? safe_given_unsafe : 1.0 - safe_given_unsafe;
  const double num = lu * prior_, den = lu * prior_ + ls * (1.0 - prior_);
  const double pu = den > 0.0 ? num / den : 1.0;
  return {1.0 - pu, pu};
}

std::vector<double> ExactPosteriorModel::posterior(const GridWorld& world, std::span<const double>, Move move,
                                                   Rng& rng) const {
  const std::size_t label = label_action(world, move);
  const double score = rng.normal(label == kUnsafe ? 1.0 : -1.0, sigma_);
  return column(score <= cut_ ? kSafe : kUnsafe);
}

double EpisodeMetrics::violation_rate() const {
  return chance_decisions ? static_cast<double>(violations) / static_cast<double>(chance_decisions) : 0.0;
}

double EpisodeMetrics::collision_rate() const {
  return decisions ? static_cast<double>(collisions) / static_cast<double>(decisions) : 0.0;
}

void EpisodeMetrics::merge(const EpisodeMetrics& o) {
  reward += o.reward;
  collisions += o.collisions;
  collisions_non_default += o.collisions_non_default;
  decisions += o.decisions;
  default_used += o.default_used;
  chance_decisions += o.chance_decisions;
  violations += o.violations;
  goals += o.goals;
}

ConstraintSpec safety_constraint() {
  ConstraintSpec spec;
  spec.constraints.push_back({[](const Action&, std::size_t state) { return state == kUnsafe ? -1.0 : 1.0; }, true});
  return spec;
}

EpisodeMetrics run_eval(const WorldConfig& world_config, const PolicyConfig& policy, const SafetyModel* model,
                        const EvalConfig& config, const DecisionSink& sink) {
  world_config.validate();
  const ConstraintSpec constraints = safety_constraint();
  UserParams params;
  params.thresholds = {config.r_t};
  params.priors = {0.5, 0.5};
  params.validate(2);
  const auto objective = [&](const Action& u) {
    return static_cast<Move>(static_cast<int>(u.at(0))) == Move::Stay ? config.default_objective : 0.0;
  };

  EpisodeMetrics total;
  const Rng root(config.seed);
  for (std::size_t e = 0; e < config.episodes; ++e) {
    const Rng ep = root.split(e);
    Rng world_rng = ep.split(0), sense = ep.split(1), act = ep.split(2), env = ep.split(3), model_rng = ep.split(4);
    GridWorld world = generate_world(world_config, world_rng);
    EpisodeMetrics m;
    for (int t = 0; t < config.episode_steps; ++t) {
      const auto y = measure(world, sense);
      const auto order = candidate_order(policy_distribution(world, policy), act);
      Move chosen = order.front();
      bool used_default = false;
      if (model != nullptr) {
        CandidateSet cands;
        for (Move mv : order) cands.actions.push_back({static_cast<double>(mv)});
        cands.default_action = {static_cast<double>(Move::Stay)};
        const auto decision = select_action(
            cands, objective, constraints,
            [&](std::size_t a, std::size_t) { return model->posterior(world, y, order[a], model_rng); }, 2, params);
        used_default = decision.used_default;
        chosen = used_default ? Move::Stay : order[*decision.chosen_index];
        if (sink) sink(decision);
      }
      ++m.decisions;
      if (used_default) {
        ++m.default_used;
      } else {
        ++m.chance_decisions;
        if (label_action(world, chosen) == kUnsafe) ++m.violations;
      }
      const auto r = step(world, chosen, env);
      m.reward += r.reward;
      if (r.reached_goal) ++m.goals;
      if (r.collided) {
        ++m.collisions;
        if (!used_default) ++m.collisions_non_default;
      }
    }
    total.merge(m);
  }
  return total;
}

}  // namespace ccsafe::navsim
