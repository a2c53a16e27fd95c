#include "ccsafe/navsim_train.hpp"

#include <algorithm>
#include <cmath>

#include "ccsafe/approxloss.hpp"
#include "ccsafe/conservative.hpp"

namespace ccsafe::navsim {

namespace {

constexpr std::array<double, 2> kPriors{0.5, 0.5};

std::size_t argmax(std::span<const double> z) {
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

Matrix<double> input_matrix(const InternalTestSet& set) {
  Matrix<double> m(set.size(), set.dimension());
  for (std::size_t k = 0; k < set.size(); ++k) std::copy(set[k].measurement.begin(), set[k].measurement.end(), m.row(k).begin());
  return m;
}

}  // namespace

double navsim_approx_loss(const std::vector<std::size_t>& classes, const std::vector<std::size_t>& labels,
                          const Matrix<double>& upper, const TrainConfig& config) {
  if (classes.size() != labels.size()) throw ValidationError("classes and labels differ in length");
  // Actions are indices: 0..n-1 are candidates in policy order, n is the default.
  const std::size_t n = classes.size();
  LossProblem problem;
  for (std::size_t a = 0; a <= n; ++a) problem.candidates.push_back({static_cast<double>(a)});
  problem.lambda = config.lambda;
  problem.beta = {config.beta};
  problem.loss = [&](const Action& u, std::span<const double>) {
    const auto a = static_cast<std::size_t>(u[0]);
    if (a == n) return config.default_loss;
    return labels[a] == kUnsafe ? config.unsafe_loss : 0.0;
  };
  problem.objective = [&](const Action& u, std::span<const double>) {
    const auto a = static_cast<std::size_t>(u[0]);
    return a == n ? config.default_objective : config.rank_weight * static_cast<double>(a);
  };
  // Log-ratio form of the chance constraint: zero when feasible, negative when the posterior exceeds r_t.
  problem.constraints.push_back([&](const Action& u, std::span<const double>) {
    const auto a = static_cast<std::size_t>(u[0]);
    if (a == n) return 0.0;
    return -std::log(std::max(upper(classes[a], kUnsafe) / config.r_t, 1.0));
  });
  const std::vector<double> no_output;
  return approx_loss(problem, no_output);
}

TrainResult train_classifier(const WorldConfig& world_config, const PolicyConfig& policy,
                             const InternalTestSet& train_set, const TrainConfig& config) {
  world_config.validate();
  if (train_set.empty()) throw ValidationError("empty internal test set");
  if (train_set.dimension() != kInputDim) throw ValidationError("internal test set has the wrong input dimension");
  if (config.table_refresh == 0) throw ValidationError("table_refresh must be positive");

  Rng root(config.seed);
  Rng init = root.split(0), world_rng = root.split(1), sense = root.split(2), act = root.split(3), env = root.split(4),
      sample = root.split(5);
  TrainResult result;
  result.params = MLPParams::create(kInputDim, config.hidden, 2, init);
  if (config.warm_start_epochs > 0) {
    CrossEntropyOptions ce;
    ce.epochs = config.warm_start_epochs;
    result.warm_start_loss = train_cross_entropy(result.params, train_set, ce, init);
  }
  if (config.steps == 0) return result;

  MLPParams& params = result.params;
  Adam adam(params, config.lr);
  TrainOptions opts;
  opts.lr = config.lr;
  opts.reg = config.reg;
  opts.clip = config.clip;

  const Matrix<double> inputs = input_matrix(train_set);
  const auto labels = train_set.labels();
  Matrix<double> logits;
  NormalTable table;
  Matrix<double> upper;
  double window_loss = 0.0;
  std::size_t window = 0;

  GridWorld world = generate_world(world_config, world_rng);
  for (std::size_t t = 0; t < config.steps; ++t) {
    if (t > 0 && t % static_cast<std::size_t>(config.episode_steps) == 0) world = generate_world(world_config, world_rng);
    if (t % config.table_refresh == 0) {
      const double xi = config.xi * static_cast<double>(t) / static_cast<double>(config.steps);
      logits = forward_batch(params, inputs);
      table = build_normal_table(labels, 2, logits, xi);
      upper = posterior_upper(table, kPriors);
      if (window) result.approx_loss_history.push_back(window_loss / static_cast<double>(window));
      window_loss = 0.0;
      window = 0;
    }

    const auto y = measure(world, sense);
    const auto order = candidate_order(policy_distribution(world, policy), act);
    const std::size_t n = order.size();
    std::vector<std::vector<double>> xs(n), zs(n);
    std::vector<std::size_t> classes(n), truth(n);
    for (std::size_t a = 0; a < n; ++a) {
      xs[a] = classifier_input(y, order[a]);
      zs[a] = forward(params, xs[a]);
      classes[a] = argmax(zs[a]);
      truth[a] = label_action(world, order[a]);
    }
    const double base = navsim_approx_loss(classes, truth, upper, config);
    window_loss += base;
    ++window;

    std::vector<TrainSample> batch;
    // Candidate outputs: try every class for each candidate with the others held at their prediction.
    for (std::size_t a = 0; a < n; ++a) {
      std::vector<double> by_class(2);
      auto trial = classes;
      for (std::size_t j = 0; j < 2; ++j) {
        trial[a] = j;
        by_class[j] = navsim_approx_loss(trial, truth, upper, config);
      }
      batch.emplace_back(xs[a], vpd_discrete(by_class, zs[a], config.temperature));
    }

    // Internal-test records: perturb the table at (label, class) with the candidate classes fixed.
    const TableLossFn table_loss = [&](const NormalTable& tb) {
      return navsim_approx_loss(classes, truth, posterior_upper(tb, kPriors), config);
    };
    std::array<std::vector<PerturbedLosses>, 2> per_label;
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) per_label[i].push_back(table_perturbation_losses(table, i, j, table_loss));
    }
    const std::size_t b = std::min(config.internal_batch, train_set.size());
    for (std::size_t s = 0; s < b; ++s) {
      const std::size_t k = sample.index(train_set.size());
      const auto z = forward(params, inputs.row(k));
      const auto levels = contribution_levels(z, table.xi_eff, per_label[labels[k]]);
      const auto g = internal_test_gradient(z, table.xi_eff, config.temperature, levels, b);
      const auto row = inputs.row(k);
      batch.emplace_back(std::vector<double>(row.begin(), row.end()), g);
    }

    adam.step(params, step_gradient(params, batch, opts));

    // Execute the framework's choice with the current model.
    Move chosen = Move::Stay;
    for (std::size_t a = 0; a < n; ++a) {
      if (within_threshold(upper(classes[a], kUnsafe), config.r_t)) {
        chosen = order[a];
        break;
      }
    }
    step(world, chosen, env);
  }
  if (window) result.approx_loss_history.push_back(window_loss / static_cast<double>(window));
  return result;
}

Pipeline build_pipeline(const WorldConfig& world_config, const PolicyConfig& policy, const PipelineConfig& config) {
  const auto train = collect_internal_test(world_config, policy, config.train_records, splitmix64(config.seed ^ 1));
  TrainConfig tc = config.train;
  tc.seed = splitmix64(config.seed ^ 2);
  TrainResult training = train_classifier(world_config, policy, train.set, tc);
  CollectionResult internal =
      collect_internal_test(world_config, policy, config.internal_records, splitmix64(config.seed ^ 3));
  BiasCorrectionResult bias = bias_correct(training.params, internal.set, config.xi, kPriors, config.r_t);
  MlpSafetyModel model(training.params, bias.bias, internal.set, config.xi, kPriors);
  return {std::move(training), std::move(internal), std::move(bias), std::move(model)};
}

}  // namespace ccsafe::navsim
