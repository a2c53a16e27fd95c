#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ccsafe/navsim.hpp"
#include "ccsafe/navsim_train.hpp"

namespace ccsafe::scaling {

struct ScalingConfig {
  navsim::WorldConfig world;
  navsim::PolicyConfig policy;
  std::vector<std::size_t> n_t_grid{100, 1000, 10000, 100000};
  double r_t = 0.05;
  double xi_scale = 10.0;          // xi = xi_scale / n_t
  double collision_weight = 100.0; // tradeoff = reward - collision_weight * collision_rate
  std::size_t eval_episodes = 20;
  int episode_steps = 200;
  std::size_t train_records = 2000;       // classifier training set, collected separately
  std::size_t warm_start_epochs = 20;
  std::size_t tailored_steps = 0;         // optional tailored-gradient steps after the warm start
  std::vector<std::size_t> hidden{32, 32};

  void validate() const;
};

struct ScalingPoint {
  std::size_t n_t = 0;
  double xi = 0.0;
  double tradeoff = 0.0;   // combined reward and collision metric, a stand-in for an undefined plot axis
  double reward = 0.0;     // mean reward per episode
  double collision_rate = 0.0;
  double violation_rate = 0.0;
  double gap = 0.0;        // mean over outputs of upper minus plain posterior of the unsafe state
  bool partial = false;    // the internal test set could not reach balance
};

/// Trains one classifier per seed, then for each n_t collects a balanced internal test set, builds
/// the conservative table with xi = xi_scale / n_t, and evaluates navsim at fixed r_t.
/// Every point depends only on (config, seed, n_t).
std::vector<ScalingPoint> run_scaling(const ScalingConfig& config, std::uint64_t seed);

struct PowerLawFit {
  double log_a = 0.0;
  double slope = 0.0;
  double r_squared = 0.0;
};

/// Least squares of ln y on ln x, so y ~ exp(log_a) * x^slope. Needs at least 3 positive points.
PowerLawFit fit_power_law(std::span<const double> x, std::span<const double> y);

}  // namespace ccsafe::scaling
