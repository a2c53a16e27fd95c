#include "ccsafe/scaling.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "ccsafe/conservative.hpp"

namespace ccsafe::scaling {

namespace {

constexpr std::array<double, 2> kPriors{0.5, 0.5};

Matrix<double> input_matrix(const InternalTestSet& set) {
  Matrix<double> m(set.size(), set.dimension());
  for (std::size_t k = 0; k < set.size(); ++k) {
    std::copy(set[k].measurement.begin(), set[k].measurement.end(), m.row(k).begin());
  }
  return m;
}

}  // namespace

void ScalingConfig::validate() const {
  world.validate();
  if (n_t_grid.size() < 3) throw ValidationError("n_t_grid needs at least 3 points");
  for (std::size_t i = 0; i < n_t_grid.size(); ++i) {
    if (n_t_grid[i] < 2) throw ValidationError("n_t_grid entries must be at least 2");
    if (i > 0 && n_t_grid[i] < n_t_grid[i - 1]) throw ValidationError("n_t_grid must be ascending");
  }
  if (!(r_t > 0.0)) throw ValidationError("r_t must be positive");
  if (!(xi_scale >= 0.0)) throw ValidationError("xi_scale must be non-negative");
  if (eval_episodes == 0) throw ValidationError("eval_episodes must be positive");
  if (train_records < 2) throw ValidationError("train_records must be at least 2");
}

std::vector<ScalingPoint> run_scaling(const ScalingConfig& config, std::uint64_t seed) {
  config.validate();
  const std::uint64_t train_seed = splitmix64(seed ^ 0x7472616eULL);
  const auto train = navsim::collect_internal_test(config.world, config.policy, config.train_records, train_seed);

  navsim::TrainConfig tc;
  tc.hidden = config.hidden;
  tc.warm_start_epochs = config.warm_start_epochs;
  tc.steps = config.tailored_steps;
  tc.r_t = config.r_t;
  tc.episode_steps = config.episode_steps;
  tc.seed = splitmix64(seed ^ 0x6d6f64ULL);
  const MLPParams params = navsim::train_classifier(config.world, config.policy, train.set, tc).params;

  navsim::EvalConfig ec;
  ec.episodes = config.eval_episodes;
  ec.episode_steps = config.episode_steps;
  ec.r_t = config.r_t;
  ec.seed = splitmix64(seed ^ 0x6576616cULL);

  std::vector<ScalingPoint> out;
  for (std::size_t n_t : config.n_t_grid) {
    ScalingPoint pt;
    pt.n_t = n_t;
    pt.xi = config.xi_scale / static_cast<double>(n_t);
    const auto collected =
        navsim::collect_internal_test(config.world, config.policy, n_t, splitmix64(seed ^ splitmix64(n_t)));
    pt.partial = collected.set.partial;

    const Matrix<double> logits = forward_batch(params, input_matrix(collected.set));
    const auto labels = collected.set.labels();
    const PosteriorTable post = compute_posteriors(labels, 2, logits, pt.xi, kPriors);
    for (std::size_t j = 0; j < post.upper.rows(); ++j) pt.gap += post.upper(j, navsim::kUnsafe) - post.plain(j, navsim::kUnsafe);
    pt.gap /= static_cast<double>(post.upper.rows());

    const navsim::MlpSafetyModel model(params, BiasVector{}, collected.set, pt.xi, kPriors);
    const auto m = navsim::run_eval(config.world, config.policy, &model, ec);
    pt.reward = m.reward / static_cast<double>(config.eval_episodes);
    pt.collision_rate = m.collision_rate();
    pt.violation_rate = m.violation_rate();
    pt.tradeoff = pt.reward - config.collision_weight * pt.collision_rate;
    out.push_back(pt);
  }
  return out;
}

PowerLawFit fit_power_law(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("x and y differ in length");
  if (x.size() < 3) throw ValidationError("power-law fit needs at least 3 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw ValidationError("power-law fit needs positive finite values");
    }
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw ValidationError("power-law fit needs at least two distinct x values");
  PowerLawFit fit;
  fit.slope = sxy / sxx;
  fit.log_a = my - fit.slope * mx;
  fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

}  // namespace ccsafe::scaling
