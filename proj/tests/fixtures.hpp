#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <utility>
#include <vector>

#include "ccsafe/approxloss.hpp"
#include "ccsafe/bias.hpp"
#include "ccsafe/conservative.hpp"
#include "ccsafe/rng.hpp"

namespace ccsafe::testing {

/// (lambda, beta) pairs walked toward the true loss.
inline constexpr std::array<std::pair<double, double>, 4> kLossSchedule{
    {{1e-1, 1e1}, {1e-2, 1e2}, {1e-3, 1e3}, {1e-4, 1e4}}};

/// Five scalar candidates u = {0..4} with one constraint and a one-dimensional output o that tilts J-bar.
/// At o = 0: J-bar = (0, 0, 0.015, 2, -1), c-bar = (1, 1, 1, 1, -0.05), L = (4, 2, 0, 1, 0).
/// Candidate 4 is infeasible with the lowest J-bar, candidate 2 is feasible and nearly optimal with
/// zero loss, so the true loss is 2 and coarse (lambda, beta) pairs are pulled toward 0 or 1.5.
inline LossProblem five_candidate_problem(double lambda, double beta) {
  static const std::vector<double> j_bar{0.0, 0.0, 0.015, 2.0, -1.0};
  static const std::vector<double> tilt{0.0, 1.0, -1.0, 0.5, 0.0};
  static const std::vector<double> c_bar{1.0, 1.0, 1.0, 1.0, -0.05};
  static const std::vector<double> loss{4.0, 2.0, 0.0, 1.0, 0.0};
  auto idx = [](const Action& u) { return static_cast<std::size_t>(u.at(0)); };
  LossProblem p;
  for (int u = 0; u < 5; ++u) p.candidates.push_back({static_cast<double>(u)});
  p.objective = [idx](const Action& u, std::span<const double> o) { return j_bar[idx(u)] + tilt[idx(u)] * o[0]; };
  p.loss = [idx](const Action& u, std::span<const double>) { return loss[idx(u)]; };
  p.constraints = {[idx](const Action& u, std::span<const double>) { return c_bar[idx(u)]; }};
  p.beta = {beta};
  p.lambda = lambda;
  return p;
}

/// Two-class internal test data whose class-1 logit grows with a noisy score, safe records centred at
/// -separation / 2 and unsafe ones at +separation / 2.
struct GradedInstance {
  Matrix<double> logits;
  std::vector<std::size_t> labels;
  double xi = 0.0;
  double r_t = 0.1;
};

inline GradedInstance graded_instance(Rng& rng, std::size_t n, double separation) {
  GradedInstance g;
  g.logits = Matrix<double>(n, 2);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t label = rng.uniform() < 0.5 ? 0 : 1;
    const double score = rng.normal(label == 1 ? 0.5 * separation : -0.5 * separation, 1.0);
    g.logits(k, 0) = 0.0;
    g.logits(k, 1) = score;
    g.labels.push_back(label);
  }
  g.xi = rng.uniform(0.0, 0.3);
  g.r_t = rng.uniform(0.01, 0.3);
  return g;
}

/// p^xi(unsafe | safe class) after shifting the safe-class logit by b, from a full table rebuild.
inline double rebuilt_posterior(const GradedInstance& g, std::span<const double> priors, std::size_t safe_class,
                                double b, std::size_t unsafe = 1) {
  BiasVector v{std::vector<double>(g.logits.cols(), 0.0)};
  v.v[safe_class] = b;
  const auto table = build_normal_table(g.labels, 2, apply_bias(g.logits, v), g.xi);
  return posterior_upper(table, priors)(safe_class, unsafe);
}

/// Smallest rebuilt posterior over a dense offset grid, used to decide whether r_t is achievable at all.
inline double min_posterior_on_grid(const GradedInstance& g, std::span<const double> priors, std::size_t safe_class,
                                    double lo, double hi, double step) {
  double best = 1.0;
  for (double b = lo; b <= hi; b += step) best = std::min(best, rebuilt_posterior(g, priors, safe_class, b));
  return best;
}

}  // namespace ccsafe::testing
