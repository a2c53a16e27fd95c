#include "ccsafe/approxloss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ccsafe {

namespace {

constexpr double kMinimizerMargin = 1e-9;

struct ArgminResult {
  std::size_t index = 0;
  double best = std::numeric_limits<double>::infinity();
  double margin = std::numeric_limits<double>::infinity();  // gap to the runner-up
};

template <class F>
ArgminResult argmin(std::size_t n, F&& value) {
  ArgminResult r;
  double second = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    const double v = value(a);
    if (v < r.best) {
      second = r.best;
      r.best = v;
      r.index = a;
    } else if (v < second) {
      second = v;
    }
  }
  r.margin = second - r.best;
  return r;
}

}  // namespace

void LossProblem::validate() const {
  if (candidates.empty()) throw ValidationError("loss problem needs at least one candidate");
  if (!loss || !objective) throw ValidationError("loss problem needs loss and objective evaluators");
  if (beta.size() != constraints.size()) {
    throw ValidationError("loss problem has " + std::to_string(constraints.size()) + " constraints but " +
                          std::to_string(beta.size()) + " beta weights");
  }
  for (double b : beta) {
    if (!(b > 0.0)) throw ValidationError("beta must be positive");
  }
  if (!(lambda > 0.0)) throw ValidationError("lambda must be positive");
}

double penalized_objective(const LossProblem& problem, const Action& u, std::span<const double> o) {
  double v = problem.objective(u, o);
  for (std::size_t i = 0; i < problem.constraints.size(); ++i) {
    v += problem.beta[i] * std::max(-problem.constraints[i](u, o), 0.0);
  }
  return v;
}

double approx_loss(const LossProblem& problem, std::span<const double> o) {
  problem.validate();
  double min_p = std::numeric_limits<double>::infinity();
  double min_q = std::numeric_limits<double>::infinity();
  for (const auto& u : problem.candidates) {
    const double q = penalized_objective(problem, u, o);
    min_q = std::min(min_q, q);
    min_p = std::min(min_p, problem.lambda * problem.loss(u, o) + q);
  }
  return (min_p - min_q) / problem.lambda;
}

std::optional<double> true_loss_oracle(const LossProblem& problem, std::span<const double> o) {
  problem.validate();
  std::vector<std::size_t> feasible;
  std::vector<double> objective;
  for (std::size_t a = 0; a < problem.candidates.size(); ++a) {
    const auto& u = problem.candidates[a];
    bool ok = true;
    for (const auto& c : problem.constraints) {
      if (c(u, o) < 0.0) ok = false;
    }
    if (!ok) continue;
    feasible.push_back(a);
    objective.push_back(problem.objective(u, o));
  }
  if (feasible.empty()) return std::nullopt;
  const double best = *std::min_element(objective.begin(), objective.end());
  const double tol = kProbTol * std::max(1.0, std::abs(best));
  double loss = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < feasible.size(); ++f) {
    if (objective[f] <= best + tol) loss = std::min(loss, problem.loss(problem.candidates[feasible[f]], o));
  }
  return loss;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp((logits[j] - top) / temperature);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> vpd_discrete(std::span<const double> losses_by_class, std::span<const double> logits,
                                 double temperature) {
  if (losses_by_class.size() != logits.size()) {
    throw ValidationError("vpd_discrete needs one loss per class");
  }
  const auto p = softmax(logits, temperature);
  double mean = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) mean += p[j] * losses_by_class[j];
  std::vector<double> grad(p.size());
  for (std::size_t m = 0; m < p.size(); ++m) grad[m] = p[m] * (losses_by_class[m] - mean) / temperature;
  return grad;
}

double vpd_continuous(const std::function<double(std::span<const double>)>& loss_fn, std::span<const double> o,
                      std::size_t i, double rho) {
  if (!(rho > 0.0)) throw ValidationError("rho must be positive");
  if (i >= o.size()) throw IndexError("coordinate " + std::to_string(i) + " out of range");
  const double step = std::abs(o[i]) < 1e-8 ? rho : rho * std::abs(o[i]);
  std::vector<double> shifted(o.begin(), o.end());
  shifted[i] += step;
  return (loss_fn(shifted) - loss_fn(o)) / step;
}

std::optional<std::vector<double>> exact_gradient(const LossProblem& problem, std::span<const double> o,
                                                  const OutputGradient& d_penalized_objective,
                                                  const OutputGradient& d_loss) {
  problem.validate();
  const auto& cands = problem.candidates;
  std::vector<double> q(cands.size()), l(cands.size());
  for (std::size_t a = 0; a < cands.size(); ++a) {
    q[a] = penalized_objective(problem, cands[a], o);
    l[a] = problem.loss(cands[a], o);
  }
  const auto xp = argmin(cands.size(), [&](std::size_t a) { return problem.lambda * l[a] + q[a]; });
  const auto xq = argmin(cands.size(), [&](std::size_t a) { return q[a]; });
  if (xp.margin < kMinimizerMargin || xq.margin < kMinimizerMargin) return std::nullopt;

  const auto dl = d_loss(cands[xp.index], o);
  const auto dqp = d_penalized_objective(cands[xp.index], o);
  const auto dqq = d_penalized_objective(cands[xq.index], o);
  if (dl.size() != o.size() || dqp.size() != o.size() || dqq.size() != o.size()) {
    throw ValidationError("output gradients must match the output dimension");
  }
  std::vector<double> g(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) g[i] = dl[i] + (dqp[i] - dqq[i]) / problem.lambda;
  return g;
}

PerturbedLosses table_perturbation_losses(const NormalTable& table, std::size_t state, std::size_t output,
                                          const TableLossFn& loss_fn) {
  if (state >= table.num_states() || output >= table.num_outputs()) {
    throw IndexError("table entry (" + std::to_string(state) + "," + std::to_string(output) + ") out of range");
  }
  PerturbedLosses r;
  r.base = loss_fn(table);
  NormalTable t = table;
  double& plus = t.plus(state, output);
  double& minus = t.minus(state, output);
  const double p0 = plus, m0 = minus;

  auto eval = [&](double dp, double dm) {
    plus = p0 + dp;
    minus = m0 + dm;
    const double v = loss_fn(t);
    plus = p0;
    minus = m0;
    return v;
  };

  r.plusoneone = eval(1, 1);
  r.plusone_minusxi = eval(0, 1);
  r.plusone_plusxi = eval(1, 0);
  r.minusoneone_unchanged = p0 <= 0.0 || m0 <= 0.0;
  r.minusoneone = r.minusoneone_unchanged ? r.base : eval(-1, -1);
  r.minusone_minusxi_unchanged = m0 <= 0.0;
  r.minusone_minusxi = r.minusone_minusxi_unchanged ? r.base : eval(0, -1);
  r.minusone_plusxi_unchanged = p0 <= 0.0;
  r.minusone_plusxi = r.minusone_plusxi_unchanged ? r.base : eval(-1, 0);
  return r;
}

std::vector<ContributionLevels> contribution_levels(std::span<const double> logits, double xi_eff,
                                                    std::span<const PerturbedLosses> per_class) {
  if (per_class.size() != logits.size()) throw ValidationError("need perturbed losses for every class");
  std::vector<ContributionLevels> out(logits.size());
  for (std::size_t l = 0; l < logits.size(); ++l) {
    const auto& pl = per_class[l];
    const bool in_plus = indicator_plus(logits, l, xi_eff) == 1;
    const bool in_minus = indicator_minus(logits, l, xi_eff) == 1;
    if (in_minus) {
      out[l] = {pl.minusoneone, pl.minusone_minusxi, pl.base};
    } else if (in_plus) {
      out[l] = {pl.minusone_plusxi, pl.base, pl.plusone_minusxi};
    } else {
      out[l] = {pl.base, pl.plusone_plusxi, pl.plusoneone};
    }
  }
  return out;
}

double internal_test_expected_loss(std::span<const double> logits, double xi_eff, double temperature,
                                   std::span<const ContributionLevels> levels) {
  if (levels.size() != logits.size()) throw ValidationError("need contribution levels for every class");
  std::vector<double> z(logits.begin(), logits.end());
  double e = 0.0;
  for (std::size_t l = 0; l < z.size(); ++l) {
    z[l] = logits[l] + xi_eff;
    const double p_plus = softmax(z, temperature)[l];
    z[l] = logits[l] - xi_eff;
    const double p_minus = softmax(z, temperature)[l];
    z[l] = logits[l];
    e += p_minus * levels[l].l11 + (p_plus - p_minus) * levels[l].l10 + (1.0 - p_plus) * levels[l].l00;
  }
  return e;
}

std::vector<double> internal_test_gradient(std::span<const double> logits, double xi_eff, double temperature,
                                           std::span<const ContributionLevels> levels, std::size_t n_t) {
  if (levels.size() != logits.size()) throw ValidationError("need contribution levels for every class");
  if (n_t == 0) throw ValidationError("n_t must be positive");
  const std::size_t n = logits.size();
  std::vector<double> z(logits.begin(), logits.end());
  std::vector<double> grad(n, 0.0);
  for (std::size_t l = 0; l < n; ++l) {
    z[l] = logits[l] + xi_eff;
    const auto s_plus = softmax(z, temperature);
    z[l] = logits[l] - xi_eff;
    const auto s_minus = softmax(z, temperature);
    z[l] = logits[l];
    // d softmax(a)_l / d z_m = s_l (delta_lm - s_m) / T for a shift that does not depend on z.
    const double w_minus = levels[l].l11 - levels[l].l10;
    const double w_plus = levels[l].l10 - levels[l].l00;
    for (std::size_t m = 0; m < n; ++m) {
      const double delta = l == m ? 1.0 : 0.0;
      const double dp_plus = s_plus[l] * (delta - s_plus[m]) / temperature;
      const double dp_minus = s_minus[l] * (delta - s_minus[m]) / temperature;
      grad[m] += dp_minus * w_minus + dp_plus * w_plus;
    }
  }
  for (double& g : grad) g /= static_cast<double>(n_t);
  return grad;
}

std::vector<double> internal_test_gradient(std::size_t label, const NormalTable& table, std::span<const double> logits,
                                           double temperature, const TableLossFn& loss_fn) {
  if (logits.size() != table.num_outputs()) throw ValidationError("logit length does not match the table");
  std::vector<PerturbedLosses> per_class;
  for (std::size_t l = 0; l < table.num_outputs(); ++l) {
    per_class.push_back(table_perturbation_losses(table, label, l, loss_fn));
  }
  double n_t = 0.0;
  for (double t : table.totals) n_t += t;
  const auto levels = contribution_levels(logits, table.xi_eff, per_class);
  return internal_test_gradient(logits, table.xi_eff, temperature, levels, static_cast<std::size_t>(n_t));
}

}  // namespace ccsafe
