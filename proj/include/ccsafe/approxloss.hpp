#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ccsafe/conservative.hpp"
#include "ccsafe/core.hpp"

namespace ccsafe {

/// Evaluator of an action given the model output o. The true state and user parameters are bound by the caller.
using ActionEval = std::function<double(const Action& u, std::span<const double> o)>;

struct LossProblem {
  std::vector<Action> candidates;
  ActionEval loss;                      // L(u, o; s, r)
  ActionEval objective;                 // J-bar(u; o, r)
  std::vector<ActionEval> constraints;  // c-bar_i(u; o, r), feasible when >= 0
  std::vector<double> beta;             // one penalty weight per constraint
  double lambda = 0.005;

  void validate() const;
};

/// J-bar plus the hinge penalty sum_i beta_i * max(-c-bar_i, 0).
double penalized_objective(const LossProblem& problem, const Action& u, std::span<const double> o);

/// (1/lambda) [min_u (lambda L + penalized J-bar) - min_u penalized J-bar], by enumeration.
double approx_loss(const LossProblem& problem, std::span<const double> o);

/// Loss of the preferred optimal action: min L over the J-bar-argmin of the feasible set.
/// Empty when no candidate is feasible.
std::optional<double> true_loss_oracle(const LossProblem& problem, std::span<const double> o);

/// Softmax of logits / temperature.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

/// Gradient over logits of sum_j p_j L_j with p = softmax(logits / temperature).
std::vector<double> vpd_discrete(std::span<const double> losses_by_class, std::span<const double> logits,
                                 double temperature = 2.0);

/// Forward difference in coordinate i with step rho * |o_i|, or rho when |o_i| < 1e-8.
double vpd_continuous(const std::function<double(std::span<const double>)>& loss_fn, std::span<const double> o,
                      std::size_t i, double rho);

/// Gradient of an objective-like function with respect to the model output, at a fixed action.
using OutputGradient = std::function<std::vector<double>(const Action& u, std::span<const double> o)>;

/// (1/lambda)(dP(x_p, o) - dQ(x_q, o)) where x_p and x_q minimize P = lambda L + penalized J-bar and
/// Q = penalized J-bar. Empty when either minimizer is not unique to within 1e-9.
std::optional<std::vector<double>> exact_gradient(const LossProblem& problem, std::span<const double> o,
                                                  const OutputGradient& d_penalized_objective,
                                                  const OutputGradient& d_loss);

using TableLossFn = std::function<double(const NormalTable&)>;

struct PerturbedLosses {
  double base = 0.0;
  double plusoneone = 0.0;        // plus +1 and minus +1
  double plusone_minusxi = 0.0;   // minus +1
  double plusone_plusxi = 0.0;    // plus +1
  double minusoneone = 0.0;       // plus -1 and minus -1
  double minusone_minusxi = 0.0;  // minus -1
  double minusone_plusxi = 0.0;   // plus -1
  // Set when the decrement would have made a count negative and the base loss was used instead.
  bool minusoneone_unchanged = false;
  bool minusone_minusxi_unchanged = false;
  bool minusone_plusxi_unchanged = false;
};

/// Losses of the six +/-1 edits to entry (state, output) of the table.
PerturbedLosses table_perturbation_losses(const NormalTable& table, std::size_t state, std::size_t output,
                                          const TableLossFn& loss_fn);

/// Losses of the table when record k contributes (plus, minus) = (0,0), (1,0) or (1,1) at one class,
/// with every other record held fixed.
struct ContributionLevels {
  double l00 = 0.0;
  double l10 = 0.0;
  double l11 = 0.0;
};

/// Maps each class's perturbed losses onto the three contribution levels, using the record's
/// current indicators (at width xi_eff) to decide which level the unperturbed table represents.
std::vector<ContributionLevels> contribution_levels(std::span<const double> logits, double xi_eff,
                                                    std::span<const PerturbedLosses> per_class);

/// Softened expected loss sum_l [p-_l L11 + (p+_l - p-_l) L10 + (1 - p+_l) L00] where
/// p+-_l = softmax((logits +- xi_eff e_l) / temperature)_l.
double internal_test_expected_loss(std::span<const double> logits, double xi_eff, double temperature,
                                   std::span<const ContributionLevels> levels);

/// Gradient of internal_test_expected_loss over one record's logits, divided by n_t.
std::vector<double> internal_test_gradient(std::span<const double> logits, double xi_eff, double temperature,
                                           std::span<const ContributionLevels> levels, std::size_t n_t);

/// Convenience form: perturbs the table at (label, each class) and divides by the table's record count.
std::vector<double> internal_test_gradient(std::size_t label, const NormalTable& table, std::span<const double> logits,
                                           double temperature, const TableLossFn& loss_fn);

}  // namespace ccsafe
