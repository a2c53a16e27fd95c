#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ccsafe/core.hpp"
#include "ccsafe/rng.hpp"

namespace ccsafe::prodplan {

inline constexpr std::size_t kNumProducts = 4;
inline constexpr std::size_t kHistory = 24;
inline constexpr double kLowDemand = 3.0;    // demand below this level makes production unsafe
inline constexpr double kMaxQuantity = 10.0;
inline constexpr double kMaxDemand = 10.0;

using Vec4 = std::array<double, kNumProducts>;
using Mask4 = std::array<bool, kNumProducts>;

struct PlanningInstance {
  Vec4 p{};                    // standard prices
  Vec4 k{};                    // price sensitivities, > 0
  Matrix<double> A{kNumProducts, kNumProducts};  // material consumption
  Vec4 b{};                    // material limits, > 0
  std::vector<std::vector<double>> demand_history;  // per product, most recent value last

  /// Throws ValidationError when an invariant fails. The history may be empty.
  void validate() const;
};

/// Prices in [2, 5], sensitivities in [0.5, 1.5], consumption in [0, 0.5], limits in [8, 16].
PlanningInstance random_instance(Rng& rng);

struct ProductionDecision {
  Vec4 u{};
  Mask4 stopped{};
};

/// sum_i (p_i - k_i (u_i - s_i)) u_i
double revenue(std::span<const double> u, std::span<const double> s, std::span<const double> p,
               std::span<const double> k);
double revenue(const ProductionDecision& d, const Vec4& s, const PlanningInstance& inst);

/// -sum_i (p_i - k_i (u_i - o_i)) u_i
double planning_objective(std::span<const double> u, const Vec4& o, const PlanningInstance& inst);

/// Exact minimizer of the planning objective over [0, 10]^4 with (A + I) u <= b and u_i = 0 for stopped i.
ProductionDecision plan_production(const Vec4& o, const Mask4& stop_mask, const PlanningInstance& inst);

/// Minimizer of planning_objective(u, o) - lambda * revenue(u, s) over the same feasible set.
ProductionDecision plan_with_loss(const Vec4& o, const Vec4& s, double lambda, const Mask4& stop_mask,
                                  const PlanningInstance& inst);

/// Largest entry of (A + I) u - b; non-positive for a feasible plan.
double material_residual(const ProductionDecision& d, const PlanningInstance& inst);

/// Mean and population standard deviation of each history; stops product i when mu_i - coeff * sigma_i < 3,
/// otherwise plans with o = mu.
ProductionDecision mean_var_plan(const std::vector<std::vector<double>>& history, double coeff,
                                 const PlanningInstance& inst);

/// Plans with the point estimate and stops every product whose estimate is below 3.
ProductionDecision twostage_plan(const Vec4& o, const PlanningInstance& inst);

/// Two-stage training loss 0.5 (s - o)^2, scaled by (1 + r) when o overestimates s.
double asymmetric_loss(double o, double s, double r);
double asymmetric_loss_gradient(double o, double s, double r);

/// Approximate loss of the estimate o with the stop decisions held fixed:
/// (1/lambda) [min (J-bar - lambda R) - min J-bar] + reg * sum (o - s)^2, where R is realized revenue.
struct EstimateLoss {
  double value = 0.0;
  Vec4 gradient{};        // d value / d o
  ProductionDecision plan;       // minimizer of J-bar
  ProductionDecision plan_loss;  // minimizer of J-bar - lambda R
};

EstimateLoss estimate_loss(const Vec4& o, const Vec4& s, const Mask4& stop_mask, const PlanningInstance& inst,
                           double lambda, double reg);

struct DemandComponent {
  double mean = 5.0;
  double amplitude = 2.0;
  double phase = 0.0;
  double period = 24.0;
  double ar_coef = 0.8;
  double noise_sd = 0.0;
};

/// mean + amplitude sin(2 pi t / period + phase) + e_t with e_t = ar_coef e_{t-1} + noise_sd eps_t,
/// clipped to [0, 10]. One series per component.
std::vector<std::vector<double>> gen_demand(const std::vector<DemandComponent>& components, std::size_t T, Rng& rng);

/// Four series from randomized components whose mean is set so that a fraction in [0.15, 0.35]
/// of the steps lies below 3. Requires T >= 48.
std::vector<std::vector<double>> gen_demand(std::uint64_t seed, std::size_t T);

/// Long-run fraction of time a sinusoid mean + amplitude sin(.) spends below `level`.
double sinusoid_below_fraction(double mean, double amplitude, double level);

double fraction_below(std::span<const double> series, double level);

}  // namespace ccsafe::prodplan
