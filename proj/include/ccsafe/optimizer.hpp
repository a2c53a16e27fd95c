#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ccsafe/core.hpp"
#include "json.hpp"

namespace ccsafe {

using ObjectiveFn = std::function<double(const Action&)>;

/// Largest state count bar_c_bigM will enumerate (2^N_e binary vectors).
inline constexpr std::size_t kMaxBigMStates = 20;

/// True when a violated mass respects threshold r_t (absolute tolerance kProbTol).
bool within_threshold(double mass, double r_t);

/// Sum of posterior mass over states whose constraint value is negative.
double violated_mass(std::span<const double> c_values, std::span<const double> posterior_column);
double violated_mass(const Action& u, const Constraint& constraint, std::span<const double> posterior_column);

/// max over q in {0,1}^N_e with sum p*q <= r_t of min_k (c_k + M q_k), by enumeration.
double bar_c_bigM(std::span<const double> c_values, std::span<const double> posterior_column, double r_t, double big_m);
double bar_c_bigM(const Action& u, const Constraint& constraint, std::span<const double> posterior_column, double r_t,
                  double big_m);

/// Posterior column for (candidate index, chance-constraint index).
using PosteriorLookup = std::function<std::vector<double>(std::size_t candidate, std::size_t chance_index)>;

/// Picks the lowest-objective candidate satisfying every constraint (ties go to the lower index),
/// or the default action when none qualifies. Each candidate may carry its own posterior column,
/// as when the classifier sees the candidate action as part of its input.
Decision select_action(const CandidateSet& candidates, const ObjectiveFn& objective, const ConstraintSpec& constraints,
                       const PosteriorLookup& posterior, std::size_t num_states, const UserParams& params);

/// Picks the lowest-objective candidate satisfying every constraint (ties go to the lower index),
/// or the default action when none qualifies. `posterior_columns` holds one column per chance
/// constraint in declaration order.
Decision select_action(const CandidateSet& candidates, const ObjectiveFn& objective, const ConstraintSpec& constraints,
                       const std::vector<std::vector<double>>& posterior_columns, const UserParams& params);

/// Same, with one posterior column shared by every chance constraint.
Decision select_action(const CandidateSet& candidates, const ObjectiveFn& objective, const ConstraintSpec& constraints,
                       std::span<const double> posterior_column, const UserParams& params);

nlohmann::json to_json(const Decision& decision);

}  // namespace ccsafe
