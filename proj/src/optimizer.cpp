#include "ccsafe/optimizer.hpp"

#include <algorithm>
#include <limits>

namespace ccsafe {

namespace {

void check_column(std::span<const double> c_values, std::span<const double> posterior_column) {
  if (c_values.size() != posterior_column.size()) {
    throw ValidationError("constraint values and posterior column have different lengths");
  }
}

std::vector<double> evaluate_states(const Action& u, const Constraint& constraint, std::size_t num_states) {
  std::vector<double> c(num_states);
  for (std::size_t k = 0; k < num_states; ++k) c[k] = constraint.evaluate(u, k);
  return c;
}

}  // namespace

bool within_threshold(double mass, double r_t) { return mass <= r_t + kProbTol; }

double violated_mass(std::span<const double> c_values, std::span<const double> posterior_column) {
  check_column(c_values, posterior_column);
  double mass = 0.0;
  for (std::size_t k = 0; k < c_values.size(); ++k) {
    if (c_values[k] < 0.0) mass += posterior_column[k];
  }
  return mass;
}

double violated_mass(const Action& u, const Constraint& constraint, std::span<const double> posterior_column) {
  const auto c = evaluate_states(u, constraint, posterior_column.size());
  return violated_mass(c, posterior_column);
}

double bar_c_bigM(std::span<const double> c_values, std::span<const double> posterior_column, double r_t,
                  double big_m) {
  check_column(c_values, posterior_column);
  const std::size_t n = c_values.size();
  if (n > kMaxBigMStates) {
    throw ValidationError("bar_c_bigM enumerates at most " + std::to_string(kMaxBigMStates) + " states, got " +
                          std::to_string(n));
  }
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < (std::size_t{1} << n); ++q) {
    double mass = 0.0;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      const bool relaxed = (q >> k) & 1U;
      if (relaxed) mass += posterior_column[k];
      worst = std::min(worst, c_values[k] + (relaxed ? big_m : 0.0));
    }
    if (within_threshold(mass, r_t)) best = std::max(best, worst);
  }
  return best;
}

double bar_c_bigM(const Action& u, const Constraint& constraint, std::span<const double> posterior_column, double r_t,
                  double big_m) {
  const auto c = evaluate_states(u, constraint, posterior_column.size());
  return bar_c_bigM(c, posterior_column, r_t, big_m);
}

Decision select_action(const CandidateSet& candidates, const ObjectiveFn& objective, const ConstraintSpec& constraints,
                       const PosteriorLookup& posterior, std::size_t num_states, const UserParams& params) {
  if (candidates.actions.empty()) throw ValidationError("empty candidate set");
  const std::size_t n_chance = constraints.num_chance();
  if (params.thresholds.size() != n_chance) {
    throw ValidationError("expected " + std::to_string(n_chance) + " thresholds, got " +
                          std::to_string(params.thresholds.size()));
  }

  Decision d;
  d.big_m = params.big_m ? *params.big_m : compute_big_m(candidates, constraints, num_states);
  d.default_objective = objective(candidates.default_action);
  d.trace.reserve(candidates.actions.size());

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < candidates.actions.size(); ++a) {
    const Action& u = candidates.actions[a];
    CandidateTrace t;
    t.feasible = true;
    std::size_t chance_index = 0;
    for (const auto& c : constraints.constraints) {
      if (!c.chance) {
        if (c.evaluate(u, 0) < 0.0) t.feasible = false;
        continue;
      }
      const auto col = posterior(a, chance_index);
      if (col.size() != num_states) {
        throw ValidationError("posterior column has " + std::to_string(col.size()) + " entries, expected " +
                              std::to_string(num_states));
      }
      const double r_t = params.thresholds[chance_index];
      const auto values = evaluate_states(u, c, num_states);
      const double mass = violated_mass(values, col);
      t.violated_mass.push_back(mass);
      if (num_states <= kMaxBigMStates) t.bar_c.push_back(bar_c_bigM(values, col, r_t, d.big_m));
      if (!within_threshold(mass, r_t)) t.feasible = false;
      ++chance_index;
    }
    t.objective = objective(u);
    if (t.feasible && t.objective < best) {
      best = t.objective;
      d.chosen_index = a;
    }
    d.trace.push_back(std::move(t));
  }

  if (d.chosen_index) {
    d.chosen = candidates.actions[*d.chosen_index];
  } else {
    d.chosen = candidates.default_action;
    d.used_default = true;
  }
  return d;
}

Decision select_action(const CandidateSet& candidates, const ObjectiveFn& objective, const ConstraintSpec& constraints,
                       const std::vector<std::vector<double>>& posterior_columns, const UserParams& params) {
  const std::size_t n_chance = constraints.num_chance();
  if (posterior_columns.size() != n_chance) {
    throw ValidationError("expected " + std::to_string(n_chance) + " posterior columns, got " +
                          std::to_string(posterior_columns.size()));
  }
  const std::size_t num_states = n_chance ? posterior_columns.front().size() : 1;
  return select_action(
      candidates, objective, constraints, [&](std::size_t, std::size_t i) { return posterior_columns[i]; },
      num_states, params);
}

Decision select_action(const CandidateSet& candidates, const ObjectiveFn& objective, const ConstraintSpec& constraints,
                       std::span<const double> posterior_column, const UserParams& params) {
  std::vector<std::vector<double>> columns(constraints.num_chance(),
                                           std::vector<double>(posterior_column.begin(), posterior_column.end()));
  return select_action(candidates, objective, constraints, columns, params);
}

nlohmann::json to_json(const Decision& decision) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& t : decision.trace) {
    trace.push_back({{"violated_mass", t.violated_mass},
                     {"bar_c", t.bar_c},
                     {"feasible", t.feasible},
                     {"objective", t.objective}});
  }
  nlohmann::json j = {{"chosen", decision.chosen},
                      {"used_default", decision.used_default},
                      {"default_objective", decision.default_objective},
                      {"big_m", decision.big_m},
                      {"trace", trace}};
  j["chosen_index"] = decision.chosen_index ? nlohmann::json(*decision.chosen_index) : nlohmann::json(nullptr);
  return j;
}

}  // namespace ccsafe
