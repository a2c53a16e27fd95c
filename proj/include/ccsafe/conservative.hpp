#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ccsafe/core.hpp"
#include "json.hpp"

namespace ccsafe {

/// Per-coordinate logit-shift width actually used for a user-facing xi.
double xi_effective(double xi);

/// 1 iff logits[j] + xi >= max over all logits (ties count).
int indicator_plus(std::span<const double> logits, std::size_t j, double xi);

/// 1 iff logits[j] - xi > max over the other logits (strict).
int indicator_minus(std::span<const double> logits, std::size_t j, double xi);

/// Conservative counts N^{+xi}, N^{-xi} (rows = states, cols = outputs) plus per-state totals.
/// Counts are stored as doubles so that perturbed tables (+/-1 edits) share the type.
struct NormalTable {
  Matrix<double> plus;
  Matrix<double> minus;
  std::vector<double> totals;
  double xi = 0.0;
  double xi_eff = 0.0;

  std::size_t num_states() const { return plus.rows(); }
  std::size_t num_outputs() const { return plus.cols(); }

  /// Throws ValidationError if shapes disagree or the ordering invariants fail.
  void validate() const;
};

/// Builds the table from per-record labels and logits (one row of `logits` per record).
/// The indicator width is xi_effective(xi).
NormalTable build_normal_table(std::span<const std::size_t> labels, std::size_t num_states,
                               const Matrix<double>& logits, double xi);
NormalTable build_normal_table(const InternalTestSet& test_set, const Matrix<double>& logits, double xi);
NormalTable build_normal_table(const InternalTestSet& test_set, const std::vector<std::vector<double>>& logits,
                               double xi);

/// Packs per-record logit vectors into a matrix. All rows must share one length.
Matrix<double> to_matrix(const std::vector<std::vector<double>>& rows);

struct PlainPosterior {
  Matrix<double> plain;            // outputs x states
  std::vector<bool> fallback;      // per output: column had zero evidence and was set to the prior
};

/// Bayes posterior from a xi = 0 table.
PlainPosterior posterior_plain(const NormalTable& table, std::span<const double> priors);

/// Conservative posterior upper bound (outputs x states), clamped to [0, 1].
/// A zero denominator yields 1.
Matrix<double> posterior_upper(const NormalTable& table, std::span<const double> priors);

struct PosteriorTable {
  Matrix<double> upper;            // outputs x states
  Matrix<double> plain;            // outputs x states, from the xi = 0 counts
  std::vector<bool> plain_fallback;
};

/// Builds both the xi table and the xi = 0 table from the same records.
PosteriorTable compute_posteriors(std::span<const std::size_t> labels, std::size_t num_states,
                                  const Matrix<double>& logits, double xi, std::span<const double> priors);

nlohmann::json to_json(const NormalTable& table);
nlohmann::json to_json(const PosteriorTable& posteriors);
nlohmann::json matrix_to_json(const Matrix<double>& m);

}  // namespace ccsafe
