#pragma once

#include <span>
#include <vector>

#include "ccsafe/classifier.hpp"
#include "ccsafe/core.hpp"

namespace ccsafe {

/// Constant offset added to the final-layer logits.
struct BiasVector {
  std::vector<double> v;

  bool operator==(const BiasVector&) const = default;
};

/// Adds v to every row of logits.
Matrix<double> apply_bias(const Matrix<double>& logits, const BiasVector& bias);
std::vector<double> apply_bias(std::span<const double> logits, const BiasVector& bias);

struct BiasCorrectionOptions {
  double unit_step = 0.01;
  std::size_t max_iters = 100000;      // unit steps before giving up on a bracket
  std::size_t unsafe_state = 1;
};

struct BiasCorrectionResult {
  BiasVector bias;
  std::size_t safe_class = 0;
  double posterior = 0.0;   // p^xi(unsafe | safe class) after correction
  double target = 0.0;      // r_t
  double gap = 0.0;         // target - posterior
  double jump = 0.0;        // posterior change across the final bracket
  bool achieved = false;    // posterior <= target
  bool bracketed = false;   // a crossing of the target was located
  bool saturated = false;   // every record is on one side of every indicator, so further steps change nothing
  std::size_t iterations = 0;
};

/// Shifts the safe class's logit (the class with the smallest conservative posterior of the unsafe
/// state) until p^xi(unsafe | safe class) sits just at or below r_t. The search walks in unit steps
/// until it brackets the target, then resolves the bracket exactly at the indicator flip points.
/// `logits` holds one row per record.
BiasCorrectionResult bias_correct(const Matrix<double>& logits, std::span<const std::size_t> labels,
                                  std::size_t num_states, double xi, std::span<const double> priors, double r_t,
                                  const BiasCorrectionOptions& options = {});

BiasCorrectionResult bias_correct(const MLPParams& params, const InternalTestSet& test_set, double xi,
                                  std::span<const double> priors, double r_t,
                                  const BiasCorrectionOptions& options = {});

}  // namespace ccsafe
