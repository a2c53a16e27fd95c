#pragma once

#include <cstddef>
#include <span>

#include "ccsafe/rng.hpp"

namespace ccsafe {

struct CheckResult {
  std::size_t instances = 0;  // instances compared
  std::size_t skipped = 0;    // instances refused by the analytic path
  double max_rel = 0.0;       // worst |analytic - fd| / |fd| over compared instances
};

/// ||a - b|| / max(||b||, 1e-8).
double rel_error(std::span<const double> a, std::span<const double> b);

/// vpd_discrete against central differences of sum_j softmax(z / T)_j L_j on random logits and losses.
CheckResult check_vpd(std::size_t instances, double h, Rng& rng);

/// exact_gradient against central differences of approx_loss on random smooth quadratic problems.
CheckResult check_exact_gradient(std::size_t instances, double h, Rng& rng);

/// MLP backward against central differences of w . forward(x) over every parameter.
CheckResult check_mlp(std::size_t instances, double h, Rng& rng);

}  // namespace ccsafe
