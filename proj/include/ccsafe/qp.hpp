#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ccsafe/core.hpp"

namespace ccsafe {

struct QPResult {
  std::vector<double> x;
  std::vector<std::size_t> active;   // indices of constraints treated as equalities at the optimum
  std::vector<double> multipliers;   // one per active constraint, all >= 0
  double objective = 0.0;
};

/// Largest constraint count accepted by solve_diagonal_qp.
inline constexpr std::size_t kMaxQpConstraints = 20;

/// Minimizes 0.5 * sum_i h_i x_i^2 - g^T x subject to G x <= b, with every h_i > 0.
/// Exhaustive active-set search over subsets of at most n constraints, smallest first;
/// the first KKT point is returned and is the unique minimizer by strict convexity.
/// Throws ValidationError when the constraints admit no solution.
QPResult solve_diagonal_qp(std::span<const double> h, std::span<const double> g, const Matrix<double>& G,
                           std::span<const double> b, double tol = 1e-10);

}  // namespace ccsafe
