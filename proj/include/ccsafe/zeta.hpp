#pragma once

#include <cstddef>
#include <vector>

namespace ccsafe {

using Point = std::vector<double>;

/// Weighted quadrature nodes standing in for a probability measure on a 1-D or 2-D support.
struct QuadratureMeasure {
  std::vector<Point> nodes;
  std::vector<double> weights;  // sums to 1

  /// Midpoint rule for the uniform distribution on [lo, hi] with n cells.
  static QuadratureMeasure uniform_1d(double lo, double hi, std::size_t n);
  /// Midpoint rule for the uniform distribution on a rectangle with nx * ny cells.
  static QuadratureMeasure uniform_2d(double x_lo, double x_hi, double y_lo, double y_hi, std::size_t nx,
                                      std::size_t ny);

  /// Mass of the union of open balls B(center, radius).
  double union_of_balls(const std::vector<Point>& centers, double radius) const;
};

struct ZetaReport {
  double zeta_inf = 0.0;
  double coverage_zeta = 0.0;
  double resolution = 0.0;
};

/// Smallest zeta = k * resolution such that every nonempty subset X of the points has
/// P(union of B(point, zeta) over X) >= |X| / n_s. Balls are open. Refuses more than 15 points.
double zeta_informative_inf(const std::vector<Point>& points, const QuadratureMeasure& measure, double resolution);

/// Smallest zeta = k * resolution strictly exceeding the largest distance from a grid node to its
/// nearest point, so that the open balls cover the grid.
double zeta_coverage_inf(const std::vector<Point>& points, const std::vector<Point>& grid, double resolution);

ZetaReport zeta_report(const std::vector<Point>& points, const QuadratureMeasure& measure, double resolution);

}  // namespace ccsafe
