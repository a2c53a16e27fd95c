#include "ccsafe/zeta.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

#include "ccsafe/core.hpp"

namespace ccsafe {

namespace {

constexpr std::size_t kMaxInformativePoints = 15;
constexpr double kMassTol = 1e-9;

double distance(const Point& a, const Point& b) {
  if (a.size() != b.size()) throw ValidationError("points have mismatched dimensions");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

void check_dims(const std::vector<Point>& pts) {
  for (const auto& p : pts) {
    if (p.size() != 1 && p.size() != 2) throw ValidationError("zeta oracles support 1-D and 2-D points only");
  }
}

// True when every nonempty subset passes the informative condition at radius zeta.
bool informative_at(const std::vector<Point>& points, const QuadratureMeasure& measure, double zeta) {
  const std::size_t n = points.size();
  const std::size_t full = (std::size_t{1} << n) - 1;
  // hist[m] is the mass of nodes covered by exactly the ball set m; after the subset-sum
  // transform g[S] is the mass of nodes whose covering set lies inside S.
  std::vector<double> g(full + 1, 0.0);
  double total = 0.0;
  for (std::size_t q = 0; q < measure.nodes.size(); ++q) {
    std::size_t mask = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (distance(measure.nodes[q], points[i]) < zeta) mask |= std::size_t{1} << i;
    }
    g[mask] += measure.weights[q];
    total += measure.weights[q];
  }
  for (std::size_t bit = 0; bit < n; ++bit) {
    for (std::size_t s = 0; s <= full; ++s) {
      if (s & (std::size_t{1} << bit)) g[s] += g[s ^ (std::size_t{1} << bit)];
    }
  }
  for (std::size_t x = 1; x <= full; ++x) {
    const double covered = total - g[full & ~x];
    const double need = static_cast<double>(std::popcount(x)) / static_cast<double>(n);
    if (covered < need - kMassTol) return false;
  }
  return true;
}

double max_node_distance(const std::vector<Point>& points, const std::vector<Point>& nodes) {
  double worst = 0.0;
  for (const auto& a : points) {
    for (const auto& b : nodes) worst = std::max(worst, distance(a, b));
  }
  return worst;
}

}  // namespace

QuadratureMeasure QuadratureMeasure::uniform_1d(double lo, double hi, std::size_t n) {
  if (n == 0 || !(hi > lo)) throw ValidationError("uniform_1d needs n > 0 and hi > lo");
  QuadratureMeasure m;
  const double h = (hi - lo) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.nodes.push_back({lo + (static_cast<double>(i) + 0.5) * h});
    m.weights.push_back(1.0 / static_cast<double>(n));
  }
  return m;
}

QuadratureMeasure QuadratureMeasure::uniform_2d(double x_lo, double x_hi, double y_lo, double y_hi, std::size_t nx,
                                                std::size_t ny) {
  if (nx == 0 || ny == 0 || !(x_hi > x_lo) || !(y_hi > y_lo)) {
    throw ValidationError("uniform_2d needs positive cell counts and a non-degenerate rectangle");
  }
  QuadratureMeasure m;
  const double hx = (x_hi - x_lo) / static_cast<double>(nx), hy = (y_hi - y_lo) / static_cast<double>(ny);
  const double w = 1.0 / static_cast<double>(nx * ny);
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      m.nodes.push_back({x_lo + (static_cast<double>(i) + 0.5) * hx, y_lo + (static_cast<double>(j) + 0.5) * hy});
      m.weights.push_back(w);
    }
  }
  return m;
}

double QuadratureMeasure::union_of_balls(const std::vector<Point>& centers, double radius) const {
  double mass = 0.0;
  for (std::size_t q = 0; q < nodes.size(); ++q) {
    for (const auto& c : centers) {
      if (distance(nodes[q], c) < radius) {
        mass += weights[q];
        break;
      }
    }
  }
  return mass;
}

double zeta_informative_inf(const std::vector<Point>& points, const QuadratureMeasure& measure, double resolution) {
  if (points.empty()) throw ValidationError("zeta_informative_inf needs at least one point");
  if (points.size() > kMaxInformativePoints) {
    throw ValidationError("exhaustive check infeasible for " + std::to_string(points.size()) +
                          " points (limit " + std::to_string(kMaxInformativePoints) + ")");
  }
  if (!(resolution > 0.0)) throw ValidationError("resolution must be positive");
  if (measure.nodes.empty() || measure.nodes.size() != measure.weights.size()) {
    throw ValidationError("measure needs matching nodes and weights");
  }
  check_dims(points);
  check_dims(measure.nodes);

  // The condition is monotone in zeta, and any radius above the farthest node distance covers everything.
  std::size_t hi = static_cast<std::size_t>(std::ceil(max_node_distance(points, measure.nodes) / resolution)) + 1;
  std::size_t lo = 0;
  if (informative_at(points, measure, 0.0)) return 0.0;
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (informative_at(points, measure, static_cast<double>(mid) * resolution)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return static_cast<double>(hi) * resolution;
}

double zeta_coverage_inf(const std::vector<Point>& points, const std::vector<Point>& grid, double resolution) {
  if (points.empty()) throw ValidationError("zeta_coverage_inf needs at least one point");
  if (grid.empty()) throw ValidationError("zeta_coverage_inf needs a non-empty grid");
  if (!(resolution > 0.0)) throw ValidationError("resolution must be positive");
  check_dims(points);
  check_dims(grid);
  double worst = 0.0;
  for (const auto& g : grid) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : points) best = std::min(best, distance(g, p));
    worst = std::max(worst, best);
  }
  return (std::floor(worst / resolution) + 1.0) * resolution;
}

ZetaReport zeta_report(const std::vector<Point>& points, const QuadratureMeasure& measure, double resolution) {
  ZetaReport r;
  r.resolution = resolution;
  r.zeta_inf = zeta_informative_inf(points, measure, resolution);
  r.coverage_zeta = zeta_coverage_inf(points, measure.nodes, resolution);
  return r;
}

}  // namespace ccsafe
