#include "ccsafe/prodplan.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>

#include "ccsafe/qp.hpp"

namespace ccsafe::prodplan {

void PlanningInstance::validate() const {
  if (A.rows() != kNumProducts || A.cols() != kNumProducts) throw ValidationError("A must be 4x4");
  for (std::size_t i = 0; i < kNumProducts; ++i) {
    if (!(k[i] > 0.0) || !std::isfinite(k[i])) throw ValidationError("price sensitivities must be positive");
    if (!(b[i] > 0.0) || !std::isfinite(b[i])) throw ValidationError("material limits must be positive");
    if (!std::isfinite(p[i])) throw ValidationError("prices must be finite");
  }
  for (double a : A.data()) {
    if (!std::isfinite(a)) throw ValidationError("material consumption must be finite");
  }
  if (!demand_history.empty()) {
    if (demand_history.size() != kNumProducts) throw ValidationError("demand history needs one series per product");
    for (const auto& h : demand_history) {
      if (h.size() != kHistory) throw ValidationError("demand history must hold 24 values per product");
      for (double v : h) {
        if (!(v >= 0.0 && v <= kMaxDemand)) throw ValidationError("demand history values must lie in [0, 10]");
      }
    }
  }
}

PlanningInstance random_instance(Rng& rng) {
  PlanningInstance inst;
  for (std::size_t i = 0; i < kNumProducts; ++i) {
    inst.p[i] = rng.uniform(2.0, 5.0);
    inst.k[i] = rng.uniform(0.5, 1.5);
    inst.b[i] = rng.uniform(8.0, 16.0);
    for (std::size_t j = 0; j < kNumProducts; ++j) inst.A(i, j) = rng.uniform(0.0, 0.5);
  }
  return inst;
}

double revenue(std::span<const double> u, std::span<const double> s, std::span<const double> p,
               std::span<const double> k) {
  if (s.size() != u.size() || p.size() != u.size() || k.size() != u.size()) {
    throw ValidationError("revenue: argument lengths differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) total += (p[i] - k[i] * (u[i] - s[i])) * u[i];
  return total;
}

double revenue(const ProductionDecision& d, const Vec4& s, const PlanningInstance& inst) {
  return revenue(d.u, s, inst.p, inst.k);
}

double planning_objective(std::span<const double> u, const Vec4& o, const PlanningInstance& inst) {
  return -revenue(u, o, inst.p, inst.k);
}

namespace {

// Minimizes sum_i curvature * k_i u_i^2 - linear_i u_i over the feasible set.
ProductionDecision solve_plan(double curvature, const Vec4& linear, const Mask4& stop_mask,
                              const PlanningInstance& inst) {
  inst.validate();
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < kNumProducts; ++i) {
    if (!std::isfinite(linear[i])) throw ValidationError("demand estimates must be finite");
    if (!stop_mask[i]) free.push_back(i);
  }
  ProductionDecision d;
  d.stopped = stop_mask;
  for (double bi : inst.b) {
    if (bi < 0.0) throw ValidationError("material limits admit no plan");
  }
  if (free.empty()) return d;

  const std::size_t n = free.size();
  std::vector<double> h(n), g(n);
  for (std::size_t a = 0; a < n; ++a) {
    h[a] = 2.0 * curvature * inst.k[free[a]];
    g[a] = linear[free[a]];
  }
  // Rows: material (A + I) u <= b, then u <= 10, then -u <= 0.
  Matrix<double> G(kNumProducts + 2 * n, n);
  std::vector<double> rhs(kNumProducts + 2 * n);
  for (std::size_t r = 0; r < kNumProducts; ++r) {
    for (std::size_t a = 0; a < n; ++a) G(r, a) = inst.A(r, free[a]) + (r == free[a] ? 1.0 : 0.0);
    rhs[r] = inst.b[r];
  }
  for (std::size_t a = 0; a < n; ++a) {
    G(kNumProducts + a, a) = 1.0;
    rhs[kNumProducts + a] = kMaxQuantity;
    G(kNumProducts + n + a, a) = -1.0;
    rhs[kNumProducts + n + a] = 0.0;
  }
  const QPResult qp = solve_diagonal_qp(h, g, G, rhs);
  for (std::size_t a = 0; a < n; ++a) d.u[free[a]] = std::clamp(qp.x[a], 0.0, kMaxQuantity);
  if (material_residual(d, inst) > 1e-9) throw Error("plan violates the material limits after solving");
  return d;
}

}  // namespace

double material_residual(const ProductionDecision& d, const PlanningInstance& inst) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < kNumProducts; ++r) {
    double s = d.u[r] - inst.b[r];
    for (std::size_t j = 0; j < kNumProducts; ++j) s += inst.A(r, j) * d.u[j];
    worst = std::max(worst, s);
  }
  return worst;
}

ProductionDecision plan_production(const Vec4& o, const Mask4& stop_mask, const PlanningInstance& inst) {
  Vec4 linear;
  for (std::size_t i = 0; i < kNumProducts; ++i) linear[i] = inst.p[i] + inst.k[i] * o[i];
  return solve_plan(1.0, linear, stop_mask, inst);
}

ProductionDecision plan_with_loss(const Vec4& o, const Vec4& s, double lambda, const Mask4& stop_mask,
                                  const PlanningInstance& inst) {
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
  Vec4 linear;
  for (std::size_t i = 0; i < kNumProducts; ++i) {
    linear[i] = inst.p[i] + inst.k[i] * o[i] + lambda * (inst.p[i] + inst.k[i] * s[i]);
  }
  return solve_plan(1.0 + lambda, linear, stop_mask, inst);
}

ProductionDecision mean_var_plan(const std::vector<std::vector<double>>& history, double coeff,
                                 const PlanningInstance& inst) {
  if (history.size() != kNumProducts) throw ValidationError("history needs one series per product");
  Vec4 mu{};
  Mask4 stop{};
  for (std::size_t i = 0; i < kNumProducts; ++i) {
    const auto& h = history[i];
    if (h.size() != kHistory) throw ValidationError("history must hold 24 values per product");
    const double m = std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
    double var = 0.0;
    for (double v : h) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / static_cast<double>(h.size()));
    mu[i] = m;
    stop[i] = m - coeff * sd < kLowDemand;
  }
  return plan_production(mu, stop, inst);
}

ProductionDecision twostage_plan(const Vec4& o, const PlanningInstance& inst) {
  Mask4 stop{};
  for (std::size_t i = 0; i < kNumProducts; ++i) stop[i] = o[i] < kLowDemand;
  return plan_production(o, stop, inst);
}

double asymmetric_loss(double o, double s, double r) {
  const double w = o >= s ? 1.0 + r : 1.0;
  return 0.5 * w * (s - o) * (s - o);
}

double asymmetric_loss_gradient(double o, double s, double r) {
  const double w = o >= s ? 1.0 + r : 1.0;
  return w * (o - s);
}

EstimateLoss estimate_loss(const Vec4& o, const Vec4& s, const Mask4& stop_mask, const PlanningInstance& inst,
                           double lambda, double reg) {
  if (!(lambda > 0.0)) throw ValidationError("lambda must be positive");
  EstimateLoss out;
  out.plan = plan_production(o, stop_mask, inst);
  out.plan_loss = plan_with_loss(o, s, lambda, stop_mask, inst);
  const double q = planning_objective(out.plan.u, o, inst);
  const double p = planning_objective(out.plan_loss.u, o, inst) - lambda * revenue(out.plan_loss, s, inst);
  out.value = (p - q) / lambda;
  for (std::size_t i = 0; i < kNumProducts; ++i) {
    out.value += reg * (o[i] - s[i]) * (o[i] - s[i]);
    // d J-bar / d o_i = -k_i u_i at a fixed plan.
    out.gradient[i] = -inst.k[i] * (out.plan_loss.u[i] - out.plan.u[i]) / lambda + 2.0 * reg * (o[i] - s[i]);
  }
  return out;
}

std::vector<std::vector<double>> gen_demand(const std::vector<DemandComponent>& components, std::size_t T, Rng& rng) {
  std::vector<std::vector<double>> out;
  out.reserve(components.size());
  for (const auto& c : components) {
    if (!(c.period > 0.0)) throw ValidationError("demand period must be positive");
    if (!(c.noise_sd >= 0.0)) throw ValidationError("demand noise must be non-negative");
    std::vector<double> series(T);
    double e = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      if (c.noise_sd > 0.0) e = c.ar_coef * e + c.noise_sd * rng.normal();
      const double x =
          c.mean + c.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / c.period + c.phase) + e;
      series[t] = std::clamp(x, 0.0, kMaxDemand);
    }
    out.push_back(std::move(series));
  }
  return out;
}

std::vector<std::vector<double>> gen_demand(std::uint64_t seed, std::size_t T) {
  if (T < 48) throw ValidationError("demand series need at least 48 steps");
  Rng rng(seed);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < kNumProducts; ++i) {
    Rng prng = rng.split(i);
    DemandComponent c;
    c.amplitude = prng.uniform(1.5, 3.0);
    c.phase = prng.uniform(0.0, 2.0 * std::numbers::pi);
    c.ar_coef = prng.uniform(0.6, 0.9);
    c.noise_sd = prng.uniform(0.5, 1.0);
    const double target = prng.uniform(0.15, 0.35);
    Rng noise = prng.split(0);
    std::vector<double> unclipped(T);
    double e = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      e = c.ar_coef * e + c.noise_sd * noise.normal();
      unclipped[t] = c.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / c.period + c.phase) + e;
    }
    std::vector<double> sorted = unclipped;
    const auto rank = static_cast<std::size_t>(std::llround(target * static_cast<double>(T)));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank), sorted.end());
    // Exactly `rank` values fall strictly below 3 once shifted (ties have probability zero).
    const double shift = kLowDemand - sorted[rank];
    for (double& v : unclipped) v = std::clamp(v + shift, 0.0, kMaxDemand);
    out.push_back(std::move(unclipped));
  }
  return out;
}

double sinusoid_below_fraction(double mean, double amplitude, double level) {
  const double a = std::abs(amplitude);
  if (a == 0.0) return mean < level ? 1.0 : 0.0;
  const double z = (level - mean) / a;
  if (z <= -1.0) return 0.0;
  if (z >= 1.0) return 1.0;
  return 0.5 + std::asin(z) / std::numbers::pi;
}

double fraction_below(std::span<const double> series, double level) {
  if (series.empty()) return 0.0;
  const auto n = std::count_if(series.begin(), series.end(), [&](double v) { return v < level; });
  return static_cast<double>(n) / static_cast<double>(series.size());
}

}  // namespace ccsafe::prodplan
