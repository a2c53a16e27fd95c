#include "ccsafe/qp.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>

namespace ccsafe {

namespace {

// Subset masks of an m-element set ordered by popcount, then numerically.
const std::vector<std::uint32_t>& masks_by_size(std::size_t m) {
  static std::mutex mu;
  static std::map<std::size_t, std::vector<std::uint32_t>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(m);
  if (it != cache.end()) return it->second;
  std::vector<std::uint32_t> masks(std::size_t{1} << m);
  for (std::uint32_t s = 0; s < masks.size(); ++s) masks[s] = s;
  std::stable_sort(masks.begin(), masks.end(),
                   [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) < std::popcount(b); });
  return cache.emplace(m, std::move(masks)).first->second;
}

// Gaussian elimination with partial pivoting on a k x k system stored row-major in `a`.
bool solve_small(std::vector<double>& a, std::vector<double>& rhs, std::size_t k) {
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r) {
      if (std::abs(a[r * k + col]) > std::abs(a[piv * k + col])) piv = r;
    }
    if (std::abs(a[piv * k + col]) < 1e-12) return false;
    if (piv != col) {
      for (std::size_t c = 0; c < k; ++c) std::swap(a[col * k + c], a[piv * k + c]);
      std::swap(rhs[col], rhs[piv]);
    }
    for (std::size_t r = col + 1; r < k; ++r) {
      const double f = a[r * k + col] / a[col * k + col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < k; ++c) a[r * k + c] -= f * a[col * k + c];
      rhs[r] -= f * rhs[col];
    }
  }
  for (std::size_t r = k; r-- > 0;) {
    double s = rhs[r];
    for (std::size_t c = r + 1; c < k; ++c) s -= a[r * k + c] * rhs[c];
    rhs[r] = s / a[r * k + r];
  }
  return true;
}

}  // namespace

QPResult solve_diagonal_qp(std::span<const double> h, std::span<const double> g, const Matrix<double>& G,
                           std::span<const double> b, double tol) {
  const std::size_t n = h.size();
  const std::size_t m = G.rows();
  if (g.size() != n) throw ValidationError("qp: gradient length differs from Hessian diagonal");
  if (m > 0 && G.cols() != n) throw ValidationError("qp: constraint matrix has the wrong column count");
  if (b.size() != m) throw ValidationError("qp: right-hand side length differs from constraint count");
  if (m > kMaxQpConstraints) throw ValidationError("qp: too many constraints for exhaustive active-set search");
  for (double v : h) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("qp: Hessian diagonal must be positive");
  }
  for (double v : g) {
    if (!std::isfinite(v)) throw ValidationError("qp: gradient must be finite");
  }

  std::vector<double> x0(n);  // unconstrained minimizer
  for (std::size_t i = 0; i < n; ++i) x0[i] = g[i] / h[i];

  std::vector<std::size_t> idx;
  std::vector<double> sys, rhs, x(n);
  for (std::uint32_t mask : masks_by_size(m)) {
    const auto k = static_cast<std::size_t>(std::popcount(mask));
    if (k > n) break;
    idx.clear();
    for (std::size_t j = 0; j < m; ++j) {
      if (mask & (1u << j)) idx.push_back(j);
    }
    // Multipliers solve (G_W H^-1 G_W^T) mu = G_W x0 - b_W.
    sys.assign(k * k, 0.0);
    rhs.assign(k, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
      const auto gr = G.row(idx[r]);
      double s = -b[idx[r]];
      for (std::size_t i = 0; i < n; ++i) s += gr[i] * x0[i];
      rhs[r] = s;
      for (std::size_t c = 0; c < k; ++c) {
        const auto gc = G.row(idx[c]);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += gr[i] * gc[i] / h[i];
        sys[r * k + c] = v;
      }
    }
    if (k > 0 && !solve_small(sys, rhs, k)) continue;
    if (std::any_of(rhs.begin(), rhs.end(), [&](double mu) { return mu < -tol; })) continue;

    for (std::size_t i = 0; i < n; ++i) {
      double s = g[i];
      for (std::size_t r = 0; r < k; ++r) s -= G(idx[r], i) * rhs[r];
      x[i] = s / h[i];
    }
    bool feasible = true;
    for (std::size_t j = 0; j < m && feasible; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += G(j, i) * x[i];
      feasible = s <= b[j] + tol;
    }
    if (!feasible) continue;

    QPResult out;
    out.x = x;
    out.active = idx;
    out.multipliers.assign(rhs.begin(), rhs.end());
    for (auto& mu : out.multipliers) mu = std::max(mu, 0.0);
    for (std::size_t i = 0; i < n; ++i) out.objective += 0.5 * h[i] * x[i] * x[i] - g[i] * x[i];
    return out;
  }
  throw ValidationError("qp: constraints are infeasible");
}

}  // namespace ccsafe
