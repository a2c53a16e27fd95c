#include "ccsafe/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ccsafe/approxloss.hpp"
#include "ccsafe/classifier.hpp"

namespace ccsafe {

namespace {

std::vector<double> flatten(const MLPParams& p) {
  std::vector<double> out;
  for (const auto& l : p.layers) {
    out.insert(out.end(), l.weights.data().begin(), l.weights.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

}  // namespace

double rel_error(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
}

CheckResult check_vpd(std::size_t instances, double h, Rng& rng) {
  CheckResult r;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t m = 2 + rng.index(5);
    std::vector<double> z(m), L(m);
    for (std::size_t j = 0; j < m; ++j) {
      z[j] = rng.normal(0.0, 2.0);
      L[j] = rng.normal(0.0, 5.0);
    }
    const double T = rng.uniform(0.5, 3.0);
    const auto g = vpd_discrete(L, z, T);
    std::vector<double> fd(m);
    auto f = [&](std::vector<double> zz) {
      const auto p = softmax(zz, T);
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += p[j] * L[j];
      return s;
    };
    for (std::size_t j = 0; j < m; ++j) {
      auto zp = z, zm = z;
      zp[j] += h;
      zm[j] -= h;
      fd[j] = (f(zp) - f(zm)) / (2.0 * h);
    }
    r.max_rel = std::max(r.max_rel, rel_error(g, fd));
    ++r.instances;
  }
  return r;
}

CheckResult check_exact_gradient(std::size_t instances, double h, Rng& rng) {
  CheckResult r;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t dim = 2 + rng.index(3);
    const std::size_t nc = 3 + rng.index(5);
    std::vector<double> a(dim), o(dim);
    for (auto& v : a) v = rng.normal();
    for (auto& v : o) v = rng.normal();
    LossProblem problem;
    for (std::size_t c = 0; c < nc; ++c) {
      Action u(dim);
      for (auto& v : u) v = rng.normal(0.0, 1.5);
      problem.candidates.push_back(u);
    }
    problem.lambda = rng.uniform(0.01, 0.5);
    // J-bar = |u - o|^2 and L = sum_j a_j u_j o_j, both smooth in o at a fixed action.
    problem.objective = [](const Action& u, std::span<const double> oo) {
      double s = 0.0;
      for (std::size_t j = 0; j < u.size(); ++j) s += (u[j] - oo[j]) * (u[j] - oo[j]);
      return s;
    };
    problem.loss = [a](const Action& u, std::span<const double> oo) {
      double s = 0.0;
      for (std::size_t j = 0; j < u.size(); ++j) s += a[j] * u[j] * oo[j];
      return s;
    };
    const OutputGradient dq = [](const Action& u, std::span<const double> oo) {
      std::vector<double> g(u.size());
      for (std::size_t j = 0; j < u.size(); ++j) g[j] = -2.0 * (u[j] - oo[j]);
      return g;
    };
    const OutputGradient dl = [a](const Action& u, std::span<const double>) {
      std::vector<double> g(u.size());
      for (std::size_t j = 0; j < u.size(); ++j) g[j] = a[j] * u[j];
      return g;
    };
    const auto g = exact_gradient(problem, o, dq, dl);
    if (!g) {
      ++r.skipped;
      continue;
    }
    std::vector<double> fd(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      auto op = o, om = o;
      op[j] += h;
      om[j] -= h;
      fd[j] = (approx_loss(problem, op) - approx_loss(problem, om)) / (2.0 * h);
    }
    r.max_rel = std::max(r.max_rel, rel_error(*g, fd));
    ++r.instances;
  }
  return r;
}

CheckResult check_mlp(std::size_t instances, double h, Rng& rng) {
  CheckResult r;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t in = 2 + rng.index(4), out = 2 + rng.index(3);
    MLPParams p = MLPParams::create(in, {3 + rng.index(4), 3 + rng.index(4)}, out, rng);
    // Nonzero biases keep dead units from sitting exactly on the rectifier kink.
    for (auto& l : p.layers) {
      for (auto& b : l.bias) b = rng.normal(0.0, 0.5);
    }
    std::vector<double> x(in), w(out);
    for (auto& v : x) v = rng.normal();
    for (auto& v : w) v = rng.normal();
    const auto g = flatten(backward(p, x, w));
    auto f = [&](const MLPParams& q) {
      const auto z = forward(q, x);
      double s = 0.0;
      for (std::size_t j = 0; j < out; ++j) s += w[j] * z[j];
      return s;
    };
    std::vector<double> fd;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto perturb = [&](double& ref) {
        const double keep = ref;
        ref = keep + h;
        const double fp = f(p);
        ref = keep - h;
        const double fm = f(p);
        ref = keep;
        fd.push_back((fp - fm) / (2.0 * h));
      };
      for (auto& v : p.layers[l].weights.data()) perturb(v);
      for (auto& v : p.layers[l].bias) perturb(v);
    }
    r.max_rel = std::max(r.max_rel, rel_error(g, fd));
    ++r.instances;
  }
  return r;
}

}  // namespace ccsafe
