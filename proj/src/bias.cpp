#include "ccsafe/bias.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ccsafe/conservative.hpp"

namespace ccsafe {

namespace {

// Evaluates p^xi(unsafe | safe class) as a function of the safe-class offset b without rebuilding
// the whole table. Only the safe-class column enters this posterior, and a record's indicators in
// that column flip at fixed offsets, so each count is a sorted-threshold lookup.
class SafeColumnPosterior {
 public:
  SafeColumnPosterior(const Matrix<double>& logits, std::span<const std::size_t> labels, std::size_t num_states,
                      std::size_t safe_class, double xi_eff, std::span<const double> priors, std::size_t unsafe)
      : plus_at_(num_states), minus_at_(num_states), totals_(num_states, 0.0), priors_(priors.begin(), priors.end()),
        unsafe_(unsafe) {
    for (std::size_t k = 0; k < labels.size(); ++k) {
      auto z = logits.row(k);
      double other = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < z.size(); ++j) {
        if (j != safe_class) other = std::max(other, z[j]);
      }
      const double margin = other - z[safe_class];
      // plus indicator holds iff b >= margin - xi_eff; minus iff b > margin + xi_eff.
      plus_at_[labels[k]].push_back(margin - xi_eff);
      minus_at_[labels[k]].push_back(margin + xi_eff);
      totals_[labels[k]] += 1.0;
      lowest_ = std::min(lowest_, margin - xi_eff);
      highest_ = std::max(highest_, margin + xi_eff);
    }
    for (auto& v : plus_at_) std::sort(v.begin(), v.end());
    for (auto& v : minus_at_) std::sort(v.begin(), v.end());
  }

  double operator()(double b) const {
    double denom = 0.0;
    double num = 0.0;
    for (std::size_t i = 0; i < totals_.size(); ++i) {
      if (totals_[i] <= 0.0) continue;
      const auto& mv = minus_at_[i];
      const double minus = static_cast<double>(std::lower_bound(mv.begin(), mv.end(), b) - mv.begin());
      denom += minus / totals_[i] * priors_[i];
      if (i == unsafe_) {
        const auto& pv = plus_at_[i];
        const double plus = static_cast<double>(std::upper_bound(pv.begin(), pv.end(), b) - pv.begin());
        num = plus / totals_[i] * priors_[i];
      }
    }
    if (denom <= 0.0) return 1.0;
    return std::clamp(num / denom, 0.0, 1.0);
  }

  // Sorted distinct flip points strictly inside (lo, hi).
  std::vector<double> flip_points(double lo, double hi) const {
    std::vector<double> out;
    for (const auto* group : {&plus_at_, &minus_at_}) {
      for (const auto& v : *group) {
        for (auto it = std::upper_bound(v.begin(), v.end(), lo); it != v.end() && *it < hi; ++it) out.push_back(*it);
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  // Outside [lowest, highest] no indicator in the safe column changes.
  double lowest() const { return lowest_; }
  double highest() const { return highest_; }

 private:
  std::vector<std::vector<double>> plus_at_;
  std::vector<std::vector<double>> minus_at_;
  std::vector<double> totals_;
  std::vector<double> priors_;
  std::size_t unsafe_;
  double lowest_ = std::numeric_limits<double>::infinity();
  double highest_ = -std::numeric_limits<double>::infinity();
};

}  // namespace

Matrix<double> apply_bias(const Matrix<double>& logits, const BiasVector& bias) {
  if (bias.v.size() != logits.cols()) throw ValidationError("bias length does not match the logit width");
  Matrix<double> out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias.v[c];
  }
  return out;
}

std::vector<double> apply_bias(std::span<const double> logits, const BiasVector& bias) {
  if (bias.v.size() != logits.size()) throw ValidationError("bias length does not match the logit width");
  std::vector<double> out(logits.begin(), logits.end());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] += bias.v[c];
  return out;
}

BiasCorrectionResult bias_correct(const Matrix<double>& logits, std::span<const std::size_t> labels,
                                  std::size_t num_states, double xi, std::span<const double> priors, double r_t,
                                  const BiasCorrectionOptions& options) {
  if (!(options.unit_step > 0.0)) throw ValidationError("unit_step must be positive");
  if (options.unsafe_state >= num_states) throw ValidationError("unsafe state index out of range");
  if (labels.empty()) throw ValidationError("bias correction needs internal test records");

  const NormalTable table = build_normal_table(labels, num_states, logits, xi);
  const Matrix<double> upper = posterior_upper(table, priors);
  BiasCorrectionResult res;
  res.target = r_t;
  for (std::size_t j = 1; j < upper.rows(); ++j) {
    if (upper(j, options.unsafe_state) < upper(res.safe_class, options.unsafe_state)) res.safe_class = j;
  }
  res.bias.v.assign(logits.cols(), 0.0);

  const SafeColumnPosterior post(logits, labels, num_states, res.safe_class, table.xi_eff, priors,
                                 options.unsafe_state);
  const double step = options.unit_step;
  const double p0 = post(0.0);
  if (std::abs(p0 - r_t) <= kProbTol) {
    res.bracketed = true;
    res.achieved = true;
    res.posterior = p0;
    res.gap = r_t - p0;
    return res;
  }

  // Walk toward the target: lower the safe logit when too permissive, raise it when there is slack.
  const bool descending = p0 > r_t;
  double lo = 0.0, hi = 0.0;  // lo satisfies the target, hi does not
  double b = 0.0, best_b = 0.0, best_p = p0;
  bool found = false;
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    ++res.iterations;
    const double next = b + (descending ? -step : step);
    const double p = post(next);
    if (p < best_p) {
      best_p = p;
      best_b = next;
    }
    if (descending ? p <= r_t : p > r_t) {
      lo = descending ? next : b;
      hi = descending ? b : next;
      found = true;
      break;
    }
    b = next;
    if (descending ? b < post.lowest() - step : b > post.highest() + step) {
      res.saturated = true;
      break;
    }
  }

  if (!found) {
    if (!descending && res.saturated) {
      // Raising the offset never crosses the target: every record already passes.
      res.bracketed = true;
      res.bias.v[res.safe_class] = b;
      res.posterior = post(b);
    } else {
      res.bias.v[res.safe_class] = best_b;
      res.posterior = best_p;
    }
    res.gap = r_t - res.posterior;
    res.achieved = res.posterior <= r_t + kProbTol;
    return res;
  }

  // Inside the bracket the posterior is piecewise constant between indicator flip points. Scan the
  // pieces upward from lo and stop before the first one that misses the target. Evaluating at piece
  // midpoints keeps the returned offset away from flip points, so a full table rebuild agrees.
  res.bracketed = true;
  const auto cuts = post.flip_points(lo, hi);
  double accepted = lo, accepted_p = post(lo), rejected_p = post(hi);
  double left = lo;
  for (std::size_t c = 0; c <= cuts.size(); ++c) {
    const double right = c < cuts.size() ? cuts[c] : hi;
    const double mid = 0.5 * (left + right);
    const double p = post(mid);
    if (p > r_t) {
      rejected_p = p;
      break;
    }
    accepted = mid;
    accepted_p = p;
    left = right;
  }
  res.bias.v[res.safe_class] = accepted;
  res.posterior = accepted_p;
  res.jump = rejected_p - accepted_p;
  res.gap = r_t - accepted_p;
  res.achieved = accepted_p <= r_t + kProbTol;
  return res;
}

BiasCorrectionResult bias_correct(const MLPParams& params, const InternalTestSet& test_set, double xi,
                                  std::span<const double> priors, double r_t, const BiasCorrectionOptions& options) {
  Matrix<double> inputs(test_set.size(), test_set.dimension());
  for (std::size_t k = 0; k < test_set.size(); ++k) {
    std::copy(test_set[k].measurement.begin(), test_set[k].measurement.end(), inputs.row(k).begin());
  }
  const auto labels = test_set.labels();
  return bias_correct(forward_batch(params, inputs), labels, test_set.num_states(), xi, priors, r_t, options);
}

}  // namespace ccsafe
