#include "ccsafe/conservative.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ccsafe {

namespace {

void check_class(std::span<const double> logits, std::size_t j) {
  if (j >= logits.size()) {
    throw IndexError("class index " + std::to_string(j) + " out of range for " + std::to_string(logits.size()) +
                     " logits");
  }
}

void check_priors(const NormalTable& table, std::span<const double> priors) {
  validate_simplex(priors, table.num_states());
  for (std::size_t i = 0; i < table.num_states(); ++i) {
    if (priors[i] > 0.0 && table.totals[i] <= 0.0) {
      throw ValidationError("state " + std::to_string(i) + " has positive prior but no internal test records");
    }
  }
}

}  // namespace

double xi_effective(double xi) {
  if (!(xi >= 0.0)) throw ValidationError("xi must be non-negative");
  return std::sqrt(2.0) * xi;
}

int indicator_plus(std::span<const double> logits, std::size_t j, double xi) {
  check_class(logits, j);
  const double top = *std::max_element(logits.begin(), logits.end());
  return logits[j] + xi >= top ? 1 : 0;
}

int indicator_minus(std::span<const double> logits, std::size_t j, double xi) {
  check_class(logits, j);
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (k != j) other = std::max(other, logits[k]);
  }
  return logits[j] - xi > other ? 1 : 0;
}

void NormalTable::validate() const {
  const std::size_t ne = plus.rows(), no = plus.cols();
  if (minus.rows() != ne || minus.cols() != no || totals.size() != ne) {
    throw ValidationError("normal table shapes disagree");
  }
  for (std::size_t i = 0; i < ne; ++i) {
    double sum_plus = 0.0, sum_minus = 0.0;
    for (std::size_t j = 0; j < no; ++j) {
      if (!(minus(i, j) >= 0.0 && minus(i, j) <= plus(i, j) && plus(i, j) <= totals[i])) {
        throw ValidationError("normal table entry (" + std::to_string(i) + "," + std::to_string(j) +
                              ") violates 0 <= minus <= plus <= total");
      }
      sum_plus += plus(i, j);
      sum_minus += minus(i, j);
    }
    if (sum_minus > totals[i] || (totals[i] > 0 && totals[i] > sum_plus)) {
      throw ValidationError("normal table row " + std::to_string(i) + " violates sum(minus) <= total <= sum(plus)");
    }
  }
}

NormalTable build_normal_table(std::span<const std::size_t> labels, std::size_t num_states,
                               const Matrix<double>& logits, double xi) {
  if (labels.size() != logits.rows()) {
    throw ValidationError("got " + std::to_string(logits.rows()) + " logit vectors for " +
                          std::to_string(labels.size()) + " records");
  }
  if (!(xi >= 0.0)) throw ValidationError("xi must be non-negative");
  const std::size_t no = logits.cols();
  if (no == 0) throw ValidationError("logit vectors must not be empty");

  NormalTable t;
  t.xi = xi;
  t.xi_eff = xi_effective(xi);
  t.plus = Matrix<double>(num_states, no);
  t.minus = Matrix<double>(num_states, no);
  t.totals.assign(num_states, 0.0);
  const double x = t.xi_eff;

  for (std::size_t k = 0; k < labels.size(); ++k) {
    const std::size_t s = labels[k];
    if (s >= num_states) throw ValidationError("label " + std::to_string(s) + " out of range");
    auto z = logits.row(k);
    // Best and runner-up give every class's "max over the others" in O(1).
    std::size_t best = 0;
    for (std::size_t j = 1; j < no; ++j) {
      if (z[j] > z[best]) best = j;
    }
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < no; ++j) {
      if (j != best) runner_up = std::max(runner_up, z[j]);
    }
    const double top = z[best];
    t.totals[s] += 1.0;
    for (std::size_t j = 0; j < no; ++j) {
      if (z[j] + x >= top) t.plus(s, j) += 1.0;
      const double other = j == best ? runner_up : top;
      if (z[j] - x > other) t.minus(s, j) += 1.0;
    }
  }
  return t;
}

NormalTable build_normal_table(const InternalTestSet& test_set, const Matrix<double>& logits, double xi) {
  const auto labels = test_set.labels();
  return build_normal_table(labels, test_set.num_states(), logits, xi);
}

NormalTable build_normal_table(const InternalTestSet& test_set, const std::vector<std::vector<double>>& logits,
                               double xi) {
  if (logits.size() != test_set.size()) {
    throw ValidationError("got " + std::to_string(logits.size()) + " logit vectors for " +
                          std::to_string(test_set.size()) + " records");
  }
  return build_normal_table(test_set, to_matrix(logits), xi);
}

Matrix<double> to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Matrix<double> m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw ValidationError("row " + std::to_string(r) + " has inconsistent length");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

PlainPosterior posterior_plain(const NormalTable& table, std::span<const double> priors) {
  if (table.xi != 0.0) throw ValidationError("plain posterior requires a table built with xi = 0");
  check_priors(table, priors);
  const std::size_t ne = table.num_states(), no = table.num_outputs();
  PlainPosterior out{Matrix<double>(no, ne), std::vector<bool>(no, false)};
  for (std::size_t j = 0; j < no; ++j) {
    double denom = 0.0;
    std::vector<double> num(ne, 0.0);
    for (std::size_t i = 0; i < ne; ++i) {
      if (table.totals[i] > 0.0) num[i] = table.plus(i, j) / table.totals[i] * priors[i];
      denom += num[i];
    }
    if (denom <= 0.0) {
      out.fallback[j] = true;
      for (std::size_t i = 0; i < ne; ++i) out.plain(j, i) = priors[i];
      continue;
    }
    for (std::size_t i = 0; i < ne; ++i) out.plain(j, i) = num[i] / denom;
  }
  return out;
}

Matrix<double> posterior_upper(const NormalTable& table, std::span<const double> priors) {
  check_priors(table, priors);
  const std::size_t ne = table.num_states(), no = table.num_outputs();
  Matrix<double> upper(no, ne);
  for (std::size_t j = 0; j < no; ++j) {
    double denom = 0.0;
    for (std::size_t k = 0; k < ne; ++k) {
      if (table.totals[k] > 0.0) denom += table.minus(k, j) / table.totals[k] * priors[k];
    }
    for (std::size_t i = 0; i < ne; ++i) {
      if (denom <= 0.0) {
        upper(j, i) = 1.0;
        continue;
      }
      const double num = table.totals[i] > 0.0 ? table.plus(i, j) / table.totals[i] * priors[i] : 0.0;
      upper(j, i) = std::clamp(num / denom, 0.0, 1.0);
    }
  }
  return upper;
}

PosteriorTable compute_posteriors(std::span<const std::size_t> labels, std::size_t num_states,
                                  const Matrix<double>& logits, double xi, std::span<const double> priors) {
  const NormalTable conservative = build_normal_table(labels, num_states, logits, xi);
  const NormalTable exact = xi == 0.0 ? conservative : build_normal_table(labels, num_states, logits, 0.0);
  auto plain = posterior_plain(exact, priors);
  return PosteriorTable{posterior_upper(conservative, priors), std::move(plain.plain), std::move(plain.fallback)};
}

nlohmann::json matrix_to_json(const Matrix<double>& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

nlohmann::json to_json(const NormalTable& table) {
  return {{"xi", table.xi},
          {"xi_eff", table.xi_eff},
          {"totals", table.totals},
          {"plus", matrix_to_json(table.plus)},
          {"minus", matrix_to_json(table.minus)}};
}

nlohmann::json to_json(const PosteriorTable& posteriors) {
  return {{"upper", matrix_to_json(posteriors.upper)},
          {"plain", matrix_to_json(posteriors.plain)},
          {"plain_fallback", posteriors.plain_fallback}};
}

}  // namespace ccsafe
