#include "ccsafe/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ccsafe/io.hpp"

namespace ccsafe {

LabelSpace::LabelSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ValidationError("label space must not be empty");
  std::set<std::string> seen(labels_.begin(), labels_.end());
  if (seen.size() != labels_.size()) throw ValidationError("label space contains duplicate labels");
}

std::optional<std::size_t> LabelSpace::index_of(const std::string& label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels_.begin());
}

LabelSpace LabelSpace::binary() { return LabelSpace({"safe", "unsafe"}); }

void validate_simplex(std::span<const double> priors, std::size_t expected_size) {
  if (priors.size() != expected_size) {
    throw ValidationError("priors have " + std::to_string(priors.size()) + " entries, expected " +
                          std::to_string(expected_size));
  }
  double sum = 0.0;
  for (double p : priors) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("priors must be finite and non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbTol * static_cast<double>(std::max<std::size_t>(priors.size(), 1)) * 4) {
    throw ValidationError("priors must sum to 1");
  }
}

void UserParams::validate(std::size_t num_states) const {
  validate_simplex(priors, num_states);
  for (double r : thresholds) {
    // Slightly above 1 is the documented "never reject" setting.
    if (!(r > 0.0) || !(r <= 1.0 + 1e-3)) throw ValidationError("thresholds must lie in (0, 1]");
  }
  for (double b : beta) {
    if (!(b > 0.0)) throw ValidationError("beta must be positive");
  }
  if (!(lambda > 0.0)) throw ValidationError("lambda must be positive");
  if (!(xi >= 0.0)) throw ValidationError("xi must be non-negative");
  if (!(rho > 0.0)) throw ValidationError("rho must be positive");
  if (big_m && !(*big_m > 0.0)) throw ValidationError("big_M must be positive");
}

InternalTestSet::InternalTestSet(std::size_t num_states) : counts_(num_states, 0) {
  if (num_states == 0) throw ValidationError("internal test set needs at least one state");
}

InternalTestSet::InternalTestSet(std::size_t num_states, std::vector<InternalTestRecord> records)
    : InternalTestSet(num_states) {
  records_.reserve(records.size());
  for (auto& r : records) add(std::move(r));
}

void InternalTestSet::add(InternalTestRecord record) {
  if (record.label >= counts_.size()) {
    throw ValidationError("label " + std::to_string(record.label) + " out of range for " +
                          std::to_string(counts_.size()) + " states");
  }
  if (records_.empty()) {
    dimension_ = record.measurement.size();
  } else if (record.measurement.size() != dimension_) {
    throw ValidationError("measurement dimension " + std::to_string(record.measurement.size()) +
                          " does not match set dimension " + std::to_string(dimension_));
  }
  ++counts_[record.label];
  records_.push_back(std::move(record));
}

void InternalTestSet::append(const InternalTestSet& other) {
  for (const auto& r : other.records()) add(r);
}

std::vector<std::size_t> InternalTestSet::labels() const {
  std::vector<std::size_t> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.label);
  return out;
}

InternalTestSet load_internal_test_set(const std::filesystem::path& path, std::size_t num_states) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open internal test set '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty internal test set");
  auto header = io::split_csv_line(line);
  if (header.empty() || header.back() != "label") {
    throw ParseError("row 1: header must end with 'label'");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t i = 0; i < dim; ++i) {
    if (header[i] != "y_" + std::to_string(i)) {
      throw ParseError("row 1: expected column 'y_" + std::to_string(i) + "', got '" + header[i] + "'");
    }
  }

  InternalTestSet set(num_states);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = io::split_csv_line(line);
    if (fields.size() != dim + 1) {
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(dim + 1) + " fields, got " +
                       std::to_string(fields.size()));
    }
    InternalTestRecord rec;
    rec.measurement.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      auto v = io::parse_double(fields[i]);
      if (!v) throw ParseError("row " + std::to_string(row) + ": cannot parse '" + fields[i] + "' as a number");
      rec.measurement[i] = *v;
    }
    auto lab = io::parse_size(fields[dim]);
    if (!lab) throw ParseError("row " + std::to_string(row) + ": cannot parse label '" + fields[dim] + "'");
    if (*lab >= num_states) {
      throw ValidationError("row " + std::to_string(row) + ": label " + std::to_string(*lab) + " out of range for " +
                            std::to_string(num_states) + " states");
    }
    rec.label = *lab;
    set.add(std::move(rec));
  }
  if (set.empty()) throw ValidationError("empty internal test set");
  return set;
}

void save_internal_test_set(const InternalTestSet& set, const std::filesystem::path& path) {
  std::ostringstream out;
  for (std::size_t i = 0; i < set.dimension(); ++i) out << "y_" << i << ',';
  out << "label\n";
  for (const auto& r : set.records()) {
    for (double v : r.measurement) out << io::format_double(v) << ',';
    out << r.label << '\n';
  }
  io::write_file_atomic(path, out.str());
}

std::size_t ConstraintSpec::num_chance() const {
  return static_cast<std::size_t>(
      std::count_if(constraints.begin(), constraints.end(), [](const Constraint& c) { return c.chance; }));
}

double compute_big_m(const CandidateSet& candidates, const ConstraintSpec& spec, std::size_t num_states) {
  double max_abs = 0.0;
  auto scan = [&](const Action& u) {
    for (const auto& c : spec.constraints) {
      const std::size_t n = c.chance ? num_states : 1;
      for (std::size_t k = 0; k < n; ++k) max_abs = std::max(max_abs, std::abs(c.evaluate(u, k)));
    }
  };
  for (const auto& u : candidates.actions) scan(u);
  scan(candidates.default_action);
  return 10.0 * (1.0 + max_abs);
}

}  // namespace ccsafe
