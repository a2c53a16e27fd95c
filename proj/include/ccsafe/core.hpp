#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccsafe {

// Absolute tolerance for probability comparisons.
inline constexpr double kProbTol = 1e-12;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (bad shape, empty set, label out of range, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed. The message names the offending row.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Dense row-major matrix. Small and deliberately boring.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T value = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Finite set of distinct labels. Used for both the constraint-related
/// state space and the classifier output space.
class LabelSpace {
 public:
  explicit LabelSpace(std::vector<std::string> labels);

  std::size_t size() const { return labels_.size(); }
  const std::string& label(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::optional<std::size_t> index_of(const std::string& label) const;

  /// {"safe", "unsafe"}
  static LabelSpace binary();

 private:
  std::vector<std::string> labels_;
};

using StateSpace = LabelSpace;
// Output space equals the state space in this library; see README "Limitations".
using OutputSpace = LabelSpace;

struct UserParams {
  std::vector<double> thresholds;  // r_t, one per chance constraint, in (0, 1] (or slightly above 1 for "never reject")
  std::vector<double> priors;      // simplex over states
  std::vector<double> beta;        // penalty weight per merged constraint
  double lambda = 0.005;
  double xi = 0.0;
  double rho = 1e-3;
  std::optional<double> big_m;     // computed per problem when absent

  /// Throws ValidationError when any invariant fails.
  void validate(std::size_t num_states) const;
};

void validate_simplex(std::span<const double> priors, std::size_t expected_size);

struct InternalTestRecord {
  std::vector<double> measurement;
  std::size_t label = 0;

  bool operator==(const InternalTestRecord&) const = default;
};

/// Labeled measurement records. Per-state counts are maintained on every mutation.
class InternalTestSet {
 public:
  explicit InternalTestSet(std::size_t num_states);
  InternalTestSet(std::size_t num_states, std::vector<InternalTestRecord> records);

  void add(InternalTestRecord record);
  void append(const InternalTestSet& other);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t num_states() const { return counts_.size(); }
  std::size_t dimension() const { return dimension_; }
  const std::vector<InternalTestRecord>& records() const { return records_; }
  const InternalTestRecord& operator[](std::size_t k) const { return records_[k]; }
  const std::vector<std::size_t>& per_state_counts() const { return counts_; }
  std::vector<std::size_t> labels() const;

  /// Flag set by collectors that could not reach label balance.
  bool partial = false;

 private:
  std::vector<InternalTestRecord> records_;
  std::vector<std::size_t> counts_;
  std::size_t dimension_ = 0;
};

/// CSV with header `y_0,...,y_{d-1},label`.
InternalTestSet load_internal_test_set(const std::filesystem::path& path, std::size_t num_states);
void save_internal_test_set(const InternalTestSet& set, const std::filesystem::path& path);

using Action = std::vector<double>;

struct CandidateSet {
  std::vector<Action> actions;
  Action default_action;
};

/// c_i(u; s_k, r). Deterministic constraints are called with state 0 and must ignore it.
using ConstraintFn = std::function<double(const Action&, std::size_t state)>;

struct Constraint {
  ConstraintFn evaluate;
  bool chance = true;
};

struct ConstraintSpec {
  std::vector<Constraint> constraints;

  std::size_t num_chance() const;
};

/// 10 * (1 + max |c_i(u; s_k)|) over every candidate, the default action, and every state.
double compute_big_m(const CandidateSet& candidates, const ConstraintSpec& spec, std::size_t num_states);

struct CandidateTrace {
  std::vector<double> violated_mass;  // per chance constraint
  std::vector<double> bar_c;          // big-M replacement value per chance constraint
  bool feasible = false;
  double objective = 0.0;
};

struct Decision {
  Action chosen;
  std::optional<std::size_t> chosen_index;  // empty when the default action was used
  bool used_default = false;
  double default_objective = 0.0;
  double big_m = 0.0;
  std::vector<CandidateTrace> trace;
};

}  // namespace ccsafe
