#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ccsafe/classifier.hpp"
#include "ccsafe/prodplan.hpp"

namespace ccsafe::prodplan {

struct ExperimentConfig {
  std::size_t train_hours = 1000;
  std::size_t internal_train_hours = 500;  // internal test data used while training
  std::size_t internal_val_hours = 1000;   // internal test data used for bias correction and evaluation
  std::size_t eval_hours = 8760;

  std::vector<std::size_t> hidden{8};
  std::size_t batch_size = 50;
  double lr = 1e-3;
  std::size_t warm_start_epochs = 100;   // squared error on the estimate plus cross-entropy on the classes
  std::size_t framework_epochs = 3;      // approximate-loss training after the warm start
  std::size_t twostage_epochs = 130;

  double train_rt = 0.001;
  std::vector<double> val_rts{1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001};
  double beta = 1000.0;
  double lambda = 0.005;
  double estimate_reg = 0.00005;  // coefficient of (o - s)^2 in the framework loss
  double logit_reg = 0.1;         // coefficient of the squared class logits
  double clip = 1e6;
  double temperature = 2.0;
  double xi = 0.1;

  std::vector<double> twostage_rs{0, 1, 3, 10, 30, 100, 300, 1000, 3000, 10000};
  std::vector<double> meanvar_coeffs{10, 1, 0, -0.3, -0.6, -0.9, -1.2, -1.5, -1.8, -2.1};

  void validate() const;
  std::size_t total_hours() const {
    return kHistory + train_hours + internal_train_hours + internal_val_hours + eval_hours;
  }
};

/// One method at one sweep value, evaluated on the held-out hours of a seed.
struct SweepPoint {
  std::string method;   // "framework", "twostage" or "meanvar"
  double param = 0.0;   // r_t, the asymmetry r, or the mean-variance coefficient
  double revenue = 0.0;
  std::size_t decisions = 0;   // product-hours
  std::size_t produced = 0;    // product-hours with u_i > 0
  std::size_t violations = 0;  // product-hours with s_i < 3 and u_i > 0
  double violation_rate() const {
    return decisions == 0 ? 0.0 : static_cast<double>(violations) / static_cast<double>(decisions);
  }
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<SweepPoint> points;
  Vec4 low_fraction{};  // fraction of demand below 3 over the whole series, per product
};

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed);

struct AggregatePoint {
  std::string method;
  double param = 0.0;
  double mean_revenue = 0.0;
  double se_revenue = 0.0;
  double mean_violation = 0.0;   // mean over seeds of the per-seed violation rate
  double se_violation = 0.0;
  std::size_t seeds = 0;
};

/// Groups points by (method, param) in first-seen order.
std::vector<AggregatePoint> aggregate(const std::vector<SeedResult>& results);

/// Highest mean revenue of `method` among points whose mean violation is at most `max_violation`.
std::optional<double> best_revenue_within(const std::vector<AggregatePoint>& points, const std::string& method,
                                          double max_violation);

/// Lag-24 windows scaled to [0, 1]: row t holds series[t - 24 .. t - 1] / 10, for t in [begin, end).
Matrix<double> lag_windows(const std::vector<double>& series, std::size_t begin, std::size_t end);

}  // namespace ccsafe::prodplan
