#pragma once

#include <cstdint>
#include <vector>

#include "ccsafe/classifier.hpp"
#include "ccsafe/navsim.hpp"

namespace ccsafe::navsim {

struct TrainConfig {
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t warm_start_epochs = 20;  // cross-entropy epochs on the training set before tailored training
  std::size_t steps = 5000;            // live environment steps with tailored gradients
  int episode_steps = 200;
  double r_t = 0.01;
  double xi = 0.0;                     // final xi; scheduled linearly from 0
  double beta = 3.0;
  double lambda = 0.005;
  double default_objective = 1.0;
  double unsafe_loss = 10.0;           // L of executing a move whose true label is unsafe
  double default_loss = 1.0;           // L of staying
  double rank_weight = 1e-3;           // J-bar of the candidate at policy rank k is k * rank_weight
  double temperature = 2.0;
  double lr = 1e-3;
  double reg = 1e-4;
  double clip = 5e-4;
  std::size_t table_refresh = 10;      // steps between rebuilds of the internal-test logits
  std::size_t internal_batch = 32;     // internal-test records receiving gradients per step
  std::uint64_t seed = 0;
};

struct TrainResult {
  MLPParams params;
  double warm_start_loss = 0.0;
  std::vector<double> approx_loss_history;  // mean approximate loss per table refresh window
};

/// Approximate loss of one decision for the navsim problem. `classes` holds the predicted class of
/// each candidate (in policy order), `labels` their true labels, and `upper` the posterior table.
double navsim_approx_loss(const std::vector<std::size_t>& classes, const std::vector<std::size_t>& labels,
                          const Matrix<double>& upper, const TrainConfig& config);

/// Trains a classifier on live rollouts: candidate logits receive discrete virtual gradients of the
/// approximate loss and sampled internal-test records receive table-perturbation gradients.
TrainResult train_classifier(const WorldConfig& world_config, const PolicyConfig& policy,
                             const InternalTestSet& train_set, const TrainConfig& config);

struct PipelineConfig {
  TrainConfig train;
  std::size_t train_records = 2000;     // collected for warm start and tailored training
  std::size_t internal_records = 2000;  // separate set for the evaluation table and bias correction
  double r_t = 0.1;                     // threshold the bias correction targets
  double xi = 0.0;                      // xi of the evaluation table
  std::uint64_t seed = 0;
};

struct Pipeline {
  TrainResult training;
  CollectionResult internal;
  BiasCorrectionResult bias;
  MlpSafetyModel model;
};

/// Collects a training set, trains the classifier, collects a fresh internal test set, and
/// bias-corrects the classifier on it for r_t.
Pipeline build_pipeline(const WorldConfig& world_config, const PolicyConfig& policy, const PipelineConfig& config);

}  // namespace ccsafe::navsim
