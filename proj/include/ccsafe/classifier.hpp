#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "ccsafe/core.hpp"
#include "ccsafe/rng.hpp"
#include "json.hpp"

namespace ccsafe {

/// y = W x + b with W stored as (outputs x inputs).
struct DenseLayer {
  Matrix<double> weights;
  std::vector<double> bias;

  bool operator==(const DenseLayer&) const = default;
};

/// Feed-forward network: rectifier on hidden layers, identity on the output layer.
struct MLPParams {
  std::vector<DenseLayer> layers;

  /// He-initialized network with zero biases.
  static MLPParams create(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims, std::size_t output_dim,
                          Rng& rng);
  /// Same shapes as `like`, all entries zero.
  static MLPParams zeros_like(const MLPParams& like);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_parameters() const;

  /// Throws ValidationError when shapes do not chain or an entry is not finite.
  void validate() const;

  /// Product of layer spectral norms; an upper bound on the Lipschitz constant in the 2-norm.
  double lipschitz_bound() const;

  /// this += alpha * other (same shapes).
  void add_scaled(const MLPParams& other, double alpha);

  bool operator==(const MLPParams&) const = default;
};

std::vector<double> forward(const MLPParams& params, std::span<const double> input);

/// Logits for every row of `inputs`.
Matrix<double> forward_batch(const MLPParams& params, const Matrix<double>& inputs);

/// Parameter gradient of <logit_gradient, forward(params, input)>.
MLPParams backward(const MLPParams& params, std::span<const double> input, std::span<const double> logit_gradient);

/// Accumulates backward(...) into `grads` without allocating a fresh parameter set.
void backward_accumulate(const MLPParams& params, std::span<const double> input, std::span<const double> logit_gradient,
                         MLPParams& grads);

struct TrainOptions {
  double lr = 1e-3;
  double reg = 0.0;     // weight on the mean squared logit
  double clip = 5e-4;   // received logit gradients are clipped to [-clip, clip]
};

/// Per-sample input and the logit gradient it received from the optimization phase.
using TrainSample = std::pair<std::vector<double>, std::vector<double>>;

/// Parameter gradient of one step: clipped received gradients plus reg * 2 * logits / batch size.
MLPParams step_gradient(const MLPParams& params, const std::vector<TrainSample>& batch, const TrainOptions& options);

/// Plain gradient descent: params - lr * step_gradient.
MLPParams train_step(const MLPParams& params, const std::vector<TrainSample>& batch, const TrainOptions& options);

/// Adam over MLP parameters, used by the experiment training loops.
class Adam {
 public:
  explicit Adam(const MLPParams& shape, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(MLPParams& params, const MLPParams& grads);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  MLPParams m_;
  MLPParams v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct CrossEntropyOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 1e-3;
};

/// Supervised softmax cross-entropy training with Adam, used as an optional warm start.
/// Returns the mean loss of the final epoch.
double train_cross_entropy(MLPParams& params, const InternalTestSet& data, const CrossEntropyOptions& options,
                           Rng& rng);

nlohmann::json to_json(const MLPParams& params);
MLPParams mlp_from_json(const nlohmann::json& j);
void save_mlp(const MLPParams& params, const std::filesystem::path& path);
MLPParams load_mlp(const std::filesystem::path& path);

/// Largest singular value of w.
double spectral_norm(const Matrix<double>& w);

}  // namespace ccsafe
