#include "ccsafe/classifier.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "ccsafe/io.hpp"

namespace ccsafe {

namespace {

constexpr const char* kCheckpointFormat = "ccsafe-mlp";
constexpr int kCheckpointVersion = 1;

void affine(const DenseLayer& layer, std::span<const double> x, std::vector<double>& y) {
  const std::size_t out = layer.weights.rows(), in = layer.weights.cols();
  y.assign(out, 0.0);
  for (std::size_t r = 0; r < out; ++r) {
    const double* w = layer.weights.data().data() + r * in;
    double s = layer.bias[r];
    for (std::size_t c = 0; c < in; ++c) s += w[c] * x[c];
    y[r] = s;
  }
}

void check_input(const MLPParams& params, std::size_t size) {
  if (params.layers.empty()) throw ValidationError("network has no layers");
  if (size != params.input_dim()) {
    throw ValidationError("input has dimension " + std::to_string(size) + ", network expects " +
                          std::to_string(params.input_dim()));
  }
}

// Forward pass keeping every layer's input (post-activation) for the backward pass.
std::vector<std::vector<double>> forward_trace(const MLPParams& params, std::span<const double> input) {
  std::vector<std::vector<double>> acts;
  acts.reserve(params.layers.size() + 1);
  acts.emplace_back(input.begin(), input.end());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    std::vector<double> y;
    affine(params.layers[l], acts.back(), y);
    if (l + 1 < params.layers.size()) {
      for (double& v : y) v = std::max(v, 0.0);
    }
    acts.push_back(std::move(y));
  }
  return acts;
}

}  // namespace

MLPParams MLPParams::create(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims, std::size_t output_dim,
                            Rng& rng) {
  if (input_dim == 0 || output_dim == 0) throw ValidationError("network dimensions must be positive");
  MLPParams p;
  std::size_t in = input_dim;
  auto dims = hidden_dims;
  dims.push_back(output_dim);
  for (std::size_t out : dims) {
    if (out == 0) throw ValidationError("layer widths must be positive");
    DenseLayer layer{Matrix<double>(out, in), std::vector<double>(out, 0.0)};
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (double& w : layer.weights.data()) w = rng.normal(0.0, scale);
    p.layers.push_back(std::move(layer));
    in = out;
  }
  return p;
}

MLPParams MLPParams::zeros_like(const MLPParams& like) {
  MLPParams p;
  for (const auto& l : like.layers) {
    p.layers.push_back({Matrix<double>(l.weights.rows(), l.weights.cols()), std::vector<double>(l.bias.size(), 0.0)});
  }
  return p;
}

std::size_t MLPParams::input_dim() const { return layers.empty() ? 0 : layers.front().weights.cols(); }

std::size_t MLPParams::output_dim() const { return layers.empty() ? 0 : layers.back().weights.rows(); }

std::size_t MLPParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.data().size() + l.bias.size();
  return n;
}

void MLPParams::validate() const {
  if (layers.empty()) throw ValidationError("network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.size() != layer.weights.rows()) {
      throw ValidationError("layer " + std::to_string(l) + " bias length does not match its weight rows");
    }
    if (l > 0 && layer.weights.cols() != layers[l - 1].weights.rows()) {
      throw ValidationError("layer " + std::to_string(l) + " input width does not match the previous layer");
    }
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(layer.weights.data().begin(), layer.weights.data().end(), finite) ||
        !std::all_of(layer.bias.begin(), layer.bias.end(), finite)) {
      throw ValidationError("layer " + std::to_string(l) + " has non-finite entries");
    }
  }
}

double MLPParams::lipschitz_bound() const {
  double bound = 1.0;
  for (const auto& l : layers) bound *= spectral_norm(l.weights);
  return bound;
}

void MLPParams::add_scaled(const MLPParams& other, double alpha) {
  if (other.layers.size() != layers.size()) throw ValidationError("parameter sets have different depths");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& w = layers[l].weights.data();
    const auto& ow = other.layers[l].weights.data();
    auto& b = layers[l].bias;
    const auto& ob = other.layers[l].bias;
    if (w.size() != ow.size() || b.size() != ob.size()) throw ValidationError("parameter sets have different shapes");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += alpha * ow[i];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += alpha * ob[i];
  }
}

std::vector<double> forward(const MLPParams& params, std::span<const double> input) {
  check_input(params, input.size());
  std::vector<double> x(input.begin(), input.end()), y;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    affine(params.layers[l], x, y);
    if (l + 1 < params.layers.size()) {
      for (double& v : y) v = std::max(v, 0.0);
    }
    std::swap(x, y);
  }
  return x;
}

Matrix<double> forward_batch(const MLPParams& params, const Matrix<double>& inputs) {
  Matrix<double> out(inputs.rows(), params.output_dim());
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    const auto z = forward(params, inputs.row(r));
    std::copy(z.begin(), z.end(), out.row(r).begin());
  }
  return out;
}

void backward_accumulate(const MLPParams& params, std::span<const double> input, std::span<const double> logit_gradient,
                         MLPParams& grads) {
  check_input(params, input.size());
  if (logit_gradient.size() != params.output_dim()) {
    throw ValidationError("logit gradient has length " + std::to_string(logit_gradient.size()) + ", expected " +
                          std::to_string(params.output_dim()));
  }
  const auto acts = forward_trace(params, input);
  std::vector<double> delta(logit_gradient.begin(), logit_gradient.end());
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& layer = params.layers[l];
    auto& g = grads.layers[l];
    const auto& x = acts[l];
    const std::size_t out = layer.weights.rows(), in = layer.weights.cols();
    for (std::size_t r = 0; r < out; ++r) {
      if (delta[r] == 0.0) continue;
      g.bias[r] += delta[r];
      double* gw = g.weights.data().data() + r * in;
      for (std::size_t c = 0; c < in; ++c) gw[c] += delta[r] * x[c];
    }
    if (l == 0) break;
    std::vector<double> prev(in, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      if (delta[r] == 0.0) continue;
      const double* w = layer.weights.data().data() + r * in;
      for (std::size_t c = 0; c < in; ++c) prev[c] += delta[r] * w[c];
    }
    // Rectifier derivative: the stored activation is positive exactly where the unit was active.
    for (std::size_t c = 0; c < in; ++c) {
      if (x[c] <= 0.0) prev[c] = 0.0;
    }
    delta = std::move(prev);
  }
}

MLPParams backward(const MLPParams& params, std::span<const double> input, std::span<const double> logit_gradient) {
  MLPParams grads = MLPParams::zeros_like(params);
  backward_accumulate(params, input, logit_gradient, grads);
  return grads;
}

MLPParams step_gradient(const MLPParams& params, const std::vector<TrainSample>& batch, const TrainOptions& options) {
  MLPParams grads = MLPParams::zeros_like(params);
  if (batch.empty()) return grads;
  const double b = static_cast<double>(batch.size());
  for (const auto& [x, g] : batch) {
    if (g.size() != params.output_dim()) throw ValidationError("received gradient has the wrong length");
    std::vector<double> total(g.size());
    std::vector<double> z;
    if (options.reg != 0.0) z = forward(params, x);
    for (std::size_t j = 0; j < g.size(); ++j) {
      total[j] = std::clamp(g[j], -options.clip, options.clip);
      if (options.reg != 0.0) total[j] += options.reg * 2.0 * z[j] / b;
    }
    backward_accumulate(params, x, total, grads);
  }
  return grads;
}

MLPParams train_step(const MLPParams& params, const std::vector<TrainSample>& batch, const TrainOptions& options) {
  if (!(options.lr > 0.0)) throw ValidationError("learning rate must be positive");
  MLPParams next = params;
  next.add_scaled(step_gradient(params, batch, options), -options.lr);
  return next;
}

Adam::Adam(const MLPParams& shape, double lr, double beta1, double beta2, double eps)
    : m_(MLPParams::zeros_like(shape)), v_(MLPParams::zeros_like(shape)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {}

void Adam::step(MLPParams& params, const MLPParams& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weights.data(), grads.layers[l].weights.data(), m_.layers[l].weights.data(),
           v_.layers[l].weights.data());
    update(params.layers[l].bias, grads.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias);
  }
}

double train_cross_entropy(MLPParams& params, const InternalTestSet& data, const CrossEntropyOptions& options,
                           Rng& rng) {
  if (data.empty()) throw ValidationError("cross-entropy training needs data");
  if (options.batch_size == 0) throw ValidationError("batch size must be positive");
  Adam adam(params, options.lr);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      MLPParams grads = MLPParams::zeros_like(params);
      for (std::size_t b = start; b < end; ++b) {
        const auto& rec = data[order[b]];
        const auto z = forward(params, rec.measurement);
        const double top = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - top);
        std::vector<double> g(z.size());
        for (std::size_t j = 0; j < z.size(); ++j) {
          const double p = std::exp(z[j] - top) / sum;
          g[j] = (p - (j == rec.label ? 1.0 : 0.0)) / static_cast<double>(end - start);
        }
        epoch_loss -= (z[rec.label] - top - std::log(sum));
        backward_accumulate(params, rec.measurement, g, grads);
      }
      adam.step(params, grads);
    }
    epoch_loss /= static_cast<double>(data.size());
  }
  return epoch_loss;
}

nlohmann::json to_json(const MLPParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.layers) {
    layers.push_back({{"rows", l.weights.rows()},
                      {"cols", l.weights.cols()},
                      {"weights", l.weights.data()},
                      {"bias", l.bias}});
  }
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"layers", layers}};
}

MLPParams mlp_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kCheckpointFormat) throw ValidationError("not an MLP checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  }
  MLPParams p;
  for (const auto& lj : j.at("layers")) {
    const auto rows = lj.at("rows").get<std::size_t>();
    const auto cols = lj.at("cols").get<std::size_t>();
    DenseLayer layer{Matrix<double>(rows, cols), lj.at("bias").get<std::vector<double>>()};
    auto w = lj.at("weights").get<std::vector<double>>();
    if (w.size() != rows * cols) throw ValidationError("checkpoint weight array has the wrong size");
    layer.weights.data() = std::move(w);
    p.layers.push_back(std::move(layer));
  }
  p.validate();
  return p;
}

void save_mlp(const MLPParams& params, const std::filesystem::path& path) {
  io::write_file_atomic(path, to_json(params).dump());
}

MLPParams load_mlp(const std::filesystem::path& path) {
  try {
    return mlp_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint '" + path.string() + "': " + e.what());
  }
}

double spectral_norm(const Matrix<double>& w) {
  if (w.rows() == 0 || w.cols() == 0) return 0.0;
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMajor> m(w.data().data(), static_cast<Eigen::Index>(w.rows()),
                               static_cast<Eigen::Index>(w.cols()));
  Eigen::JacobiSVD<RowMajor> svd(m);
  return svd.singularValues()(0);
}

}  // namespace ccsafe
