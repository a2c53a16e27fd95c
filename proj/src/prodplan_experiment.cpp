#include "ccsafe/prodplan_experiment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccsafe/approxloss.hpp"
#include "ccsafe/bias.hpp"
#include "ccsafe/conservative.hpp"
#include "ccsafe/optimizer.hpp"

namespace ccsafe::prodplan {

namespace {

constexpr std::size_t kEstimate = 0;  // output index of the demand estimate
constexpr std::size_t kSafeUnsafe = 2;
constexpr std::size_t kUnsafe = 1;

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct ProductData {
  Matrix<double> windows;        // all hours from kHistory on
  std::vector<double> target;    // realized demand per hour
  std::vector<std::size_t> label;  // 1 when demand is below 3
};

std::size_t argmax2(double a, double b) { return b > a ? 1 : 0; }

// Softmax cross-entropy gradient of two logits against `label`.
std::array<double, 2> ce_gradient(double z0, double z1, std::size_t label) {
  const double m = std::max(z0, z1);
  const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
  const double p1 = e1 / (e0 + e1);
  return {(1.0 - p1) - (label == 0 ? 1.0 : 0.0), p1 - (label == 1 ? 1.0 : 0.0)};
}

MLPParams make_model(const ExperimentConfig& c, std::size_t outputs, double mean_demand, Rng& rng) {
  MLPParams m = MLPParams::create(kHistory, c.hidden, outputs, rng);
  m.layers.back().bias[kEstimate] = mean_demand;
  return m;
}

// Indices [seg.begin, seg.end) shuffled and cut into batches.
std::vector<std::vector<std::size_t>> batches(const Segment& seg, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> idx(seg.size());
  std::iota(idx.begin(), idx.end(), seg.begin);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < idx.size(); s += batch_size) {
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + batch_size)));
  }
  return out;
}

void warm_start(MLPParams& model, const ProductData& d, const Segment& seg, const ExperimentConfig& c, Rng& rng) {
  Adam adam(model, c.lr);
  MLPParams grads = MLPParams::zeros_like(model);
  for (std::size_t epoch = 0; epoch < c.warm_start_epochs; ++epoch) {
    for (const auto& batch : batches(seg, c.batch_size, rng)) {
      grads = MLPParams::zeros_like(model);
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (std::size_t t : batch) {
        const auto x = d.windows.row(t);
        const auto z = forward(model, x);
        const auto ce = ce_gradient(z[1], z[2], d.label[t]);
        const std::array<double, 3> g{scale * (z[0] - d.target[t]), scale * ce[0], scale * ce[1]};
        backward_accumulate(model, x, g, grads);
      }
      adam.step(model, grads);
    }
  }
}

void train_twostage(MLPParams& model, const ProductData& d, const Segment& seg, double r, const ExperimentConfig& c,
                    Rng& rng) {
  Adam adam(model, c.lr);
  MLPParams grads = MLPParams::zeros_like(model);
  for (std::size_t epoch = 0; epoch < c.twostage_epochs; ++epoch) {
    for (const auto& batch : batches(seg, c.batch_size, rng)) {
      grads = MLPParams::zeros_like(model);
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (std::size_t t : batch) {
        const auto x = d.windows.row(t);
        const auto z = forward(model, x);
        const std::array<double, 1> g{scale * asymmetric_loss_gradient(z[0], d.target[t], r)};
        backward_accumulate(model, x, g, grads);
      }
      adam.step(model, grads);
    }
  }
}

Matrix<double> class_logits(const MLPParams& model, const ProductData& d, const Segment& seg) {
  Matrix<double> out(seg.size(), kSafeUnsafe);
  for (std::size_t t = seg.begin; t < seg.end; ++t) {
    const auto z = forward(model, d.windows.row(t));
    out(t - seg.begin, 0) = z[1];
    out(t - seg.begin, 1) = z[2];
  }
  return out;
}

std::vector<std::size_t> segment_labels(const ProductData& d, const Segment& seg) {
  return {d.label.begin() + static_cast<std::ptrdiff_t>(seg.begin),
          d.label.begin() + static_cast<std::ptrdiff_t>(seg.end)};
}

// Framework training: approximate loss through the planner, virtual gradients for the class
// logits, and internal-test gradients for the posterior penalty of the producing class.
void train_framework(std::vector<MLPParams>& models, const std::vector<ProductData>& data, const Segment& train,
                     const Segment& internal, const PlanningInstance& inst, const std::vector<std::array<double, 2>>& priors,
                     const ExperimentConfig& c, Rng& rng) {
  std::vector<Adam> adams;
  for (const auto& m : models) adams.emplace_back(m, c.lr);
  std::vector<MLPParams> grads;
  for (const auto& m : models) grads.push_back(MLPParams::zeros_like(m));
  const double penalty_scale = 1.0 / static_cast<double>(train.size());

  for (std::size_t epoch = 0; epoch < c.framework_epochs; ++epoch) {
    // xi ramps linearly from 0 to its target over the epochs.
    const double xi = c.framework_epochs == 1
                          ? c.xi
                          : c.xi * static_cast<double>(epoch) / static_cast<double>(c.framework_epochs - 1);
    const double xi_eff = xi_effective(xi);
    for (const auto& batch : batches(train, c.batch_size, rng)) {
      for (std::size_t i = 0; i < kNumProducts; ++i) grads[i] = MLPParams::zeros_like(models[i]);
      const double scale = 1.0 / static_cast<double>(batch.size());

      for (std::size_t t : batch) {
        std::array<std::vector<double>, kNumProducts> z;
        Vec4 o{}, s{};
        Mask4 stop{};
        for (std::size_t i = 0; i < kNumProducts; ++i) {
          z[i] = forward(models[i], data[i].windows.row(t));
          o[i] = z[i][kEstimate];
          s[i] = data[i].target[t];
          // Training uses class 0 as the producing class.
          stop[i] = argmax2(z[i][1], z[i][2]) == 1;
        }
        const EstimateLoss base = estimate_loss(o, s, stop, inst, c.lambda, c.estimate_reg);
        for (std::size_t i = 0; i < kNumProducts; ++i) {
          std::array<double, 2> by_class{};
          for (std::size_t cls = 0; cls < 2; ++cls) {
            if ((cls == 1) == stop[i]) {
              by_class[cls] = base.value;
            } else {
              Mask4 alt = stop;
              alt[i] = cls == 1;
              by_class[cls] = estimate_loss(o, s, alt, inst, c.lambda, c.estimate_reg).value;
            }
          }
          const std::array<double, 2> logits{z[i][1], z[i][2]};
          const auto v = vpd_discrete(by_class, logits, c.temperature);
          std::array<double, 3> g{};
          g[0] = scale * base.gradient[i];
          for (std::size_t cls = 0; cls < 2; ++cls) {
            g[1 + cls] = scale * (std::clamp(v[cls], -c.clip, c.clip) + c.logit_reg * 2.0 * logits[cls]);
          }
          backward_accumulate(models[i], data[i].windows.row(t), g, grads[i]);
        }
      }

      for (std::size_t i = 0; i < kNumProducts; ++i) {
        const Matrix<double> logits = class_logits(models[i], data[i], internal);
        const auto labels = segment_labels(data[i], internal);
        const NormalTable table = build_normal_table(labels, kSafeUnsafe, logits, xi);
        const std::array<double, 2> pri = priors[i];
        const TableLossFn penalty = [&](const NormalTable& tb) {
          const Matrix<double> upper = posterior_upper(tb, pri);
          return c.beta * std::log(std::max(upper(0, kUnsafe) / c.train_rt, 1.0));
        };
        std::array<std::vector<PerturbedLosses>, kSafeUnsafe> per_label;
        for (std::size_t state = 0; state < kSafeUnsafe; ++state) {
          for (std::size_t out = 0; out < kSafeUnsafe; ++out) {
            per_label[state].push_back(table_perturbation_losses(table, state, out, penalty));
          }
        }
        for (std::size_t k = 0; k < labels.size(); ++k) {
          const auto zk = logits.row(k);
          const auto levels = contribution_levels(zk, xi_eff, per_label[labels[k]]);
          const auto gk = internal_test_gradient(zk, xi_eff, c.temperature, levels, labels.size());
          if (gk[0] == 0.0 && gk[1] == 0.0) continue;
          const std::array<double, 3> g{0.0, penalty_scale * gk[0], penalty_scale * gk[1]};
          backward_accumulate(models[i], data[i].windows.row(internal.begin + k), g, grads[i]);
        }
        adams[i].step(models[i], grads[i]);
      }
    }
  }
}

void record(SweepPoint& pt, const ProductionDecision& d, const Vec4& s, const PlanningInstance& inst) {
  pt.revenue += revenue(d, s, inst);
  for (std::size_t i = 0; i < kNumProducts; ++i) {
    ++pt.decisions;
    if (d.u[i] > 0.0) {
      ++pt.produced;
      if (s[i] < kLowDemand) ++pt.violations;
    }
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (train_hours == 0 || internal_train_hours == 0 || internal_val_hours == 0 || eval_hours == 0) {
    throw ValidationError("every data segment must be non-empty");
  }
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(lr > 0.0)) throw ValidationError("lr must be positive");
  if (!(train_rt > 0.0 && train_rt <= 1.0)) throw ValidationError("train_rt must lie in (0, 1]");
  for (double r : val_rts) {
    if (!(r > 0.0 && r <= 1.0 + 1e-3)) throw ValidationError("val_rts must lie in (0, 1]");
  }
  for (double r : twostage_rs) {
    if (!(r >= 0.0)) throw ValidationError("twostage_rs must be non-negative");
  }
  if (!(beta > 0.0)) throw ValidationError("beta must be positive");
  if (!(lambda > 0.0)) throw ValidationError("lambda must be positive");
  if (!(xi >= 0.0)) throw ValidationError("xi must be non-negative");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
}

Matrix<double> lag_windows(const std::vector<double>& series, std::size_t begin, std::size_t end) {
  if (begin < kHistory || end > series.size() || begin > end) throw ValidationError("lag window range out of bounds");
  Matrix<double> out(end - begin, kHistory);
  for (std::size_t t = begin; t < end; ++t) {
    for (std::size_t j = 0; j < kHistory; ++j) out(t - begin, j) = series[t - kHistory + j] / kMaxDemand;
  }
  return out;
}

SeedResult run_seed(const ExperimentConfig& c, std::uint64_t seed) {
  c.validate();
  Rng root(seed);
  const std::size_t T = c.total_hours();
  const auto demand = gen_demand(splitmix64(seed), T);
  Rng inst_rng = root.split(1);
  const PlanningInstance inst = random_instance(inst_rng);

  // Row r of every product's window matrix is hour r + kHistory.
  const Segment train{0, c.train_hours};
  const Segment internal{train.end, train.end + c.internal_train_hours};
  const Segment val{internal.end, internal.end + c.internal_val_hours};
  const Segment eval{val.end, val.end + c.eval_hours};

  SeedResult result;
  result.seed = seed;
  std::vector<ProductData> data(kNumProducts);
  std::vector<std::array<double, 2>> priors(kNumProducts);
  for (std::size_t i = 0; i < kNumProducts; ++i) {
    result.low_fraction[i] = fraction_below(demand[i], kLowDemand);
    data[i].windows = lag_windows(demand[i], kHistory, T);
    data[i].target.assign(demand[i].begin() + kHistory, demand[i].end());
    for (double v : data[i].target) data[i].label.push_back(v < kLowDemand ? 1 : 0);
    const std::span<const double> tr(data[i].target.data() + train.begin, train.size());
    const double f = fraction_below(tr, kLowDemand);
    priors[i] = {1.0 - f, f};
  }
  auto mean_of = [&](std::size_t i) {
    return std::accumulate(data[i].target.begin() + static_cast<std::ptrdiff_t>(train.begin),
                           data[i].target.begin() + static_cast<std::ptrdiff_t>(train.end), 0.0) /
           static_cast<double>(train.size());
  };

  // Framework.
  {
    Rng init = root.split(2), shuffle = root.split(3);
    std::vector<MLPParams> models;
    for (std::size_t i = 0; i < kNumProducts; ++i) {
      models.push_back(make_model(c, 3, mean_of(i), init));
      warm_start(models[i], data[i], train, c, shuffle);
    }
    train_framework(models, data, train, internal, inst, priors, c, shuffle);

    std::vector<Matrix<double>> val_logits, eval_logits;
    std::vector<std::vector<double>> estimates(kNumProducts);
    for (std::size_t i = 0; i < kNumProducts; ++i) {
      val_logits.push_back(class_logits(models[i], data[i], val));
      eval_logits.push_back(class_logits(models[i], data[i], eval));
      for (std::size_t t = eval.begin; t < eval.end; ++t) estimates[i].push_back(forward(models[i], data[i].windows.row(t))[0]);
    }
    for (double rt : c.val_rts) {
      std::vector<BiasVector> bias(kNumProducts);
      std::vector<Matrix<double>> upper(kNumProducts);
      for (std::size_t i = 0; i < kNumProducts; ++i) {
        const auto labels = segment_labels(data[i], val);
        bias[i] = bias_correct(val_logits[i], labels, kSafeUnsafe, c.xi, priors[i], rt).bias;
        const NormalTable table = build_normal_table(labels, kSafeUnsafe, apply_bias(val_logits[i], bias[i]), c.xi);
        upper[i] = posterior_upper(table, priors[i]);
      }
      SweepPoint pt;
      pt.method = "framework";
      pt.param = rt;
      for (std::size_t t = eval.begin; t < eval.end; ++t) {
        Vec4 o{}, s{};
        Mask4 stop{};
        for (std::size_t i = 0; i < kNumProducts; ++i) {
          const std::size_t r = t - eval.begin;
          const auto z = apply_bias(eval_logits[i].row(r), bias[i]);
          const std::size_t cls = argmax2(z[0], z[1]);
          stop[i] = !within_threshold(upper[i](cls, kUnsafe), rt);
          o[i] = estimates[i][r];
          s[i] = data[i].target[t];
        }
        record(pt, plan_production(o, stop, inst), s, inst);
      }
      result.points.push_back(pt);
    }
  }

  // Two-stage baseline, one estimator per asymmetry value.
  for (std::size_t ri = 0; ri < c.twostage_rs.size(); ++ri) {
    const double r = c.twostage_rs[ri];
    Rng init = root.split(100 + ri), shuffle = root.split(200 + ri);
    std::vector<std::vector<double>> estimates(kNumProducts);
    for (std::size_t i = 0; i < kNumProducts; ++i) {
      MLPParams m = make_model(c, 1, mean_of(i), init);
      train_twostage(m, data[i], train, r, c, shuffle);
      for (std::size_t t = eval.begin; t < eval.end; ++t) estimates[i].push_back(forward(m, data[i].windows.row(t))[0]);
    }
    SweepPoint pt;
    pt.method = "twostage";
    pt.param = r;
    for (std::size_t t = eval.begin; t < eval.end; ++t) {
      Vec4 o{}, s{};
      for (std::size_t i = 0; i < kNumProducts; ++i) {
        o[i] = estimates[i][t - eval.begin];
        s[i] = data[i].target[t];
      }
      record(pt, twostage_plan(o, inst), s, inst);
    }
    result.points.push_back(pt);
  }

  // Mean-variance baseline on the raw 24-hour history.
  for (double coeff : c.meanvar_coeffs) {
    SweepPoint pt;
    pt.method = "meanvar";
    pt.param = coeff;
    std::vector<std::vector<double>> history(kNumProducts, std::vector<double>(kHistory));
    for (std::size_t t = eval.begin; t < eval.end; ++t) {
      Vec4 s{};
      for (std::size_t i = 0; i < kNumProducts; ++i) {
        // Data hour t is raw hour t + 24, so its history starts at raw hour t.
        std::copy_n(demand[i].begin() + static_cast<std::ptrdiff_t>(t), kHistory, history[i].begin());
        s[i] = data[i].target[t];
      }
      record(pt, mean_var_plan(history, coeff, inst), s, inst);
    }
    result.points.push_back(pt);
  }
  return result;
}

std::vector<AggregatePoint> aggregate(const std::vector<SeedResult>& results) {
  std::vector<AggregatePoint> out;
  std::vector<std::vector<double>> revs, viols;
  for (const auto& r : results) {
    for (const auto& pt : r.points) {
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const AggregatePoint& a) { return a.method == pt.method && a.param == pt.param; });
      std::size_t k;
      if (it == out.end()) {
        out.push_back({pt.method, pt.param});
        revs.emplace_back();
        viols.emplace_back();
        k = out.size() - 1;
      } else {
        k = static_cast<std::size_t>(it - out.begin());
      }
      revs[k].push_back(pt.revenue);
      viols[k].push_back(pt.violation_rate());
    }
  }
  auto mean_se = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() < 2) return std::pair{m, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, std::sqrt(ss / (n - 1.0) / n)};
  };
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::tie(out[k].mean_revenue, out[k].se_revenue) = mean_se(revs[k]);
    std::tie(out[k].mean_violation, out[k].se_violation) = mean_se(viols[k]);
    out[k].seeds = revs[k].size();
  }
  return out;
}

std::optional<double> best_revenue_within(const std::vector<AggregatePoint>& points, const std::string& method,
                                          double max_violation) {
  std::optional<double> best;
  for (const auto& p : points) {
    if (p.method != method || p.mean_violation > max_violation) continue;
    if (!best || p.mean_revenue > *best) best = p.mean_revenue;
  }
  return best;
}

}  // namespace ccsafe::prodplan
