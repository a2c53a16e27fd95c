#include "ccsafe/cli.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ccsafe/approxloss.hpp"
#include "ccsafe/bias.hpp"
#include "ccsafe/classifier.hpp"
#include "ccsafe/conservative.hpp"
#include "ccsafe/core.hpp"
#include "ccsafe/gradcheck.hpp"
#include "ccsafe/io.hpp"
#include "ccsafe/navsim.hpp"
#include "ccsafe/navsim_train.hpp"
#include "ccsafe/optimizer.hpp"
#include "ccsafe/prodplan_experiment.hpp"
#include "ccsafe/rng.hpp"
#include "ccsafe/scaling.hpp"
#include "ccsafe/svg.hpp"
#include "json.hpp"

namespace ccsafe::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Flag values that override config entries only when given on the command line.
struct Overrides {
  std::vector<std::function<void(json&)>> apply;

  template <class T>
  void add(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    apply.push_back([opt, value, pointer](json& j) {
      if (opt->count() > 0) j[json::json_pointer(pointer)] = *value;
    });
  }
};

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "out";
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file");
  c.seed_opt = app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out", c.out, "output directory")->capture_default_str();
}

// Reports keys of `given` missing from `defaults`, recursing into objects.
void check_known(const json& defaults, const json& given, const std::string& prefix) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix + it.key();
    if (key == "seed") continue;
    if (!defaults.contains(it.key())) throw ValidationError("config: unknown field '" + key + "'");
    if (defaults[it.key()].is_object() && it.value().is_object()) check_known(defaults[it.key()], it.value(), key + ".");
  }
}

json resolve(const json& defaults, const Common& common, const Overrides& ov) {
  json cfg = defaults;
  if (!common.config_path.empty()) {
    json file;
    try {
      file = json::parse(io::read_file(common.config_path));
    } catch (const json::parse_error& e) {
      throw ValidationError("config: cannot parse '" + common.config_path + "': " + e.what());
    }
    if (!file.is_object()) throw ValidationError("config: top level must be an object");
    check_known(defaults, file, "");
    cfg.merge_patch(file);
  }
  for (const auto& f : ov.apply) f(cfg);
  return cfg;
}

std::uint64_t resolve_seed(const Common& common, const json& cfg_file_seed) {
  if (common.seed_opt && common.seed_opt->count() > 0) return common.seed;
  if (cfg_file_seed.is_number_unsigned()) return cfg_file_seed.get<std::uint64_t>();
  return common.seed;
}

template <class T>
T field(const json& cfg, const std::string& key) {
  if (!cfg.contains(key)) throw ValidationError("config: missing field '" + key + "'");
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: field '" + key + "' has the wrong type");
  }
}

std::string required_path(const json& cfg, const std::string& key) {
  const auto p = field<std::string>(cfg, key);
  if (p.empty()) throw ValidationError("missing required field '" + key + "'");
  if (!fs::exists(p)) throw ValidationError("field '" + key + "': file '" + p + "' does not exist");
  return p;
}

void announce(const std::string& name, const json& cfg, std::uint64_t seed) {
  std::cout << "subcommand " << name << "\nconfig " << cfg.dump() << "\nseed " << seed << "\n";
}

fs::path prepare_out(const std::string& out) {
  fs::create_directories(out);
  return fs::path(out);
}

std::vector<double> priors_or_uniform(const json& cfg, std::size_t n) {
  auto p = field<std::vector<double>>(cfg, "priors");
  if (p.empty()) p.assign(n, 1.0 / static_cast<double>(n));
  validate_simplex(p, n);
  return p;
}

Matrix<double> input_matrix(const InternalTestSet& set) {
  Matrix<double> m(set.size(), set.dimension());
  for (std::size_t k = 0; k < set.size(); ++k) {
    std::copy(set[k].measurement.begin(), set[k].measurement.end(), m.row(k).begin());
  }
  return m;
}

// Logits of every record: the model's outputs, or the measurements themselves when no model is given.
Matrix<double> record_logits(const InternalTestSet& set, const std::string& model_path, std::size_t num_outputs) {
  Matrix<double> logits =
      model_path.empty() ? input_matrix(set) : forward_batch(load_mlp(model_path), input_matrix(set));
  if (logits.cols() != num_outputs) {
    throw ValidationError("logits have " + std::to_string(logits.cols()) + " columns, expected " +
                          std::to_string(num_outputs));
  }
  return logits;
}

std::string fmt(double v) { return io::format_double(v); }

// ---- table -----------------------------------------------------------------------------------

json table_defaults() {
  return {{"dataset", ""}, {"model", ""}, {"num_states", 2}, {"xi", 0.0}, {"priors", json::array()}};
}

int run_table(const json& cfg, std::uint64_t, const fs::path& out) {
  const auto n = field<std::size_t>(cfg, "num_states");
  const auto set = load_internal_test_set(required_path(cfg, "dataset"), n);
  const auto priors = priors_or_uniform(cfg, n);
  const auto logits = record_logits(set, field<std::string>(cfg, "model"), n);
  const auto labels = set.labels();
  const double xi = field<double>(cfg, "xi");
  const NormalTable table = build_normal_table(labels, n, logits, xi);
  const PosteriorTable post = compute_posteriors(labels, n, logits, xi, priors);

  io::write_file_atomic(out / "table.json",
                        json{{"table", to_json(table)}, {"posteriors", to_json(post)}}.dump(2) + "\n");
  io::CsvTable csv({"output", "state", "plus", "minus", "total", "upper", "plain", "plain_fallback"});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      csv.add_row({std::to_string(j), std::to_string(k), fmt(table.plus(k, j)), fmt(table.minus(k, j)),
                   fmt(table.totals[k]), fmt(post.upper(j, k)), fmt(post.plain(j, k)),
                   post.plain_fallback[j] ? "1" : "0"});
    }
  }
  csv.save(out / "metrics.csv");

  svg::Plot plot;
  plot.title = "Posterior of the last state by output";
  plot.x_label = "output";
  plot.y_label = "posterior";
  svg::Series upper{"upper", {}, "#d62728"}, plain{"plain", {}, "#1f77b4"};
  for (std::size_t j = 0; j < n; ++j) {
    upper.points.emplace_back(static_cast<double>(j), post.upper(j, n - 1));
    plain.points.emplace_back(static_cast<double>(j), post.plain(j, n - 1));
  }
  plot.series = {upper, plain};
  plot.save(out / "plot.svg");
  std::cout << "records " << set.size() << "\nwrote " << (out / "metrics.csv").string() << "\n";
  return kExitOk;
}

// ---- decide ----------------------------------------------------------------------------------

json decide_defaults() {
  return {{"dataset", ""}, {"queries", ""},       {"model", ""},   {"num_states", 2},
          {"xi", 0.0},     {"priors", json::array()}, {"rt", 0.1}, {"unsafe_states", {1}},
          {"bias", json::array()}, {"default_objective", 0.0}};
}

struct Query {
  std::vector<double> y;
  double objective = 0.0;
};

std::vector<Query> load_queries(const std::string& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("queries: empty file");
  const auto header = io::split_csv_line(line);
  if (header.empty() || header.back() != "objective") throw ParseError("queries row 1: header must end with 'objective'");
  const std::size_t dim = header.size() - 1;
  std::vector<Query> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != dim + 1) throw ParseError("queries row " + std::to_string(row) + ": wrong field count");
    Query q;
    for (std::size_t i = 0; i <= dim; ++i) {
      const auto v = io::parse_double(f[i]);
      if (!v) throw ParseError("queries row " + std::to_string(row) + ": cannot parse '" + f[i] + "'");
      if (i < dim) {
        q.y.push_back(*v);
      } else {
        q.objective = *v;
      }
    }
    out.push_back(std::move(q));
  }
  if (out.empty()) throw ValidationError("queries: no candidates");
  return out;
}

int run_decide(const json& cfg, std::uint64_t, const fs::path& out) {
  const auto n = field<std::size_t>(cfg, "num_states");
  const auto set = load_internal_test_set(required_path(cfg, "dataset"), n);
  const auto queries = load_queries(required_path(cfg, "queries"));
  const auto model_path = field<std::string>(cfg, "model");
  const auto priors = priors_or_uniform(cfg, n);
  const double xi = field<double>(cfg, "xi");
  const double rt = field<double>(cfg, "rt");
  const auto unsafe = field<std::vector<std::size_t>>(cfg, "unsafe_states");
  for (std::size_t s : unsafe) {
    if (s >= n) throw ValidationError("unsafe_states entry " + std::to_string(s) + " out of range");
  }
  BiasVector bias{field<std::vector<double>>(cfg, "bias")};
  if (bias.v.empty()) bias.v.assign(n, 0.0);
  if (bias.v.size() != n) throw ValidationError("bias must have one entry per output");

  const Matrix<double> record_z = apply_bias(record_logits(set, model_path, n), bias);
  const Matrix<double> upper = posterior_upper(build_normal_table(set.labels(), n, record_z, xi), priors);

  std::vector<std::vector<double>> ys;
  for (const auto& q : queries) ys.push_back(q.y);
  Matrix<double> query_z = model_path.empty() ? to_matrix(ys) : forward_batch(load_mlp(model_path), to_matrix(ys));
  if (query_z.cols() != n) throw ValidationError("query logits must have one column per output");
  query_z = apply_bias(query_z, bias);
  std::vector<std::size_t> predicted(queries.size());
  for (std::size_t a = 0; a < queries.size(); ++a) {
    const auto z = query_z.row(a);
    predicted[a] = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  CandidateSet candidates;
  for (std::size_t a = 0; a < queries.size(); ++a) candidates.actions.push_back({static_cast<double>(a)});
  candidates.default_action = {-1.0};
  const double default_objective = field<double>(cfg, "default_objective");
  const ObjectiveFn objective = [&](const Action& u) {
    return u[0] < 0.0 ? default_objective : queries[static_cast<std::size_t>(u[0])].objective;
  };
  ConstraintSpec spec;
  spec.constraints.push_back({[&](const Action&, std::size_t state) {
                                return std::find(unsafe.begin(), unsafe.end(), state) != unsafe.end() ? -1.0 : 1.0;
                              },
                              true});
  UserParams params;
  params.thresholds = {rt};
  params.priors = priors;
  params.xi = xi;
  const PosteriorLookup lookup = [&](std::size_t a, std::size_t) {
    const auto row = upper.row(predicted[a]);
    return std::vector<double>(row.begin(), row.end());
  };
  const Decision d = select_action(candidates, objective, spec, lookup, n, params);

  io::write_file_atomic(out / "decisions.jsonl", to_json(d).dump() + "\n");
  io::CsvTable csv({"candidate", "predicted_class", "objective", "violated_mass", "bar_c", "feasible", "chosen"});
  for (std::size_t a = 0; a < d.trace.size(); ++a) {
    const auto& t = d.trace[a];
    csv.add_row({std::to_string(a), std::to_string(predicted[a]), fmt(t.objective), fmt(t.violated_mass.at(0)),
                 fmt(t.bar_c.at(0)), t.feasible ? "1" : "0", d.chosen_index == a ? "1" : "0"});
  }
  csv.save(out / "metrics.csv");

  svg::Plot plot;
  plot.title = "Violated mass per candidate";
  plot.x_label = "candidate";
  plot.y_label = "violated mass";
  svg::Series mass{"violated mass", {}, "#1f77b4", false, true}, thr{"r_t", {}, "#d62728", true, false};
  for (std::size_t a = 0; a < d.trace.size(); ++a) {
    mass.points.emplace_back(static_cast<double>(a), d.trace[a].violated_mass.at(0));
    thr.points.emplace_back(static_cast<double>(a), rt);
  }
  plot.series = {mass, thr};
  plot.save(out / "plot.svg");
  if (d.used_default) {
    std::cout << "decision default\n";
  } else {
    std::cout << "decision candidate " << *d.chosen_index << "\n";
  }
  return kExitOk;
}

// ---- gradcheck -------------------------------------------------------------------------------

json gradcheck_defaults() { return {{"instances", 100}, {"step", 1e-6}}; }

int run_gradcheck(const json& cfg, std::uint64_t seed, const fs::path& out) {
  const auto instances = field<std::size_t>(cfg, "instances");
  const double h = field<double>(cfg, "step");
  if (instances == 0) throw ValidationError("instances must be positive");
  if (!(h > 0.0)) throw ValidationError("step must be positive");
  Rng rng(seed);
  Rng r1 = rng.split(0), r2 = rng.split(1), r3 = rng.split(2);
  struct Row {
    std::string name;
    CheckResult res;
    double tol;
  };
  const std::vector<Row> rows{{"vpd_discrete", check_vpd(instances, h, r1), 1e-4},
                              {"exact_gradient", check_exact_gradient(instances, h, r2), 1e-4},
                              {"mlp_backward", check_mlp(instances, h, r3), 1e-5}};
  io::CsvTable csv({"check", "instances", "skipped", "max_rel_error", "tolerance", "passed"});
  svg::Plot plot;
  plot.title = "Maximum relative error by check";
  plot.x_label = "check";
  plot.y_label = "max relative error";
  plot.log_y = true;
  svg::Series s{"max relative error", {}, "#1f77b4", false, true};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const bool ok = r.res.max_rel <= r.tol;
    csv.add_row({r.name, std::to_string(r.res.instances), std::to_string(r.res.skipped), fmt(r.res.max_rel),
                 fmt(r.tol), ok ? "1" : "0"});
    s.points.emplace_back(static_cast<double>(i), std::max(r.res.max_rel, 1e-16));
    std::cout << r.name << " max_rel_error " << r.res.max_rel << (ok ? " ok" : " FAILED") << "\n";
  }
  plot.series = {s};
  csv.save(out / "metrics.csv");
  plot.save(out / "plot.svg");
  return kExitOk;
}

// ---- navsim ----------------------------------------------------------------------------------

json world_defaults() {
  const navsim::WorldConfig w;
  return {{"width", w.width},
          {"height", w.height},
          {"num_hazards", w.num_hazards},
          {"false_alarm", w.false_alarm},
          {"miss_rate", w.miss_rate},
          {"horizon", w.horizon}};
}

navsim::WorldConfig world_from(const json& j) {
  navsim::WorldConfig w;
  w.width = field<int>(j, "width");
  w.height = field<int>(j, "height");
  w.num_hazards = field<int>(j, "num_hazards");
  w.false_alarm = field<double>(j, "false_alarm");
  w.miss_rate = field<double>(j, "miss_rate");
  w.horizon = field<int>(j, "horizon");
  w.validate();
  return w;
}

json navsim_defaults() {
  return {{"episodes", 10},          {"episode_steps", 200},    {"rt", {0.1}},         {"model", "mlp"},
          {"sigma", 1.0},            {"xi", 0.0},               {"train_records", 2000}, {"internal_records", 2000},
          {"warm_start_epochs", 20}, {"tailored_steps", 200},   {"hidden", {32, 32}},  {"epsilon", 0.1},
          {"world", world_defaults()}};
}

void add_metrics_row(io::CsvTable& csv, const std::string& method, double rt, std::size_t episodes,
                     const navsim::EpisodeMetrics& m) {
  csv.add_row({method, fmt(rt), std::to_string(episodes), std::to_string(m.decisions),
               std::to_string(m.chance_decisions), std::to_string(m.violations), fmt(m.violation_rate()),
               std::to_string(m.collisions), std::to_string(m.collisions_non_default), fmt(m.collision_rate()),
               fmt(m.reward / static_cast<double>(episodes)), std::to_string(m.default_used), std::to_string(m.goals)});
}

int run_navsim(const json& cfg, std::uint64_t seed, const fs::path& out) {
  const auto world = world_from(cfg.at("world"));
  navsim::PolicyConfig policy;
  policy.epsilon = field<double>(cfg, "epsilon");
  navsim::EvalConfig ec;
  ec.episodes = field<std::size_t>(cfg, "episodes");
  ec.episode_steps = field<int>(cfg, "episode_steps");
  ec.seed = splitmix64(seed ^ 0x65ULL);
  if (ec.episodes == 0) throw ValidationError("episodes must be positive");
  const auto rts = field<std::vector<double>>(cfg, "rt");
  if (rts.empty()) throw ValidationError("rt needs at least one threshold");
  for (double rt : rts) {
    if (!(rt > 0.0)) throw ValidationError("rt entries must be positive");
  }
  const auto kind = field<std::string>(cfg, "model");
  if (kind != "mlp" && kind != "exact" && kind != "none") throw ValidationError("model must be one of mlp, exact, none");
  const double xi = field<double>(cfg, "xi");
  const std::array<double, 2> priors{0.5, 0.5};

  // The classifier is trained once; each threshold gets its own bias correction.
  std::optional<navsim::Pipeline> pipe;
  if (kind == "mlp") {
    navsim::PipelineConfig pc;
    pc.train.hidden = field<std::vector<std::size_t>>(cfg, "hidden");
    pc.train.warm_start_epochs = field<std::size_t>(cfg, "warm_start_epochs");
    pc.train.steps = field<std::size_t>(cfg, "tailored_steps");
    pc.train.r_t = std::min(*std::min_element(rts.begin(), rts.end()), 1.0);
    pc.train.xi = xi;
    pc.train.episode_steps = ec.episode_steps;
    pc.train_records = field<std::size_t>(cfg, "train_records");
    pc.internal_records = field<std::size_t>(cfg, "internal_records");
    pc.r_t = rts.front();
    pc.xi = xi;
    pc.seed = seed;
    pipe = navsim::build_pipeline(world, policy, pc);
    save_mlp(pipe->training.params, out / "model.json");
    save_internal_test_set(pipe->internal.set, out / "internal.csv");
  }

  io::CsvTable csv({"method", "rt", "episodes", "decisions", "chance_decisions", "violations", "violation_rate",
                    "collisions", "collisions_non_default", "collision_rate", "reward_per_episode", "default_used",
                    "goals"});
  std::string jsonl;
  json model_info = json::array();
  svg::Series frontier{"framework", {}, "#d62728"};
  const std::string method = kind == "none" ? "policy" : "framework_" + kind;
  for (double rt : rts) {
    ec.r_t = rt;
    std::unique_ptr<navsim::SafetyModel> model;
    if (kind == "mlp") {
      const auto bias = bias_correct(pipe->training.params, pipe->internal.set, xi, priors, std::min(rt, 1.0));
      auto m = std::make_unique<navsim::MlpSafetyModel>(pipe->training.params, bias.bias, pipe->internal.set, xi, priors);
      model_info.push_back({{"rt", rt},
                            {"bias", bias.bias.v},
                            {"bias_posterior", bias.posterior},
                            {"bias_achieved", bias.achieved},
                            {"internal_partial", pipe->internal.set.partial},
                            {"posterior_upper", matrix_to_json(m->upper())}});
      model = std::move(m);
    } else if (kind == "exact") {
      const double sigma = field<double>(cfg, "sigma");
      const double cut = navsim::ExactPosteriorModel::cut_for_threshold(std::min(rt, 1.0), sigma);
      model = std::make_unique<navsim::ExactPosteriorModel>(sigma, cut);
      model_info.push_back({{"rt", rt}, {"sigma", sigma}, {"cut", cut}});
    }
    const navsim::DecisionSink sink = [&](const Decision& d) {
      json j = to_json(d);
      j["rt"] = rt;
      jsonl += j.dump() + "\n";
    };
    const auto m = navsim::run_eval(world, policy, model.get(), ec, sink);
    add_metrics_row(csv, method, rt, ec.episodes, m);
    frontier.points.emplace_back(m.collision_rate(), m.reward / static_cast<double>(ec.episodes));
    std::cout << "rt " << rt << " violation_rate " << m.violation_rate() << " over " << m.chance_decisions
              << " chance decisions, collision_rate " << m.collision_rate() << "\n";
  }
  const auto bare = navsim::run_eval(world, policy, nullptr, ec);
  add_metrics_row(csv, "bare_policy", 1.0, ec.episodes, bare);

  io::write_file_atomic(out / "decisions.jsonl", jsonl);
  io::write_file_atomic(out / "model_info.json", model_info.dump(2) + "\n");
  csv.save(out / "metrics.csv");

  svg::Plot plot;
  plot.title = "Reward against collision rate";
  plot.x_label = "collision rate";
  plot.y_label = "reward per episode";
  std::sort(frontier.points.begin(), frontier.points.end());
  plot.series = {frontier,
                 {"bare policy", {{bare.collision_rate(), bare.reward / static_cast<double>(ec.episodes)}}, "#1f77b4",
                  false, true}};
  plot.save(out / "plot.svg");
  return kExitOk;
}

// ---- prodplan --------------------------------------------------------------------------------

json prodplan_defaults() {
  const prodplan::ExperimentConfig c;
  return {{"seeds", 3},
          {"train_hours", c.train_hours},
          {"internal_train_hours", c.internal_train_hours},
          {"internal_val_hours", c.internal_val_hours},
          {"eval_hours", c.eval_hours},
          {"hidden", c.hidden},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"warm_start_epochs", c.warm_start_epochs},
          {"framework_epochs", c.framework_epochs},
          {"twostage_epochs", c.twostage_epochs},
          {"train_rt", c.train_rt},
          {"val_rts", c.val_rts},
          {"beta", c.beta},
          {"lambda", c.lambda},
          {"estimate_reg", c.estimate_reg},
          {"logit_reg", c.logit_reg},
          {"xi", c.xi},
          {"twostage_rs", c.twostage_rs},
          {"meanvar_coeffs", c.meanvar_coeffs}};
}

int run_prodplan(const json& cfg, std::uint64_t seed, const fs::path& out) {
  prodplan::ExperimentConfig c;
  c.train_hours = field<std::size_t>(cfg, "train_hours");
  c.internal_train_hours = field<std::size_t>(cfg, "internal_train_hours");
  c.internal_val_hours = field<std::size_t>(cfg, "internal_val_hours");
  c.eval_hours = field<std::size_t>(cfg, "eval_hours");
  c.hidden = field<std::vector<std::size_t>>(cfg, "hidden");
  c.batch_size = field<std::size_t>(cfg, "batch_size");
  c.lr = field<double>(cfg, "lr");
  c.warm_start_epochs = field<std::size_t>(cfg, "warm_start_epochs");
  c.framework_epochs = field<std::size_t>(cfg, "framework_epochs");
  c.twostage_epochs = field<std::size_t>(cfg, "twostage_epochs");
  c.train_rt = field<double>(cfg, "train_rt");
  c.val_rts = field<std::vector<double>>(cfg, "val_rts");
  c.beta = field<double>(cfg, "beta");
  c.lambda = field<double>(cfg, "lambda");
  c.estimate_reg = field<double>(cfg, "estimate_reg");
  c.logit_reg = field<double>(cfg, "logit_reg");
  c.xi = field<double>(cfg, "xi");
  c.twostage_rs = field<std::vector<double>>(cfg, "twostage_rs");
  c.meanvar_coeffs = field<std::vector<double>>(cfg, "meanvar_coeffs");
  c.validate();
  const auto seeds = field<std::size_t>(cfg, "seeds");
  if (seeds == 0) throw ValidationError("seeds must be positive");

  std::vector<prodplan::SeedResult> results;
  io::CsvTable csv({"seed", "method", "param", "revenue", "violation_pct", "decisions", "produced", "violations"});
  for (std::size_t s = 0; s < seeds; ++s) {
    results.push_back(prodplan::run_seed(c, seed + s));
    for (const auto& p : results.back().points) {
      csv.add_row({std::to_string(seed + s), p.method, fmt(p.param), fmt(p.revenue), fmt(100.0 * p.violation_rate()),
                   std::to_string(p.decisions), std::to_string(p.produced), std::to_string(p.violations)});
    }
  }
  csv.save(out / "metrics.csv");

  const auto agg = prodplan::aggregate(results);
  io::CsvTable agg_csv({"method", "param", "seeds", "mean_revenue", "se_revenue", "mean_violation_pct", "se_violation_pct"});
  svg::Plot plot;
  plot.title = "Revenue against violation";
  plot.x_label = "violation (%)";
  plot.y_label = "mean revenue";
  plot.log_x = true;
  const std::vector<std::pair<std::string, std::string>> methods{
      {"framework", "#d62728"}, {"twostage", "#1f77b4"}, {"meanvar", "#2ca02c"}};
  for (const auto& [name, color] : methods) {
    svg::Series series{name, {}, color};
    for (const auto& a : agg) {
      if (a.method != name) continue;
      series.points.emplace_back(100.0 * a.mean_violation, a.mean_revenue);
    }
    std::sort(series.points.begin(), series.points.end());
    plot.series.push_back(series);
  }
  for (const auto& a : agg) {
    agg_csv.add_row({a.method, fmt(a.param), std::to_string(a.seeds), fmt(a.mean_revenue), fmt(a.se_revenue),
                     fmt(100.0 * a.mean_violation), fmt(100.0 * a.se_violation)});
  }
  agg_csv.save(out / "aggregate.csv");
  plot.save(out / "plot.svg");
  for (const auto& [name, color] : methods) {
    const auto best = prodplan::best_revenue_within(agg, name, 0.01);
    std::cout << name << " best_revenue_at_violation_le_1pct " << (best ? fmt(*best) : "none") << "\n";
  }
  return kExitOk;
}

// ---- scaling ---------------------------------------------------------------------------------

json scaling_defaults() {
  const scaling::ScalingConfig c;
  return {{"seeds", 1},
          {"grid", {100, 1000, 10000}},
          {"rt", c.r_t},
          {"xi_scale", c.xi_scale},
          {"collision_weight", c.collision_weight},
          {"eval_episodes", c.eval_episodes},
          {"episode_steps", c.episode_steps},
          {"train_records", c.train_records},
          {"warm_start_epochs", c.warm_start_epochs},
          {"tailored_steps", c.tailored_steps},
          {"hidden", c.hidden},
          {"epsilon", 0.1},
          {"world", world_defaults()}};
}

int run_scaling_cmd(const json& cfg, std::uint64_t seed, const fs::path& out) {
  scaling::ScalingConfig c;
  c.world = world_from(cfg.at("world"));
  c.policy.epsilon = field<double>(cfg, "epsilon");
  c.n_t_grid = field<std::vector<std::size_t>>(cfg, "grid");
  c.r_t = field<double>(cfg, "rt");
  c.xi_scale = field<double>(cfg, "xi_scale");
  c.collision_weight = field<double>(cfg, "collision_weight");
  c.eval_episodes = field<std::size_t>(cfg, "eval_episodes");
  c.episode_steps = field<int>(cfg, "episode_steps");
  c.train_records = field<std::size_t>(cfg, "train_records");
  c.warm_start_epochs = field<std::size_t>(cfg, "warm_start_epochs");
  c.tailored_steps = field<std::size_t>(cfg, "tailored_steps");
  c.hidden = field<std::vector<std::size_t>>(cfg, "hidden");
  c.validate();
  const auto seeds = field<std::size_t>(cfg, "seeds");
  if (seeds == 0) throw ValidationError("seeds must be positive");

  io::CsvTable csv({"seed", "n_t", "xi", "tradeoff_standin", "reward", "collision_rate", "violation_rate", "gap",
                    "partial"});
  std::vector<double> xs, ys;
  for (std::size_t s = 0; s < seeds; ++s) {
    for (const auto& p : scaling::run_scaling(c, seed + s)) {
      csv.add_row({std::to_string(seed + s), std::to_string(p.n_t), fmt(p.xi), fmt(p.tradeoff), fmt(p.reward),
                   fmt(p.collision_rate), fmt(p.violation_rate), fmt(p.gap), p.partial ? "1" : "0"});
      if (p.gap > 0.0) {
        xs.push_back(static_cast<double>(p.n_t));
        ys.push_back(p.gap);
      }
    }
  }
  csv.save(out / "metrics.csv");

  svg::Plot plot;
  plot.title = "Conservativeness gap against internal test data";
  plot.x_label = "n_t";
  plot.y_label = "mean posterior gap";
  plot.log_x = plot.log_y = true;
  svg::Series pts{"gap", {}, "#1f77b4", false, true};
  for (std::size_t i = 0; i < xs.size(); ++i) pts.points.emplace_back(xs[i], ys[i]);
  plot.series.push_back(pts);
  json fit_json = json::object();
  if (xs.size() >= 3) {
    const auto fit = scaling::fit_power_law(xs, ys);
    fit_json = {{"log_a", fit.log_a}, {"slope", fit.slope}, {"r_squared", fit.r_squared}};
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    svg::Series line{"fit", {}, "#d62728", true, false};
    for (double x : {*lo, *hi}) line.points.emplace_back(x, std::exp(fit.log_a) * std::pow(x, fit.slope));
    plot.series.push_back(line);
    std::cout << "slope " << fit.slope << " r_squared " << fit.r_squared << "\n";
  }
  io::write_file_atomic(out / "fit.json", fit_json.dump(2) + "\n");
  plot.save(out / "plot.svg");
  return kExitOk;
}

// ---- bias ------------------------------------------------------------------------------------

json bias_defaults() {
  return {{"dataset", ""}, {"model", ""}, {"num_states", 2}, {"rt", 0.1}, {"xi", 0.0},
          {"priors", json::array()}, {"unit_step", 0.01}, {"unsafe_state", 1}};
}

int run_bias(const json& cfg, std::uint64_t, const fs::path& out) {
  const auto n = field<std::size_t>(cfg, "num_states");
  const auto set = load_internal_test_set(required_path(cfg, "dataset"), n);
  const auto priors = priors_or_uniform(cfg, n);
  const auto logits = record_logits(set, field<std::string>(cfg, "model"), n);
  BiasCorrectionOptions opts;
  opts.unit_step = field<double>(cfg, "unit_step");
  opts.unsafe_state = field<std::size_t>(cfg, "unsafe_state");
  if (opts.unsafe_state >= n) throw ValidationError("unsafe_state out of range");
  const auto labels = set.labels();
  const double rt = field<double>(cfg, "rt");
  const double xi = field<double>(cfg, "xi");
  const auto r = bias_correct(logits, labels, n, xi, priors, rt, opts);

  const json j{{"bias", r.bias.v},         {"safe_class", r.safe_class}, {"posterior", r.posterior},
               {"target", r.target},       {"gap", r.gap},               {"jump", r.jump},
               {"achieved", r.achieved},   {"bracketed", r.bracketed},   {"saturated", r.saturated},
               {"iterations", r.iterations}};
  io::write_file_atomic(out / "bias.json", j.dump(2) + "\n");
  io::CsvTable csv({"safe_class", "posterior", "target", "gap", "jump", "achieved"});
  csv.add_row({std::to_string(r.safe_class), fmt(r.posterior), fmt(r.target), fmt(r.gap), fmt(r.jump),
               r.achieved ? "1" : "0"});
  csv.save(out / "metrics.csv");

  // Posterior of the unsafe state at the safe class as the bias moves around the chosen value.
  svg::Plot plot;
  plot.title = "Safe-class posterior against bias";
  plot.x_label = "bias on the safe class";
  plot.y_label = "posterior of the unsafe state";
  svg::Series curve{"posterior", {}, "#1f77b4", true, false}, target{"r_t", {}, "#d62728", true, false};
  const double centre = r.bias.v[r.safe_class];
  for (int i = -40; i <= 40; ++i) {
    BiasVector b = r.bias;
    b.v[r.safe_class] = centre + 0.05 * i;
    const auto upper = posterior_upper(build_normal_table(labels, n, apply_bias(logits, b), xi), priors);
    curve.points.emplace_back(b.v[r.safe_class], upper(r.safe_class, opts.unsafe_state));
    target.points.emplace_back(b.v[r.safe_class], rt);
  }
  plot.series = {curve, target};
  plot.save(out / "plot.svg");
  std::cout << "posterior " << r.posterior << " target " << rt << (r.achieved ? " achieved" : " not achieved") << "\n";
  return kExitOk;
}

struct Subcommand {
  std::string name;
  std::string help;
  json (*defaults)();
  int (*run)(const json&, std::uint64_t, const fs::path&);
};

const std::vector<Subcommand>& subcommands() {
  static const std::vector<Subcommand> subs{
      {"table", "build the conservative normal table and posteriors of an internal test set", table_defaults, run_table},
      {"decide", "select an action for a candidate set under the chance constraint", decide_defaults, run_decide},
      {"gradcheck", "compare analytic gradients with finite differences", gradcheck_defaults, run_gradcheck},
      {"navsim", "evaluate the framework on the gridworld navigation simulator", navsim_defaults, run_navsim},
      {"prodplan", "run the production-planning experiment", prodplan_defaults, run_prodplan},
      {"scaling", "sweep internal test data quantity and fit a power law", scaling_defaults, run_scaling_cmd},
      {"bias", "bias-correct a classifier to a new threshold", bias_defaults, run_bias}};
  return subs;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Chance-constrained safe decision making"};
  app.require_subcommand(1, 1);
  std::vector<Common> commons(subcommands().size());
  std::vector<Overrides> overrides(subcommands().size());
  std::vector<CLI::App*> apps;
  for (std::size_t i = 0; i < subcommands().size(); ++i) {
    const auto& s = subcommands()[i];
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, commons[i]);
    auto& ov = overrides[i];
    if (s.name == "table" || s.name == "decide" || s.name == "bias") {
      ov.add<std::string>(sub, "--dataset", "/dataset", "internal test set CSV");
      ov.add<std::string>(sub, "--model", "/model", "MLP checkpoint JSON");
      ov.add<double>(sub, "--xi", "/xi", "conservative testing width");
    }
    if (s.name == "decide") ov.add<std::string>(sub, "--queries", "/queries", "candidate CSV");
    if (s.name == "decide" || s.name == "bias" || s.name == "scaling") {
      ov.add<double>(sub, "--rt", "/rt", "threshold r_t");
    }
    if (s.name == "gradcheck") ov.add<std::size_t>(sub, "--instances", "/instances", "random instances per check");
    if (s.name == "navsim") {
      ov.add<std::size_t>(sub, "--episodes", "/episodes", "evaluation episodes");
      ov.add<std::string>(sub, "--model", "/model", "mlp, exact or none");
      ov.add<double>(sub, "--xi", "/xi", "conservative testing width");
      ov.add<std::vector<double>>(sub, "--rt", "/rt", "one or more thresholds r_t");
      ov.add<std::size_t>(sub, "--n-t", "/internal_records", "internal test records");
      ov.add<double>(sub, "--false-alarm", "/world/false_alarm", "probability a free cell reads as a hazard");
      ov.add<double>(sub, "--miss-rate", "/world/miss_rate", "probability a hazard reads as free");
      ov.add<int>(sub, "--horizon", "/world/horizon", "nominal-policy steps checked by the unsafe label");
    }
    if (s.name == "prodplan" || s.name == "scaling") ov.add<std::size_t>(sub, "--seeds", "/seeds", "number of seeds");
    if (s.name == "prodplan") ov.add<std::size_t>(sub, "--eval-hours", "/eval_hours", "evaluation hours per seed");
    apps.push_back(sub);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  for (std::size_t i = 0; i < apps.size(); ++i) {
    if (!apps[i]->parsed()) continue;
    const auto& s = subcommands()[i];
    try {
      const json cfg = resolve(s.defaults(), commons[i], overrides[i]);
      json file_seed;
      if (!commons[i].config_path.empty()) {
        const json file = json::parse(io::read_file(commons[i].config_path));
        if (file.contains("seed")) file_seed = file["seed"];
      }
      const std::uint64_t seed = resolve_seed(commons[i], file_seed);
      announce(s.name, cfg, seed);
      const fs::path out = prepare_out(commons[i].out);
      return s.run(cfg, seed, out);
    } catch (const ValidationError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitValidation;
    } catch (const std::exception& e) {
      std::cerr << "internal error: " << e.what() << "\n";
      return kExitInternal;
    }
  }
  std::cerr << app.help();
  return kExitValidation;
}

}  // namespace ccsafe::cli
