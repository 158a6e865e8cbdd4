// SPDX-License-Identifier: Apache-2.0
//
// JSON experiment configuration. Every object is checked against its known
// keys; a typo in a balancing constant should stop the run, not silently
// fall back to a default.

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alflb/convexity.hpp"
#include "alflb/core.hpp"
#include "alflb/distributions.hpp"
#include "alflb/dual_balancer.hpp"
#include "alflb/instances.hpp"

namespace alflb {

using Json = nlohmann::ordered_json;

enum class ExperimentKind { DeterministicRun, BalanceCheck, MomentCheck, HessianCheck, RegretSweep, ScheduleCompare };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::DeterministicRun: return "deterministic_run";
    case ExperimentKind::BalanceCheck: return "balance_check";
    case ExperimentKind::MomentCheck: return "moment_check";
    case ExperimentKind::HessianCheck: return "hessian_check";
    case ExperimentKind::RegretSweep: return "regret_sweep";
    case ExperimentKind::ScheduleCompare: return "schedule_compare";
  }
  return "unknown";
}

inline std::optional<ExperimentKind> experiment_kind_from_string(const std::string& s) {
  for (auto k : {ExperimentKind::DeterministicRun, ExperimentKind::BalanceCheck, ExperimentKind::MomentCheck,
                 ExperimentKind::HessianCheck, ExperimentKind::RegretSweep, ExperimentKind::ScheduleCompare}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

struct Tolerances {
  double identity = 1e-9;       // relative Lagrangian residual
  double z = 4.0;               // Monte Carlo standard errors
  double hessian = 1e-3;        // relative error vs finite differences
  double fd_step = 1e-3;
  double normalization = 1e-6;  // |sum pi - K|
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::DeterministicRun;
  std::uint64_t seed = 0;
  ProblemDims dims;
  std::vector<StepSchedule> schedules;
  std::size_t iterations = 500;
  std::size_t instances = 1;
  InstanceSpec instance;
  std::optional<AffinityMatrix> affinities;
  bool zero_sum = false;
  AffinityDistributionSet distributions;
  std::vector<BiasVector> biases;
  std::size_t random_biases = 0;
  double bias_radius = 0.2;
  std::size_t replicas = 10000;
  std::size_t samples = 1000000;
  std::size_t directions = 20;
  std::size_t rounds = 10000;
  std::size_t regret_replicas = 32;
  double kappa = 0.1;
  GridOptions grid;
  double u_fraction = 0.5;
  std::size_t iteration_budget = 0;
  std::vector<std::size_t> checkpoints{100, 1000, 10000};
  std::vector<std::size_t> ratio_grid{100, 200, 500, 1000, 2000, 5000, 10000};
  bool one_step_diagnostic = false;
  Tolerances tolerances;
  std::string out_dir = "out";

  /// Fully resolved configuration, defaults included, as echoed into outputs.
  Json resolved;
};

namespace detail {

inline std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

class Reader {
 public:
  Reader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_.empty() ? "<root>" : path_, "must be an object");
  }

  [[noreturn]] static void fail(const std::string& field, const std::string& why) {
    throw Error(ErrorCode::ValidationError, "field '" + field + "' " + why);
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }
  const Json& at(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_number()) fail(name(key), "must be a number");
    return v.get<double>();
  }

  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_number_unsigned()) fail(name(key), "must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_boolean()) fail(name(key), "must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_string()) fail(name(key), "must be a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    const auto& v = at(key);
    if (!v.is_array()) fail(name(key), "must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) fail(name(key), "must be an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }

  /// Rejects keys that were never queried.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) fail(name(it.key()), "is not a recognized key");
    }
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline StepSchedule parse_schedule(const Json& j, const std::string& path, const StepSchedule& fallback) {
  Reader r(j, path);
  const auto kind_name = r.string("kind", to_string(fallback.kind));
  const auto kind = step_kind_from_string(kind_name);
  if (!kind) Reader::fail(r.name("kind"), "must be DeepSeekSign, InverseN, InverseSqrtN or Constant");
  const double u = r.number("u", fallback.u);
  if (!(u > 0.0)) Reader::fail(r.name("u"), "must be positive");
  r.finish();
  return StepSchedule(*kind, u);
}

inline Json schedule_json(const StepSchedule& s) { return Json{{"kind", to_string(s.kind)}, {"u", s.u}}; }

inline WeightedComponent parse_component(const Json& j, const std::string& path) {
  Reader r(j, path);
  const double weight = r.number("weight", 1.0);
  const auto type = r.string("type", "uniform");
  WeightedComponent c;
  c.weight = weight;
  if (type == "uniform") {
    c.component = UniformComponent{r.number("lo", 0.0), r.number("hi", 1.0)};
  } else if (type == "beta") {
    c.component = BetaComponent{r.number("a", 2.0), r.number("b", 2.0), r.number("lo", 0.0), r.number("hi", 1.0)};
  } else {
    Reader::fail(r.name("type"), "must be 'uniform' or 'beta'");
  }
  r.finish();
  return c;
}

inline AffinityDistribution parse_distribution(const Json& j, const std::string& path) {
  std::vector<WeightedComponent> parts;
  if (j.is_object() && j.contains("components")) {
    Reader r(j, path);
    const auto& comps = r.at("components");
    if (!comps.is_array() || comps.empty()) Reader::fail(r.name("components"), "must be a non-empty array");
    for (std::size_t c = 0; c < comps.size(); ++c) {
      parts.push_back(parse_component(comps[c], r.name("components[" + std::to_string(c) + "]")));
    }
    r.finish();
  } else {
    parts.push_back(parse_component(j, path));
  }
  try {
    return AffinityDistribution(std::move(parts));
  } catch (const Error& e) {
    Reader::fail(path, std::string("is not a valid distribution: ") + e.what());
  }
}

inline Json component_json(const WeightedComponent& c) {
  if (const auto* u = std::get_if<UniformComponent>(&c.component)) {
    return Json{{"type", "uniform"}, {"weight", c.weight}, {"lo", u->lo}, {"hi", u->hi}};
  }
  const auto& b = std::get<BetaComponent>(c.component);
  return Json{{"type", "beta"}, {"weight", c.weight}, {"a", b.a}, {"b", b.b}, {"lo", b.lo}, {"hi", b.hi}};
}

inline Json distribution_json(const AffinityDistribution& d) {
  Json comps = Json::array();
  for (const auto& c : d.components()) comps.push_back(component_json(c));
  return Json{{"components", comps}};
}

inline std::size_t positive_count(Reader& r, const std::string& key, std::size_t fallback) {
  const auto v = r.unsigned_int(key, fallback);
  if (v == 0) Reader::fail(r.name(key), "must be positive");
  return static_cast<std::size_t>(v);
}

inline std::vector<std::size_t> count_list(Reader& r, const std::string& key, std::vector<std::size_t> fallback) {
  if (!r.has(key)) return fallback;
  const auto& v = r.at(key);
  if (!v.is_array()) Reader::fail(r.name(key), "must be an array of positive integers");
  std::vector<std::size_t> out;
  for (const auto& x : v) {
    if (!x.is_number_unsigned() || x.get<std::uint64_t>() == 0) {
      Reader::fail(r.name(key), "must be an array of positive integers");
    }
    out.push_back(x.get<std::size_t>());
  }
  return out;
}

}  // namespace detail

/// Parses and validates a configuration document. `kind_override` (the CLI
/// subcommand) must agree with an explicit "experiment" field.
inline ExperimentConfig parse_config(const Json& doc, std::optional<ExperimentKind> kind_override = std::nullopt) {
  using detail::Reader;
  Reader r(doc, "");
  ExperimentConfig cfg;

  const auto kind_name = r.string("experiment", kind_override ? to_string(*kind_override) : "");
  if (kind_name.empty()) Reader::fail("experiment", "is required when no subcommand is given");
  const auto kind = experiment_kind_from_string(kind_name);
  if (!kind) Reader::fail("experiment", "names an unknown experiment kind '" + kind_name + "'");
  if (kind_override && *kind != *kind_override) {
    Reader::fail("experiment", "is '" + kind_name + "' but the subcommand is '" + to_string(*kind_override) + "'");
  }
  cfg.kind = *kind;
  cfg.seed = r.unsigned_int("seed", 0);

  // Shape defaults follow the E = 64, K = 6, u = 1e-3 setting.
  const auto t = r.unsigned_int("T", 256);
  const auto e = r.unsigned_int("E", 64);
  const auto k = r.unsigned_int("K", 6);
  if (t == 0) Reader::fail("T", "must be positive");
  if (e < 2) Reader::fail("E", "must be at least 2");
  if (k == 0 || k > e) Reader::fail("K", "must satisfy 1 <= K <= E");
  if (r.has("L")) {
    const double l = r.number("L", 0.0);
    if (!(l > 0.0)) Reader::fail("L", "must be positive");
    cfg.dims = make_unbalanced_dims(t, e, k, l);
  } else {
    if ((k * t) % e != 0) Reader::fail("T", "gives K*T not divisible by E; set L for an unbalanced target");
    cfg.dims = make_dims(t, e, k);
  }

  const StepSchedule base(StepKind::DeepSeekSign, 1e-3);
  if (r.has("schedules")) {
    const auto& arr = r.at("schedules");
    if (!arr.is_array() || arr.empty()) Reader::fail("schedules", "must be a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      cfg.schedules.push_back(detail::parse_schedule(arr[i], "schedules[" + std::to_string(i) + "]", base));
    }
  }
  if (r.has("schedule")) {
    if (!cfg.schedules.empty()) Reader::fail("schedule", "cannot be combined with 'schedules'");
    cfg.schedules.push_back(detail::parse_schedule(r.at("schedule"), "schedule", base));
  }
  if (cfg.schedules.empty()) {
    if (cfg.kind == ExperimentKind::ScheduleCompare) {
      cfg.schedules = {StepSchedule(StepKind::DeepSeekSign, 1e-3), StepSchedule(StepKind::InverseN, 1e-3),
                       StepSchedule(StepKind::InverseSqrtN, 1e-3)};
    } else {
      cfg.schedules = {base};
    }
  }

  cfg.iterations = detail::positive_count(r, "iterations", cfg.iterations);
  cfg.instances = detail::positive_count(r, "instances", cfg.instances);
  if (r.has("instance")) {
    Reader ir(r.at("instance"), "instance");
    cfg.instance.spread = ir.number("spread", cfg.instance.spread);
    cfg.instance.skew = ir.number("skew", cfg.instance.skew);
    if (!(cfg.instance.spread > 0.0)) Reader::fail("instance.spread", "must be positive");
    if (!(cfg.instance.skew >= 0.0)) Reader::fail("instance.skew", "must be non-negative");
    ir.finish();
  }
  if (r.has("affinities")) {
    const auto& rows = r.at("affinities");
    if (!rows.is_array()) Reader::fail("affinities", "must be an array of rows");
    std::vector<std::vector<double>> m;
    for (const auto& row : rows) {
      if (!row.is_array()) Reader::fail("affinities", "must be an array of rows");
      std::vector<double> vals;
      for (const auto& x : row) {
        if (!x.is_number()) Reader::fail("affinities", "entries must be numbers");
        vals.push_back(x.get<double>());
      }
      m.push_back(std::move(vals));
    }
    try {
      cfg.affinities = AffinityMatrix::from_rows(m);
    } catch (const Error& err) {
      Reader::fail("affinities", err.what());
    }
    if (cfg.affinities->tokens() != cfg.dims.tokens || cfg.affinities->experts() != cfg.dims.experts) {
      Reader::fail("affinities", "shape must be T x E");
    }
  }
  cfg.zero_sum = r.boolean("zero_sum", cfg.zero_sum);

  const bool has_list = r.has("distributions");
  const bool has_one = r.has("distribution");
  if (has_list && has_one) Reader::fail("distribution", "cannot be combined with 'distributions'");
  if (has_list) {
    const auto& arr = r.at("distributions");
    if (!arr.is_array() || arr.size() != cfg.dims.experts) {
      Reader::fail("distributions", "must list exactly E distributions");
    }
    std::vector<AffinityDistribution> ds;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ds.push_back(detail::parse_distribution(arr[i], "distributions[" + std::to_string(i) + "]"));
    }
    cfg.distributions = AffinityDistributionSet(std::move(ds));
  } else {
    const auto d = has_one ? detail::parse_distribution(r.at("distribution"), "distribution")
                           : AffinityDistribution::uniform();
    cfg.distributions = AffinityDistributionSet::identical(d, cfg.dims.experts);
  }

  if (r.has("biases")) {
    const auto& arr = r.at("biases");
    if (!arr.is_array()) Reader::fail("biases", "must be an array of bias vectors");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto field = "biases[" + std::to_string(i) + "]";
      if (!arr[i].is_array() || arr[i].size() != cfg.dims.experts) Reader::fail(field, "must have E entries");
      std::vector<double> v;
      for (const auto& x : arr[i]) {
        if (!x.is_number()) Reader::fail(field, "entries must be numbers");
        v.push_back(x.get<double>());
      }
      cfg.biases.emplace_back(std::move(v));
    }
  }
  cfg.random_biases = static_cast<std::size_t>(r.unsigned_int("random_biases", cfg.random_biases));
  cfg.bias_radius = r.number("bias_radius", cfg.bias_radius);
  if (!(cfg.bias_radius >= 0.0)) Reader::fail("bias_radius", "must be non-negative");
  cfg.replicas = detail::positive_count(r, "replicas", cfg.replicas);
  if (cfg.replicas < 2) Reader::fail("replicas", "must be at least 2");
  cfg.samples = detail::positive_count(r, "samples", cfg.samples);
  if (cfg.samples < 1000) Reader::fail("samples", "must be at least 1000");
  cfg.directions = detail::positive_count(r, "directions", cfg.directions);
  cfg.rounds = detail::positive_count(r, "rounds", cfg.rounds);
  cfg.regret_replicas = detail::positive_count(r, "regret_replicas", cfg.regret_replicas);
  cfg.kappa = r.number("kappa", cfg.kappa);
  if (!(cfg.kappa > 0.0 && cfg.kappa <= 1.0)) Reader::fail("kappa", "must lie in (0, 1]");
  if (r.has("grid")) {
    Reader gr(r.at("grid"), "grid");
    cfg.grid.points_per_axis = detail::positive_count(gr, "points_per_axis", cfg.grid.points_per_axis);
    cfg.grid.max_points = detail::positive_count(gr, "max_points", cfg.grid.max_points);
    cfg.grid.boundary_fraction = gr.number("boundary_fraction", cfg.grid.boundary_fraction);
    if (!(cfg.grid.boundary_fraction >= 0.0 && cfg.grid.boundary_fraction <= 1.0)) {
      Reader::fail("grid.boundary_fraction", "must lie in [0, 1]");
    }
    gr.finish();
  }
  cfg.u_fraction = r.number("u_fraction", cfg.u_fraction);
  if (!(cfg.u_fraction > 0.0 && cfg.u_fraction < 1.0)) Reader::fail("u_fraction", "must lie in (0, 1)");
  cfg.iteration_budget = static_cast<std::size_t>(r.unsigned_int("iteration_budget", cfg.iteration_budget));
  cfg.checkpoints = detail::count_list(r, "checkpoints", cfg.checkpoints);
  cfg.ratio_grid = detail::count_list(r, "ratio_grid", cfg.ratio_grid);
  cfg.one_step_diagnostic = r.boolean("one_step_diagnostic", cfg.one_step_diagnostic);
  if (r.has("tolerances")) {
    Reader tr(r.at("tolerances"), "tolerances");
    auto& tol = cfg.tolerances;
    tol.identity = tr.number("identity", tol.identity);
    tol.z = tr.number("z", tol.z);
    tol.hessian = tr.number("hessian", tol.hessian);
    tol.fd_step = tr.number("fd_step", tol.fd_step);
    tol.normalization = tr.number("normalization", tol.normalization);
    for (const auto& [key, v] : {std::pair{"identity", tol.identity}, std::pair{"z", tol.z},
                                 std::pair{"hessian", tol.hessian}, std::pair{"fd_step", tol.fd_step},
                                 std::pair{"normalization", tol.normalization}}) {
      if (!(v > 0.0)) Reader::fail(std::string("tolerances.") + key, "must be positive");
    }
    tr.finish();
  }
  if (r.has("output")) {
    Reader orr(r.at("output"), "output");
    cfg.out_dir = orr.string("dir", cfg.out_dir);
    orr.finish();
  }
  r.finish();

  if (cfg.kind == ExperimentKind::BalanceCheck) {
    if (cfg.dims.sparsity != 1) Reader::fail("K", "must be 1 for balance_check");
    if (!cfg.dims.balanced) Reader::fail("L", "cannot be set for balance_check");
  }
  if ((cfg.kind == ExperimentKind::MomentCheck || cfg.kind == ExperimentKind::HessianCheck ||
       cfg.kind == ExperimentKind::RegretSweep) &&
      !cfg.dims.balanced) {
    Reader::fail("L", "cannot be set for stochastic experiments");
  }
  if (cfg.kind == ExperimentKind::RegretSweep && cfg.dims.sparsity == cfg.dims.experts) {
    Reader::fail("K", "must be below E for regret_sweep (no curvature when every expert is selected)");
  }

  // Echo of everything that drives the run.
  Json res;
  res["experiment"] = to_string(cfg.kind);
  res["seed"] = cfg.seed;
  res["T"] = cfg.dims.tokens;
  res["E"] = cfg.dims.experts;
  res["K"] = cfg.dims.sparsity;
  res["L"] = cfg.dims.target_load;
  res["balanced"] = cfg.dims.balanced;
  Json sch = Json::array();
  for (const auto& s : cfg.schedules) sch.push_back(detail::schedule_json(s));
  res["schedules"] = sch;
  res["iterations"] = cfg.iterations;
  res["instances"] = cfg.instances;
  res["instance"] = Json{{"spread", cfg.instance.spread}, {"skew", cfg.instance.skew}};
  if (cfg.affinities) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < cfg.affinities->tokens(); ++i) {
      const auto row = cfg.affinities->row(i);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    res["affinities"] = rows;
  }
  res["zero_sum"] = cfg.zero_sum;
  Json ds = Json::array();
  for (std::size_t j = 0; j < cfg.distributions.experts(); ++j) {
    ds.push_back(detail::distribution_json(cfg.distributions[j]));
  }
  res["distributions"] = ds;
  Json bs = Json::array();
  for (const auto& b : cfg.biases) bs.push_back(b.values);
  res["biases"] = bs;
  res["random_biases"] = cfg.random_biases;
  res["bias_radius"] = cfg.bias_radius;
  res["replicas"] = cfg.replicas;
  res["samples"] = cfg.samples;
  res["directions"] = cfg.directions;
  res["rounds"] = cfg.rounds;
  res["regret_replicas"] = cfg.regret_replicas;
  res["kappa"] = cfg.kappa;
  res["grid"] = Json{{"points_per_axis", cfg.grid.points_per_axis},
                     {"max_points", cfg.grid.max_points},
                     {"boundary_fraction", cfg.grid.boundary_fraction}};
  res["u_fraction"] = cfg.u_fraction;
  res["iteration_budget"] = cfg.iteration_budget;
  res["checkpoints"] = cfg.checkpoints;
  res["ratio_grid"] = cfg.ratio_grid;
  res["one_step_diagnostic"] = cfg.one_step_diagnostic;
  res["tolerances"] = Json{{"identity", cfg.tolerances.identity},
                           {"z", cfg.tolerances.z},
                           {"hessian", cfg.tolerances.hessian},
                           {"fd_step", cfg.tolerances.fd_step},
                           {"normalization", cfg.tolerances.normalization}};
  res["output"] = Json{{"dir", cfg.out_dir}};
  cfg.resolved = std::move(res);
  return cfg;
}

inline Json parse_config_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, "config is not valid JSON at " + detail::line_column(text, e.byte));
  }
}

inline ExperimentConfig load_config(const std::string& path, std::optional<ExperimentKind> kind_override = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(parse_config_text(ss.str()), kind_override);
}

}  // namespace alflb
