// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: each kind turns a validated config into CSV
// artifacts plus a JSON summary carrying verdicts and a reproducibility
// block. Checker failures are reported in the summary, never thrown.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "alflb/config.hpp"
#include "alflb/convexity.hpp"
#include "alflb/deterministic_lab.hpp"
#include "alflb/instances.hpp"
#include "alflb/online.hpp"
#include "alflb/regret.hpp"
#include "alflb/selection.hpp"

#ifndef ALFLB_BUILD_ID
#define ALFLB_BUILD_ID "unknown"
#endif

namespace alflb {

inline constexpr const char* build_id() { return ALFLB_BUILD_ID; }

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

/// Hash of the resolved configuration; output paths do not take part.
inline std::string config_hash(const ExperimentConfig& cfg) {
  Json j = cfg.resolved;
  j.erase("output");
  return hex64(fnv1a64(j.dump()));
}

struct ImbalanceMetric {
  double absolute = 0.0;    // (1/E) sum |A_k - L|
  double normalized = 0.0;  // (1/E) sum |A_k - L| / L
};

inline ImbalanceMetric report_imbalance(const LoadVector& loads, double target) {
  ImbalanceMetric m;
  if (loads.size() == 0) return m;
  m.absolute = sum_abs_imbalance(loads, target) / static_cast<double>(loads.size());
  m.normalized = target > 0.0 ? m.absolute / target : 0.0;
  return m;
}

struct Verdict {
  bool pass = true;
  Json detail = Json::object();
};

struct CsvArtifact {
  std::string name;  // file name inside the output directory
  std::string content;
};

struct RunOptions {
  std::size_t threads = 1;
  bool strict = false;  // warnings count as checker failures
};

struct RunResult {
  Json summary;
  std::vector<CsvArtifact> csv;
  std::map<std::string, Verdict> verdicts;
  std::vector<std::string> warnings;

  bool all_pass(bool strict) const {
    for (const auto& [name, v] : verdicts) {
      if (!v.pass) return false;
    }
    return !(strict && !warnings.empty());
  }
};

namespace detail {

inline std::ostringstream csv_stream() {
  std::ostringstream os;
  os.precision(17);
  return os;
}

inline AffinityMatrix config_affinities(const ExperimentConfig& cfg, std::size_t instance) {
  if (cfg.affinities && instance == 0) return *cfg.affinities;
  RandomSource rng(cfg.seed, stream_id(StreamFamily::Instances, instance));
  return random_affinities(cfg.dims.tokens, cfg.dims.experts, rng, cfg.instance);
}

// Explicit biases followed by seeded random zero-sum points with entries
// drawn from [-radius, radius] before centring; p = 0 when none are given.
inline std::vector<BiasVector> evaluation_points(const ExperimentConfig& cfg) {
  std::vector<BiasVector> pts;
  for (const auto& b : cfg.biases) pts.push_back(project_zero_sum(b));
  RandomSource rng(cfg.seed, stream_id(StreamFamily::Instances, 1u << 20));
  for (std::size_t i = 0; i < cfg.random_biases; ++i) {
    BiasVector p(cfg.dims.experts);
    for (auto& v : p.values) v = rng.uniform(-cfg.bias_radius, cfg.bias_radius);
    pts.push_back(project_zero_sum(p));
  }
  if (pts.empty()) pts.emplace_back(cfg.dims.experts);
  return pts;
}

struct DeterministicAudit {
  std::size_t pairs = 0;
  double max_identity_residual = 0.0;  // relative to 1 + |L|
  std::size_t identity_failures = 0;
  std::size_t stable_iterations = 0;
  std::size_t stable_failures = 0;
  std::size_t no_tie_pairs = 0;
  std::size_t switches_audited = 0;
  std::size_t switch_failures = 0;
  double max_sign_residual = 0.0;
  std::size_t sign_failures = 0;
  std::size_t concurrent_pairs = 0;  // same-route concurrent switches seen
  double max_concurrent_gap = 0.0;
};

inline DeterministicAudit audit_trace(const IterationTrace& trace, double tol) {
  DeterministicAudit a;
  const double target = trace.dims.target_load;
  const bool sign = trace.schedule.kind == StepKind::DeepSeekSign;
  for (std::size_t s = 0; s + 1 < trace.steps.size(); ++s) {
    const auto& cur = trace.steps[s];
    const auto& next = trace.steps[s + 1];
    ++a.pairs;
    const auto id = check_lagrangian_identity(cur, next, target);
    a.max_identity_residual = std::max(a.max_identity_residual, id.residual / id.scale);
    if (!id.within(tol)) ++a.identity_failures;
    if (const auto d = stable_pattern_delta(cur, next, target)) {
      ++a.stable_iterations;
      if (!(*d < 0.0)) ++a.stable_failures;
    }
    if (const auto g = max_concurrent_gap_difference(next.switches)) {
      ++a.concurrent_pairs;
      a.max_concurrent_gap = std::max(a.max_concurrent_gap, *g);
    }
    if (sign && !cur.outcome.tie_flag && !next.outcome.tie_flag) {
      ++a.no_tie_pairs;
      for (const auto& v : check_switch_direction(next.switches, cur.designations, trace.schedule.u)) {
        ++a.switches_audited;
        if (!v.pass()) ++a.switch_failures;
      }
      const auto ds = check_deepseek_lagrangian(cur, next, target, trace.schedule.u);
      a.max_sign_residual = std::max(a.max_sign_residual, ds.residual / ds.scale);
      if (!ds.within(tol)) ++a.sign_failures;
    }
  }
  return a;
}

inline Json audit_json(const DeterministicAudit& a) {
  return Json{{"iteration_pairs", a.pairs},
              {"max_identity_residual", a.max_identity_residual},
              {"identity_failures", a.identity_failures},
              {"stable_pattern_iterations", a.stable_iterations},
              {"stable_pattern_failures", a.stable_failures},
              {"no_tie_pairs", a.no_tie_pairs},
              {"switches_audited", a.switches_audited},
              {"switch_failures", a.switch_failures},
              {"max_sign_identity_residual", a.max_sign_residual},
              {"sign_identity_failures", a.sign_failures},
              {"concurrent_same_route_iterations", a.concurrent_pairs},
              {"max_concurrent_gap_difference", a.max_concurrent_gap}};
}

inline void add_audit_verdicts(RunResult& res, const std::string& prefix, const DeterministicAudit& a,
                               bool sign) {
  const std::string p = prefix.empty() ? "" : prefix + ".";
  res.verdicts[p + "lagrangian_identity"] = {a.identity_failures == 0,
                                             {{"max_residual", a.max_identity_residual},
                                              {"failures", a.identity_failures}}};
  res.verdicts[p + "stable_pattern_decrease"] = {a.stable_failures == 0,
                                                 {{"iterations", a.stable_iterations},
                                                  {"failures", a.stable_failures}}};
  if (sign) {
    res.verdicts[p + "switching_bounds"] = {a.switch_failures == 0 && a.sign_failures == 0,
                                            {{"switches", a.switches_audited},
                                             {"switch_failures", a.switch_failures},
                                             {"sign_identity_failures", a.sign_failures},
                                             {"no_tie_pairs", a.no_tie_pairs}}};
  }
}

inline RunResult run_deterministic_experiment(const ExperimentConfig& cfg, const RunOptions&) {
  RunResult res;
  const auto gamma = config_affinities(cfg, 0);
  const auto& sched = cfg.schedules.front();
  const auto trace = run_deterministic(gamma, cfg.dims, sched, cfg.iterations, std::nullopt, cfg.zero_sum);
  auto os = csv_stream();
  write_trace_csv(os, trace);
  res.csv.push_back({"trace.csv", os.str()});
  const auto& last = trace.steps.back();
  const auto imb = report_imbalance(last.outcome.loads, cfg.dims.target_load);
  res.summary["final_loads"] = last.outcome.loads.counts;
  res.summary["final_bias"] = last.p.values;
  res.summary["final_imbalance"] = Json{{"absolute", imb.absolute}, {"normalized", imb.normalized}};
  bool ties = false;
  for (const auto& s : trace.steps) ties |= s.outcome.tie_flag;
  if (ties) res.warnings.push_back("ties in shifted scores occurred; those iterations skip the switching audit");
  if (cfg.dims.sparsity == 1) {
    const auto audit = audit_trace(trace, cfg.tolerances.identity);
    res.summary["audit"] = audit_json(audit);
    add_audit_verdicts(res, "", audit, sched.kind == StepKind::DeepSeekSign);
  } else {
    res.warnings.push_back("K > 1: switching and Lagrangian checkers are defined for K = 1 and were skipped");
  }
  return res;
}

inline RunResult run_schedule_compare(const ExperimentConfig& cfg, const RunOptions&) {
  RunResult res;
  const auto gamma = config_affinities(cfg, 0);
  std::vector<IterationTrace> traces;
  for (const auto& s : cfg.schedules) {
    traces.push_back(run_deterministic(gamma, cfg.dims, s, cfg.iterations, std::nullopt, cfg.zero_sum));
  }
  auto os = csv_stream();
  os << "n";
  std::map<std::string, int> seen;
  std::vector<std::string> labels;
  for (const auto& s : cfg.schedules) {
    std::string label = to_string(s.kind);
    if (seen[label]++ > 0) label += "_" + std::to_string(seen[label]);
    labels.push_back(label);
    os << ",imbalance_abs_" << label << ",imbalance_rel_" << label;
  }
  os << '\n';
  for (std::size_t n = 0; n < cfg.iterations; ++n) {
    os << traces.front().steps[n].n;
    for (const auto& tr : traces) {
      const auto m = report_imbalance(tr.steps[n].outcome.loads, cfg.dims.target_load);
      os << ',' << m.absolute << ',' << m.normalized;
    }
    os << '\n';
  }
  res.csv.push_back({"schedule_compare.csv", os.str()});
  Json per = Json::object();
  for (std::size_t s = 0; s < traces.size(); ++s) {
    const auto& last = traces[s].steps.back();
    const auto m = report_imbalance(last.outcome.loads, cfg.dims.target_load);
    double mean_abs = 0.0;
    for (const auto& st : traces[s].steps) mean_abs += report_imbalance(st.outcome.loads, cfg.dims.target_load).absolute;
    mean_abs /= static_cast<double>(traces[s].steps.size());
    Json entry{{"schedule", detail::schedule_json(cfg.schedules[s])},
               {"final_imbalance_abs", m.absolute},
               {"final_imbalance_rel", m.normalized},
               {"mean_imbalance_abs", mean_abs}};
    if (cfg.dims.sparsity == 1) {
      const auto audit = audit_trace(traces[s], cfg.tolerances.identity);
      entry["audit"] = audit_json(audit);
      add_audit_verdicts(res, labels[s], audit, cfg.schedules[s].kind == StepKind::DeepSeekSign);
    }
    per[labels[s]] = entry;
  }
  res.summary["schedules"] = per;
  if (cfg.dims.sparsity != 1) res.warnings.push_back("K > 1: Lagrangian checkers skipped");
  return res;
}

inline RunResult run_balance_check(const ExperimentConfig& cfg, const RunOptions& ro) {
  RunResult res;
  struct Row {
    bool degenerate = false;
    BalanceReport rep;
  };
  std::vector<Row> rows(cfg.instances);
  parallel_for(cfg.instances, ro.threads, [&](std::size_t j) {
    const auto gamma = config_affinities(cfg, j);
    double ub = 0.0;
    try {
      ub = ubar(gamma);
    } catch (const Error&) {
      rows[j].degenerate = true;
      return;
    }
    BalanceOptions opts;
    opts.iteration_budget = cfg.iteration_budget;
    rows[j].rep = check_balance_convergence(gamma, cfg.dims, cfg.u_fraction * ub, opts);
  });
  auto os = csv_stream();
  os << "instance,ubar,u,iterations,budget,converged,stayed,fixed_point,tie_seen,max_load_change,last_entry,pass\n";
  std::size_t passed = 0, degenerate = 0, checked = 0;
  const std::size_t e = cfg.dims.experts;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j].degenerate) {
      ++degenerate;
      os << j << ",0,0,0,0,0,0,0,0,0,,skipped\n";
      continue;
    }
    ++checked;
    const auto& r = rows[j].rep;
    std::size_t last = 0;
    for (const auto& it : r.entered_iteration) last = std::max(last, it.value_or(0));
    const bool ok = r.pass(e);
    passed += ok ? 1 : 0;
    os << j << ',' << r.ubar << ',' << r.u << ',' << r.iterations_run << ',' << r.budget << ',' << r.converged
       << ',' << r.stayed << ',' << r.fixed_point << ',' << r.tie_seen << ',' << r.max_load_change << ','
       << last << ',' << (ok ? "pass" : "fail") << '\n';
  }
  res.csv.push_back({"balance.csv", os.str()});
  if (degenerate) {
    res.warnings.push_back(std::to_string(degenerate) + " instance(s) had duplicate score gaps and were skipped");
  }
  res.verdicts["approximate_balance"] = {passed == checked && checked > 0,
                                         {{"passed", passed}, {"checked", checked}, {"skipped", degenerate}}};
  res.summary["band"] = Json{{"lo", cfg.dims.target_load - static_cast<double>(e - 1)},
                             {"hi", cfg.dims.target_load + static_cast<double>(e - 1)}};
  return res;
}

inline RunResult run_moment_check(const ExperimentConfig& cfg, const RunOptions& ro) {
  RunResult res;
  const auto pts = evaluation_points(cfg);
  const std::size_t e = cfg.dims.experts;
  const std::size_t k = cfg.dims.sparsity;
  auto pi_csv = csv_stream();
  pi_csv << "point,expert,pi_quadrature,pi_monte_carlo,pi_se,pi_z,grad_mean,grad_expected,grad_se,grad_z\n";
  auto mom_csv = csv_stream();
  mom_csv << "point,sum_pi_sq,variance_est,variance_expected,variance_se,variance_z,second_est,second_expected,"
             "second_se,second_z\n";
  bool moments_ok = true, agree_ok = true, norm_ok = true;
  double worst_z = 0.0, worst_pi_z = 0.0, worst_norm = 0.0;
  std::vector<MonteCarloSelection> mcs(pts.size());
  parallel_for(pts.size(), ro.threads, [&](std::size_t j) {
    RandomSource rng(cfg.seed, stream_id(StreamFamily::MonteCarlo, j));
    mcs[j] = pi_monte_carlo(cfg.distributions, pts[j], k, cfg.samples, rng);
  });
  for (std::size_t j = 0; j < pts.size(); ++j) {
    const auto rep = check_gradient_moments(cfg.distributions, pts[j], k, cfg.dims.tokens, cfg.replicas, cfg.seed,
                                            ro.threads, static_cast<std::uint64_t>(j) << 32);
    const auto& mc = mcs[j];
    moments_ok &= rep.pass(cfg.tolerances.z);
    worst_z = std::max({worst_z, rep.max_mean_z(), rep.variance.z, rep.second_moment.z});
    const double norm = std::abs(rep.pi.sum() - static_cast<double>(k));
    worst_norm = std::max(worst_norm, norm);
    norm_ok &= norm <= cfg.tolerances.normalization;
    for (std::size_t x = 0; x < e; ++x) {
      const double z = z_score(mc.pi[x], rep.pi[x], mc.standard_error[x]);
      worst_pi_z = std::max(worst_pi_z, z);
      agree_ok &= z <= cfg.tolerances.z;
      const auto& m = rep.mean[x];
      pi_csv << j << ',' << x << ',' << rep.pi[x] << ',' << mc.pi[x] << ',' << mc.standard_error[x] << ',' << z
             << ',' << m.estimate << ',' << m.expected << ',' << m.standard_error << ',' << m.z << '\n';
    }
    const auto& v = rep.variance;
    const auto& s = rep.second_moment;
    mom_csv << j << ',' << rep.pi.sum_squares() << ',' << v.estimate << ',' << v.expected << ','
            << v.standard_error << ',' << v.z << ',' << s.estimate << ',' << s.expected << ',' << s.standard_error
            << ',' << s.z << '\n';
  }
  res.csv.push_back({"selection.csv", pi_csv.str()});
  res.csv.push_back({"moments.csv", mom_csv.str()});
  res.summary["points"] = pts.size();
  res.verdicts["gradient_moments"] = {moments_ok, {{"max_z", worst_z}, {"limit", cfg.tolerances.z}}};
  res.verdicts["pi_agreement"] = {agree_ok, {{"max_z", worst_pi_z}, {"limit", cfg.tolerances.z}}};
  res.verdicts["pi_normalization"] = {norm_ok, {{"max_deviation", worst_norm}, {"limit", cfg.tolerances.normalization}}};
  return res;
}

inline std::vector<double> random_zero_sum_direction(std::size_t e, RandomSource& rng) {
  std::vector<double> d(e);
  double mean = 0.0;
  for (auto& x : d) {
    x = rng.normal();
    mean += x;
  }
  mean /= static_cast<double>(e);
  double norm = 0.0;
  for (auto& x : d) {
    x -= mean;
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : d) x /= norm;
  return d;
}

inline RunResult run_hessian_check(const ExperimentConfig& cfg, const RunOptions& ro) {
  RunResult res;
  const auto pts = evaluation_points(cfg);
  const std::size_t e = cfg.dims.experts;
  const std::size_t k = cfg.dims.sparsity;
  struct PointResult {
    EdgeWeights w;
    std::vector<std::vector<double>> dirs;
    std::vector<double> qf, fd;
  };
  std::vector<PointResult> out(pts.size());
  parallel_for(pts.size(), ro.threads, [&](std::size_t j) {
    auto& r = out[j];
    r.w = edge_weights_quadrature(cfg.distributions, pts[j], k);
    RandomSource rng(cfg.seed, stream_id(StreamFamily::Directions, j));
    for (std::size_t d = 0; d < cfg.directions; ++d) {
      r.dirs.push_back(random_zero_sum_direction(e, rng));
      r.qf.push_back(r.w.quadratic_form(r.dirs.back()));
      r.fd.push_back(directional_curvature_fd(cfg.distributions, pts[j], k, r.dirs.back(), cfg.tolerances.fd_step));
    }
  });
  auto os = csv_stream();
  os << "point,direction,quadratic_form,finite_difference,relative_error\n";
  bool ok = true, sym = true, nonneg = true, zs = true;
  double worst = 0.0, worst_zs = 0.0, min_w = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < pts.size(); ++j) {
    const auto& r = out[j];
    for (std::size_t a = 0; a < e; ++a) {
      for (std::size_t b = 0; b < e; ++b) {
        sym &= r.w(a, b) == r.w(b, a);
        nonneg &= r.w(a, b) >= 0.0;
        if (a != b) min_w = std::min(min_w, r.w(a, b));
      }
    }
    for (std::size_t d = 0; d < r.dirs.size(); ++d) {
      const double rel = std::abs(r.qf[d] - r.fd[d]) / std::max(std::abs(r.fd[d]), 1e-300);
      worst = std::max(worst, rel);
      ok &= rel <= cfg.tolerances.hessian;
      double pairs = 0.0, sq = 0.0;
      for (std::size_t a = 0; a < e; ++a) {
        sq += r.dirs[d][a] * r.dirs[d][a];
        for (std::size_t b = a + 1; b < e; ++b) pairs += (r.dirs[d][a] - r.dirs[d][b]) * (r.dirs[d][a] - r.dirs[d][b]);
      }
      const double dev = std::abs(pairs - static_cast<double>(e) * sq);
      worst_zs = std::max(worst_zs, dev);
      zs &= dev <= 1e-12;
      os << j << ',' << d << ',' << r.qf[d] << ',' << r.fd[d] << ',' << rel << '\n';
    }
  }
  res.csv.push_back({"hessian.csv", os.str()});
  res.summary["points"] = pts.size();
  res.summary["min_edge_weight"] = min_w;
  res.verdicts["hessian_identity"] = {ok, {{"max_relative_error", worst}, {"limit", cfg.tolerances.hessian}}};
  res.verdicts["edge_weights_valid"] = {sym && nonneg, {{"symmetric", sym}, {"nonnegative", nonneg}}};
  res.verdicts["zero_sum_pair_identity"] = {zs, {{"max_deviation", worst_zs}}};
  return res;
}

inline RunResult run_regret_sweep(const ExperimentConfig& cfg, const RunOptions& ro) {
  RunResult res;
  const std::size_t k = cfg.dims.sparsity;
  GridOptions grid = cfg.grid;
  grid.seed = cfg.seed;
  grid.threads = ro.threads;
  const auto conv = strong_convexity_estimate(cfg.distributions, k, cfg.dims.tokens, cfg.kappa, grid);
  if (!(conv.c_hat > 0.0)) {
    res.verdicts["curvature_positive"] = {false, {{"c_hat", conv.c_hat}}};
    return res;
  }
  const auto star = expected_loss_minimizer(cfg.distributions, k, cfg.dims.tokens, cfg.dims.target_load);
  RegretOptions opts;
  opts.rounds = cfg.rounds;
  opts.replicas = cfg.regret_replicas;
  opts.mu_hat = conv.mu_hat;
  opts.p_star = star.p;
  opts.checkpoints = cfg.checkpoints;
  opts.ratio_grid = cfg.ratio_grid;
  opts.kappa = cfg.kappa;
  opts.seed = cfg.seed;
  opts.threads = ro.threads;
  const auto acc = regret_experiment(cfg.distributions, cfg.dims, opts);
  auto os = csv_stream();
  write_regret_csv(os, acc);
  res.csv.push_back({"regret.csv", os.str()});

  res.summary["c_hat"] = conv.c_hat;
  res.summary["mu_hat"] = conv.mu_hat;
  res.summary["grid_points"] = conv.points;
  res.summary["grid_argmin"] = conv.argmin.values;
  res.summary["sigma2"] = acc.sigma2;
  res.summary["p_star"] = star.p.values;
  res.summary["p_star_gradient_sup"] = star.gradient_sup;
  Json cps = Json::array();
  bool bound_ok = true;
  for (const auto& c : acc.checkpoints) {
    cps.push_back(Json{{"n", c.n}, {"mean_regret", c.mean_regret}, {"bound", c.bound}, {"pass", c.pass}});
    bound_ok &= c.pass;
  }
  res.summary["checkpoints"] = cps;
  Json ratio = Json::array();
  for (const auto& [n, v] : acc.ratio_series) ratio.push_back(Json{{"n", n}, {"ratio", v}});
  res.summary["ratio_series"] = ratio;
  double late_violations = 0.0;
  for (std::size_t i = acc.rounds() / 2; i < acc.rounds(); ++i) late_violations = std::max(late_violations, acc.diameter_violations[i]);
  res.summary["max_diameter_violation_share_second_half"] = late_violations;
  if (late_violations > 0.0) res.warnings.push_back("iterates exceeded the diameter bound in the second half of the run");
  if (cfg.one_step_diagnostic) {
    const auto diag = one_step_accounting(acc);
    res.summary["one_step_diagnostic"] = Json{{"rounds", diag.rounds_checked},
                                              {"violations", diag.violations},
                                              {"worst_excess", diag.worst_excess}};
  }
  res.verdicts["regret_bound"] = {bound_ok && !acc.checkpoints.empty(), {{"checkpoints", acc.checkpoints.size()}}};
  res.verdicts["regret_ratio_non_increasing"] = {acc.ratio_non_increasing(), {{"points", acc.ratio_series.size()}}};
  return res;
}

}  // namespace detail

/// Runs the configured experiment and assembles the summary document.
inline RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& ro = {}) {
  RunResult res;
  switch (cfg.kind) {
    case ExperimentKind::DeterministicRun: res = detail::run_deterministic_experiment(cfg, ro); break;
    case ExperimentKind::BalanceCheck: res = detail::run_balance_check(cfg, ro); break;
    case ExperimentKind::MomentCheck: res = detail::run_moment_check(cfg, ro); break;
    case ExperimentKind::HessianCheck: res = detail::run_hessian_check(cfg, ro); break;
    case ExperimentKind::RegretSweep: res = detail::run_regret_sweep(cfg, ro); break;
    case ExperimentKind::ScheduleCompare: res = detail::run_schedule_compare(cfg, ro); break;
  }
  const auto hash = config_hash(cfg);
  Json summary;
  summary["experiment"] = to_string(cfg.kind);
  summary["config_hash"] = hash;
  summary["reproducibility"] = Json{{"seed", cfg.seed}, {"config_hash", hash}, {"build_id", build_id()},
                                    {"parallel", ro.threads}, {"strict", ro.strict}};
  summary["config"] = cfg.resolved;
  Json verdicts = Json::object(), details = Json::object();
  for (const auto& [name, v] : res.verdicts) {
    verdicts[name] = v.pass ? "pass" : "fail";
    details[name] = v.detail;
  }
  summary["verdicts"] = verdicts;
  summary["verdict_details"] = details;
  summary["warnings"] = res.warnings;
  summary["results"] = res.summary;
  summary["all_pass"] = res.all_pass(ro.strict);
  res.summary = std::move(summary);
  return res;
}

/// Writes every CSV (with a leading provenance comment) and summary.json
/// into the output directory.
inline void write_artifacts(const RunResult& res, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create output directory '" + dir + "': " + ec.message());
  const auto hash = res.summary.at("config_hash").get<std::string>();
  auto write = [&](const std::string& name, const std::string& body) {
    const auto path = std::filesystem::path(dir) / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    out << body;
    if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
  };
  for (const auto& c : res.csv) write(c.name, "# config_hash=" + hash + "\n" + c.content);
  write("summary.json", res.summary.dump(2) + "\n");
}

}  // namespace alflb
