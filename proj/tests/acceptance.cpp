// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything holds).
//
//   alflb_acceptance [--threads N] [--only i,j,...]

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "alflb/alflb.hpp"
#include "oracles.hpp"

using namespace alflb;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::size_t g_threads = 1;

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------- 1, 2, 4

struct DeterministicSuite {
  std::size_t runs = 0, pairs = 0, identity_failures = 0, stable_iterations = 0, stable_failures = 0;
  std::size_t sign_runs = 0, no_tie_pairs = 0, switches = 0, switch_failures = 0, sign_failures = 0;
  double worst_identity = 0.0, worst_sign = 0.0, seconds = 0.0;
  std::size_t max_t = 0, max_e = 0, min_iterations = 0;
  std::set<StepKind> kinds;
};

const DeterministicSuite& deterministic_suite() {
  static const DeterministicSuite suite = [] {
    DeterministicSuite s;
    const auto t0 = std::chrono::steady_clock::now();
    const StepKind kinds[] = {StepKind::DeepSeekSign, StepKind::InverseN, StepKind::InverseSqrtN, StepKind::Constant};
    const double base_u[] = {1e-3, 5e-2, 2e-2, 1e-3};
    const std::size_t iterations = 600;
    s.min_iterations = iterations;
    for (std::size_t run = 0; run < 52; ++run) {
      RandomSource rng(101, stream_id(StreamFamily::Instances, run));
      const std::size_t e = 2 + rng.below(15);         // 2..16
      const std::size_t m = 1 + rng.below(200 / e);    // T = E m <= 200
      const std::size_t t = e * m;
      const auto kind = kinds[run % 4];
      const double u = base_u[run % 4] * (0.5 + rng.uniform());
      const auto g = random_affinities(t, e, rng, {1.0, 1.0});
      const auto dims = make_dims(t, e, 1);
      const auto tr = run_deterministic(g, dims, StepSchedule(kind, u), iterations);
      ++s.runs;
      s.kinds.insert(kind);
      s.max_t = std::max(s.max_t, t);
      s.max_e = std::max(s.max_e, e);
      const double target = dims.target_load;
      for (std::size_t n = 0; n + 1 < tr.steps.size(); ++n) {
        const auto& cur = tr.steps[n];
        const auto& next = tr.steps[n + 1];
        ++s.pairs;
        const auto id = check_lagrangian_identity(cur, next, target);
        s.worst_identity = std::max(s.worst_identity, id.residual / id.scale);
        if (!id.within(1e-9)) ++s.identity_failures;
        if (const auto d = stable_pattern_delta(cur, next, target)) {
          ++s.stable_iterations;
          if (!(*d < 0.0)) ++s.stable_failures;
        }
        if (kind == StepKind::DeepSeekSign && !cur.outcome.tie_flag && !next.outcome.tie_flag) {
          ++s.no_tie_pairs;
          for (const auto& v : check_switch_direction(next.switches, cur.designations, u)) {
            ++s.switches;
            if (!v.pass()) ++s.switch_failures;
          }
          const auto ds = check_deepseek_lagrangian(cur, next, target, u);
          s.worst_sign = std::max(s.worst_sign, ds.residual / ds.scale);
          if (!ds.within(1e-9)) ++s.sign_failures;
        }
      }
      if (kind == StepKind::DeepSeekSign) ++s.sign_runs;
    }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
  }();
  return suite;
}

Outcome lagrangian_identity() {
  const auto& s = deterministic_suite();
  const bool shape = s.runs >= 50 && s.max_t <= 200 && s.max_e <= 16 && s.min_iterations >= 500 && s.kinds.size() == 4;
  return {shape && s.identity_failures == 0 && s.seconds <= 120.0,
          fmt("%zu runs, %zu iteration pairs, max relative residual %.3g, failures %zu, %.1fs", s.runs, s.pairs,
              s.worst_identity, s.identity_failures, s.seconds)};
}

Outcome switching_bounds() {
  const auto& s = deterministic_suite();
  return {s.sign_runs > 0 && s.switches > 0 && s.switch_failures == 0 && s.sign_failures == 0,
          fmt("%zu sign-step runs, %zu no-tie pairs, %zu switches audited, %zu switch violations, "
              "%zu identity violations (max residual %.3g)",
              s.sign_runs, s.no_tie_pairs, s.switches, s.switch_failures, s.sign_failures, s.worst_sign)};
}

Outcome stable_pattern_decrease() {
  const auto& s = deterministic_suite();
  return {s.stable_iterations > 0 && s.stable_failures == 0,
          fmt("%zu stable-pattern iterations, %zu without strict decrease", s.stable_iterations, s.stable_failures)};
}

// ---------------------------------------------------------------- 3

Outcome approximate_balance() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t instances = 100;
  std::vector<BalanceReport> reps(instances);
  std::vector<std::size_t> es(instances);
  std::vector<int> bad(instances, 0);
  parallel_for(instances, g_threads, [&](std::size_t s) {
    RandomSource rng(1, stream_id(StreamFamily::Instances, s));
    const std::size_t e = 2 + rng.below(7);         // 2..8
    const std::size_t m = 1 + rng.below(64 / e);    // T <= 64
    const std::size_t t = e * m;
    const auto g = random_affinities(t, e, rng, {1.0, 1.0});
    es[s] = e;
    try {
      reps[s] = check_balance_convergence(g, make_dims(t, e, 1), 0.5 * ubar(g));
    } catch (const Error&) {
      bad[s] = 1;
    }
  });
  std::size_t passed = 0, degenerate = 0, worst_iter = 0;
  for (std::size_t s = 0; s < instances; ++s) {
    if (bad[s]) {
      ++degenerate;
      continue;
    }
    if (reps[s].pass(es[s])) ++passed;
    for (const auto& it : reps[s].entered_iteration) worst_iter = std::max(worst_iter, it.value_or(0));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {passed == instances && secs <= 300.0,
          fmt("%zu/%zu instances balanced and stayed (u = ubar/2, %zu degenerate), latest entry at iteration %zu, %.1fs",
              passed, instances, degenerate, worst_iter, secs)};
}

// ---------------------------------------------------------------- 5, 6, 7

AffinityDistribution mixture(std::vector<WeightedComponent> parts) { return AffinityDistribution(std::move(parts)); }

AffinityDistributionSet heterogeneous_beta(std::size_t e, double shift) {
  std::vector<AffinityDistribution> ds;
  for (std::size_t k = 0; k < e; ++k) {
    const double a = 2.0 + shift * static_cast<double>(k);
    ds.push_back(mixture({{0.6, BetaComponent{a, 3.0, 0.0, 1.0}}, {0.4, BetaComponent{4.0, 2.0, 0.1, 0.9}}}));
  }
  return AffinityDistributionSet(std::move(ds));
}

AffinityDistributionSet shifted_uniforms(std::size_t e) {
  std::vector<AffinityDistribution> ds;
  for (std::size_t k = 0; k < e; ++k) {
    const double lo = 0.05 * static_cast<double>(k);
    ds.push_back(mixture({{0.5, UniformComponent{0.0, 1.0}}, {0.5, UniformComponent{lo, lo + 0.4}}}));
  }
  return AffinityDistributionSet(std::move(ds));
}

BiasVector seeded_bias(std::size_t e, double radius, std::uint64_t index) {
  if (radius == 0.0) return BiasVector(e);
  RandomSource rng(5, stream_id(StreamFamily::Instances, 5000 + index));
  BiasVector p(e);
  for (auto& v : p.values) v = rng.uniform(-radius, radius);
  return project_zero_sum(p);
}

struct StochasticConfig {
  std::string label;
  AffinityDistributionSet dist;
  std::size_t k, tokens;
  BiasVector p;
};

std::vector<StochasticConfig> moment_configs() {
  std::vector<StochasticConfig> c;
  const auto uni = AffinityDistribution::uniform();
  c.push_back({"uniform E=4 K=2 p=0", AffinityDistributionSet::identical(uni, 4), 2, 8, BiasVector(4)});
  c.push_back({"uniform E=3 K=1 p~", AffinityDistributionSet::identical(uni, 3), 1, 63, seeded_bias(3, 0.2, 1)});
  c.push_back({"uniform(0.2,0.8) E=6 K=3", AffinityDistributionSet::identical(AffinityDistribution::uniform(0.2, 0.8), 6),
               3, 64, seeded_bias(6, 0.1, 2)});
  c.push_back({"beta(2,5) E=6 K=2", AffinityDistributionSet::identical(AffinityDistribution::beta(2, 5), 6), 2, 60,
               seeded_bias(6, 0.1, 3)});
  c.push_back({"beta(2,2) E=5 K=1", AffinityDistributionSet::identical(AffinityDistribution::beta(2, 2), 5), 1, 40,
               seeded_bias(5, 0.15, 4)});
  c.push_back({"beta mixture E=4 K=2", heterogeneous_beta(4, 0.5), 2, 32, seeded_bias(4, 0.1, 5)});
  c.push_back({"beta mixture E=6 K=3", heterogeneous_beta(6, 0.3), 3, 64, seeded_bias(6, 0.1, 6)});
  c.push_back({"shifted uniforms E=6 K=2", shifted_uniforms(6), 2, 48, seeded_bias(6, 0.1, 7)});
  c.push_back({"shifted uniforms E=4 K=3", shifted_uniforms(4), 3, 64, BiasVector(4)});
  c.push_back({"beta(3,2) E=2 K=1", AffinityDistributionSet::identical(AffinityDistribution::beta(3, 2), 2), 1, 10,
               seeded_bias(2, 0.3, 8)});
  c.push_back({"beta mixture E=3 K=2", heterogeneous_beta(3, 1.0), 2, 30, seeded_bias(3, 0.2, 9)});
  return c;
}

Outcome gradient_moments() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto configs = moment_configs();
  std::size_t passed = 0;
  double worst = 0.0;
  std::string failed;
  for (std::size_t j = 0; j < configs.size(); ++j) {
    const auto& c = configs[j];
    const auto rep = check_gradient_moments(c.dist, c.p, c.k, c.tokens, 10000, 2024, g_threads,
                                            static_cast<std::uint64_t>(j) << 32);
    worst = std::max({worst, rep.max_mean_z(), rep.variance.z, rep.second_moment.z});
    if (rep.pass(4.0)) {
      ++passed;
    } else {
      failed += " [" + c.label + fmt(": mean z %.2f var z %.2f 2nd z %.2f]", rep.max_mean_z(), rep.variance.z,
                                     rep.second_moment.z);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {passed == configs.size() && configs.size() >= 10 && secs <= 180.0,
          fmt("%zu/%zu configurations within 4 SE at 1e4 replicas, max z %.2f, %.1fs", passed, configs.size(), worst,
              secs) +
              failed};
}

Outcome pi_agreement() {
  const auto configs = moment_configs();
  const std::size_t picks[] = {1, 2, 5, 7, 8};
  double worst_z = 0.0, worst_norm = 0.0;
  bool ok = true;
  for (auto j : picks) {
    const auto& c = configs[j];
    RandomSource rng(2024, stream_id(StreamFamily::MonteCarlo, j));
    const auto mc = pi_monte_carlo(c.dist, c.p, c.k, 1000000, rng);
    const auto q = pi_quadrature(c.dist, c.p, c.k);
    const double norm = std::abs(q.sum() - static_cast<double>(c.k));
    worst_norm = std::max(worst_norm, norm);
    ok &= norm <= 1e-6;
    for (std::size_t x = 0; x < q.size(); ++x) {
      const double z = z_score(mc.pi[x], q[x], mc.standard_error[x]);
      worst_z = std::max(worst_z, z);
      ok &= z <= 4.0;
    }
  }
  return {ok, fmt("%zu configurations at 1e6 samples, max z %.2f, max |sum pi - K| %.2e", std::size(picks), worst_z,
                  worst_norm)};
}

Outcome hessian_identity() {
  struct H {
    AffinityDistributionSet dist;
    std::size_t k;
    BiasVector p;
  };
  std::vector<H> hs;
  hs.push_back({heterogeneous_beta(4, 0.5), 2, seeded_bias(4, 0.1, 20)});
  hs.push_back({heterogeneous_beta(5, 0.4), 1, seeded_bias(5, 0.1, 21)});
  hs.push_back({heterogeneous_beta(6, 0.3), 3, seeded_bias(6, 0.1, 22)});
  hs.push_back({AffinityDistributionSet::identical(AffinityDistribution::beta(2, 3), 4), 2, BiasVector(4)});
  hs.push_back({shifted_uniforms(5), 2, seeded_bias(5, 0.1, 23)});
  std::size_t directions = 0;
  double worst = 0.0;
  bool ok = true, valid = true;
  for (std::size_t h = 0; h < hs.size(); ++h) {
    const auto& c = hs[h];
    const auto w = edge_weights_quadrature(c.dist, c.p, c.k);
    const std::size_t e = c.p.size();
    for (std::size_t a = 0; a < e; ++a)
      for (std::size_t b = 0; b < e; ++b) valid &= w(a, b) == w(b, a) && w(a, b) >= 0.0;
    RandomSource rng(7, stream_id(StreamFamily::Directions, h));
    for (std::size_t d = 0; d < 20; ++d) {
      std::vector<double> delta(e);
      double mean = 0.0;
      for (auto& x : delta) mean += (x = rng.normal());
      for (auto& x : delta) x -= mean / static_cast<double>(e);
      const double fd = directional_curvature_fd(c.dist, c.p, c.k, delta, 1e-3);
      const double rel = std::abs(w.quadratic_form(delta) - fd) / std::abs(fd);
      worst = std::max(worst, rel);
      ok &= rel <= 1e-3;
      ++directions;
    }
  }
  return {ok && valid, fmt("%zu configurations x 20 zero-sum directions, max relative error %.3g, weights %s",
                           hs.size(), worst, valid ? "symmetric and nonnegative" : "INVALID")};
}

// ---------------------------------------------------------------- 8

Outcome logarithmic_regret() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dims = make_dims(64, 8, 2);
  const auto dist = shifted_uniforms(8);
  const double kappa = 0.5;
  GridOptions grid;
  grid.points_per_axis = 9;
  grid.max_points = 100000;
  grid.seed = 1;
  grid.threads = g_threads;
  const auto conv = strong_convexity_estimate(dist, 2, 64, kappa, grid);
  const auto star = expected_loss_minimizer(dist, 2, 64, dims.target_load);
  RegretOptions o;
  o.rounds = 10000;
  o.replicas = 32;
  o.mu_hat = conv.mu_hat;
  o.p_star = star.p;
  o.kappa = kappa;
  o.seed = 1;
  o.threads = g_threads;
  const auto acc = regret_experiment(dist, dims, o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string cps;
  for (const auto& c : acc.checkpoints) cps += fmt(" R_%zu=%.1f<=%.1f", c.n, c.mean_regret, c.bound);
  std::string ratios;
  for (const auto& [n, r] : acc.ratio_series) ratios += fmt(" %zu:%.1f", n, r);
  const bool sigma_ok = std::abs(acc.sigma2 - 6144.0) < 1e-9;
  return {sigma_ok && acc.checkpoints.size() == 3 && acc.bound_holds() && acc.ratio_non_increasing() &&
              conv.c_hat > 0.0 && secs <= 1200.0,
          fmt("kappa %.1f, %zu grid points, c_hat %.4g, mu_hat %.4g, sigma^2 %.0f;", kappa, conv.points, conv.c_hat,
              conv.mu_hat, acc.sigma2) +
              cps + "; R_n/(1+ln n):" + ratios + fmt("; %.0fs", secs)};
}

// ---------------------------------------------------------------- 9

Outcome exact_identities() {
  std::size_t loss_fail = 0, grad_fail = 0, proj_fail = 0;
  double worst_loss = 0.0;
  for (std::size_t s = 0; s < 1000; ++s) {
    RandomSource rng(9, stream_id(StreamFamily::Instances, s));
    const std::size_t e = 2 + rng.below(15);
    const std::size_t t = e * (1 + rng.below(10));
    const auto g = random_affinities(t, e, rng, {1.0, 0.5});
    BiasVector p(e);
    for (auto& v : p.values) v = rng.uniform(-0.5, 0.5);
    const auto proj = project_zero_sum(p);
    const auto twice = project_zero_sum(proj);
    for (std::size_t k = 0; k < e; ++k) proj_fail += std::abs(twice[k] - proj[k]) > 1e-12;
    const double target = static_cast<double>(t) / static_cast<double>(e);
    const auto x = route_topk(g, proj, 1).assignment;
    const double diff = std::abs(online_loss(g, proj, 1, target) - lagrangian(g, x, proj, target).value);
    worst_loss = std::max(worst_loss, diff);
    loss_fail += diff > 1e-12;
    const std::size_t k = 1 + rng.below(e - 1);
    const auto grad = loss_gradient(g, proj, k, static_cast<double>(k * t) / static_cast<double>(e));
    double sum = 0.0;
    for (double v : grad) sum += v;
    grad_fail += sum != 0.0;
  }
  return {loss_fail + grad_fail + proj_fail == 0,
          fmt("1000 instances: loss mismatches %zu (max %.2e), nonzero gradient sums %zu, projection drift %zu",
              loss_fail, worst_loss, grad_fail, proj_fail)};
}

// ---------------------------------------------------------------- 10

Outcome ip_oracle() {
  const std::pair<std::size_t, std::size_t> shapes[] = {{4, 2}, {6, 2}, {8, 2}, {3, 3}, {6, 3}, {4, 4}, {8, 4}};
  std::size_t agree = 0, dominated = 0, compared = 0, instances = 0;
  double max_gap = 0.0;
  for (std::size_t s = 0; s < 50; ++s) {
    RandomSource rng(10, stream_id(StreamFamily::Instances, s));
    const auto [t, e] = shapes[s % std::size(shapes)];
    const auto g = random_affinities(t, e, rng);
    const auto dims = make_dims(t, e, 1);
    ++instances;
    const auto sol = ip_bruteforce(g, dims);
    agree += sol.value == oracle::ip_enumerate(g, t / e);
    // ALF-LB sign steps with u below u-bar until the routing is exactly balanced.
    double u = 1e-3;
    try {
      u = 0.5 * ubar(g);
    } catch (const Error&) {
    }
    const StepSchedule sched(StepKind::DeepSeekSign, u);
    BalancerState state{BiasVector(e), 1, false, std::nullopt};
    bool seen = false, ok = true;
    const std::size_t budget = std::min<std::size_t>(default_balance_budget(dims, u), 2000000);
    for (std::size_t n = 0; n < budget && !seen; ++n) {
      const auto r = route_topk(g, state.p, 1);
      if (r.loads.max() == r.loads.min()) {
        seen = true;
        double routed = 0.0;
        for (std::size_t i = 0; i < t; ++i) routed += g(i, r.assigned_experts[i][0]);
        ok = sol.value >= routed;
        max_gap = std::max(max_gap, sol.value - routed);
      }
      state = dual_update(state, r.loads, dims.target_load, sched);
    }
    compared += seen;
    dominated += seen && ok;
  }
  return {agree == instances && dominated == compared && compared > 0,
          fmt("%zu instances: brute force equals enumeration on %zu; %zu reached an exactly balanced routing, IP "
              "value >= routed affinity on %zu (max IP - routed %.3g)",
              instances, agree, compared, dominated, max_gap)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--threads" && i + 1 < argc) {
      g_threads = std::max(1, std::atoi(argv[++i]));
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::atoi(tok.c_str()));
    } else {
      std::fprintf(stderr, "usage: %s [--threads N] [--only i,j,...]\n", argv[0]);
      return 64;
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"lagrangian_identity", lagrangian_identity},
      {"deepseek_switching_bounds", switching_bounds},
      {"approximate_balance", approximate_balance},
      {"stable_pattern_decrease", stable_pattern_decrease},
      {"gradient_moments", gradient_moments},
      {"pi_quadrature_agreement", pi_agreement},
      {"hessian_identity", hessian_identity},
      {"logarithmic_regret", logarithmic_regret},
      {"exact_identity_crosschecks", exact_identities},
      {"ip_oracle_sanity", ip_oracle},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
