// SPDX-License-Identifier: Apache-2.0
//
// Online projected dual descent with eps_n = 1 / (mu n) and its regret
// against the fixed minimizer p*, measured on paired batches:
//   R_N = sum_n f_n(p_n) - f_n(p*).
// The analytic comparison is (sigma^2 / 2 mu)(1 + ln N) with
// sigma^2 = T^2 (K - K^2 / E).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "alflb/core.hpp"
#include "alflb/distributions.hpp"
#include "alflb/dual_balancer.hpp"
#include "alflb/online.hpp"
#include "alflb/parallel.hpp"
#include "alflb/random.hpp"

namespace alflb {

inline double gradient_variance_bound(std::size_t tokens, std::size_t experts, std::size_t k) {
  const auto t = static_cast<double>(tokens);
  const auto kk = static_cast<double>(k);
  return t * t * (kk - kk * kk / static_cast<double>(experts));
}

inline double regret_bound(double sigma2, double mu, std::size_t n) {
  return sigma2 / (2.0 * mu) * (1.0 + std::log(static_cast<double>(n)));
}

struct RegretOptions {
  std::size_t rounds = 10000;
  std::size_t replicas = 32;
  double mu_hat = 0.0;
  BiasVector p_star;
  std::optional<BiasVector> start;  // p^(1); zeros by default
  std::vector<std::size_t> checkpoints{100, 1000, 10000};
  /// Rounds at which R_n / (1 + ln n) must be non-increasing.
  std::vector<std::size_t> ratio_grid{100, 200, 500, 1000, 2000, 5000, 10000};
  double kappa = 0.1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct CheckpointVerdict {
  std::size_t n = 0;
  double mean_regret = 0.0;
  double bound = 0.0;
  bool pass = false;
};

/// Per-round series averaged over replicas. Index n-1 holds round n.
struct RegretAccounting {
  std::size_t tokens = 0, experts = 0, sparsity = 0;
  std::size_t replicas = 0;
  double mu_hat = 0.0;
  double c_hat = 0.0;  // mu_hat / (T E)
  double sigma2 = 0.0;
  BiasVector p_star;

  std::vector<double> round_regret;     // a_n estimate: mean of f_n(p_n) - f_n(p*)
  std::vector<double> round_regret_se;
  std::vector<double> cumulative;       // mean R_n
  std::vector<double> bound;
  std::vector<double> delta;            // mean ||p_n - p*||^2
  std::vector<double> diameter;         // mean diam(p_n)
  std::vector<double> diameter_violations;  // share of replicas with diam > 1 - kappa
  std::vector<double> s_proxy;          // mean sum_k (A_k / T)^2
  std::vector<CheckpointVerdict> checkpoints;
  std::vector<std::pair<std::size_t, double>> ratio_series;  // (n, R_n / (1 + ln n))

  std::size_t rounds() const noexcept { return cumulative.size(); }

  bool bound_holds() const {
    return std::all_of(checkpoints.begin(), checkpoints.end(), [](const auto& c) { return c.pass; });
  }
  bool ratio_non_increasing() const {
    for (std::size_t i = 1; i < ratio_series.size(); ++i) {
      if (ratio_series[i].second > ratio_series[i - 1].second) return false;
    }
    return true;
  }
};

inline RegretAccounting regret_experiment(const AffinityDistributionSet& dist, const ProblemDims& dims,
                                          const RegretOptions& opts) {
  if (!(opts.mu_hat > 0.0)) throw Error(ErrorCode::InvalidRange, "mu estimate must be positive");
  if (opts.rounds == 0 || opts.replicas == 0) throw Error(ErrorCode::InvalidRange, "empty regret experiment");
  if (dims.experts != dist.experts() || opts.p_star.size() != dims.experts) {
    throw Error(ErrorCode::DimMismatch, "regret inputs disagree on E");
  }
  const std::size_t n_rounds = opts.rounds;
  const std::size_t e = dims.experts;
  const double target = dims.target_load;
  const auto t = static_cast<double>(dims.tokens);
  const double d = 1.0 - opts.kappa;

  // Per replica, per round: regret, ||p - p*||^2, diam, sum (A/T)^2.
  std::vector<Matrix<double>> per(opts.replicas);
  parallel_for(opts.replicas, opts.threads, [&](std::size_t r) {
    Matrix<double> rec(n_rounds, 4);
    RandomSource rng(opts.seed, stream_id(StreamFamily::Regret, r));
    BiasVector p = project_zero_sum(opts.start.value_or(BiasVector(e)));
    for (std::size_t n = 1; n <= n_rounds; ++n) {
      const auto gamma = sample_affinities(dist, dims.tokens, rng);
      const auto routed = route_topk(gamma, p, dims.sparsity);
      const double regret = online_loss(gamma, p, dims.sparsity, target) -
                            online_loss(gamma, opts.p_star, dims.sparsity, target);
      double dist2 = 0.0, s = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        const double dp = p[j] - opts.p_star[j];
        dist2 += dp * dp;
        const double share = static_cast<double>(routed.loads[j]) / t;
        s += share * share;
      }
      rec(n - 1, 0) = regret;
      rec(n - 1, 1) = dist2;
      rec(n - 1, 2) = diameter(p);
      rec(n - 1, 3) = s;
      const double eps = 1.0 / (opts.mu_hat * static_cast<double>(n));
      for (std::size_t j = 0; j < e; ++j) {
        p[j] -= eps * (static_cast<double>(routed.loads[j]) - target);
      }
      p = project_zero_sum(p);
    }
    per[r] = std::move(rec);
  });

  RegretAccounting acc;
  acc.tokens = dims.tokens;
  acc.experts = e;
  acc.sparsity = dims.sparsity;
  acc.replicas = opts.replicas;
  acc.mu_hat = opts.mu_hat;
  acc.c_hat = opts.mu_hat / (t * static_cast<double>(e));
  acc.sigma2 = gradient_variance_bound(dims.tokens, e, dims.sparsity);
  acc.p_star = opts.p_star;
  const auto reps = static_cast<double>(opts.replicas);
  double running = 0.0;
  for (std::size_t n = 0; n < n_rounds; ++n) {
    double sum = 0.0, sum_sq = 0.0, dl = 0.0, dm = 0.0, viol = 0.0, s = 0.0;
    for (std::size_t r = 0; r < opts.replicas; ++r) {
      const double x = per[r](n, 0);
      sum += x;
      sum_sq += x * x;
      dl += per[r](n, 1);
      dm += per[r](n, 2);
      viol += per[r](n, 2) > d ? 1.0 : 0.0;
      s += per[r](n, 3);
    }
    const double mean = sum / reps;
    const double var = opts.replicas > 1 ? std::max(0.0, (sum_sq - reps * mean * mean) / (reps - 1.0)) : 0.0;
    running += mean;
    acc.round_regret.push_back(mean);
    acc.round_regret_se.push_back(std::sqrt(var / reps));
    acc.cumulative.push_back(running);
    acc.bound.push_back(regret_bound(acc.sigma2, opts.mu_hat, n + 1));
    acc.delta.push_back(dl / reps);
    acc.diameter.push_back(dm / reps);
    acc.diameter_violations.push_back(viol / reps);
    acc.s_proxy.push_back(s / reps);
  }
  for (auto c : opts.checkpoints) {
    if (c == 0 || c > n_rounds) continue;
    CheckpointVerdict v{c, acc.cumulative[c - 1], acc.bound[c - 1], false};
    v.pass = v.mean_regret <= v.bound;
    acc.checkpoints.push_back(v);
  }
  for (auto c : opts.ratio_grid) {
    if (c == 0 || c > n_rounds) continue;
    acc.ratio_series.emplace_back(c, acc.cumulative[c - 1] / (1.0 + std::log(static_cast<double>(c))));
  }
  return acc;
}

/// Per-round check of 2 a_n <= (D_n - D_{n+1}) / eps_n - mu D_n + eps_n sigma^2
/// with replica means standing in for the expectations. Diagnostic only.
struct OneStepDiagnostic {
  std::size_t rounds_checked = 0;
  std::size_t violations = 0;
  double worst_excess = 0.0;  // largest lhs - rhs
};

inline OneStepDiagnostic one_step_accounting(const RegretAccounting& acc) {
  OneStepDiagnostic out;
  for (std::size_t i = 0; i + 1 < acc.rounds(); ++i) {
    const double eps = 1.0 / (acc.mu_hat * static_cast<double>(i + 1));
    const double lhs = 2.0 * acc.round_regret[i];
    const double rhs = (acc.delta[i] - acc.delta[i + 1]) / eps - acc.mu_hat * acc.delta[i] + eps * acc.sigma2;
    ++out.rounds_checked;
    if (lhs > rhs) {
      ++out.violations;
      out.worst_excess = std::max(out.worst_excess, lhs - rhs);
    }
  }
  return out;
}

inline void write_regret_csv(std::ostream& os, const RegretAccounting& acc) {
  os << "n,round_regret,mean_regret,bound,diam_p,s_n,delta_n\n";
  const auto old = os.precision(17);
  for (std::size_t i = 0; i < acc.rounds(); ++i) {
    os << (i + 1) << ',' << acc.round_regret[i] << ',' << acc.cumulative[i] << ',' << acc.bound[i] << ','
       << acc.diameter[i] << ',' << acc.s_proxy[i] << ',' << acc.delta[i] << '\n';
  }
  os.precision(old);
}

}  // namespace alflb
