// SPDX-License-Identifier: Apache-2.0
//
// Online view of the balancing loop: i.i.d. affinity batches, the per-round
// loss f(p) = sum_i sum_{k in TopK} (gamma_ik + p_k) - L sum p and its
// gradient A(p) - L, plus Monte Carlo checks on selection frequencies and
// gradient moments.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "alflb/core.hpp"
#include "alflb/distributions.hpp"
#include "alflb/parallel.hpp"
#include "alflb/random.hpp"
#include "alflb/router.hpp"
#include "alflb/selection.hpp"

namespace alflb {

/// T x E batch; column k drawn i.i.d. from distribution k. Draws are taken
/// row by row so a batch is reproducible from the generator state alone.
inline AffinityMatrix sample_affinities(const AffinityDistributionSet& dist, std::size_t tokens,
                                        RandomSource& rng) {
  const std::size_t e = dist.experts();
  Matrix<double> m(tokens, e);
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t k = 0; k < e; ++k) m(i, k) = dist[k].sample(rng);
  }
  return AffinityMatrix(std::move(m));
}

inline double online_loss(const AffinityMatrix& gamma, const BiasVector& p, std::size_t k, double target) {
  const auto routed = route_topk(gamma, p, k);
  CompensatedSum affinity;
  for (std::size_t i = 0; i < gamma.tokens(); ++i) {
    for (std::size_t e = 0; e < gamma.experts(); ++e) {
      if (routed.assignment(i, e)) {
        affinity.add(gamma(i, e));
        affinity.add(p[e]);
      }
    }
  }
  CompensatedSum bias;
  for (double v : p.values) bias.add(v);
  CompensatedSum total;
  total.add(affinity.value());
  total.add(-target * bias.value());
  return total.value();
}

inline std::vector<double> gradient_from_loads(const LoadVector& loads, double target) {
  std::vector<double> g(loads.size());
  for (std::size_t e = 0; e < loads.size(); ++e) g[e] = static_cast<double>(loads[e]) - target;
  return g;
}

/// g_k = A_k(p) - L.
inline std::vector<double> loss_gradient(const AffinityMatrix& gamma, const BiasVector& p, std::size_t k,
                                         double target) {
  return gradient_from_loads(route_topk(gamma, p, k).loads, target);
}

struct MonteCarloSelection {
  SelectionProbabilities pi;
  std::vector<double> standard_error;  // sqrt(pi (1 - pi) / samples)
  std::size_t samples = 0;
};

inline MonteCarloSelection pi_monte_carlo(const AffinityDistributionSet& dist, const BiasVector& p,
                                          std::size_t k, std::size_t samples, RandomSource& rng) {
  if (samples < 1000) throw Error(ErrorCode::InvalidRange, "Monte Carlo selection needs >= 1000 samples");
  if (p.size() != dist.experts()) throw Error(ErrorCode::DimMismatch, "bias length != E");
  if (k == 0 || k > dist.experts()) throw Error(ErrorCode::DimMismatch, "K out of range for E");
  const std::size_t e = dist.experts();
  std::vector<double> row(e), scratch;
  std::vector<std::size_t> order, chosen;
  std::vector<std::uint64_t> hits(e, 0);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < e; ++j) row[j] = dist[j].sample(rng);
    detail::select_topk_row(row, p.values, k, scratch, order, chosen);
    for (auto c : chosen) ++hits[c];
  }
  MonteCarloSelection out;
  out.samples = samples;
  out.pi.pi.resize(e);
  out.standard_error.resize(e);
  const auto n = static_cast<double>(samples);
  for (std::size_t j = 0; j < e; ++j) {
    const double f = static_cast<double>(hits[j]) / n;
    out.pi.pi[j] = f;
    out.standard_error[j] = std::sqrt(f * (1.0 - f) / n);
  }
  return out;
}

/// |estimate - expected| / se, with se = 0 treated as exact agreement only
/// when the difference is zero as well.
inline double z_score(double estimate, double expected, double se) {
  const double d = std::abs(estimate - expected);
  if (se > 0.0) return d / se;
  return d == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

struct MomentEstimate {
  double estimate = 0.0;
  double expected = 0.0;
  double standard_error = 0.0;
  double z = 0.0;
};

struct GradientMomentReport {
  SelectionProbabilities pi;  // quadrature
  std::size_t replicas = 0;
  std::vector<MomentEstimate> mean;  // per expert: E[g_k] vs T pi_k - L
  MomentEstimate variance;           // E||g - grad f||^2 vs T (K - sum pi^2)
  MomentEstimate second_moment;      // E||g||^2 vs T^2 (sum pi^2 - K^2/E) + T (K - sum pi^2)

  double max_mean_z() const {
    double z = 0.0;
    for (const auto& m : mean) z = std::max(z, m.z);
    return z;
  }
  bool pass(double z_limit = 4.0) const {
    return max_mean_z() <= z_limit && variance.z <= z_limit && second_moment.z <= z_limit;
  }
};

namespace detail {

struct RunningMoments {
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double x) {
    sum += x;
    sum_sq += x * x;
  }
  MomentEstimate finish(double expected, std::size_t n) const {
    const auto m = static_cast<double>(n);
    MomentEstimate out;
    out.estimate = sum / m;
    out.expected = expected;
    const double var = n > 1 ? std::max(0.0, (sum_sq - m * out.estimate * out.estimate) / (m - 1.0)) : 0.0;
    out.standard_error = std::sqrt(var / m);
    out.z = z_score(out.estimate, expected, out.standard_error);
    return out;
  }
};

}  // namespace detail

/// Fresh batches of T tokens at fixed p; replica r draws from stream
/// (Moments, stream_offset + r) of `seed`, so the report does not depend on
/// `threads`.
inline GradientMomentReport check_gradient_moments(const AffinityDistributionSet& dist, const BiasVector& p,
                                                   std::size_t k, std::size_t tokens, std::size_t replicas,
                                                   std::uint64_t seed, std::size_t threads = 1,
                                                   std::uint64_t stream_offset = 0,
                                                   const QuadratureOptions& opts = {}) {
  if (replicas < 2) throw Error(ErrorCode::InvalidRange, "moment check needs at least two replicas");
  const std::size_t e = dist.experts();
  GradientMomentReport rep;
  rep.pi = pi_quadrature(dist, p, k, opts);
  rep.replicas = replicas;
  const auto t = static_cast<double>(tokens);
  const double target = static_cast<double>(k) * t / static_cast<double>(e);

  // Row layout per replica: g_0..g_{E-1}, ||g - grad f||^2, ||g||^2.
  Matrix<double> draws(replicas, e + 2);
  parallel_for(replicas, threads, [&](std::size_t r) {
    RandomSource rng(seed, stream_id(StreamFamily::Moments, stream_offset + r));
    const auto gamma = sample_affinities(dist, tokens, rng);
    const auto g = loss_gradient(gamma, p, k, target);
    double dev = 0.0, norm = 0.0;
    for (std::size_t j = 0; j < e; ++j) {
      const double centered = g[j] - (t * rep.pi[j] - target);
      dev += centered * centered;
      norm += g[j] * g[j];
      draws(r, j) = g[j];
    }
    draws(r, e) = dev;
    draws(r, e + 1) = norm;
  });

  std::vector<detail::RunningMoments> acc(e + 2);
  for (std::size_t r = 0; r < replicas; ++r) {
    for (std::size_t c = 0; c < e + 2; ++c) acc[c].add(draws(r, c));
  }
  const double s2 = rep.pi.sum_squares();
  const double kk = static_cast<double>(k);
  for (std::size_t j = 0; j < e; ++j) rep.mean.push_back(acc[j].finish(t * rep.pi[j] - target, replicas));
  rep.variance = acc[e].finish(t * (kk - s2), replicas);
  rep.second_moment = acc[e + 1].finish(t * t * (s2 - kk * kk / static_cast<double>(e)) + t * (kk - s2), replicas);
  return rep;
}

}  // namespace alflb
