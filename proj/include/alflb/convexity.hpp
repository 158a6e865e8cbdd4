// SPDX-License-Identifier: Apache-2.0
//
// Curvature of the expected loss on the zero-sum subspace: a grid estimate
// of the smallest Hessian edge weight over {p : sum p = 0, diam p <= 1 - kappa},
// and the minimizer p* of T * F_K(p) - L * sum p by projected descent.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "alflb/core.hpp"
#include "alflb/distributions.hpp"
#include "alflb/dual_balancer.hpp"
#include "alflb/parallel.hpp"
#include "alflb/random.hpp"
#include "alflb/selection.hpp"

namespace alflb {

struct GridOptions {
  std::size_t points_per_axis = 9;
  std::size_t max_points = 100000;
  /// Share of sampled points pushed onto diam(p) = 1 - kappa when the full
  /// lattice exceeds max_points.
  double boundary_fraction = 0.5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  QuadratureOptions quadrature{16, 1024, 1e-10, true};
};

struct ConvexityEstimate {
  double c_hat = std::numeric_limits<double>::infinity();
  double mu_hat = 0.0;  // T * c_hat * E
  BiasVector argmin;
  std::pair<std::size_t, std::size_t> argmin_edge{0, 1};
  std::size_t points = 0;
  bool all_positive = true;
  bool exhaustive = false;  // full lattice rather than a sample
};

namespace detail {

inline double lattice_level(std::size_t j, std::size_t m, double d) {
  if (m < 2) return 0.0;
  return -d + 2.0 * d * static_cast<double>(j) / static_cast<double>(m - 1);
}

inline bool within_diameter(const std::vector<double>& q, double d) {
  const auto [lo, hi] = std::minmax_element(q.begin(), q.end());
  return *hi - *lo <= d * (1.0 + 1e-12);
}

}  // namespace detail

/// Points of dom_Z^kappa scanned by the curvature estimate. Coordinate 0 is
/// pinned at 0 and the other E-1 coordinates range over `points_per_axis`
/// levels in [-d, d], d = 1 - kappa, keeping vectors of diameter <= d; each
/// kept vector is then centred. When the lattice is larger than max_points
/// a seeded sample is drawn instead, part of it rescaled onto the boundary.
inline std::vector<BiasVector> convexity_grid(std::size_t experts, double kappa, const GridOptions& opts) {
  if (!(kappa > 0.0 && kappa <= 1.0)) throw Error(ErrorCode::InvalidRange, "kappa must lie in (0,1]");
  if (experts < 2) throw Error(ErrorCode::InvalidRange, "need at least two experts");
  const double d = 1.0 - kappa;
  const std::size_t m = std::max<std::size_t>(opts.points_per_axis, 2);
  std::vector<BiasVector> out;
  if (d == 0.0) {
    out.emplace_back(experts);
    return out;
  }
  const double lattice = std::pow(static_cast<double>(m), static_cast<double>(experts - 1));
  std::vector<double> q(experts, 0.0);
  if (lattice <= static_cast<double>(opts.max_points)) {
    std::vector<std::size_t> idx(experts - 1, 0);
    for (;;) {
      for (std::size_t j = 1; j < experts; ++j) q[j] = detail::lattice_level(idx[j - 1], m, d);
      if (detail::within_diameter(q, d)) out.push_back(project_zero_sum(BiasVector(q)));
      std::size_t pos = 0;
      while (pos < idx.size() && ++idx[pos] == m) idx[pos++] = 0;
      if (pos == idx.size()) break;
    }
    return out;
  }
  RandomSource rng(opts.seed, stream_id(StreamFamily::Grid));
  out.emplace_back(experts);
  // Two-cluster extremes: one expert at +d/2 against one at -d/2.
  for (std::size_t a = 0; a < experts && out.size() < opts.max_points; ++a) {
    for (std::size_t b = 0; b < experts && out.size() < opts.max_points; ++b) {
      if (a == b) continue;
      std::vector<double> v(experts, 0.0);
      v[a] = 0.5 * d;
      v[b] = -0.5 * d;
      out.push_back(project_zero_sum(BiasVector(v)));
    }
  }
  while (out.size() < opts.max_points) {
    for (std::size_t j = 1; j < experts; ++j) q[j] = detail::lattice_level(rng.below(m), m, d);
    if (!detail::within_diameter(q, d)) continue;
    auto v = q;
    if (rng.uniform() < opts.boundary_fraction) {
      const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      const double diam = *hi - *lo;
      if (diam > 0.0) {
        for (double& x : v) x *= d / diam;
      }
    }
    out.push_back(project_zero_sum(BiasVector(v)));
  }
  return out;
}

/// Grid minimum of min_{k<l} w_kl(p); an upper bound on the true infimum.
inline ConvexityEstimate strong_convexity_estimate(const AffinityDistributionSet& dist, std::size_t k,
                                                   std::size_t tokens, double kappa,
                                                   const GridOptions& opts = {}) {
  const auto grid = convexity_grid(dist.experts(), kappa, opts);
  std::vector<double> best(grid.size());
  std::vector<std::pair<std::size_t, std::size_t>> edge(grid.size());
  parallel_for(grid.size(), opts.threads, [&](std::size_t g) {
    const auto w = edge_weights_quadrature(dist, grid[g], k, opts.quadrature);
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < w.size(); ++a) {
      for (std::size_t b = a + 1; b < w.size(); ++b) {
        if (w(a, b) < m) {
          m = w(a, b);
          edge[g] = {a, b};
        }
      }
    }
    best[g] = m;
  });
  ConvexityEstimate out;
  out.points = grid.size();
  out.exhaustive = std::pow(static_cast<double>(std::max<std::size_t>(opts.points_per_axis, 2)),
                            static_cast<double>(dist.experts() - 1)) <= static_cast<double>(opts.max_points);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    out.all_positive &= best[g] > 0.0;
    if (best[g] < out.c_hat) {
      out.c_hat = best[g];
      out.argmin = grid[g];
      out.argmin_edge = edge[g];
    }
  }
  out.mu_hat = static_cast<double>(tokens) * out.c_hat * static_cast<double>(dist.experts());
  return out;
}

struct MinimizerOptions {
  double tolerance = 0.0;  // sup-norm of T pi - L 1; 0 selects 1e-6 * T
  std::size_t budget = 10000;
  std::optional<BiasVector> start;
  QuadratureOptions quadrature{64, 4096, 1e-12, true};
};

struct MinimizerResult {
  BiasVector p;
  double value = 0.0;
  double gradient_sup = 0.0;
  std::size_t iterations = 0;
};

/// Projected descent on f(p) = T F_K(p) - L sum p with the exact gradient
/// T pi(p) - L 1. The first step length comes from a Gershgorin bound on
/// the Hessian at the start; steps that fail to decrease f are halved.
inline MinimizerResult expected_loss_minimizer(const AffinityDistributionSet& dist, std::size_t k,
                                               std::size_t tokens, double target,
                                               const MinimizerOptions& opts = {}) {
  const std::size_t e = dist.experts();
  const auto t = static_cast<double>(tokens);
  const double tol = opts.tolerance > 0.0 ? opts.tolerance : 1e-6 * t;
  auto evaluate = [&](const BiasVector& p, std::vector<double>& grad) {
    const auto q = topk_quadrature(dist, p, k, opts.quadrature);
    grad.resize(e);
    for (std::size_t j = 0; j < e; ++j) grad[j] = t * q.pi[j] - target;
    return t * q.expected_value - target * p.sum();
  };
  auto sup = [](const std::vector<double>& g) {
    double s = 0.0;
    for (double v : g) s = std::max(s, std::abs(v));
    return s;
  };

  MinimizerResult res;
  res.p = project_zero_sum(opts.start.value_or(BiasVector(e)));
  std::vector<double> grad, trial_grad;
  res.value = evaluate(res.p, grad);
  res.gradient_sup = sup(grad);

  const auto w = edge_weights_quadrature(dist, res.p, k, opts.quadrature);
  double degree = 0.0;
  for (std::size_t a = 0; a < e; ++a) {
    double row = 0.0;
    for (std::size_t b = 0; b < e; ++b) row += w(a, b);
    degree = std::max(degree, row);
  }
  double step = degree > 0.0 ? 1.0 / (2.0 * t * degree) : 1.0 / t;

  while (res.gradient_sup > tol) {
    if (res.iterations >= opts.budget) {
      throw Error(ErrorCode::NoConvergence, "expected-loss minimizer exhausted its iteration budget");
    }
    ++res.iterations;
    BiasVector trial = res.p;
    for (std::size_t j = 0; j < e; ++j) trial[j] -= step * grad[j];
    trial = project_zero_sum(trial);
    const double value = evaluate(trial, trial_grad);
    // Near the optimum f changes by less than its rounding noise; there the
    // gradient decides. A clear decrease of f is always accepted.
    const double slack = 1e-13 * (1.0 + std::abs(res.value));
    const bool decrease = value < res.value - slack;
    const bool flat = std::abs(value - res.value) <= slack;
    if (decrease || (flat && sup(trial_grad) < res.gradient_sup)) {
      res.p = std::move(trial);
      res.value = value;
      grad.swap(trial_grad);
      res.gradient_sup = sup(grad);
      step *= 1.25;
    } else {
      step *= 0.5;
      if (step < 1e-300) throw Error(ErrorCode::NoConvergence, "step length underflow in minimizer");
    }
  }
  return res;
}

}  // namespace alflb
