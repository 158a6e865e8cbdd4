// SPDX-License-Identifier: Apache-2.0
//
// Gauss-Legendre rules and a composite, panel-split integrator for
// vector-valued integrands.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "alflb/core.hpp"

namespace alflb {

struct GaussLegendreRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

namespace detail {

inline GaussLegendreRule compute_gauss_legendre(std::size_t n) {
  GaussLegendreRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const std::size_t half = (n + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    // Tricomi-style initial guess, then Newton on P_n.
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (std::size_t j = 2; j <= n; ++j) {
        const double pj = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / static_cast<double>(j);
        p0 = p1;
        p1 = pj;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged root for the weight.
    double p0 = 1.0, p1 = x;
    for (std::size_t j = 2; j <= n; ++j) {
      const double pj = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / static_cast<double>(j);
      p0 = p1;
      p1 = pj;
    }
    dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

}  // namespace detail

/// Cached n-point rule; safe to call concurrently.
inline const GaussLegendreRule& gauss_legendre(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<GaussLegendreRule>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<GaussLegendreRule>(detail::compute_gauss_legendre(n));
  return *slot;
}

struct QuadratureOptions {
  std::size_t initial_nodes = 64;  // per panel
  std::size_t max_nodes = 2048;    // per panel
  double tolerance = 1e-8;         // max abs change between successive doublings
  bool adaptive = true;
};

/// Sorted, de-duplicated panel boundaries clipped to [lo, hi].
inline std::vector<double> panel_breaks(double lo, double hi, std::vector<double> points) {
  points.push_back(lo);
  points.push_back(hi);
  std::vector<double> out;
  for (double x : points) {
    if (x >= lo && x <= hi) out.push_back(x);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end(), [](double a, double b) { return std::abs(a - b) < 1e-15; }),
            out.end());
  return out;
}

/// Integrates a vector-valued f over consecutive panels using n nodes each.
/// `f(v, acc, weight)` must add weight * f(v) into acc.
template <typename F>
std::vector<double> integrate_panels_fixed(const std::vector<double>& breaks, std::size_t n, std::size_t dim,
                                           F&& f) {
  const auto& rule = gauss_legendre(n);
  std::vector<double> acc(dim, 0.0);
  for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
    const double a = breaks[b];
    const double c = breaks[b + 1];
    const double half = 0.5 * (c - a);
    const double mid = 0.5 * (c + a);
    if (half <= 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      f(mid + half * rule.nodes[j], acc, half * rule.weights[j]);
    }
  }
  return acc;
}

struct QuadratureResult {
  std::vector<double> values;
  std::size_t nodes_per_panel = 0;
  double change = 0.0;  // last doubling difference (0 when not adaptive)
  bool converged = true;
};

template <typename F>
QuadratureResult integrate_panels(const std::vector<double>& breaks, std::size_t dim, F&& f,
                                  const QuadratureOptions& opts = {}) {
  QuadratureResult r;
  std::size_t n = opts.initial_nodes;
  r.values = integrate_panels_fixed(breaks, n, dim, f);
  r.nodes_per_panel = n;
  if (!opts.adaptive) return r;
  r.converged = false;
  while (2 * n <= opts.max_nodes) {
    n *= 2;
    auto next = integrate_panels_fixed(breaks, n, dim, f);
    double change = 0.0;
    for (std::size_t d = 0; d < dim; ++d) change = std::max(change, std::abs(next[d] - r.values[d]));
    r.values = std::move(next);
    r.nodes_per_panel = n;
    r.change = change;
    if (change < opts.tolerance) {
      r.converged = true;
      break;
    }
  }
  return r;
}

}  // namespace alflb
