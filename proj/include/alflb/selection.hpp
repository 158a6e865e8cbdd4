// SPDX-License-Identifier: Apache-2.0
//
// Quadrature for Top-K selection under independent per-expert affinities.
//
// Working in the shifted frame v = Gamma_k + p_k, expert k is selected iff
// fewer than K other experts j have Gamma_j + p_j > v, so
//
//   pi_k(p)  = int phi_k(v - p_k) Q_k(v) dv,
//   Q_k(v)   = sum_{S not containing k, |S| < K} prod_{j in S} Phi^c_j(v - p_j)
//                                                prod_{m not in S, m != k} Phi_m(v - p_m),
//   w_kl(p)  = int phi_k(v - p_k) phi_l(v - p_l) B_kl(v) dv,
//
// where B_kl sums the same products over |S| = K - 1 with k, l excluded.
// The subsets are enumerated explicitly.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "alflb/core.hpp"
#include "alflb/distributions.hpp"
#include "alflb/quadrature.hpp"

namespace alflb {

inline constexpr double kMaxEnumeratedTerms = 1e6;

struct SelectionProbabilities {
  std::vector<double> pi;

  std::size_t size() const noexcept { return pi.size(); }
  double operator[](std::size_t k) const { return pi[k]; }
  double sum() const {
    double s = 0.0;
    for (double v : pi) s += v;
    return s;
  }
  double sum_squares() const {
    double s = 0.0;
    for (double v : pi) s += v * v;
    return s;
  }
};

/// Symmetric E x E matrix of nonnegative Hessian edge weights, zero diagonal.
struct EdgeWeights {
  Matrix<double> w;

  std::size_t size() const noexcept { return w.rows(); }
  double operator()(std::size_t k, std::size_t l) const { return w(k, l); }

  double min_offdiagonal() const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < w.rows(); ++k) {
      for (std::size_t l = k + 1; l < w.cols(); ++l) m = std::min(m, w(k, l));
    }
    return m;
  }

  /// sum_{k<l} w_kl (delta_k - delta_l)^2.
  double quadratic_form(const std::vector<double>& delta) const {
    double s = 0.0;
    for (std::size_t k = 0; k < w.rows(); ++k) {
      for (std::size_t l = k + 1; l < w.cols(); ++l) {
        const double d = delta[k] - delta[l];
        s += w(k, l) * d * d;
      }
    }
    return s;
  }
};

inline double binomial(std::size_t n, std::size_t r) {
  if (r > n) return 0.0;
  double c = 1.0;
  for (std::size_t i = 1; i <= r; ++i) c = c * static_cast<double>(n - r + i) / static_cast<double>(i);
  return c;
}

inline double selection_term_count(std::size_t experts, std::size_t k) {
  double s = 0.0;
  for (std::size_t r = 0; r < k; ++r) s += binomial(experts - 1, r);
  return s;
}

inline double edge_term_count(std::size_t experts, std::size_t k) {
  return experts < 2 ? 0.0 : binomial(experts - 2, k - 1);
}

namespace detail {

inline std::vector<std::uint64_t> masks_with_popcount(std::size_t experts, std::size_t lo, std::size_t hi) {
  std::vector<std::uint64_t> out;
  const std::uint64_t limit = std::uint64_t{1} << experts;
  for (std::uint64_t m = 0; m < limit; ++m) {
    const auto c = static_cast<std::size_t>(std::popcount(m));
    if (c >= lo && c <= hi) out.push_back(m);
  }
  return out;
}

inline void check_selection_inputs(const AffinityDistributionSet& dist, const BiasVector& p, std::size_t k) {
  if (p.size() != dist.experts()) throw Error(ErrorCode::DimMismatch, "bias length != E");
  if (k == 0 || k > dist.experts()) throw Error(ErrorCode::DimMismatch, "K out of range for E");
  if (dist.experts() > 30) throw Error(ErrorCode::TooManyTerms, "subset enumeration supports E <= 30");
}

// CDF values of every expert at v - p_j, shared by all integrands at a node.
struct ShiftedFrame {
  std::vector<double> cdf, ccdf, pdf;

  void evaluate(const AffinityDistributionSet& dist, const BiasVector& p, double v, bool need_pdf) {
    const std::size_t e = dist.experts();
    cdf.resize(e);
    ccdf.resize(e);
    pdf.resize(e);
    for (std::size_t j = 0; j < e; ++j) {
      const double x = v - p[j];
      cdf[j] = dist[j].cdf(x);
      ccdf[j] = dist[j].ccdf(x);
      pdf[j] = need_pdf ? dist[j].pdf(x) : 0.0;
    }
  }

  // prod_{j in mask} ccdf_j * prod_{j not in mask, j not in skip} cdf_j
  double product(std::uint64_t mask, std::uint64_t skip) const {
    double prod = 1.0;
    for (std::size_t j = 0; j < cdf.size(); ++j) {
      const std::uint64_t bit = std::uint64_t{1} << j;
      if (skip & bit) continue;
      prod *= (mask & bit) ? ccdf[j] : cdf[j];
    }
    return prod;
  }
};

inline std::vector<double> shifted_breaks(const AffinityDistributionSet& dist, const BiasVector& p) {
  std::vector<double> pts;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t j = 0; j < dist.experts(); ++j) {
    for (double b : dist[j].breakpoints()) pts.push_back(b + p[j]);
    lo = std::min(lo, dist[j].support_lo() + p[j]);
    hi = std::max(hi, dist[j].support_hi() + p[j]);
  }
  return panel_breaks(lo, hi, std::move(pts));
}

}  // namespace detail

struct TopKQuadrature {
  SelectionProbabilities pi;
  /// F_K(p) = E[sum over the selected k of (Gamma_k + p_k)] for one token.
  double expected_value = 0.0;
  QuadratureResult diagnostics;
};

inline TopKQuadrature topk_quadrature(const AffinityDistributionSet& dist, const BiasVector& p, std::size_t k,
                                      const QuadratureOptions& opts = {}) {
  detail::check_selection_inputs(dist, p, k);
  const std::size_t e = dist.experts();
  if (static_cast<double>(e) * selection_term_count(e, k) > kMaxEnumeratedTerms) {
    throw Error(ErrorCode::TooManyTerms, "selection subsets exceed enumeration guard");
  }
  const auto masks = detail::masks_with_popcount(e, 0, k - 1);
  const auto breaks = detail::shifted_breaks(dist, p);
  detail::ShiftedFrame frame;
  // acc[0..e) accumulates pi_k, acc[e..2e) accumulates v * phi_k * Q_k.
  auto integrand = [&](double v, std::vector<double>& acc, double weight) {
    frame.evaluate(dist, p, v, true);
    for (std::size_t kk = 0; kk < e; ++kk) {
      if (frame.pdf[kk] == 0.0) continue;
      const std::uint64_t self = std::uint64_t{1} << kk;
      double q = 0.0;
      for (auto m : masks) {
        if (m & self) continue;
        q += frame.product(m, self);
      }
      const double c = weight * frame.pdf[kk] * q;
      acc[kk] += c;
      acc[e + kk] += c * v;
    }
  };
  TopKQuadrature out;
  out.diagnostics = integrate_panels(breaks, 2 * e, integrand, opts);
  out.pi.pi.assign(out.diagnostics.values.begin(), out.diagnostics.values.begin() + static_cast<std::ptrdiff_t>(e));
  for (std::size_t kk = 0; kk < e; ++kk) out.expected_value += out.diagnostics.values[e + kk];
  return out;
}

inline SelectionProbabilities pi_quadrature(const AffinityDistributionSet& dist, const BiasVector& p,
                                            std::size_t k, const QuadratureOptions& opts = {}) {
  return topk_quadrature(dist, p, k, opts).pi;
}

/// Expected online loss T * F_K(p) - L * sum p.
inline double expected_loss(const AffinityDistributionSet& dist, const BiasVector& p, std::size_t k,
                            std::size_t tokens, double target, const QuadratureOptions& opts = {}) {
  const auto q = topk_quadrature(dist, p, k, opts);
  return static_cast<double>(tokens) * q.expected_value - target * p.sum();
}

inline EdgeWeights edge_weights_quadrature(const AffinityDistributionSet& dist, const BiasVector& p,
                                           std::size_t k, const QuadratureOptions& opts = {}) {
  detail::check_selection_inputs(dist, p, k);
  const std::size_t e = dist.experts();
  if (edge_term_count(e, k) * binomial(e, 2) > kMaxEnumeratedTerms) {
    throw Error(ErrorCode::TooManyTerms, "edge-weight subsets exceed enumeration guard");
  }
  EdgeWeights out{Matrix<double>(e, e, 0.0)};
  if (k == e) return out;  // every expert always selected: no curvature
  const auto masks = detail::masks_with_popcount(e, k - 1, k - 1);
  const auto breaks = detail::shifted_breaks(dist, p);
  const std::size_t pairs = e * (e - 1) / 2;
  detail::ShiftedFrame frame;
  auto integrand = [&](double v, std::vector<double>& acc, double weight) {
    frame.evaluate(dist, p, v, true);
    std::size_t idx = 0;
    for (std::size_t a = 0; a < e; ++a) {
      for (std::size_t b = a + 1; b < e; ++b, ++idx) {
        const double dens = frame.pdf[a] * frame.pdf[b];
        if (dens == 0.0) continue;
        const std::uint64_t skip = (std::uint64_t{1} << a) | (std::uint64_t{1} << b);
        double bsum = 0.0;
        for (auto m : masks) {
          if (m & skip) continue;
          bsum += frame.product(m, skip);
        }
        acc[idx] += weight * dens * bsum;
      }
    }
  };
  const auto r = integrate_panels(breaks, pairs, integrand, opts);
  std::size_t idx = 0;
  for (std::size_t a = 0; a < e; ++a) {
    for (std::size_t b = a + 1; b < e; ++b, ++idx) {
      const double v = r.values[idx];
      out.w(a, b) = v;
      out.w(b, a) = v;
    }
  }
  return out;
}

/// Central difference of t -> <pi(p + t delta), delta>, i.e. the second
/// directional derivative of F_K at p along delta.
inline double directional_curvature_fd(const AffinityDistributionSet& dist, const BiasVector& p,
                                       std::size_t k, const std::vector<double>& delta, double step,
                                       const QuadratureOptions& opts = {}) {
  if (delta.size() != p.size()) throw Error(ErrorCode::DimMismatch, "direction length != E");
  BiasVector plus = p, minus = p;
  for (std::size_t j = 0; j < p.size(); ++j) {
    plus[j] += step * delta[j];
    minus[j] -= step * delta[j];
  }
  const auto hi = pi_quadrature(dist, plus, k, opts);
  const auto lo = pi_quadrature(dist, minus, k, opts);
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) s += (hi[j] - lo[j]) * delta[j];
  return s / (2.0 * step);
}

}  // namespace alflb
