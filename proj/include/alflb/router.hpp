// SPDX-License-Identifier: Apache-2.0
//
// Bias-shifted Top-K routing. Each token picks the K experts with the
// largest gamma_ik + p_k; equal shifted scores go to the lower expert index
// and the outcome records that a tie decided the K-th slot.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "alflb/core.hpp"

namespace alflb {

/// Unnormalized router scores zeta_ik.
struct RawScoreMatrix {
  Matrix<double> values;
};

inline AffinityMatrix softmax_affinities(const RawScoreMatrix& raw) {
  const auto& z = raw.values;
  Matrix<double> out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto row = z.row(i);
    for (double v : row) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidRange, "raw scores must be finite");
    }
    const double top = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) {
      const double e = std::exp(row[k] - top);
      out(i, k) = e;
      denom += e;
    }
    for (std::size_t k = 0; k < row.size(); ++k) {
      const double g = out(i, k) / denom;
      // exp underflow or a row saturating to 1 leaves the open interval.
      if (!(g > 0.0 && g < 1.0)) {
        throw Error(ErrorCode::OverflowGuard,
                    "softmax of row " + std::to_string(i) + " leaves (0,1) after max-subtraction");
      }
      out(i, k) = g;
    }
  }
  return AffinityMatrix(std::move(out));
}

struct RoutingOutcome {
  Assignment assignment;
  LoadVector loads;
  bool tie_flag = false;
  /// assigned_experts[i] lists token i's K experts in selection order.
  std::vector<std::vector<std::size_t>> assigned_experts;
};

namespace detail {

// Writes the K selected indices of one shifted-score row into `chosen`
// (descending score, ascending index on ties) and returns whether the K-th
// and (K+1)-th shifted scores were equal.
inline bool select_topk_row(std::span<const double> gamma_row, std::span<const double> bias,
                            std::size_t k, std::vector<double>& scratch,
                            std::vector<std::size_t>& order, std::vector<std::size_t>& chosen) {
  const std::size_t experts = gamma_row.size();
  scratch.resize(experts);
  for (std::size_t e = 0; e < experts; ++e) scratch[e] = gamma_row[e] + bias[e];
  chosen.clear();
  if (k == 1) {
    std::size_t best = 0;
    for (std::size_t e = 1; e < experts; ++e) {
      if (scratch[e] > scratch[best]) best = e;
    }
    chosen.push_back(best);
    for (std::size_t e = 0; e < experts; ++e) {
      if (e != best && scratch[e] == scratch[best]) return true;
    }
    return false;
  }
  order.resize(experts);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    return scratch[a] > scratch[b] || (scratch[a] == scratch[b] && a < b);
  };
  if (k < experts) {
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  } else {
    std::sort(order.begin(), order.end(), better);
  }
  chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  if (k == experts) return false;
  const double boundary = scratch[order[k - 1]];
  for (std::size_t j = k; j < experts; ++j) {
    if (scratch[order[j]] == boundary) return true;
  }
  return false;
}

inline void check_routing_dims(const AffinityMatrix& gamma, const BiasVector& p, std::size_t k) {
  if (p.size() != gamma.experts()) throw Error(ErrorCode::DimMismatch, "bias length != E");
  if (k == 0 || k > gamma.experts()) throw Error(ErrorCode::DimMismatch, "K out of range for E");
}

}  // namespace detail

inline RoutingOutcome route_topk(const AffinityMatrix& gamma, const BiasVector& p, std::size_t k) {
  detail::check_routing_dims(gamma, p, k);
  const std::size_t tokens = gamma.tokens();
  const std::size_t experts = gamma.experts();
  RoutingOutcome out;
  out.assigned_experts.resize(tokens);
  out.loads.counts.assign(experts, 0);
  Matrix<std::uint8_t> selected(tokens, experts, 0);
  std::vector<double> scratch;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < tokens; ++i) {
    auto& chosen = out.assigned_experts[i];
    out.tie_flag |= detail::select_topk_row(gamma.row(i), p.values, k, scratch, order, chosen);
    for (auto e : chosen) {
      selected(i, e) = 1;
      ++out.loads.counts[e];
    }
  }
  out.assignment = Assignment(k, std::move(selected));
  return out;
}

/// Tokens whose single assigned expert changed between two K = 1 routings.
inline std::vector<std::size_t> switching_set(const RoutingOutcome& prev, const RoutingOutcome& next) {
  if (prev.assignment.sparsity() != 1 || next.assignment.sparsity() != 1) {
    throw Error(ErrorCode::KNotOne, "switching analysis is defined for K = 1");
  }
  if (prev.assigned_experts.size() != next.assigned_experts.size()) {
    throw Error(ErrorCode::DimMismatch, "routings have different token counts");
  }
  std::vector<std::size_t> moved;
  for (std::size_t i = 0; i < prev.assigned_experts.size(); ++i) {
    if (prev.assigned_experts[i][0] != next.assigned_experts[i][0]) moved.push_back(i);
  }
  return moved;
}

}  // namespace alflb
