// SPDX-License-Identifier: Apache-2.0
//
// One dual step per routing round: p_k += eps_k^(n) (L - A_k^(n)).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "alflb/core.hpp"

namespace alflb {

enum class StepKind { DeepSeekSign, InverseN, InverseSqrtN, Constant };

inline const char* to_string(StepKind kind) {
  switch (kind) {
    case StepKind::DeepSeekSign: return "DeepSeekSign";
    case StepKind::InverseN: return "InverseN";
    case StepKind::InverseSqrtN: return "InverseSqrtN";
    case StepKind::Constant: return "Constant";
  }
  return "Unknown";
}

inline std::optional<StepKind> step_kind_from_string(const std::string& name) {
  for (auto k : {StepKind::DeepSeekSign, StepKind::InverseN, StepKind::InverseSqrtN, StepKind::Constant}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

struct StepSchedule {
  StepKind kind = StepKind::DeepSeekSign;
  double u = 1e-3;

  StepSchedule() = default;
  StepSchedule(StepKind k, double balancing_constant) : kind(k), u(balancing_constant) {
    if (!(u > 0.0) || !std::isfinite(u)) throw Error(ErrorCode::InvalidRange, "u must be positive");
  }

  bool homogeneous() const noexcept { return kind != StepKind::DeepSeekSign; }

  /// eps_k^(n) for an expert with signed imbalance L - A_k. DeepSeekSign is
  /// u/|L - A_k|, reported as 0 where A_k = L (the update there is a no-op).
  double epsilon(std::size_t n, double imbalance) const {
    switch (kind) {
      case StepKind::DeepSeekSign:
        return imbalance == 0.0 ? 0.0 : u / std::abs(imbalance);
      case StepKind::InverseN:
        return u / static_cast<double>(n);
      case StepKind::InverseSqrtN:
        return u / std::sqrt(static_cast<double>(n));
      case StepKind::Constant:
        return u;
    }
    return 0.0;
  }

  std::vector<double> epsilons(std::size_t n, const LoadVector& loads, double target) const {
    std::vector<double> eps(loads.size());
    for (std::size_t k = 0; k < loads.size(); ++k) {
      eps[k] = epsilon(n, target - static_cast<double>(loads[k]));
    }
    return eps;
  }
};

struct BalancerState {
  BiasVector p;
  std::size_t iteration = 1;
  bool zero_sum = false;
  std::optional<double> kappa;
};

inline BiasVector project_zero_sum(const BiasVector& p) {
  if (p.size() == 0) return p;
  double mean = 0.0;
  for (double v : p.values) mean += v;
  mean /= static_cast<double>(p.size());
  BiasVector out = p;
  for (double& v : out.values) v -= mean;
  return out;
}

inline double diameter(const BiasVector& p) {
  if (p.size() == 0) return 0.0;
  const auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
  return *hi - *lo;
}

/// True when the diameter exceeds 1 - kappa; callers treat this as a
/// warning and exclude the iterate from curvature-dependent checks.
inline bool diameter_violation(const BiasVector& p, double kappa) {
  return diameter(p) > 1.0 - kappa;
}

inline BalancerState dual_update(const BalancerState& state, const LoadVector& loads, double target,
                                 const StepSchedule& sched) {
  if (loads.size() != state.p.size()) throw Error(ErrorCode::DimMismatch, "loads length != E");
  BalancerState next = state;
  for (std::size_t k = 0; k < loads.size(); ++k) {
    const double imbalance = target - static_cast<double>(loads[k]);
    if (sched.kind == StepKind::DeepSeekSign) {
      // Sign form of the step: exactly +-u, unchanged when balanced.
      if (imbalance > 0.0) {
        next.p[k] = state.p[k] + sched.u;
      } else if (imbalance < 0.0) {
        next.p[k] = state.p[k] - sched.u;
      }
    } else {
      next.p[k] = state.p[k] + sched.epsilon(state.iteration, imbalance) * imbalance;
    }
  }
  if (state.zero_sum) next.p = project_zero_sum(next.p);
  next.iteration = state.iteration + 1;
  return next;
}

}  // namespace alflb
