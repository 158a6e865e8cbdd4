// SPDX-License-Identifier: Apache-2.0
//
// Fixed-score analysis of the primal-dual balancing loop: Lagrangian
// bookkeeping, switching benefits, designation ordering, the step threshold
// u-bar, the approximate-balance convergence audit, and an exhaustive IP
// oracle for desk-scale instances.
//
// Designations are evaluated from the loads at iteration n, the iteration
// whose step produced the biases for n+1.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "alflb/core.hpp"
#include "alflb/dual_balancer.hpp"
#include "alflb/router.hpp"

namespace alflb {

struct LagrangianValue {
  double value = 0.0;
  double affinity_term = 0.0;      // sum (gamma_ik + p_k) x_ik
  double bias_penalty_term = 0.0;  // L * sum p_k
};

inline LagrangianValue lagrangian(const AffinityMatrix& gamma, const Assignment& x, const BiasVector& p,
                                  double target) {
  if (x.tokens() != gamma.tokens() || x.experts() != gamma.experts() || p.size() != gamma.experts()) {
    throw Error(ErrorCode::DimMismatch, "lagrangian operands disagree on T or E");
  }
  CompensatedSum affinity;
  for (std::size_t i = 0; i < gamma.tokens(); ++i) {
    for (std::size_t k = 0; k < gamma.experts(); ++k) {
      if (x(i, k)) {
        affinity.add(gamma(i, k));
        affinity.add(p[k]);
      }
    }
  }
  CompensatedSum bias;
  for (double v : p.values) bias.add(v);
  LagrangianValue out;
  out.affinity_term = affinity.value();
  out.bias_penalty_term = target * bias.value();
  CompensatedSum total;
  total.add(out.affinity_term);
  total.add(-out.bias_penalty_term);
  out.value = total.value();
  return out;
}

enum class Designation : int { Underloaded = 0, Balanced = 1, Overloaded = 2 };

inline const char* to_string(Designation d) {
  switch (d) {
    case Designation::Underloaded: return "Underloaded";
    case Designation::Balanced: return "Balanced";
    case Designation::Overloaded: return "Overloaded";
  }
  return "Unknown";
}

inline std::vector<Designation> designations(const LoadVector& loads, double target) {
  std::vector<Designation> out(loads.size());
  for (std::size_t k = 0; k < loads.size(); ++k) {
    const double a = static_cast<double>(loads[k]);
    out[k] = a > target ? Designation::Overloaded
                        : (a < target ? Designation::Underloaded : Designation::Balanced);
  }
  return out;
}

/// One token that changed experts between iterations n and n+1.
struct SwitchRecord {
  std::size_t token = 0;
  std::size_t from_expert = 0;
  std::size_t to_expert = 0;
  /// (gamma_i,to + p_to^(n+1)) - (gamma_i,from + p_from^(n+1)); never negative.
  double benefit = 0.0;
  /// (gamma_i,to + p_to^(n)) - (gamma_i,from + p_from^(n)).
  double score_gap_prev = 0.0;
  /// gamma_i,to - gamma_i,from.
  double affinity_gap = 0.0;

  /// p_from^(n) - p_to^(n), the bias gap the affinity gap had to beat.
  double bias_gap_prev() const { return affinity_gap - score_gap_prev; }
};

inline std::vector<SwitchRecord> switching_benefit(const AffinityMatrix& gamma, const RoutingOutcome& prev,
                                                   const RoutingOutcome& next, const BiasVector& p_prev,
                                                   const BiasVector& p_next) {
  const auto moved = switching_set(prev, next);
  std::vector<SwitchRecord> out;
  out.reserve(moved.size());
  for (auto i : moved) {
    SwitchRecord r;
    r.token = i;
    r.from_expert = prev.assigned_experts[i][0];
    r.to_expert = next.assigned_experts[i][0];
    const double g_to = gamma(i, r.to_expert);
    const double g_from = gamma(i, r.from_expert);
    r.benefit = (g_to + p_next[r.to_expert]) - (g_from + p_next[r.from_expert]);
    r.score_gap_prev = (g_to + p_prev[r.to_expert]) - (g_from + p_prev[r.from_expert]);
    r.affinity_gap = g_to - g_from;
    out.push_back(r);
  }
  return out;
}

struct IterationRecord {
  std::size_t n = 1;
  BiasVector p;  // biases routed with at iteration n
  RoutingOutcome outcome;
  LagrangianValue lagrangian;
  std::vector<Designation> designations;
  std::vector<double> epsilons;        // eps_k^(n), used to form p^(n+1)
  std::vector<SwitchRecord> switches;  // from iteration n-1 to n
};

struct IterationTrace {
  ProblemDims dims;
  StepSchedule schedule;
  std::vector<IterationRecord> steps;
};

/// Runs `iterations` rounds of dual update + primal Top-K routing on fixed
/// affinities, starting from p^(1) = p0 (zeros by default).
inline IterationTrace run_deterministic(const AffinityMatrix& gamma, const ProblemDims& dims,
                                        const StepSchedule& sched, std::size_t iterations,
                                        std::optional<BiasVector> p0 = std::nullopt, bool zero_sum = false) {
  if (gamma.tokens() != dims.tokens || gamma.experts() != dims.experts) {
    throw Error(ErrorCode::DimMismatch, "affinity shape does not match dims");
  }
  IterationTrace trace{dims, sched, {}};
  trace.steps.reserve(iterations);
  BalancerState state{p0.value_or(BiasVector(dims.experts)), 1, zero_sum, std::nullopt};
  for (std::size_t it = 0; it < iterations; ++it) {
    IterationRecord rec;
    rec.n = state.iteration;
    rec.p = state.p;
    rec.outcome = route_topk(gamma, state.p, dims.sparsity);
    rec.lagrangian = lagrangian(gamma, rec.outcome.assignment, state.p, dims.target_load);
    rec.designations = designations(rec.outcome.loads, dims.target_load);
    rec.epsilons = sched.epsilons(state.iteration, rec.outcome.loads, dims.target_load);
    if (!trace.steps.empty() && dims.sparsity == 1) {
      const auto& prev = trace.steps.back();
      rec.switches = switching_benefit(gamma, prev.outcome, rec.outcome, prev.p, rec.p);
    }
    state = dual_update(state, rec.outcome.loads, dims.target_load, sched);
    trace.steps.push_back(std::move(rec));
  }
  return trace;
}

inline double sum_benefit(const std::vector<SwitchRecord>& records) {
  CompensatedSum s;
  for (const auto& r : records) s.add(r.benefit);
  return s.value();
}

inline double sum_abs_imbalance(const LoadVector& loads, double target) {
  double s = 0.0;
  for (auto a : loads.counts) s += std::abs(static_cast<double>(a) - target);
  return s;
}

struct IdentityCheck {
  double delta = 0.0;      // L(n+1) - L(n)
  double predicted = 0.0;  // sum b - sum eps (A - L)^2
  double residual = 0.0;
  double scale = 1.0;      // 1 + |L(n)|

  bool within(double rel_tol) const { return residual <= rel_tol * scale; }
};

/// Change-in-Lagrangian identity across the step cur -> next (K = 1).
inline IdentityCheck check_lagrangian_identity(const IterationRecord& cur, const IterationRecord& next,
                                               double target) {
  CompensatedSum penalty;
  for (std::size_t k = 0; k < cur.outcome.loads.size(); ++k) {
    const double d = static_cast<double>(cur.outcome.loads[k]) - target;
    penalty.add(cur.epsilons[k] * d * d);
  }
  IdentityCheck c;
  c.delta = next.lagrangian.value - cur.lagrangian.value;
  c.predicted = sum_benefit(next.switches) - penalty.value();
  c.residual = std::abs(c.delta - c.predicted);
  c.scale = 1.0 + std::max(std::abs(cur.lagrangian.value), std::abs(next.lagrangian.value));
  return c;
}

/// DeepSeek form of the same change: sum b - u * sum |A - L|.
inline IdentityCheck check_deepseek_lagrangian(const IterationRecord& cur, const IterationRecord& next,
                                               double target, double u) {
  IdentityCheck c;
  c.delta = next.lagrangian.value - cur.lagrangian.value;
  c.predicted = sum_benefit(next.switches) - u * sum_abs_imbalance(cur.outcome.loads, target);
  c.residual = std::abs(c.delta - c.predicted);
  c.scale = 1.0 + std::max(std::abs(cur.lagrangian.value), std::abs(next.lagrangian.value));
  return c;
}

struct SwitchVerdict {
  bool direction_ok = false;  // strictly lower designation
  bool benefit_ok = false;    // 0 < b < 2u
  bool gap_ok = false;        // -2u < prior score gap < 0

  bool pass() const { return direction_ok && benefit_ok && gap_ok; }
};

/// Audits DeepSeek-step switches against the designation ordering
/// Overloaded > Balanced > Underloaded taken at iteration n. Only meaningful
/// when neither routing involved a tie.
inline std::vector<SwitchVerdict> check_switch_direction(const std::vector<SwitchRecord>& records,
                                                         const std::vector<Designation>& designations_prev,
                                                         double u) {
  std::vector<SwitchVerdict> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    SwitchVerdict v;
    v.direction_ok = static_cast<int>(designations_prev.at(r.to_expert)) <
                     static_cast<int>(designations_prev.at(r.from_expert));
    v.benefit_ok = r.benefit > 0.0 && r.benefit < 2.0 * u;
    v.gap_ok = r.score_gap_prev > -2.0 * u && r.score_gap_prev < 0.0;
    out.push_back(v);
  }
  return out;
}

/// Strict-decrease premise: every expert at or above L stays at or above L,
/// every expert at or below L stays at or below L, and iteration n is not
/// already perfectly balanced. Returns the Lagrangian change when it applies.
inline std::optional<double> stable_pattern_delta(const IterationRecord& cur, const IterationRecord& next,
                                                  double target) {
  bool imbalanced = false;
  for (std::size_t k = 0; k < cur.outcome.loads.size(); ++k) {
    const double a = static_cast<double>(cur.outcome.loads[k]);
    const double b = static_cast<double>(next.outcome.loads[k]);
    if (a != target) imbalanced = true;
    if (a >= target && b < target) return std::nullopt;
    if (a <= target && b > target) return std::nullopt;
  }
  if (!imbalanced) return std::nullopt;
  return next.lagrangian.value - cur.lagrangian.value;
}

/// Largest affinity-gap difference among tokens that moved along the same
/// (origin, destination) pair in one iteration; nullopt when no pair shares
/// a route.
inline std::optional<double> max_concurrent_gap_difference(const std::vector<SwitchRecord>& records) {
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> span;
  std::map<std::pair<std::size_t, std::size_t>, int> count;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.from_expert, r.to_expert);
    auto [it, fresh] = span.try_emplace(key, r.affinity_gap, r.affinity_gap);
    if (!fresh) {
      it->second.first = std::min(it->second.first, r.affinity_gap);
      it->second.second = std::max(it->second.second, r.affinity_gap);
    }
    ++count[key];
  }
  std::optional<double> worst;
  for (const auto& [key, mm] : span) {
    if (count[key] < 2) continue;
    const double d = mm.second - mm.first;
    worst = worst ? std::max(*worst, d) : d;
  }
  return worst;
}

/// Half the smallest difference between score gaps gamma_ik - gamma_ik'
/// of two distinct tokens, over all expert pairs k != k'.
inline double ubar(const AffinityMatrix& gamma) {
  const std::size_t tokens = gamma.tokens();
  const std::size_t experts = gamma.experts();
  if (tokens < 2) throw Error(ErrorCode::InvalidRange, "u-bar needs at least two tokens");
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> gaps(tokens);
  // Gaps of (k', k) are negated gaps of (k, k'); unordered pairs suffice.
  for (std::size_t k = 0; k < experts; ++k) {
    for (std::size_t kk = k + 1; kk < experts; ++kk) {
      for (std::size_t i = 0; i < tokens; ++i) gaps[i] = gamma(i, k) - gamma(i, kk);
      std::sort(gaps.begin(), gaps.end());
      for (std::size_t i = 1; i < tokens; ++i) best = std::min(best, gaps[i] - gaps[i - 1]);
    }
  }
  if (!(best > 0.0)) {
    throw Error(ErrorCode::DegenerateGaps, "two tokens share a score gap; u-bar premise is unsatisfiable");
  }
  return 0.5 * best;
}

struct BalanceOptions {
  /// 0 selects the default max(10*T*E, ceil(4*E/u)).
  std::size_t iteration_budget = 0;
};

inline std::size_t default_balance_budget(const ProblemDims& dims, double u) {
  const double by_size = 10.0 * static_cast<double>(dims.tokens * dims.experts);
  const double by_step = std::ceil(4.0 * static_cast<double>(dims.experts) / u);
  return static_cast<std::size_t>(std::max(by_size, by_step));
}

struct BalanceReport {
  /// First iteration (0-based) at which each expert's load was inside
  /// [L - (E-1), L + (E-1)].
  std::vector<std::optional<std::size_t>> entered_iteration;
  bool stayed = true;
  bool converged = false;
  bool fixed_point = false;  // reached exact balance, after which nothing moves
  bool tie_seen = false;
  bool premise_holds = false;  // u < u-bar
  std::size_t max_load_change = 0;
  std::size_t iterations_run = 0;
  std::size_t budget = 0;
  double u = 0.0;
  double ubar = 0.0;

  bool pass(std::size_t experts) const {
    return premise_holds && converged && stayed && !tie_seen && max_load_change <= experts - 1;
  }
};

/// Runs the DeepSeek sign step on fixed affinities (K = 1) and audits the
/// approximate-balance guarantee. After every load has entered the band the
/// run continues for max(n_enter, 10*T*E) further iterations (or until exact
/// balance, which is a fixed point) to check that no load leaves it.
inline BalanceReport check_balance_convergence(const AffinityMatrix& gamma, const ProblemDims& dims, double u,
                                               BalanceOptions opts = {}) {
  if (dims.sparsity != 1) throw Error(ErrorCode::KNotOne, "balance guarantee is stated for K = 1");
  if (!dims.balanced) throw Error(ErrorCode::InvalidRange, "balance checker requires balanced-target dims");
  if (gamma.tokens() != dims.tokens || gamma.experts() != dims.experts) {
    throw Error(ErrorCode::DimMismatch, "affinity shape does not match dims");
  }
  const std::size_t tokens = dims.tokens;
  const std::size_t experts = dims.experts;
  const auto target = static_cast<long long>(dims.target_load);
  const auto band = static_cast<long long>(experts) - 1;

  BalanceReport rep;
  rep.u = u;
  try {
    rep.ubar = ubar(gamma);
    rep.premise_holds = u < rep.ubar;
  } catch (const Error&) {
    rep.ubar = 0.0;
    rep.premise_holds = false;
  }
  rep.budget = opts.iteration_budget ? opts.iteration_budget : default_balance_budget(dims, u);
  rep.entered_iteration.assign(experts, std::nullopt);

  std::vector<double> p(experts, 0.0);
  std::vector<long long> loads(experts, 0), prev(experts, 0);
  std::size_t horizon = rep.budget;
  std::size_t entered_count = 0;
  const std::size_t tail = 10 * tokens * experts;

  for (std::size_t n = 0; n < rep.budget; ++n) {
    std::fill(loads.begin(), loads.end(), 0);
    for (std::size_t i = 0; i < tokens; ++i) {
      const auto row = gamma.row(i);
      std::size_t best = 0;
      double best_score = row[0] + p[0];
      bool tie = false;
      for (std::size_t k = 1; k < experts; ++k) {
        const double s = row[k] + p[k];
        if (s > best_score) {
          best_score = s;
          best = k;
          tie = false;
        } else if (s == best_score) {
          tie = true;
        }
      }
      rep.tie_seen |= tie;
      ++loads[best];
    }
    rep.iterations_run = n + 1;
    if (n > 0) {
      for (std::size_t k = 0; k < experts; ++k) {
        rep.max_load_change = std::max<std::size_t>(rep.max_load_change,
                                                    static_cast<std::size_t>(std::llabs(loads[k] - prev[k])));
      }
    }
    bool exact = true;
    for (std::size_t k = 0; k < experts; ++k) {
      const long long dev = loads[k] - target;
      exact &= dev == 0;
      const bool inside = std::llabs(dev) <= band;
      if (!rep.entered_iteration[k] && inside) {
        rep.entered_iteration[k] = n;
        ++entered_count;
        if (entered_count == experts) {
          rep.converged = true;
          horizon = std::min(rep.budget, n + 1 + std::max(n, tail));
        }
      } else if (rep.entered_iteration[k] && !inside) {
        rep.stayed = false;
      }
    }
    if (exact) {
      rep.fixed_point = true;
      break;
    }
    if (n + 1 >= horizon) break;
    for (std::size_t k = 0; k < experts; ++k) {
      if (loads[k] > target) {
        p[k] -= u;
      } else if (loads[k] < target) {
        p[k] += u;
      }
    }
    prev = loads;
  }
  return rep;
}

struct IpSolution {
  double value = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> expert_of_token;
  std::size_t assignments_enumerated = 0;
};

/// Number of balanced K = 1 assignments, T! / (L!)^E, in floating point.
inline double balanced_assignment_count(std::size_t tokens, std::size_t experts, std::size_t load) {
  return std::exp(std::lgamma(static_cast<double>(tokens) + 1.0) -
                  static_cast<double>(experts) * std::lgamma(static_cast<double>(load) + 1.0));
}

/// Exact maximizer of sum gamma_ik x_ik over assignments with every expert
/// load equal to L (K = 1), by depth-first enumeration.
inline IpSolution ip_bruteforce(const AffinityMatrix& gamma, const ProblemDims& dims,
                                double max_assignments = 1e7) {
  if (dims.sparsity != 1) throw Error(ErrorCode::KNotOne, "IP oracle enumerates K = 1 assignments");
  if (!dims.balanced) throw Error(ErrorCode::InvalidRange, "IP oracle needs an integral target load");
  const std::size_t tokens = gamma.tokens();
  const std::size_t experts = gamma.experts();
  const auto load = static_cast<std::size_t>(dims.target_load);
  if (balanced_assignment_count(tokens, experts, load) > max_assignments) {
    throw Error(ErrorCode::TooLarge, "balanced assignment count exceeds enumeration guard");
  }
  IpSolution best;
  std::vector<std::size_t> capacity(experts, load);
  std::vector<std::size_t> current(tokens, 0);

  auto dfs = [&](auto&& self, std::size_t i, double partial) -> void {
    if (i == tokens) {
      ++best.assignments_enumerated;
      if (partial > best.value) {
        best.value = partial;
        best.expert_of_token = current;
      }
      return;
    }
    for (std::size_t k = 0; k < experts; ++k) {
      if (capacity[k] == 0) continue;
      --capacity[k];
      current[i] = k;
      self(self, i + 1, partial + gamma(i, k));
      ++capacity[k];
    }
  };
  dfs(dfs, 0, 0.0);
  return best;
}

inline void write_trace_csv(std::ostream& os, const IterationTrace& trace) {
  os << "n,lagrangian,sum_benefit,sum_abs_imbalance,num_switches,max_load,min_load,tie_flag\n";
  const auto old_precision = os.precision(17);
  for (const auto& s : trace.steps) {
    os << s.n << ',' << s.lagrangian.value << ',' << sum_benefit(s.switches) << ','
       << sum_abs_imbalance(s.outcome.loads, trace.dims.target_load) << ',' << s.switches.size() << ','
       << s.outcome.loads.max() << ',' << s.outcome.loads.min() << ',' << (s.outcome.tie_flag ? 1 : 0) << '\n';
  }
  os.precision(old_precision);
}

}  // namespace alflb
