// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "alflb/deterministic_lab.hpp"
#include "alflb/instances.hpp"
#include "oracles.hpp"

using namespace alflb;

namespace {

const AffinityMatrix kTwoByTwo = AffinityMatrix::from_rows({{0.9, 0.1}, {0.8, 0.2}});

std::vector<std::vector<int>> dense(const Assignment& x) {
  std::vector<std::vector<int>> out(x.tokens(), std::vector<int>(x.experts(), 0));
  for (std::size_t i = 0; i < x.tokens(); ++i)
    for (std::size_t k = 0; k < x.experts(); ++k) out[i][k] = x(i, k) ? 1 : 0;
  return out;
}

}  // namespace

TEST(Lagrangian, TwoByTwoBothOnExpertZero) {
  const auto x = Assignment::from_choices(2, {{0}, {0}});
  EXPECT_NEAR(lagrangian(kTwoByTwo, x, BiasVector(2), 1.0).value, 1.7, 1e-15);
}

TEST(Lagrangian, MatchesNaiveDoubleLoop) {
  RandomSource rng(11, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const auto g = random_affinities(9, 4, rng);
    std::vector<double> p(4);
    for (auto& v : p) v = rng.uniform(-0.3, 0.3);
    const auto r = route_topk(g, BiasVector(p), 2);
    EXPECT_NEAR(lagrangian(g, r.assignment, BiasVector(p), 4.5).value,
                oracle::lagrangian_naive(g, dense(r.assignment), p, 4.5), 1e-12);
  }
}

TEST(Designations, ThreeWay) {
  const auto d = designations(LoadVector{{3, 2, 1}}, 2.0);
  EXPECT_EQ(d[0], Designation::Overloaded);
  EXPECT_EQ(d[1], Designation::Balanced);
  EXPECT_EQ(d[2], Designation::Underloaded);
}

TEST(SwitchingBenefit, NoSwitchesGivesEmptyList) {
  const auto g = AffinityMatrix::from_rows({{0.9, 0.1}, {0.2, 0.8}});
  const auto tr = run_deterministic(g, make_dims(2, 2, 1), StepSchedule(StepKind::DeepSeekSign, 0.01), 3);
  for (const auto& s : tr.steps) EXPECT_TRUE(s.switches.empty());
}

TEST(SwitchingBenefit, HandInstance) {
  // p^(2) = (-0.06, 0.06) makes token 0 prefer expert 1: 0.49 < 0.51.
  const auto g = AffinityMatrix::from_rows({{0.55, 0.45}, {0.9, 0.1}});
  const auto tr = run_deterministic(g, make_dims(2, 2, 1), StepSchedule(StepKind::DeepSeekSign, 0.06), 2);
  ASSERT_EQ(tr.steps[1].switches.size(), 1u);
  const auto& s = tr.steps[1].switches[0];
  EXPECT_EQ(s.token, 0u);
  EXPECT_EQ(s.from_expert, 0u);
  EXPECT_EQ(s.to_expert, 1u);
  EXPECT_NEAR(s.benefit, (0.45 + 0.06) - (0.55 - 0.06), 1e-15);
  EXPECT_NEAR(s.score_gap_prev, 0.45 - 0.55, 1e-15);
  EXPECT_NEAR(s.affinity_gap, -0.1, 1e-15);
  EXPECT_NEAR(s.bias_gap_prev(), 0.0, 1e-15);
  const auto v = check_switch_direction(tr.steps[1].switches, tr.steps[0].designations, 0.06);
  EXPECT_TRUE(v[0].pass());
}

TEST(LagrangianIdentity, StationaryIterationHasZeroResidual) {
  const auto g = AffinityMatrix::from_rows({{0.9, 0.1}, {0.2, 0.8}});
  const auto tr = run_deterministic(g, make_dims(2, 2, 1), StepSchedule(StepKind::InverseN, 0.5), 3);
  const auto c = check_lagrangian_identity(tr.steps[0], tr.steps[1], 1.0);
  EXPECT_EQ(c.delta, 0.0);
  EXPECT_EQ(c.residual, 0.0);
}

TEST(LagrangianIdentity, RandomizedRunsAllSchedules) {
  for (auto kind : {StepKind::DeepSeekSign, StepKind::InverseN, StepKind::InverseSqrtN, StepKind::Constant}) {
    RandomSource rng(21, static_cast<std::uint64_t>(kind));
    const auto g = random_affinities(48, 6, rng, {1.0, 1.0});
    const auto tr = run_deterministic(g, make_dims(48, 6, 1), StepSchedule(kind, 1e-2), 1000);
    double worst = 0.0;
    for (std::size_t n = 0; n + 1 < tr.steps.size(); ++n) {
      const auto c = check_lagrangian_identity(tr.steps[n], tr.steps[n + 1], 8.0);
      worst = std::max(worst, c.residual / c.scale);
      if (auto d = stable_pattern_delta(tr.steps[n], tr.steps[n + 1], 8.0)) {
        EXPECT_LT(*d, 0.0);
      }
    }
    EXPECT_LE(worst, 1e-9) << to_string(kind);
  }
}

TEST(DeepSeekAudit, NoViolationsOnNoTieIterations) {
  RandomSource rng(5, 0);
  const auto g = random_affinities(64, 8, rng, {1.0, 0.5});
  const double u = 1e-3;
  const auto tr = run_deterministic(g, make_dims(64, 8, 1), StepSchedule(StepKind::DeepSeekSign, u), 2000);
  std::size_t audited = 0;
  for (std::size_t n = 0; n + 1 < tr.steps.size(); ++n) {
    const auto& cur = tr.steps[n];
    const auto& next = tr.steps[n + 1];
    if (cur.outcome.tie_flag || next.outcome.tie_flag) continue;
    for (const auto& v : check_switch_direction(next.switches, cur.designations, u)) {
      EXPECT_TRUE(v.pass());
      ++audited;
    }
    EXPECT_TRUE(check_deepseek_lagrangian(cur, next, 8.0, u).within(1e-9));
  }
  EXPECT_GT(audited, 0u);
}

TEST(Ubar, TwoByTwoExample) { EXPECT_NEAR(ubar(kTwoByTwo), 0.1, 1e-15); }

TEST(Ubar, MatchesBruteForce) {
  RandomSource rng(13, 0);
  for (int rep = 0; rep < 10; ++rep) {
    const auto g = random_affinities(12, 5, rng);
    EXPECT_NEAR(ubar(g), oracle::ubar_bruteforce(g), 1e-15);
  }
}

TEST(Ubar, DuplicateGapsAreDegenerate) {
  const auto g = AffinityMatrix::from_rows({{0.6, 0.4}, {0.6, 0.4}});
  try {
    ubar(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateGaps);
  }
}

TEST(BalanceConvergence, AlreadyBalancedStart) {
  const auto g = AffinityMatrix::from_rows({{0.9, 0.1}, {0.15, 0.85}});
  const auto rep = check_balance_convergence(g, make_dims(2, 2, 1), 0.5 * ubar(g));
  EXPECT_TRUE(rep.pass(2));
  EXPECT_EQ(rep.entered_iteration[0], 0u);
  EXPECT_EQ(rep.entered_iteration[1], 0u);
  EXPECT_TRUE(rep.fixed_point);
}

TEST(BalanceConvergence, AdversarialAllPreferExpertZero) {
  RandomSource rng(17, 0);
  RawScoreMatrix raw{Matrix<double>(16, 4)};
  for (std::size_t i = 0; i < 16; ++i) {
    raw.values(i, 0) = 3.0 + 0.3 * rng.uniform();
    for (std::size_t k = 1; k < 4; ++k) raw.values(i, k) = rng.uniform();
  }
  const auto g = softmax_affinities(raw);
  for (std::size_t i = 0; i < 16; ++i) ASSERT_EQ(route_topk(g, BiasVector(4), 1).assigned_experts[i][0], 0u);
  const double u = 0.5 * ubar(g);
  const auto rep = check_balance_convergence(g, make_dims(16, 4, 1), u);
  EXPECT_TRUE(rep.premise_holds);
  EXPECT_TRUE(rep.converged);
  EXPECT_TRUE(rep.stayed);
  EXPECT_LE(rep.max_load_change, 3u);
  EXPECT_TRUE(rep.pass(4));
}

TEST(BalanceConvergence, RequiresKOne) {
  const auto g = AffinityMatrix::from_rows({{0.5, 0.3, 0.2}, {0.2, 0.3, 0.5}, {0.3, 0.5, 0.2}});
  EXPECT_THROW(check_balance_convergence(g, make_dims(3, 3, 2), 1e-3), Error);
}

TEST(IpOracle, TwoByTwoValue) {
  const auto sol = ip_bruteforce(kTwoByTwo, make_dims(2, 2, 1));
  EXPECT_NEAR(sol.value, 1.1, 1e-15);
  EXPECT_EQ(sol.expert_of_token, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(sol.assignments_enumerated, 2u);
}

TEST(IpOracle, MatchesExhaustiveEnumerationExactly) {
  RandomSource rng(23, 0);
  for (int rep = 0; rep < 10; ++rep) {
    const auto g = random_affinities(6, 3, rng);
    const auto sol = ip_bruteforce(g, make_dims(6, 3, 1));
    EXPECT_EQ(sol.value, oracle::ip_enumerate(g, 2));
    EXPECT_EQ(sol.assignments_enumerated, 90u);  // 6! / (2!)^3
  }
}

TEST(IpOracle, GuardAndKOne) {
  RandomSource rng(1, 0);
  const auto g = random_affinities(16, 4, rng);
  EXPECT_THROW(ip_bruteforce(g, make_dims(16, 4, 1), 1e3), Error);
  EXPECT_THROW(ip_bruteforce(g, make_dims(16, 4, 2)), Error);
}

TEST(TraceCsv, HeaderAndRowCount) {
  RandomSource rng(2, 0);
  const auto g = random_affinities(8, 2, rng);
  const auto tr = run_deterministic(g, make_dims(8, 2, 1), StepSchedule(StepKind::Constant, 0.01), 5);
  std::ostringstream os;
  write_trace_csv(os, tr);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "n,lagrangian,sum_benefit,sum_abs_imbalance,num_switches,max_load,min_load,tie_flag");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 5);
}
