#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "glab/adjoint.hpp"
#include "glab/problems.hpp"

using namespace glab;

namespace {

struct Solved {
  PathBundle paths;
  StatePaths state;
  MeasureAdjoint adjoint;
};

Solved solve_constant(const Builtin& ex, double theta_sq, std::size_t steps, std::size_t n_paths,
                      std::uint64_t seed = 11) {
  const TimeGrid grid = ex.grid(steps);
  const auto sc = make_scenario(rule::Constant{std::sqrt(theta_sq)}, ex.problem.bounds, grid);
  auto paths = simulate_driver(sc, grid, seed, n_paths);
  auto state = simulate_state(ex.problem, ex.candidate, paths);
  auto adj = solve_adjoint_under(ex.problem, ex.candidate, sc, paths, state, ex.basis);
  return {std::move(paths), std::move(state), std::move(adj)};
}

double mean_p0(const Solved& s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < s.paths.n_paths; ++i) acc += s.adjoint.p()(i, 0);
  return acc / static_cast<double>(s.paths.n_paths);
}

/// State quantiles at node k, as probe points inside the sample.
std::vector<double> probes(const Solved& s, std::size_t k) {
  std::vector<double> xs;
  for (std::size_t i = 0; i < s.paths.n_paths; ++i) xs.push_back(s.state.x(i, k));
  std::sort(xs.begin(), xs.end());
  std::vector<double> out;
  for (double q : {0.05, 0.25, 0.5, 0.75, 0.95}) out.push_back(xs[static_cast<std::size_t>(q * (xs.size() - 1))]);
  return out;
}

}  // namespace

TEST(Adjoint, Example1IsIdenticallyOne) {
  const auto ex = builtin(BuiltinId::example1);
  const TimeGrid grid = ex.grid(50);
  const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{3});
  const auto sol = aggregate_gbsde(ex.problem, ex.candidate, fam, 3, 2000, ex.basis);
  ASSERT_TRUE(sol.aggregate);
  for (double p0 : sol.member_p0) EXPECT_NEAR(p0, 1.0, 1e-10);
  for (const auto& r : sol.residuals) {
    EXPECT_LT(r.max_abs, 1e-9);
    EXPECT_TRUE(r.within(3.0));
    EXPECT_EQ(r.comparison_violations, 0u);
  }
}

TEST(Adjoint, Example2MatchesExponentialOracle) {
  for (double rate : {-0.5, 0.0, 0.5}) {
    BuiltinParams p;
    p.rate.constant = rate;
    const auto ex = builtin(BuiltinId::example2, p);
    for (double th : {0.25, 1.0}) {
      const auto s = solve_constant(ex, th, 100, 4000);
      EXPECT_NEAR(mean_p0(s), std::exp(rate), 0.01 * std::exp(rate)) << rate << " " << th;
      for (std::size_t k : {25u, 50u, 75u})
        for (double x : probes(s, k))
          EXPECT_NEAR(s.adjoint.value(k, x), adjoint_oracle(BuiltinId::example2, p, s.paths.grid.time(k), x, th),
                      0.01 * std::exp(std::abs(rate)))
              << rate << " " << k;
    }
  }
}

TEST(Adjoint, Example2TimeDependentRate) {
  BuiltinParams p;
  p.rate.fn = [](double t) { return 0.5 + 0.25 * std::sin(2.0 * std::numbers::pi * t); };
  const auto ex = builtin(BuiltinId::example2, p);
  const auto s = solve_constant(ex, 0.5, 100, 4000);
  EXPECT_NEAR(mean_p0(s), adjoint_oracle(BuiltinId::example2, p, 0.0, 1.0, 0.5), 0.01 * std::exp(0.5));
}

TEST(Adjoint, Example3ReciprocalStateAndQRatio) {
  const auto ex = builtin(BuiltinId::example3);
  for (double th : {0.25, 1.0}) {
    const auto s = solve_constant(ex, th, 100, 5000);
    for (std::size_t k : {0u, 30u, 60u, 90u})
      for (double x : probes(s, k)) {
        const auto [p, q] = s.adjoint.value_and_q(k, x);
        EXPECT_NEAR(p * x, 1.0, 0.02) << k;
        // q = sigma dp/dx = -u s / x with u s = 1 under the candidate.
        EXPECT_NEAR(q / p, -1.0, 0.05) << k;
        EXPECT_NEAR(s.adjoint.q_from_slope(k, x) / p, -1.0, 0.05) << k;
      }
  }
}

TEST(Adjoint, CounterexampleAggregateAndResidual) {
  const auto ex = builtin(BuiltinId::counterexample);
  const TimeGrid grid = ex.grid(100);
  const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{3});
  const auto sol = aggregate_gbsde(ex.problem, ex.candidate, fam, 5, 20000, ex.basis);
  ASSERT_TRUE(sol.aggregate);
  // p^G is the adjoint under the largest volatility.
  for (double x : {0.8, 1.0, 1.3}) {
    const auto pt = sol.aggregate->at(10, x);
    EXPECT_NEAR(pt.p, counterexample_p_g(ex.params, grid.time(10), x), 0.02 * pt.p);
    EXPECT_EQ(pt.argmax, 2u);
  }
  for (const auto& r : sol.residuals) EXPECT_EQ(r.comparison_violations, 0u);
  // The residual under the lowest volatility drifts down to the closed form.
  const auto& low = sol.residuals[0];
  const double oracle = counterexample_k_terminal(ex.params, 0.25);
  EXPECT_LT(oracle, 0.0);
  EXPECT_NEAR(low.terminal(), oracle, 4.0 * low.terminal_se() + 0.02 * std::abs(oracle));
  EXPECT_GT(low.max_z, 10.0);
  EXPECT_GT(low.increments_down, 50u);
  EXPECT_EQ(low.increments_up, 0u);
  // Under the top volatility p^G is that member's own adjoint.
  EXPECT_TRUE(sol.residuals[2].within(4.0));
}

TEST(Adjoint, PGDominatesEveryMember) {
  const auto ex = builtin(BuiltinId::counterexample);
  const TimeGrid grid = ex.grid(40);
  const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{4});
  const auto sol = aggregate_gbsde(ex.problem, ex.candidate, fam, 9, 3000, ex.basis);
  std::vector<double> vals(4);
  for (std::size_t k = 0; k < grid.n_steps(); k += 7)
    for (double x : {0.5, 0.9, 1.0, 1.4, 2.5}) {
      const auto pt = sol.aggregate->at(k, x, vals);
      for (double v : vals) EXPECT_GE(pt.p, v);
      EXPECT_EQ(pt.p, vals[pt.argmax]);
    }
}

TEST(Adjoint, PathDependentMembersAreNotAggregated) {
  const auto ex = builtin(BuiltinId::example3);
  const TimeGrid grid = ex.grid(20);
  const auto bb = canonical_family(ex.problem.bounds, grid, family::BangBangOnSign{0.5});
  const auto paths = simulate_driver(bb[0], grid, 1, 500);
  const auto state = simulate_state(ex.problem, ex.candidate, paths);
  auto adj = solve_adjoint_under(ex.problem, ex.candidate, bb[0], paths, state, ex.basis);
  EXPECT_FALSE(adj.markovian());
  EXPECT_THROW(adj.value(3, 1.0), UnsupportedMode);
  std::vector<MeasureAdjoint> members;
  members.push_back(std::move(adj));
  EXPECT_THROW(GAdjoint{std::move(members)}, UnsupportedMode);

  // A path-rule control leaves no Markovian member: aggregation is refused.
  const auto rule_control = Control::path_rule([](const ControlContext& c) { return c.b.back() > 0 ? 1.0 : 0.5; });
  const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{2});
  const auto sol = aggregate_gbsde(ex.problem, rule_control, fam, 1, 500, ex.basis);
  EXPECT_FALSE(sol.aggregate);
  EXPECT_FALSE(sol.refusal.empty());
  EXPECT_EQ(sol.member_labels.size(), 2u);

  // Mixed family: the path-dependent member is a reference only.
  const auto mixed = canonical_family(ex.problem.bounds, grid, family::Constants{2}) + bb;
  const auto sol2 = aggregate_gbsde(ex.problem, ex.candidate, mixed, 1, 500, ex.basis);
  ASSERT_TRUE(sol2.aggregate);
  EXPECT_EQ(sol2.aggregate->members().size(), 2u);
  EXPECT_EQ(sol2.residuals.size(), 4u);
  EXPECT_GT(sol2.residuals[2].path_dependent_nodes, 0u);
}

TEST(Adjoint, DelayedFeedbackIsNotMarkovian) {
  auto ex = builtin(BuiltinId::example3);
  ex.problem.delay = 0.1;
  const TimeGrid grid = ex.grid(20);
  const auto sc = make_scenario(rule::Constant{1.0}, ex.problem.bounds, grid);
  const auto fb = Control::feedback([](double, double) { return 1.0; });
  EXPECT_FALSE(is_markovian(ex.problem, fb, sc));
  EXPECT_TRUE(is_markovian(ex.problem, ex.candidate, sc));
}

TEST(Adjoint, CoarseGridIsRefused) {
  BuiltinParams p;
  p.rate.constant = 10.0;
  const auto ex = builtin(BuiltinId::example2, p);
  EXPECT_THROW(solve_constant(ex, 1.0, 10, 200), NumericalError);
}

TEST(Adjoint, MismatchedPathsAreRejected) {
  const auto ex = builtin(BuiltinId::example1);
  const TimeGrid grid = ex.grid(10);
  const auto a = make_scenario(rule::Constant{1.0}, ex.problem.bounds, grid);
  const auto b = make_scenario(rule::Constant{0.5}, ex.problem.bounds, grid);
  const auto paths = simulate_driver(a, grid, 1, 100);
  const auto state = simulate_state(ex.problem, ex.candidate, paths);
  EXPECT_THROW(solve_adjoint_under(ex.problem, ex.candidate, b, paths, state, ex.basis), InvalidArgument);
}
