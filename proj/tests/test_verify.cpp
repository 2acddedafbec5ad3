#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "glab/problems.hpp"
#include "glab/verify.hpp"

using namespace glab;

namespace {

Coefficient coef(Fn3 f) { return Coefficient{std::move(f), {}, {}}; }

/// Linear-quadratic problem dX = u dt + s dB, f = -u^2/2, g = -(x - 1)^2/2
/// with a convex running reward when flip is set.
ControlProblem lq(bool convex_running = false) {
  ControlProblem pr;
  pr.id = "lq";
  pr.x0 = 0.0;
  pr.drift = Coefficient{[](double, double, double u) { return u; }, [](double, double, double) { return 0.0; },
                         [](double, double, double) { return 1.0; }};
  pr.qv_drift = Coefficient::zero();
  pr.diffusion = Coefficient{[](double, double, double) { return 0.5; }, [](double, double, double) { return 0.0; },
                             [](double, double, double) { return 0.0; }};
  const double s = convex_running ? 1.0 : -1.0;
  pr.running = Coefficient{[s](double, double, double u) { return 0.5 * s * u * u; },
                           [](double, double, double) { return 0.0; },
                           [s](double, double, double u) { return s * u; }};
  pr.terminal = [](double x) { return -0.5 * (x - 1.0) * (x - 1.0); };
  pr.terminal_derivative = [](double x) { return 1.0 - x; };
  pr.controls = {-5.0, 5.0};
  pr.validate();
  return pr;
}

Control lq_optimal() {
  return Control::feedback([](double t, double x) { return (1.0 - x) / (2.0 - t); }, "lq_optimal");
}

/// Random smooth problem with numerical partials only.
ControlProblem random_problem(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const double a1 = u(rng), a2 = 1.0 + u(rng), a3 = u(rng), s0 = 0.5 + 0.5 * std::abs(u(rng)), s1 = 0.3 * u(rng),
               m1 = u(rng), c = u(rng);
  ControlProblem pr;
  pr.id = "random";
  pr.x0 = u(rng);
  pr.drift = coef([=](double t, double x, double v) { return a1 * x + a2 * v + a3 * std::sin(x + t); });
  pr.qv_drift = coef([=](double, double x, double v) { return m1 * std::tanh(x) * v; });
  pr.diffusion = coef([=](double, double x, double v) { return s0 + s1 * v + 0.1 * std::cos(x); });
  pr.running = coef([=](double, double x, double v) { return -(v - c) * (v - c) - 0.5 * x * x; });
  pr.terminal = [c](double x) { return -std::cosh(0.5 * x) + c * x; };
  pr.terminal_derivative = [c](double x) { return -0.5 * std::sinh(0.5 * x) + c; };
  pr.controls = {-10.0, 10.0};
  pr.validate();
  return pr;
}

}  // namespace

TEST(Verify, Example1WrongConsumptionIsNotCritical) {
  const auto ex = builtin(BuiltinId::example1);
  const auto control = Control::constant(2.0);
  const TimeGrid grid = ex.grid(20);
  const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{2});
  const auto adj = aggregate_gbsde(ex.problem, control, fam, 1, 500, ex.basis);
  const auto c = check_criticality(ex.problem, control, adj, fam, 1, 500, ex.basis);
  // dH/du = 1/c - p = 1/2 - 1
  EXPECT_NEAR(c.stat, 0.5, 1e-9);
  EXPECT_FALSE(c.pass(1e-2));
  // and u = 1 beats u = 2 in H
  EXPECT_GT(c.remark_gap, 0.1);

  const auto good = aggregate_gbsde(ex.problem, ex.candidate, fam, 1, 500, ex.basis);
  const auto g = check_criticality(ex.problem, ex.candidate, good, fam, 1, 500, ex.basis);
  EXPECT_LT(g.stat, 1e-9);
  EXPECT_TRUE(g.pass(1e-2));
}

TEST(Verify, DelayedCriticality) {
  auto ex = builtin(BuiltinId::example3);
  ex.problem.delay = 0.2;
  const TimeGrid grid = ex.grid(50);
  const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{2});
  const auto adj = aggregate_gbsde(ex.problem, ex.candidate, fam, 1, 3000, ex.basis);
  const auto c = check_criticality(ex.problem, ex.candidate, adj, fam, 1, 3000, ex.basis);
  EXPECT_EQ(c.mode, CriticalityResult::Mode::delayed_mean);
  EXPECT_TRUE(c.pass(2e-2)) << c.relative;

  const auto fb = Control::feedback([](double, double) { return 1.0; });
  EXPECT_THROW(check_criticality(ex.problem, fb, adj, fam, 1, 100, ex.basis), UnsupportedMode);
}

TEST(Verify, DerivativeProcessIsLinearInBeta) {
  for (auto id : {BuiltinId::example2, BuiltinId::example3}) {
    const auto ex = builtin(id);
    const TimeGrid grid = ex.grid(40);
    const auto sc = make_scenario(rule::Constant{0.7}, ex.problem.bounds, grid);
    const auto paths = simulate_driver(sc, grid, 4, 200);
    const auto state = simulate_state(ex.problem, ex.candidate, paths);
    const auto b1 = Control::open_loop([](double t) { return t; });
    const auto b2 = Control::constant(-0.3);
    const auto y1 = derivative_process(ex.problem, b1, paths, state);
    const auto y2 = derivative_process(ex.problem, b2, paths, state);
    const auto ysum = derivative_process(ex.problem, b1.plus(b2, 1.0), paths, state);
    const auto y4 = derivative_process(ex.problem, Control::constant(0.0).plus(b1, 4.0), paths, state);
    for (std::size_t i = 0; i < 200; i += 17)
      for (std::size_t k = 0; k <= 40; k += 5) {
        const double scale = 1e-12 * (1.0 + std::abs(y1.y(i, k)) + std::abs(y2.y(i, k)));
        EXPECT_NEAR(ysum.y(i, k), y1.y(i, k) + y2.y(i, k), scale);
        EXPECT_NEAR(y4.y(i, k), 4.0 * y1.y(i, k), 4.0 * scale);
      }
  }
}

TEST(Verify, DerivativeProcessMatchesStateDifferences) {
  for (auto id : {BuiltinId::example2, BuiltinId::example3, BuiltinId::counterexample}) {
    const auto ex = builtin(id);
    const TimeGrid grid = ex.grid(40);
    const auto sc = make_scenario(rule::Constant{0.6}, ex.problem.bounds, grid);
    const auto paths = simulate_driver(sc, grid, 8, 100);
    const auto state = simulate_state(ex.problem, ex.candidate, paths);
    const auto beta = Control::open_loop([](double t) { return 1.0 - t; });
    const auto y = derivative_process(ex.problem, beta, paths, state);
    const double h = 1e-5;
    const auto up = simulate_state(ex.problem, ex.candidate.plus(beta, h), paths);
    const auto dn = simulate_state(ex.problem, ex.candidate.plus(beta, -h), paths);
    for (std::size_t i = 0; i < 100; i += 9) {
      const double fd = (up.x(i, 40) - dn.x(i, 40)) / (2.0 * h);
      EXPECT_NEAR(y.y(i, 40), fd, 1e-5 * (1.0 + std::abs(fd))) << to_string(id);
    }
  }
}

TEST(Verify, GateauxOnBuiltins) {
  for (auto id : {BuiltinId::example1, BuiltinId::example2, BuiltinId::example3, BuiltinId::counterexample}) {
    const auto ex = builtin(id);
    const TimeGrid grid = ex.grid(50);
    const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{2}) +
                     canonical_family(ex.problem.bounds, grid, family::BangBangOnSign{0.5});
    for (const auto& beta : default_perturbations(grid))
      for (const auto& sc : fam) {
        const auto g = gateaux_check(ex.problem, ex.candidate, beta, sc, 2, 2000);
        EXPECT_TRUE(g.pass()) << to_string(id) << " " << beta.label << " " << sc.label() << " gap " << g.gap;
      }
  }
}

TEST(Verify, GateauxOnRandomProblems) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pr = random_problem(rng);
    const TimeGrid grid(1.0, 40);
    const auto fam = canonical_family(pr.bounds, grid, family::Constants{2});
    const auto control = Control::feedback([](double t, double x) { return 0.3 - 0.5 * x + 0.2 * t; });
    for (const auto& beta : default_perturbations(grid))
      for (const auto& sc : fam) {
        const auto g = gateaux_check(pr, control, beta, sc, 3, 2000);
        EXPECT_TRUE(g.pass()) << trial << " " << beta.label << " gap " << g.gap << " tol " << g.tolerance;
      }
  }
}

TEST(Verify, ConcavityFlagsConvexRunningReward) {
  const TimeGrid grid(1.0, 20);
  const VolatilityBounds bounds{0.25, 1.0};
  const auto fam = canonical_family(bounds, grid, family::Constants{2});
  VerifyOptions opt;
  opt.concavity_paths = 5;
  opt.concavity_times = 3;

  const auto good = lq();
  const auto adj = aggregate_gbsde(good, lq_optimal(), fam, 1, 2000, BasisSpec{});
  const auto ok = check_concavity(good, lq_optimal(), adj, fam, 1, opt);
  EXPECT_GT(ok.points_checked, 0u);
  EXPECT_TRUE(ok.violations.empty());

  const auto bad = lq(true);
  const auto adj2 = aggregate_gbsde(bad, lq_optimal(), fam, 1, 2000, BasisSpec{});
  const auto v = check_concavity(bad, lq_optimal(), adj2, fam, 1, opt);
  EXPECT_FALSE(v.violations.empty());
  EXPECT_EQ(v.violations.front().where, "H");
}

TEST(Verify, TerminalConcavity) {
  EXPECT_TRUE(terminal_concavity([](double x) { return std::log(x); }, 0.1, 5.0).empty());
  EXPECT_TRUE(terminal_concavity([](double x) { return 2.0 * x + 1.0; }, -3.0, 3.0).empty());
  const auto v = terminal_concavity([](double x) { return x * x; }, -1.0, 1.0);
  EXPECT_EQ(v.size(), 31u);
  EXPECT_EQ(v.front().where, "g");
}

TEST(Verify, RobustnessSeparatesGoodAndBadControls) {
  const auto ex = builtin(BuiltinId::example3);
  const TimeGrid grid = ex.grid(50);
  const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{3});
  const auto betas = default_perturbations(grid);
  const std::vector<double> as{-0.25, 0.25};

  const auto good = robustness_sweep(ex.problem, ex.candidate, betas, fam, as, 1, 5000);
  EXPECT_TRUE(good.strongly_robust_on_family());
  for (const auto& r : good.rows) EXPECT_LE(r.delta, 3.0 * r.std_error + 1e-12);

  const auto half = Control::constant(0.5);
  const auto bad = robustness_sweep(ex.problem, half, betas, fam, as, 1, 5000);
  EXPECT_GT(bad.counter_rows, 0u);
  const auto best = bad.strongest();
  ASSERT_TRUE(best);
  EXPECT_GT(bad.rows[*best].a, 0.0);
  EXPECT_EQ(bad.rows.size(), fam.size() * betas.size() * as.size());
}

TEST(Verify, GeneralMertonHasNoSingleRobustControl) {
  // The scenario-wise optimum for sigma_high^2 is beaten under sigma_low^2.
  const auto ex = builtin(BuiltinId::example3_general);
  const TimeGrid grid = ex.grid(50);
  const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{2});
  const auto betas = default_perturbations(grid);
  const auto sweep = robustness_sweep(ex.problem, ex.candidate, betas, fam, {0.5, 1.0}, 1, 5000);
  EXPECT_GT(sweep.counter_rows, 0u);
  for (const auto& r : sweep.rows) {
    if (r.improves) {
      EXPECT_EQ(r.scenario, fam[0].label());
    }
  }
  // Oracle: the scenario-wise optimum strictly beats the sigma_high one under sigma_low.
  const double lo = ex.params.bounds.sigma_low_sq;
  const auto own = example3_general_control(ex.params, lo);
  const auto sc = fam[0];
  const auto j_own = expect_under(FunctionalSpec::performance(ex.problem, own), sc, grid, 1, 5000);
  const auto j_hi = expect_under(FunctionalSpec::performance(ex.problem, ex.candidate), sc, grid, 1, 5000);
  EXPECT_NEAR(j_own.value, value_oracle(BuiltinId::example3_general, ex.params, lo), 4.0 * j_own.std_error);
  EXPECT_GT(j_own.value, j_hi.value);
}

TEST(Verify, FullBatteryOnExample1AndLq) {
  {
    const auto ex = builtin(BuiltinId::example1);
    const TimeGrid grid = ex.grid(40);
    VerifySetup s{ex.problem,
                  ex.candidate,
                  canonical_family(ex.problem.bounds, grid, family::Constants{3}) +
                      canonical_family(ex.problem.bounds, grid, family::BangBangOnSign{0.5}),
                  default_perturbations(grid),
                  ex.a_grid,
                  ex.basis,
                  7,
                  2000,
                  {}};
    const auto r = verify(s);
    for (const auto& v : r.verdicts) EXPECT_TRUE(v.pass) << v.check << " " << v.stat;
    EXPECT_TRUE(r.verdict("k_residual"));
    EXPECT_TRUE(r.verdict("gateaux"));
    EXPECT_FALSE(r.verdict("nonexistent"));
  }
  {
    const TimeGrid grid(1.0, 50);
    const auto pr = lq();
    VerifySetup s{pr,
                  lq_optimal(),
                  canonical_family(pr.bounds, grid, family::Constants{3}),
                  {{"one", Control::constant(1.0)}, {"ramp", Control::open_loop([](double t) { return t; })}},
                  {-0.2, 0.2},
                  BasisSpec{},
                  3,
                  5000,
                  {}};
    const auto r = verify(s);
    for (const auto& v : r.verdicts) EXPECT_TRUE(v.pass) << v.check << " " << v.stat;
  }
}
