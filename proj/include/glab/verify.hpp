#pragma once

// Maximum-principle checks for a candidate control: criticality of the
// Hamiltonian, concavity, the Gateaux derivative through the derivative
// process Y, and robustness sweeps over perturbations and scenarios.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glab/adjoint.hpp"
#include "glab/control_problem.hpp"
#include "glab/driver.hpp"
#include "glab/error.hpp"
#include "glab/expectation.hpp"
#include "glab/hamiltonian.hpp"
#include "glab/parallel.hpp"
#include "glab/scenario.hpp"

namespace glab {

struct VerifyOptions {
  double criticality_tol = 1e-2;
  std::size_t criticality_paths = 1000;  // paths per member in pointwise mode
  std::size_t remark_grid = 64;
  std::size_t lattice = 33;
  double lattice_margin = 0.1;
  double concavity_tol = 5e-2;
  std::size_t concavity_times = 5;
  std::size_t concavity_paths = 20;
  double fd_step = 1e-3;
  double gateaux_slack = 1e-2;
  std::size_t gateaux_paths = 20000;  // cap per (scenario, beta) cell
  double z = 3.0;
};

// ---------------------------------------------------------------- criticality

namespace detail {

/// |f_u| + |(b_u + mu_u rho) p| + |sigma_u rho q|
inline double du_terms(const ControlProblem& pr, double t, double x, double u, double p, double q, double rho) {
  return std::abs(pr.running.du(t, x, u)) + std::abs((pr.drift.du(t, x, u) + pr.qv_drift.du(t, x, u) * rho) * p) +
         std::abs(pr.diffusion.du(t, x, u) * rho * q);
}

/// |f| + |(b + mu rho) p| + |sigma rho q|
inline double h_terms(const ControlProblem& pr, double t, double x, double u, double p, double q, double rho) {
  return std::abs(pr.running(t, x, u)) + std::abs((pr.drift(t, x, u) + pr.qv_drift(t, x, u) * rho) * p) +
         std::abs(pr.diffusion(t, x, u) * rho * q);
}

}  // namespace detail

struct CriticalityResult {
  enum class Mode { pointwise, delayed_mean };
  Mode mode = Mode::pointwise;
  double stat = 0.0;      // max |dH/du| (or |mean dH/du| with delay)
  // max of |dH/du| / max(1, |f_u| + |(b_u + mu_u rho) p| + |sigma_u rho q|):
  // the size of dH/du against the terms that cancel in it.
  double relative = 0.0;
  std::string argmax_scenario;
  std::size_t argmax_node = 0;
  std::vector<double> per_node;  // max over members and paths of |.| per step
  // Pointwise mode: max over paths, nodes and a grid on U of H(v) - H(u_hat),
  // absolute and against max(1, summed |terms of H|) on the grid.
  double remark_gap = 0.0;
  double remark_relative = 0.0;
  bool remark_checked = false;

  bool pass(double tol) const { return relative <= tol && (!remark_checked || remark_relative <= tol); }
};

inline const char* to_string(CriticalityResult::Mode m) {
  return m == CriticalityResult::Mode::pointwise ? "pointwise" : "delayed_mean";
}

/// delta = 0: |dH/du| at (u_hat, p^G, q^G) over nodes and the first
/// criticality_paths paths of every Markovian member, plus the check that
/// u_hat maximizes H over a grid on U.
/// delta > 0 with an open-loop control: max over t_k and members of
/// |mean over paths of dH/du| with the per-measure adjoint.
inline CriticalityResult check_criticality(const ControlProblem& problem, const Control& control,
                                           const AdjointSolution& adjoint, const ScenarioFamily& family,
                                           std::uint64_t seed, std::size_t n_paths, const BasisSpec& basis,
                                           const VerifyOptions& opt = {}) {
  const auto& grid = family.grid();
  const std::size_t n = grid.n_steps();
  CriticalityResult out;
  out.per_node.assign(n, 0.0);

  auto note = [&](double v, double rel, std::size_t k, const std::string& label) {
    out.relative = std::max(out.relative, rel);
    out.per_node[k] = std::max(out.per_node[k], v);
    if (v > out.stat || (out.stat == 0.0 && out.argmax_scenario.empty())) {
      out.stat = v;
      out.argmax_node = k;
      out.argmax_scenario = label;
    }
  };

  if (problem.delay > 0.0) {
    if (!control.deterministic())
      throw UnsupportedMode(
          "criticality with delayed information needs conditional sublinear expectations; only open-loop "
          "controls are supported when delay > 0");
    out.mode = CriticalityResult::Mode::delayed_mean;
    for (const auto& sc : family) {
      const PathBundle paths = simulate_driver(sc, grid, seed, n_paths);
      const StatePaths state = simulate_state(problem, control, paths);
      const MeasureAdjoint adj = solve_adjoint_under(problem, control, sc, paths, state, basis);
      for (std::size_t k = 0; k < n; ++k) {
        double sum = 0.0, terms = 0.0;
        std::size_t c = 0;
        const double t = grid.time(k);
        for (std::size_t i = 0; i < n_paths; ++i) {
          if (!state.ok(i)) continue;
          const double x = state.x(i, k), u = state.u(i, k), rho = paths.theta_sq(i, k);
          sum += dH_du(problem, t, x, u, adj.p()(i, k), adj.q()(i, k), rho);
          terms += detail::du_terms(problem, t, x, u, adj.p()(i, k), adj.q()(i, k), rho);
          ++c;
        }
        const double v = std::abs(sum / static_cast<double>(c));
        note(v, v / std::max(1.0, terms / static_cast<double>(c)), k, sc.label());
      }
    }
    return out;
  }

  if (!adjoint.aggregate) throw UnsupportedMode("pointwise criticality needs p^G: " + adjoint.refusal);
  const auto& agg = *adjoint.aggregate;
  const std::size_t np = std::min(n_paths, opt.criticality_paths);
  const std::size_t ng = std::max<std::size_t>(opt.remark_grid, 2);
  out.remark_checked = true;
  for (const auto& sc : family) {
    if (!is_markovian(problem, control, sc)) continue;
    // The first np paths coincide with those of the full run.
    const PathBundle paths = simulate_driver(sc, grid, seed, np);
    const StatePaths state = simulate_state(problem, control, paths);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = grid.time(k);
      double worst = 0.0, worst_rel = 0.0;
      for (std::size_t i = 0; i < np; ++i) {
        if (!state.ok(i)) continue;
        const double x = state.x(i, k), u = state.u(i, k), rho = paths.theta_sq(i, k);
        auto pt = agg.at(k, x);
        pt.q = agg.members()[pt.argmax].q_from_slope(k, x);
        const double d = std::abs(dH_du(problem, t, x, u, pt.p, pt.q, rho));
        worst = std::max(worst, d);
        worst_rel = std::max(worst_rel, d / std::max(1.0, detail::du_terms(problem, t, x, u, pt.p, pt.q, rho)));
        const double h0 = hamiltonian(problem, t, x, u, pt.p, pt.q, rho);
        double gap = -std::numeric_limits<double>::infinity(), terms = 0.0;
        for (std::size_t j = 0; j < ng; ++j) {
          const double v = problem.controls.lo +
                           (problem.controls.hi - problem.controls.lo) * static_cast<double>(j) / static_cast<double>(ng - 1);
          gap = std::max(gap, hamiltonian(problem, t, x, v, pt.p, pt.q, rho) - h0);
          terms = std::max(terms, detail::h_terms(problem, t, x, v, pt.p, pt.q, rho));
        }
        out.remark_gap = std::max(out.remark_gap, gap);
        out.remark_relative = std::max(out.remark_relative, gap / std::max(1.0, terms));
      }
      note(worst, worst_rel, k, sc.label());
    }
  }
  if (out.argmax_scenario.empty()) throw UnsupportedMode("no Markovian member to check criticality on");
  return out;
}

// ----------------------------------------------------------------- concavity

struct ConcavityPoint {
  std::string where;  // "H" or "g"
  std::string scenario;
  double t = 0.0, x = 0.0, u = 0.0;
  double curvature = 0.0;  // largest eigenvalue of the lattice Hessian
  double scale = 0.0;      // size of the curvature of the individual terms
};

struct ConcavityResult {
  std::size_t points_checked = 0;
  std::vector<ConcavityPoint> violations;
  double worst_ratio = 0.0;  // max of curvature / scale over checked points
};

/// Lattice range around observed values, widened by margin; multiplicative
/// states stay positive.
inline std::pair<double, double> lattice_range(double lo, double hi, double margin, bool positive) {
  if (positive) return {lo / (1.0 + margin), hi * (1.0 + margin)};
  double w = hi - lo;
  if (!(w > 0.0)) w = std::max(std::abs(lo), 1.0);
  return {lo - margin * w, hi + margin * w};
}

namespace detail {

/// Largest eigenvalue of [[a, b], [b, c]].
inline double top_eigen(double a, double b, double c) {
  return 0.5 * (a + c) + std::sqrt(0.25 * (a - c) * (a - c) + b * b);
}
inline double abs_eigen(double a, double b, double c) {
  const double m = 0.5 * (a + c), r = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  return std::max(std::abs(m + r), std::abs(m - r));
}

}  // namespace detail

/// Concavity of (x, u) -> H(t, x, u, p, q) with (p, q) frozen at values of
/// the aggregated adjoint, and of g. Second differences are taken on a
/// lattice over the observed (x, u) range. A point violates when the largest
/// Hessian eigenvalue exceeds concavity_tol times the summed curvature of the
/// individual terms f, (b + mu rho) p and sigma rho q: a bilinear H that is
/// flat only because p and q cancel must not fail on estimation noise.
inline ConcavityResult check_concavity(const ControlProblem& problem, const Control& control,
                                       const AdjointSolution& adjoint, const ScenarioFamily& family,
                                       std::uint64_t seed, const VerifyOptions& opt = {}) {
  if (!adjoint.aggregate) throw UnsupportedMode("concavity needs p^G: " + adjoint.refusal);
  if (opt.lattice < 3) throw InvalidArgument("concavity lattice needs at least 3 points per axis");
  const auto& agg = *adjoint.aggregate;
  const auto& grid = family.grid();
  const std::size_t n = grid.n_steps();
  const std::size_t L = opt.lattice;
  const std::size_t np = std::max<std::size_t>(opt.concavity_paths, 1);
  ConcavityResult out;

  auto lattice = [L](double lo, double hi, std::size_t i) {
    return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(L - 1);
  };

  for (const auto& sc : family) {
    if (!is_markovian(problem, control, sc)) continue;
    const PathBundle paths = simulate_driver(sc, grid, seed, std::max<std::size_t>(np, 200));
    const StatePaths state = simulate_state(problem, control, paths);
    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ulo = xlo, uhi = -xlo;
    double glo = xlo, ghi = -xlo;
    for (std::size_t i = 0; i < paths.n_paths; ++i) {
      if (!state.ok(i)) continue;
      for (std::size_t k = 0; k < n; ++k) {
        xlo = std::min(xlo, state.x(i, k));
        xhi = std::max(xhi, state.x(i, k));
        ulo = std::min(ulo, state.u(i, k));
        uhi = std::max(uhi, state.u(i, k));
      }
      glo = std::min(glo, state.x(i, n));
      ghi = std::max(ghi, state.x(i, n));
    }
    const auto [x0, x1] = lattice_range(xlo, xhi, opt.lattice_margin, problem.multiplicative);
    auto [u0, u1] = lattice_range(ulo, uhi, opt.lattice_margin, false);
    u0 = std::max(u0, problem.controls.lo);
    u1 = std::min(u1, problem.controls.hi);
    const bool u_flat = !(u1 > u0);

    // H at sampled (t_k, p, q)
    const std::size_t nt = std::max<std::size_t>(opt.concavity_times, 1);
    for (std::size_t a = 0; a < nt; ++a) {
      const std::size_t k = nt == 1 ? 0 : (n - 1) * a / (nt - 1);
      const double t = grid.time(k);
      for (std::size_t i = 0; i < np && i < paths.n_paths; ++i) {
        if (!state.ok(i)) continue;
        const auto pt = agg.at(k, state.x(i, k));
        const double rho = paths.theta_sq(i, k);
        std::vector<double> h(L * L), tf(L * L), tp(L * L), tq(L * L);
        for (std::size_t ix = 0; ix < L; ++ix)
          for (std::size_t iu = 0; iu < L; ++iu) {
            const double x = lattice(x0, x1, ix), u = u_flat ? u0 : lattice(u0, u1, iu);
            const std::size_t id = ix * L + iu;
            tf[id] = problem.running(t, x, u);
            tp[id] = (problem.drift(t, x, u) + problem.qv_drift(t, x, u) * rho) * pt.p;
            tq[id] = problem.diffusion(t, x, u) * rho * pt.q;
            h[id] = tf[id] + tp[id] + tq[id];
          }
        auto hess = [L, u_flat](const std::vector<double>& f, std::size_t ix, std::size_t iu) {
          auto at = [&](std::size_t a, std::size_t b) { return f[a * L + b]; };
          const double fxx = at(ix + 1, iu) - 2.0 * at(ix, iu) + at(ix - 1, iu);
          if (u_flat) return std::array<double, 3>{fxx, 0.0, 0.0};
          const double fuu = at(ix, iu + 1) - 2.0 * at(ix, iu) + at(ix, iu - 1);
          const double fxu = 0.25 * (at(ix + 1, iu + 1) - at(ix + 1, iu - 1) - at(ix - 1, iu + 1) + at(ix - 1, iu - 1));
          return std::array<double, 3>{fxx, fxu, fuu};
        };
        const std::size_t ulo_i = u_flat ? 0 : 1, uhi_i = u_flat ? 1 : L - 1;
        for (std::size_t ix = 1; ix + 1 < L; ++ix)
          for (std::size_t iu = ulo_i; iu < uhi_i; ++iu) {
            const auto H = hess(h, ix, iu);
            const double top = detail::top_eigen(H[0], H[1], H[2]);
            double scale = 0.0;
            for (const auto* term : {&tf, &tp, &tq}) {
              const auto T = hess(*term, ix, iu);
              scale += detail::abs_eigen(T[0], T[1], T[2]);
            }
            const double floor = 1e-10 * (1.0 + std::abs(h[ix * L + iu]));
            ++out.points_checked;
            if (scale > floor) out.worst_ratio = std::max(out.worst_ratio, top / scale);
            if (top > opt.concavity_tol * scale + floor)
              out.violations.push_back({"H", sc.label(), t, lattice(x0, x1, ix), u_flat ? u0 : lattice(u0, u1, iu),
                                        top, scale});
          }
      }
    }
    // g on the terminal range
    const auto [g0, g1] = lattice_range(glo, ghi, opt.lattice_margin, problem.multiplicative);
    std::vector<double> g(L);
    for (std::size_t ix = 0; ix < L; ++ix) g[ix] = problem.terminal(lattice(g0, g1, ix));
    for (std::size_t ix = 1; ix + 1 < L; ++ix) {
      const double d2 = g[ix + 1] - 2.0 * g[ix] + g[ix - 1];
      const double floor = 1e-10 * (1.0 + std::abs(g[ix]));
      ++out.points_checked;
      if (std::abs(d2) > floor) out.worst_ratio = std::max(out.worst_ratio, d2 / std::abs(d2));
      if (d2 > floor) out.violations.push_back({"g", sc.label(), grid.horizon(), lattice(g0, g1, ix), 0.0, d2, std::abs(d2)});
    }
  }
  return out;
}

/// Concavity of g alone on [lo, hi]; no simulation involved.
inline std::vector<ConcavityPoint> terminal_concavity(const Fn1& g, double lo, double hi, std::size_t lattice = 33) {
  std::vector<ConcavityPoint> out;
  std::vector<double> v(lattice);
  for (std::size_t i = 0; i < lattice; ++i) v[i] = g(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(lattice - 1));
  for (std::size_t i = 1; i + 1 < lattice; ++i) {
    const double d2 = v[i + 1] - 2.0 * v[i] + v[i - 1];
    if (d2 > 1e-10 * (1.0 + std::abs(v[i])))
      out.push_back({"g", "", 0.0, lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(lattice - 1), 0.0, d2,
                     std::abs(d2)});
  }
  return out;
}

// ------------------------------------------------------- derivative process Y

struct DerivativeProcess {
  PathMatrix y;  // nodes
};

/// Y = dX/da of X^{u + a beta} at a = 0, integrated with the same scheme as
/// the state: Euler in X, or Euler in ln X for multiplicative problems.
/// Clipping into U is ignored (u is taken to be interior).
/// The control enters through the u already stored in state.
inline DerivativeProcess derivative_process(const ControlProblem& problem, const Control& beta,
                                            const PathBundle& paths, const StatePaths& state) {
  const auto& grid = paths.grid;
  const std::size_t n = grid.n_steps();
  const double dt = grid.dt();
  const std::size_t lag = problem.delay > 0.0 ? grid.floor_index(problem.delay) : 0;
  DerivativeProcess out{PathMatrix(paths.n_paths, n + 1, 0.0)};
  parallel_for(paths.n_paths, [&](std::size_t i) {
    auto y = out.y.row(i);
    if (!state.ok(i)) {
      for (auto& v : y) v = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    const auto b = paths.b.row(i);
    const auto x = state.x.row(i);
    double dz = 0.0;  // perturbation of ln X (multiplicative case)
    for (std::size_t k = 0; k < n; ++k) {
      const double t = grid.time(k);
      const std::size_t info = k >= lag ? k - lag : 0;
      const ControlContext ctx{k, t, info, b.subspan(0, info + 1), x.subspan(0, info + 1)};
      const double bk = beta(ctx);
      const double xk = x[k], uk = state.u(i, k), rho = paths.theta_sq(i, k);
      const double db = b[k + 1] - b[k];
      const double bx = problem.drift.dx(t, xk, uk), bu = problem.drift.du(t, xk, uk);
      const double mx = problem.qv_drift.dx(t, xk, uk), mu_u = problem.qv_drift.du(t, xk, uk);
      const double sx = problem.diffusion.dx(t, xk, uk), su = problem.diffusion.du(t, xk, uk);
      if (problem.multiplicative) {
        const double bb = problem.drift(t, xk, uk), mm = problem.qv_drift(t, xk, uk), ss = problem.diffusion(t, xk, uk);
        const double nu = ss / xk;
        const double nu_x = sx / xk - ss / (xk * xk), nu_u = su / xk;
        const double l_x = (bx + mx * rho) / xk - (bb + mm * rho) / (xk * xk) - nu * nu_x * rho;
        const double l_u = (bu + mu_u * rho) / xk - nu * nu_u * rho;
        const double yk = xk * dz;
        dz += (l_x * yk + l_u * bk) * dt + (nu_x * yk + nu_u * bk) * db;
        y[k + 1] = x[k + 1] * dz;
      } else {
        y[k + 1] = y[k] + ((bx + mx * rho) * y[k] + (bu + mu_u * rho) * bk) * dt + (sx * y[k] + su * bk) * db;
      }
    }
  });
  return out;
}

// -------------------------------------------------------------------- Gateaux

struct GateauxResult {
  std::string perturbation;
  std::string scenario;
  Estimate analytic;
  Estimate finite_difference;
  double gap = 0.0;        // |analytic - finite difference|
  double tolerance = 0.0;  // z (se_a + se_fd) + slack
  bool pass() const { return gap <= tolerance; }
};

/// d/da J^P(u + a beta) at 0, through Y and by central differences with
/// common random numbers.
inline GateauxResult gateaux_check(const ControlProblem& problem, const Control& control, const Perturbation& beta,
                                   const ScenarioProcess& scenario, std::uint64_t seed, std::size_t n_paths,
                                   const VerifyOptions& opt = {}) {
  const auto& grid = scenario.grid();
  const std::size_t n = grid.n_steps();
  const double dt = grid.dt();
  const std::size_t lag = problem.delay > 0.0 ? grid.floor_index(problem.delay) : 0;
  const PathBundle paths = simulate_driver(scenario, grid, seed, n_paths);
  const StatePaths state = simulate_state(problem, control, paths);
  const DerivativeProcess y = derivative_process(problem, beta.beta, paths, state);

  std::vector<double> analytic(n_paths);
  parallel_for(n_paths, [&](std::size_t i) {
    if (!state.ok(i)) {
      analytic[i] = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    const auto b = paths.b.row(i);
    const auto x = state.x.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = grid.time(k);
      const std::size_t info = k >= lag ? k - lag : 0;
      const ControlContext ctx{k, t, info, b.subspan(0, info + 1), x.subspan(0, info + 1)};
      const double xk = x[k], uk = state.u(i, k);
      acc += (problem.running.dx(t, xk, uk) * y.y(i, k) + problem.running.du(t, xk, uk) * beta.beta(ctx)) * dt;
    }
    analytic[i] = acc + problem.terminal_derivative(x[n]) * y.y(i, n);
  });

  // The difference quotient perturbs the realized control process, as Y does;
  // re-evaluating a feedback policy on the moved state would add a closed-loop term.
  PathMatrix beta_values(n_paths, n, 0.0);
  parallel_for(n_paths, [&](std::size_t i) {
    if (!state.ok(i)) return;
    const auto b = paths.b.row(i);
    const auto x = state.x.row(i);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t info = k >= lag ? k - lag : 0;
      beta_values(i, k) = beta.beta(ControlContext{k, grid.time(k), info, b.subspan(0, info + 1), x.subspan(0, info + 1)});
    }
  });
  PathMatrix base_u = state.u;
  for (std::size_t i = 0; i < n_paths; ++i)
    if (!state.ok(i))
      for (std::size_t k = 0; k < n; ++k) base_u(i, k) = 0.0;
  const auto perf = FunctionalSpec::performance(problem, control);
  const StatePaths up = simulate_state(problem, base_u, beta_values, opt.fd_step, paths);
  const StatePaths dn = simulate_state(problem, base_u, beta_values, -opt.fd_step, paths);
  const auto ju = evaluate_paths(perf, paths, &up);
  const auto jd = evaluate_paths(perf, paths, &dn);
  std::vector<double> fd(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) fd[i] = (ju[i] - jd[i]) / (2.0 * opt.fd_step);

  GateauxResult r;
  r.perturbation = beta.label;
  r.scenario = scenario.label();
  r.analytic = summarize(analytic, scenario.label());
  r.finite_difference = summarize(fd, scenario.label());
  r.gap = std::abs(r.analytic.value - r.finite_difference.value);
  r.tolerance = opt.z * (r.analytic.std_error + r.finite_difference.std_error) + opt.gateaux_slack;
  return r;
}

// ----------------------------------------------------------------- robustness

struct RobustnessRow {
  std::string scenario;
  std::string perturbation;
  double a = 0.0;
  double j_base = 0.0;
  double delta = 0.0;
  double std_error = 0.0;
  bool improves = false;  // delta > z se (plus a roundoff floor)
};

struct RobustnessResult {
  std::vector<RobustnessRow> rows;
  std::size_t counter_rows = 0;
  bool strongly_robust_on_family() const { return counter_rows == 0; }
  /// Row with the largest delta / se.
  std::optional<std::size_t> strongest() const {
    std::optional<std::size_t> best;
    double z = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double zi = rows[i].std_error > 0.0 ? rows[i].delta / rows[i].std_error
                                                : (rows[i].delta > 0.0 ? std::numeric_limits<double>::infinity()
                                                                       : (rows[i].delta < 0.0 ? -1e300 : 0.0));
      if (!best || zi > z) {
        best = i;
        z = zi;
      }
    }
    return best;
  }
};

/// Delta J = J^P(u + a beta) - J^P(u) for every (scenario, beta, a), each
/// scenario's cells sharing one set of driver paths.
inline RobustnessResult robustness_sweep(const ControlProblem& problem, const Control& candidate,
                                         const std::vector<Perturbation>& perturbations, const ScenarioFamily& family,
                                         const std::vector<double>& a_grid, std::uint64_t seed, std::size_t n_paths,
                                         const VerifyOptions& opt = {}) {
  RobustnessResult out;
  const auto perf = FunctionalSpec::performance(problem, candidate);
  for (const auto& sc : family) {
    const PathBundle paths = simulate_driver(sc, family.grid(), seed, n_paths);
    const StatePaths base = simulate_state(problem, candidate, paths);
    const auto jb = evaluate_paths(perf, paths, &base);
    const Estimate jb_est = summarize(jb, sc.label());
    for (const auto& beta : perturbations)
      for (double a : a_grid) {
        const StatePaths pert = simulate_state(problem, candidate.plus(beta.beta, a), paths);
        const auto jp = evaluate_paths(perf, paths, &pert);
        std::vector<double> d(n_paths);
        for (std::size_t i = 0; i < n_paths; ++i) d[i] = jp[i] - jb[i];
        const Estimate e = summarize(d, sc.label());
        RobustnessRow row{sc.label(), beta.label, a, jb_est.value, e.value, e.std_error, false};
        row.improves = e.value > opt.z * e.std_error + 1e-12 * (1.0 + std::abs(jb_est.value));
        out.counter_rows += row.improves;
        out.rows.push_back(std::move(row));
      }
  }
  return out;
}

// --------------------------------------------------------------------- report

struct Verdict {
  std::string check;
  bool pass = false;
  double stat = 0.0;
  double tol = 0.0;
};

struct VerificationReport {
  std::string problem;
  std::string control;
  AdjointSolution adjoint;
  std::optional<CriticalityResult> criticality;
  std::optional<ConcavityResult> concavity;
  std::vector<GateauxResult> gateaux;
  RobustnessResult robustness;
  std::vector<Verdict> verdicts;

  bool all_pass() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
  }
  const Verdict* verdict(const std::string& check) const {
    for (const auto& v : verdicts)
      if (v.check == check) return &v;
    return nullptr;
  }
};

struct VerifySetup {
  ControlProblem problem;
  Control control;
  ScenarioFamily family;
  std::vector<Perturbation> perturbations;
  std::vector<double> a_grid;
  BasisSpec basis;
  std::uint64_t seed = 0;
  std::size_t n_paths = 10000;
  VerifyOptions options;
};

/// Runs the whole battery. Verdicts:
///   criticality  stat = relative |dH/du| and H gap       tol = criticality_tol
///   concavity    stat = worst curvature ratio            tol = concavity_tol
///   k_residual   stat = max over references of max z     tol = z
///   gateaux      stat = max gap / tolerance              tol = 1
///   robustness   stat = number of improving cells        tol = 0
///   comparison   stat = share of violating nodes         tol = 0.001
inline VerificationReport verify(const VerifySetup& s) {
  VerificationReport r;
  r.problem = s.problem.id;
  r.control = s.control.label();
  const auto& opt = s.options;
  r.adjoint = aggregate_gbsde(s.problem, s.control, s.family, s.seed, s.n_paths, s.basis);

  const bool can_aggregate = r.adjoint.aggregate.has_value();
  if (can_aggregate || s.problem.delay > 0.0) {
    r.criticality = check_criticality(s.problem, s.control, r.adjoint, s.family, s.seed, s.n_paths, s.basis, opt);
    r.verdicts.push_back({"criticality", r.criticality->pass(opt.criticality_tol),
                          std::max(r.criticality->relative, r.criticality->remark_relative), opt.criticality_tol});
  }
  if (can_aggregate) {
    r.concavity = check_concavity(s.problem, s.control, r.adjoint, s.family, s.seed, opt);
    r.verdicts.push_back(
        {"concavity", r.concavity->violations.empty(), r.concavity->worst_ratio, opt.concavity_tol});
    double worst_z = 0.0;
    bool within = true;
    std::size_t nodes = 0, viol = 0;
    for (const auto& res : r.adjoint.residuals) {
      worst_z = std::max(worst_z, res.max_z);
      within = within && res.within(opt.z);
      nodes += res.comparison_nodes;
      viol += res.comparison_violations;
    }
    r.verdicts.push_back({"k_residual", within, worst_z, opt.z});
    const double share = nodes ? static_cast<double>(viol) / static_cast<double>(nodes) : 0.0;
    r.verdicts.push_back({"comparison", share <= 1e-3, share, 1e-3});
  }

  double worst_gap = 0.0;
  bool gateaux_ok = true;
  for (const auto& sc : s.family)
    for (const auto& beta : s.perturbations) {
      r.gateaux.push_back(
          gateaux_check(s.problem, s.control, beta, sc, s.seed, std::min(s.n_paths, opt.gateaux_paths), opt));
      const auto& g = r.gateaux.back();
      worst_gap = std::max(worst_gap, g.tolerance > 0.0 ? g.gap / g.tolerance : 0.0);
      gateaux_ok = gateaux_ok && g.pass();
    }
  if (!r.gateaux.empty()) r.verdicts.push_back({"gateaux", gateaux_ok, worst_gap, 1.0});

  r.robustness = robustness_sweep(s.problem, s.control, s.perturbations, s.family, s.a_grid, s.seed, s.n_paths, opt);
  r.verdicts.push_back({"robustness", r.robustness.strongly_robust_on_family(),
                        static_cast<double>(r.robustness.counter_rows), 0.0});
  return r;
}

}  // namespace glab
