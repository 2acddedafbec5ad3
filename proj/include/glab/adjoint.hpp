#pragma once

// Adjoint equation dp = -dH/dx dt + q dB + dK, p(T) = g'(X(T)).
//
// Under a fixed scenario the equation is a classical BSDE (K = 0) and is
// solved by backward least-squares regression. Across a family of Markovian
// scenarios the value functions are aggregated by a pointwise maximum, and
// the drift left over when that maximum is pushed through the equation is
// reported as the K-residual.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glab/control_problem.hpp"
#include "glab/driver.hpp"
#include "glab/error.hpp"
#include "glab/hamiltonian.hpp"
#include "glab/parallel.hpp"
#include "glab/regression.hpp"
#include "glab/scenario.hpp"

namespace glab {

/// Default basis: cubic in the state, or in ln X for multiplicative problems,
/// weighted by x^gamma when the problem declares the adjoint's homogeneity.
inline BasisSpec default_basis(const ControlProblem& problem) {
  BasisSpec b;
  b.degree = 3;
  b.coordinate = problem.multiplicative ? BasisSpec::Coordinate::log_state : BasisSpec::Coordinate::state;
  b.weight_power = problem.adjoint_power;
  return b;
}

/// Regression fitted on one step [t_k, t_{k+1}).
struct StepFit {
  NodeBasis basis;
  std::vector<double> cond_coeffs;  // E[p_{k+1} | X_k]
  std::vector<double> q_coeffs;     // q_k
  // When theta^2_k varies across paths (path-dependent scenarios) every basis
  // function also enters multiplied by theta^2_k, and the coefficient vectors
  // hold the plain block followed by the theta^2 block.
  bool split_by_theta = false;
  double r_squared = 1.0;
  double condition = 1.0;
  std::optional<double> theta_sq;   // set for deterministic scenarios
};

/// Per-measure adjoint (p^P, q^P) on the simulated paths, plus the fitted
/// functions of the state when the setting is Markovian.
class MeasureAdjoint {
 public:
  MeasureAdjoint(std::string scenario, TimeGrid grid, ControlProblem problem, Control control, bool markovian)
      : scenario_(std::move(scenario)),
        grid_(grid),
        problem_(std::move(problem)),
        control_(std::move(control)),
        markovian_(markovian) {}

  const std::string& scenario() const noexcept { return scenario_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  bool markovian() const noexcept { return markovian_; }
  const std::vector<StepFit>& fits() const noexcept { return fits_; }
  const PathMatrix& p() const noexcept { return p_; }
  const PathMatrix& q() const noexcept { return q_; }
  const ControlProblem& problem() const noexcept { return problem_; }

  /// Drops the per-path arrays, keeping the fitted functions.
  void release_paths() {
    p_ = {};
    q_ = {};
  }


  /// Fitted p(t_k, x); g'(x) at the terminal node.
  double value(std::size_t k, double x) const {
    if (k == grid_.n_steps()) return problem_.terminal_derivative(x);
    return value_and_q(k, x).first;
  }

  /// The control and coefficient partials at (t_k, x); identical for every
  /// adjoint of the same (problem, control).
  struct NodePoint {
    double u = 0.0;
    StatePartials partials;
    NodeBasis::Point basis;
  };
  NodePoint prepare(std::size_t k, double x) const {
    require_markovian();
    const double t = grid_.time(k);
    const double u = problem_.controls.clip(control_.at(k, t, x));
    return {u, state_partials(problem_, t, x, u), fits_.at(k).basis.prepare(x)};
  }

  /// (p, q) at a prepared point of node k < N.
  std::pair<double, double> value_and_q(std::size_t k, const NodePoint& pt) const {
    const auto& fit = fits_[k];
    const auto [cond, q] = fit.basis.dot2(fit.cond_coeffs, fit.q_coeffs, pt.basis);
    return {implicit_step(pt.partials, cond, q, *fit.theta_sq), q};
  }
  std::pair<double, double> value_and_q(std::size_t k, double x) const { return value_and_q(k, prepare(k, x)); }

  /// sigma(t_k, x, u) d/dx E[p_{k+1} | X_k = x]: the Markovian form of q,
  /// smoother in x than the regression estimate.
  double q_from_slope(std::size_t k, double x) const {
    require_markovian();
    const double t = grid_.time(k);
    const double u = problem_.controls.clip(control_.at(k, t, x));
    return problem_.diffusion(t, x, u) * fits_.at(k).basis.derivative(fits_[k].cond_coeffs, x);
  }

  /// Solves p = E[p_{k+1}] + dH/dx(p) dt; dH/dx is affine in p.
  double implicit_step(const StatePartials& d, double cond, double q, double theta_sq) const {
    const double dt = grid_.dt();
    const double slope = (d.bx + d.mux * theta_sq) * dt;
    if (!(std::abs(slope) < 0.5)) throw NumericalError("time step too coarse for the adjoint; refine the grid");
    return (cond + (d.fx + d.sx * theta_sq * q) * dt) / (1.0 - slope);
  }

 private:
  void require_markovian() const {
    if (!markovian_) throw UnsupportedMode("adjoint of '" + scenario_ + "' is not a function of the state alone");
  }

  friend MeasureAdjoint solve_adjoint_under(const ControlProblem&, const Control&, const ScenarioProcess&,
                                            const PathBundle&, const StatePaths&, const BasisSpec&);

  std::string scenario_;
  TimeGrid grid_;
  ControlProblem problem_;
  Control control_;
  bool markovian_;
  std::vector<StepFit> fits_;
  PathMatrix p_;  // nodes
  PathMatrix q_;  // steps
};

/// Whether (problem, control, scenario) admits adjoints that are functions of (t, x).
inline bool is_markovian(const ControlProblem& problem, const Control& control, const ScenarioProcess& scenario) {
  if (!scenario.is_markovian()) return false;
  switch (control.kind()) {
    case Control::Kind::open_loop:
      return true;
    case Control::Kind::feedback:
      return problem.delay == 0.0;
    case Control::Kind::path_rule:
      return false;
  }
  return false;
}

/// Backward induction under one measure:
///   p_N = g'(X_N),
///   p_{k+1} ~ a(X_k) + q(X_k) dB_k + c(X_k) (dB_k^2 - theta^2 dt)   (joint least squares),
///   p_k = a(X_k) + dH/dx(t_k, X_k, u_k, p_k, q_k) dt.
/// The joint fit has the same population solution as projecting p_{k+1} and
/// p_{k+1} dB_k / (theta^2 dt) separately, with far less noise in q. The
/// third block is a zero-mean control variate: it leaves a and q unchanged in
/// the limit and removes the second-order noise that would otherwise drift
/// the fitted a by O(theta^2 dt / sqrt(n)) per step.
inline MeasureAdjoint solve_adjoint_under(const ControlProblem& problem, const Control& control,
                                          const ScenarioProcess& scenario, const PathBundle& paths,
                                          const StatePaths& state, const BasisSpec& basis_spec) {
  if (paths.scenario != scenario.label()) throw InvalidArgument("paths were not simulated under '" + scenario.label() + "'");
  const auto& grid = paths.grid;
  const std::size_t n = grid.n_steps();
  const std::size_t np = paths.n_paths;

  MeasureAdjoint out(scenario.label(), grid, problem, control, is_markovian(problem, control, scenario));
  out.p_ = PathMatrix(np, n + 1, std::numeric_limits<double>::quiet_NaN());
  out.q_ = PathMatrix(np, n, std::numeric_limits<double>::quiet_NaN());
  out.fits_.resize(n);

  std::vector<unsigned char> skip(np, 0);
  for (std::size_t i = 0; i < np; ++i) skip[i] = state.ok(i) ? 0 : 1;
  for (std::size_t i = 0; i < np; ++i)
    if (!skip[i]) out.p_(i, n) = problem.terminal_derivative(state.x(i, n));

  std::vector<double> xk(np);
  std::vector<NodeBasis::Point> pts(np);
  std::vector<double> phi(96);
  for (std::size_t kk = n; kk-- > 0;) {
    const double t = grid.time(kk);
    for (std::size_t i = 0; i < np; ++i) xk[i] = state.x(i, kk);
    StepFit fit;
    fit.basis = NodeBasis(basis_spec, xk, skip);
    fit.theta_sq = scenario.deterministic_theta_sq(kk);
    if (!fit.theta_sq) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i = 0; i < np; ++i)
        if (!skip[i]) {
          lo = std::min(lo, paths.theta_sq(i, kk));
          hi = std::max(hi, paths.theta_sq(i, kk));
        }
      fit.split_by_theta = hi - lo > 1e-12 * std::max(1.0, hi);
    }
    const std::size_t m = fit.basis.size();
    const std::size_t mm = fit.split_by_theta ? 2 * m : m;  // columns per fitted function

    NormalEquations ne(3 * mm);
    double sum = 0.0, sumsq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < np; ++i) {
      if (skip[i]) continue;
      const double db = paths.db(i, kk);
      pts[i] = fit.basis.prepare(xk[i]);
      fit.basis.evaluate(pts[i], std::span<double>(phi.data(), m));
      const double w = pts[i].w;
      for (std::size_t j = 0; j < m; ++j) phi[j] /= w;
      if (fit.split_by_theta)
        for (std::size_t j = 0; j < m; ++j) phi[m + j] = phi[j] * paths.theta_sq(i, kk);
      const double gamma = db * db - paths.theta_sq(i, kk) * grid.dt();
      for (std::size_t j = 0; j < mm; ++j) {
        phi[mm + j] = phi[j] * db;
        phi[2 * mm + j] = phi[j] * gamma;
      }
      const double target = out.p_(i, kk + 1);
      ne.add(std::span<const double>(phi.data(), 3 * mm), target / w);
      sum += target;
      sumsq += target * target;
      ++count;
    }
    const auto sol = ne.solve();
    fit.condition = sol.condition;
    fit.cond_coeffs.assign(sol.coeffs.data(), sol.coeffs.data() + mm);
    fit.q_coeffs.assign(sol.coeffs.data() + mm, sol.coeffs.data() + 2 * mm);
    const std::vector<double> gamma_coeffs(sol.coeffs.data() + 2 * mm, sol.coeffs.data() + 3 * mm);

    double ssr = 0.0;
    for (std::size_t i = 0; i < np; ++i) {
      if (skip[i]) continue;
      auto [a, q] = fit.basis.dot2(std::span<const double>(fit.cond_coeffs).first(m),
                                   std::span<const double>(fit.q_coeffs).first(m), pts[i]);
      if (fit.split_by_theta) {
        const auto [a2, q2] = fit.basis.dot2(std::span<const double>(fit.cond_coeffs).subspan(m),
                                             std::span<const double>(fit.q_coeffs).subspan(m), pts[i]);
        a += a2 * paths.theta_sq(i, kk);
        q += q2 * paths.theta_sq(i, kk);
      }
      const std::span<const double> gc(gamma_coeffs);
      const auto [c1, c2] = fit.basis.dot2(gc.first(m), fit.split_by_theta ? gc.subspan(m) : gc.first(m), pts[i]);
      const double c = fit.split_by_theta ? c1 + c2 * paths.theta_sq(i, kk) : c1;
      const double db = paths.db(i, kk);
      const double resid = out.p_(i, kk + 1) - a - q * db - c * (db * db - paths.theta_sq(i, kk) * grid.dt());
      ssr += resid * resid;
      out.q_(i, kk) = q;
      out.p_(i, kk) = out.implicit_step(state_partials(problem, t, xk[i], state.u(i, kk)), a, q, paths.theta_sq(i, kk));
    }
    const double mean = count ? sum / static_cast<double>(count) : 0.0;
    const double sst = sumsq - static_cast<double>(count) * mean * mean;
    fit.r_squared = sst > 1e-14 * std::max(1.0, sumsq) ? 1.0 - ssr / sst : 1.0;
    out.fits_[kk] = std::move(fit);
  }
  return out;
}

/// Pointwise maximum of per-measure value functions.
class GAdjoint {
 public:
  explicit GAdjoint(std::vector<MeasureAdjoint> members) : members_(std::move(members)) {
    if (members_.empty()) throw InvalidArgument("aggregation needs at least one member");
    if (members_.size() > 64) throw InvalidArgument("aggregation supports at most 64 members");
    for (const auto& m : members_)
      if (!m.markovian())
        throw UnsupportedMode("aggregation refused: '" + m.scenario() + "' is not Markovian; use per-measure results");
  }

  struct Point {
    double p = 0.0;
    double q = 0.0;
    std::size_t argmax = 0;
  };

  /// p^G(t_k, x) = max over members; q from the maximizing member (lowest
  /// index on ties). values, when given, receives every member's p.
  Point at(std::size_t k, double x, std::span<double> values = {}) const {
    if (k == grid().n_steps()) {
      const double g = members_.front().problem().terminal_derivative(x);
      for (auto& v : values) v = g;
      return {g, 0.0, 0};
    }
    // Members share problem, control and basis spec, hence the prepared point.
    const auto pt = members_[0].prepare(k, x);
    const auto [p0, q0] = members_[0].value_and_q(k, pt);
    Point best{p0, q0, 0};
    if (!values.empty()) values[0] = p0;
    for (std::size_t i = 1; i < members_.size(); ++i) {
      const auto [p, q] = members_[i].value_and_q(k, pt);
      if (!values.empty()) values[i] = p;
      if (p > best.p) best = {p, q, i};
    }
    return best;
  }

  const std::vector<MeasureAdjoint>& members() const noexcept { return members_; }
  const TimeGrid& grid() const noexcept { return members_.front().grid(); }

 private:
  std::vector<MeasureAdjoint> members_;
};

/// K-residual along the paths of one reference scenario.
struct ResidualReport {
  std::string reference;
  std::vector<double> k_mean;  // nodes
  std::vector<double> k_se;    // nodes
  double max_abs = 0.0;
  double floor = 0.0;  // roundoff allowance added to every tolerance
  double max_z = 0.0;  // max over nodes of (|mean| - floor)^+ / se
  std::size_t argmax_node = 0;
  std::size_t increments_up = 0;    // mean increment > +3 se
  std::size_t increments_down = 0;  // mean increment < -3 se
  bool non_increasing = true;
  // p^G >= p^P against every aggregated member at every node visited.
  std::size_t comparison_nodes = 0;
  std::size_t comparison_violations = 0;
  // Against a path-dependent reference's own regression estimate; a
  // diagnostic, since that estimate is only a projection on the state.
  std::size_t path_dependent_nodes = 0;
  std::size_t path_dependent_exceed = 0;  // p^P > (1 + kPathDependentSlack) p^G
  double path_dependent_max_excess = 0.0;  // max of p^P / p^G - 1

  double terminal() const { return k_mean.back(); }
  double terminal_se() const { return k_se.back(); }
  /// |K(t)| <= z * se(t) + floor at every node.
  bool within(double z) const {
    for (std::size_t k = 0; k < k_mean.size(); ++k)
      if (std::abs(k_mean[k]) > z * k_se[k] + floor) return false;
    return true;
  }
};

/// Roundoff allowance for K-residual tests, relative to 1 + mean |p^G(0)|.
inline constexpr double kResidualFloor = 1e-9;

/// Relative slack for the comparison p^G >= p^P.
inline constexpr double kComparisonTolerance = 1e-8;
/// Relative slack when the reference is path dependent.
inline constexpr double kPathDependentSlack = 1e-2;

/// Delta K_k = Delta p^G_k + dH/dx dt - q^G_k Delta B_k along the reference
/// paths, averaged over paths. own is the reference's per-measure solution on
/// the same paths when the reference is path dependent.
inline ResidualReport residual_under(const GAdjoint& agg, const ControlProblem& problem, const PathBundle& paths,
                                     const StatePaths& state, const MeasureAdjoint* own = nullptr) {
  const auto& grid = paths.grid;
  const std::size_t n = grid.n_steps();
  const std::size_t np = paths.n_paths;
  const double dt = grid.dt();

  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < np; ++i)
    if (state.ok(i)) valid.push_back(i);
  if (valid.size() < 2) throw NumericalError("K-residual needs at least two valid paths");
  const std::size_t nv = valid.size();
  const double c = static_cast<double>(nv);

  std::vector<double> p_cur(nv), q_cur(nv), p_next(nv), q_next(nv), kpath(nv, 0.0), inc(nv);
  const std::size_t nm = agg.members().size();
  std::vector<std::size_t> viol(nv, 0), exceed(nv, 0);
  std::vector<double> excess(nv, 0.0);

  // Fills p^G, q^G at node k and counts comparison violations.
  auto evaluate_node = [&](std::size_t k, std::vector<double>& p_out, std::vector<double>& q_out) {
    parallel_for(nv, [&](std::size_t j) {
      const double x = state.x(valid[j], k);
      if (k == n) {
        p_out[j] = problem.terminal_derivative(x);
        q_out[j] = 0.0;
        return;
      }
      std::array<double, 64> vals{};
      const auto pt = agg.at(k, x, std::span<double>(vals.data(), nm));
      for (std::size_t m = 0; m < nm; ++m)
        if (pt.p < vals[m] - kComparisonTolerance * std::max(1.0, std::abs(vals[m]))) ++viol[j];
      if (own) {
        const double pp = own->p()(valid[j], k);
        const double rel = pp / pt.p - 1.0;
        excess[j] = std::max(excess[j], rel);
        if (rel > kPathDependentSlack) ++exceed[j];
      }
      p_out[j] = pt.p;
      q_out[j] = pt.q;
    });
  };

  auto moments = [&](const std::vector<double>& v) {
    double sum = 0.0;
    for (double e : v) sum += e;
    const double mean = sum / c;
    double ss = 0.0;
    for (double e : v) ss += (e - mean) * (e - mean);
    return std::pair{mean, std::sqrt(ss / (c - 1.0) / c)};
  };

  ResidualReport r;
  r.reference = paths.scenario;
  r.k_mean.assign(n + 1, 0.0);
  r.k_se.assign(n + 1, 0.0);
  evaluate_node(0, p_cur, q_cur);
  double scale = 0.0;
  for (double v : p_cur) scale += std::abs(v);
  r.floor = kResidualFloor * (1.0 + scale / c);
  for (std::size_t k = 0; k < n; ++k) {
    evaluate_node(k + 1, p_next, q_next);
    const double t = grid.time(k);
    parallel_for(nv, [&](std::size_t j) {
      const std::size_t i = valid[j];
      const double hx = dH_dx(problem, t, state.x(i, k), state.u(i, k), p_cur[j], q_cur[j], paths.theta_sq(i, k));
      inc[j] = p_next[j] - p_cur[j] + hx * dt - q_cur[j] * paths.db(i, k);
      kpath[j] += inc[j];
    });
    const auto [im, ise] = moments(inc);
    if (im > 3.0 * ise + r.floor) ++r.increments_up;
    if (im < -3.0 * ise - r.floor) ++r.increments_down;
    const auto [km, kse] = moments(kpath);
    r.k_mean[k + 1] = km;
    r.k_se[k + 1] = kse;
    std::swap(p_cur, p_next);
    std::swap(q_cur, q_next);
  }
  for (std::size_t k = 0; k <= n; ++k) {
    const double a = std::abs(r.k_mean[k]);
    if (a > r.max_abs) {
      r.max_abs = a;
      r.argmax_node = k;
    }
    const double excess = std::max(0.0, a - r.floor);
    if (r.k_se[k] > 0.0) r.max_z = std::max(r.max_z, excess / r.k_se[k]);
    else if (excess > 0.0) r.max_z = std::numeric_limits<double>::infinity();
  }
  r.non_increasing = r.increments_up == 0;
  r.comparison_nodes = nv * n * nm;
  for (auto v : viol) r.comparison_violations += v;
  if (own) {
    r.path_dependent_nodes = nv * n;
    for (auto v : exceed) r.path_dependent_exceed += v;
    for (auto e : excess) r.path_dependent_max_excess = std::max(r.path_dependent_max_excess, e);
  }
  return r;
}

/// Everything the adjoint stage produces for a family.
struct AdjointSolution {
  std::optional<GAdjoint> aggregate;          // empty when aggregation was refused
  std::vector<std::string> member_labels;     // family order
  std::vector<double> member_p0;              // p^P(0, x0) per member
  std::vector<std::vector<double>> member_r2; // per member, per step
  std::vector<std::vector<double>> member_condition;
  std::vector<ResidualReport> residuals;      // one per member, family order
  std::size_t worst = 0;                      // index into residuals, largest max_z
  std::string refusal;                        // why aggregation was refused, if it was
};

/// Per-measure solves for every member, aggregation over the Markovian ones,
/// and the K-residual along the paths of every member.
inline AdjointSolution aggregate_gbsde(const ControlProblem& problem, const Control& control,
                                       const ScenarioFamily& family, std::uint64_t seed, std::size_t n_paths,
                                       const BasisSpec& basis) {
  AdjointSolution out;
  const std::size_t nf = family.size();
  out.member_labels.resize(nf);
  out.member_p0.resize(nf);
  out.member_r2.resize(nf);
  out.member_condition.resize(nf);

  auto record = [&](std::size_t i, const MeasureAdjoint& adj, const StatePaths& state) {
    out.member_labels[i] = family[i].label();
    double p0 = 0.0;
    std::size_t c = 0;
    for (std::size_t j = 0; j < n_paths; ++j)
      if (state.ok(j)) {
        p0 += adj.p()(j, 0);
        ++c;
      }
    out.member_p0[i] = c ? p0 / static_cast<double>(c) : std::numeric_limits<double>::quiet_NaN();
    for (const auto& f : adj.fits()) {
      out.member_r2[i].push_back(f.r_squared);
      out.member_condition[i].push_back(f.condition);
    }
  };

  std::vector<MeasureAdjoint> markov;
  for (std::size_t i = 0; i < nf; ++i) {
    if (!is_markovian(problem, control, family[i])) continue;
    const PathBundle paths = simulate_driver(family[i], family.grid(), seed, n_paths);
    const StatePaths state = simulate_state(problem, control, paths);
    MeasureAdjoint adj = solve_adjoint_under(problem, control, family[i], paths, state, basis);
    record(i, adj, state);
    adj.release_paths();
    markov.push_back(std::move(adj));
  }
  if (markov.empty()) {
    out.refusal = "no Markovian member (control or scenarios depend on the path); per-measure results only";
    for (std::size_t i = 0; i < nf; ++i) {
      const PathBundle paths = simulate_driver(family[i], family.grid(), seed, n_paths);
      const StatePaths state = simulate_state(problem, control, paths);
      record(i, solve_adjoint_under(problem, control, family[i], paths, state, basis), state);
    }
    return out;
  }
  out.aggregate.emplace(std::move(markov));
  for (std::size_t i = 0; i < nf; ++i) {
    const PathBundle paths = simulate_driver(family[i], family.grid(), seed, n_paths);
    const StatePaths state = simulate_state(problem, control, paths);
    if (is_markovian(problem, control, family[i])) {
      out.residuals.push_back(residual_under(*out.aggregate, problem, paths, state));
    } else {
      const MeasureAdjoint own = solve_adjoint_under(problem, control, family[i], paths, state, basis);
      record(i, own, state);
      out.residuals.push_back(residual_under(*out.aggregate, problem, paths, state, &own));
    }
    if (out.residuals.back().max_z > out.residuals[out.worst].max_z) out.worst = out.residuals.size() - 1;
  }
  return out;
}

}  // namespace glab
