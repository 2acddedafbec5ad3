#pragma once

// Per-measure expectations E^P[.] and the sublinear expectation
// sup over a scenario family, estimated with common random numbers.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glab/control_problem.hpp"
#include "glab/driver.hpp"
#include "glab/error.hpp"
#include "glab/scenario.hpp"

namespace glab {

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
  std::string scenario;
};

/// Read-only view of one simulated path.
struct PathView {
  const TimeGrid& grid;
  std::span<const double> w, b, qv, theta_sq;
  std::span<const double> x, u;  // empty when no state was simulated
};

using PathFunctional = std::function<double(const PathView&)>;

/// Either the performance functional of (problem, control) or an arbitrary
/// path functional.
class FunctionalSpec {
 public:
  static FunctionalSpec performance(ControlProblem problem, Control control) {
    FunctionalSpec s;
    s.problem_ = std::move(problem);
    s.control_ = std::move(control);
    return s;
  }
  static FunctionalSpec path(PathFunctional fn, std::optional<std::pair<ControlProblem, Control>> state = {}) {
    FunctionalSpec s;
    s.fn_ = std::move(fn);
    if (state) {
      s.problem_ = std::move(state->first);
      s.control_ = std::move(state->second);
    }
    return s;
  }

  bool needs_state() const noexcept { return problem_.has_value(); }
  const std::optional<ControlProblem>& problem() const noexcept { return problem_; }
  const Control& control() const noexcept { return control_; }

  /// sum_k f(t_k, x_k, u_k) dt + g(x_N) for performance functionals.
  double operator()(const PathView& v) const {
    if (fn_) return fn_(v);
    const auto& pr = *problem_;
    const std::size_t n = v.grid.n_steps();
    const double dt = v.grid.dt();
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += pr.running(v.grid.time(k), v.x[k], v.u[k]) * dt;
    return acc + pr.terminal(v.x[n]);
  }

 private:
  FunctionalSpec() = default;
  PathFunctional fn_;
  std::optional<ControlProblem> problem_;
  Control control_;
};

/// Mean and standard error of per-path samples; non-finite samples are
/// dropped, more than 1% of them is an error.
inline Estimate summarize(std::span<const double> samples, std::string scenario = {}) {
  std::size_t n = 0, bad = 0;
  double mean = 0.0, m2 = 0.0;
  for (double s : samples) {
    if (!std::isfinite(s)) {
      ++bad;
      continue;
    }
    ++n;
    const double d = s - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (s - mean);
  }
  if (static_cast<double>(bad) > kMaxFlaggedShare * static_cast<double>(samples.size()) || n == 0)
    throw NumericalError(std::to_string(bad) + " of " + std::to_string(samples.size()) +
                         " functional evaluations are non-finite");
  // Plain sum for the mean keeps the estimator exactly linear in the samples.
  double sum = 0.0;
  for (double s : samples)
    if (std::isfinite(s)) sum += s;
  mean = sum / static_cast<double>(n);
  const double var = n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
  return {mean, std::sqrt(std::max(var, 0.0) / static_cast<double>(n)), n, std::move(scenario)};
}

/// Per-path functional values on already simulated paths. Flagged paths give NaN.
inline std::vector<double> evaluate_paths(const FunctionalSpec& functional, const PathBundle& paths,
                                          const StatePaths* state) {
  std::vector<double> out(paths.n_paths);
  parallel_for(paths.n_paths, [&](std::size_t p) {
    if (state && !state->ok(p)) {
      out[p] = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    PathView v{paths.grid,
               paths.w.row(p),
               paths.b.row(p),
               paths.qv.row(p),
               paths.theta_sq.row(p),
               state ? state->x.row(p) : std::span<const double>{},
               state ? state->u.row(p) : std::span<const double>{}};
    out[p] = functional(v);
  });
  return out;
}

inline std::vector<double> sample_functional(const FunctionalSpec& functional, const ScenarioProcess& scenario,
                                             const TimeGrid& grid, std::uint64_t seed, std::size_t n_paths) {
  const PathBundle paths = simulate_driver(scenario, grid, seed, n_paths);
  if (!functional.needs_state()) return evaluate_paths(functional, paths, nullptr);
  const StatePaths state = simulate_state(*functional.problem(), functional.control(), paths);
  return evaluate_paths(functional, paths, &state);
}

/// E^P[functional] under one scenario.
inline Estimate expect_under(const FunctionalSpec& functional, const ScenarioProcess& scenario, const TimeGrid& grid,
                             std::uint64_t seed, std::size_t n_paths) {
  const auto samples = sample_functional(functional, scenario, grid, seed, n_paths);
  return summarize(samples, scenario.label());
}

struct SublinearEstimate {
  Estimate best;
  std::size_t argmax = 0;
  std::vector<Estimate> members;
};

/// Maximum of per-member estimates; ties go to the lowest index.
inline SublinearEstimate sup_of(std::vector<Estimate> members) {
  if (members.empty()) throw InvalidArgument("sup over an empty family");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < members.size(); ++i)
    if (members[i].value > members[arg].value) arg = i;
  return {members[arg], arg, std::move(members)};
}

/// Sublinear expectation sup_{P in family} E^P[functional]. Every member runs
/// with the same seed.
inline SublinearEstimate expect_sublinear(const FunctionalSpec& functional, const ScenarioFamily& family,
                                          const TimeGrid& grid, std::uint64_t seed, std::size_t n_paths) {
  std::vector<Estimate> members;
  members.reserve(family.size());
  for (const auto& m : family) members.push_back(expect_under(functional, m, grid, seed, n_paths));
  return sup_of(std::move(members));
}

}  // namespace glab
