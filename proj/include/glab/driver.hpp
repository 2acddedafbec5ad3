#pragma once

// Euler simulation of (W, B, <B>) under one scenario and of the controlled state.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "glab/control_problem.hpp"
#include "glab/error.hpp"
#include "glab/grid.hpp"
#include "glab/parallel.hpp"
#include "glab/scenario.hpp"

namespace glab {

/// Standard-normal stream owned by one path. Streams depend only on
/// (seed, path), so any two scenarios run with one seed see identical
/// Brownian increments.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t path) : engine_(mix(mix(seed) ^ path)) {}
  double operator()() { return normal_(engine_); }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// Row-major (path, node) storage.
class PathMatrix {
 public:
  PathMatrix() = default;
  PathMatrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const PathMatrix&, const PathMatrix&) = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

/// Simulated driver paths under one scenario.
struct PathBundle {
  TimeGrid grid{1.0, 1};
  std::string scenario;
  std::uint64_t seed = 0;
  std::size_t n_paths = 0;
  PathMatrix w;         // nodes
  PathMatrix b;         // nodes
  PathMatrix qv;        // nodes
  PathMatrix theta_sq;  // steps

  double db(std::size_t path, std::size_t k) const { return b(path, k + 1) - b(path, k); }
  double dw(std::size_t path, std::size_t k) const { return w(path, k + 1) - w(path, k); }
};

inline PathBundle simulate_driver(const ScenarioProcess& scenario, const TimeGrid& grid, std::uint64_t seed,
                                  std::size_t n_paths) {
  if (n_paths < 1) throw InvalidArgument("need at least one path");
  if (!(scenario.grid() == grid)) throw InvalidArgument("scenario and simulation grids differ");
  const std::size_t n = grid.n_steps();
  const double dt = grid.dt();
  const double sqdt = std::sqrt(dt);
  const auto& bounds = scenario.bounds();

  PathBundle out{grid, scenario.label(), seed, n_paths, PathMatrix(n_paths, n + 1), PathMatrix(n_paths, n + 1),
                 PathMatrix(n_paths, n + 1), PathMatrix(n_paths, n)};
  parallel_for(n_paths, [&](std::size_t p) {
    NormalStream z(seed, p);
    auto w = out.w.row(p);
    auto b = out.b.row(p);
    auto qv = out.qv.row(p);
    auto th = out.theta_sq.row(p);
    for (std::size_t k = 0; k < n; ++k) {
      const double theta = scenario.theta(k, std::span<const double>(b.data(), k + 1));
      const double dw = sqdt * z();
      const double tsq = bounds.clamp_sq(theta * theta);
      th[k] = tsq;
      w[k + 1] = w[k] + dw;
      b[k + 1] = b[k] + theta * dw;
      qv[k + 1] = qv[k] + tsq * dt;
    }
  });
  return out;
}

/// Controlled state paths; non-finite paths are flagged and excluded downstream.
struct StatePaths {
  double x0 = 0.0;
  PathMatrix x;  // nodes
  PathMatrix u;  // steps
  std::vector<std::uint8_t> flagged;
  std::size_t n_flagged = 0;

  bool ok(std::size_t path) const { return flagged.empty() || flagged[path] == 0; }
};

/// Share of flagged paths beyond which a run is abandoned.
inline constexpr double kMaxFlaggedShare = 0.01;

/// Euler-Maruyama for X with d<B> = theta^2 dt; log-Euler when the problem is
/// multiplicative. Controls see the path up to (t_k - delay)^+ and are clipped into U.
namespace detail {

template <class Policy>
StatePaths simulate_state_with(const ControlProblem& problem, const PathBundle& paths, Control::Kind kind,
                               const Policy& policy) {
  problem.validate();
  const auto& grid = paths.grid;
  const std::size_t n = grid.n_steps();
  const double dt = grid.dt();
  const std::size_t lag = problem.delay > 0.0 ? grid.floor_index(problem.delay) : 0;
  if (problem.delay > 0.0 && lag == 0 && kind != Control::Kind::open_loop)
    throw InvalidArgument("delay shorter than one grid step; refine the grid");

  StatePaths out{problem.x0, PathMatrix(paths.n_paths, n + 1), PathMatrix(paths.n_paths, n),
                 std::vector<std::uint8_t>(paths.n_paths, 0), 0};
  parallel_for(paths.n_paths, [&](std::size_t p) {
    auto x = out.x.row(p);
    auto u = out.u.row(p);
    const auto b = paths.b.row(p);
    const auto th = paths.theta_sq.row(p);
    x[0] = problem.x0;
    double z = problem.multiplicative ? std::log(problem.x0) : 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = grid.time(k);
      const std::size_t info = k >= lag ? k - lag : 0;
      const ControlContext ctx{k, t, info, b.subspan(0, info + 1), std::span<const double>(x.data(), info + 1)};
      const double uk = problem.controls.clip(policy(p, ctx));
      u[k] = uk;
      const double xk = x[k];
      const double db = b[k + 1] - b[k];
      const double drift = problem.drift(t, xk, uk);
      const double qvd = problem.qv_drift(t, xk, uk);
      const double vol = problem.diffusion(t, xk, uk);
      if (problem.multiplicative) {
        const double nu = vol / xk;
        z += ((drift + qvd * th[k]) / xk - 0.5 * nu * nu * th[k]) * dt + nu * db;
        x[k + 1] = std::exp(z);
      } else {
        x[k + 1] = xk + drift * dt + qvd * th[k] * dt + vol * db;
      }
      if (!std::isfinite(x[k + 1]) || !std::isfinite(uk)) {
        out.flagged[p] = 1;
        for (std::size_t j = k + 1; j <= n; ++j) x[j] = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t j = k; j < n; ++j) u[j] = std::numeric_limits<double>::quiet_NaN();
        break;
      }
    }
  });
  for (auto f : out.flagged) out.n_flagged += f;
  if (static_cast<double>(out.n_flagged) > kMaxFlaggedShare * static_cast<double>(paths.n_paths))
    throw NumericalError("state simulation produced " + std::to_string(out.n_flagged) + " non-finite paths out of " +
                         std::to_string(paths.n_paths));
  return out;
}

}  // namespace detail

inline StatePaths simulate_state(const ControlProblem& problem, const Control& control, const PathBundle& paths) {
  if (!control) throw InvalidArgument("empty control");
  return detail::simulate_state_with(problem, paths, control.kind(),
                                     [&](std::size_t, const ControlContext& ctx) { return control(ctx); });
}

/// State driven by a fixed control process u + eps beta, given per path and step.
inline StatePaths simulate_state(const ControlProblem& problem, const PathMatrix& u, const PathMatrix& beta, double eps,
                                 const PathBundle& paths) {
  if (u.rows() != paths.n_paths || u.cols() != paths.grid.n_steps() || beta.rows() != u.rows() ||
      beta.cols() != u.cols())
    throw InvalidArgument("control process does not match the paths");
  return detail::simulate_state_with(problem, paths, Control::Kind::open_loop,
                                     [&](std::size_t p, const ControlContext& ctx) {
                                       return u(p, ctx.step) + eps * beta(p, ctx.step);
                                     });
}

/// Writes the first n paths as long-format CSV (debugging aid).
inline void dump_paths_csv(const std::string& file, const PathBundle& paths, const StatePaths* state,
                           std::size_t n) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw Error("cannot write " + file);
  os << std::setprecision(12);
  os << "path,step,t,w,b,qv,theta_sq,x\n";
  n = std::min(n, paths.n_paths);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k <= paths.grid.n_steps(); ++k) {
      os << p << ',' << k << ',' << paths.grid.time(k) << ',' << paths.w(p, k) << ',' << paths.b(p, k) << ','
         << paths.qv(p, k) << ',';
      if (k < paths.grid.n_steps()) os << paths.theta_sq(p, k);
      os << ',';
      if (state) os << state->x(p, k);
      os << '\n';
    }
}

}  // namespace glab
