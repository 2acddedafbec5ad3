#pragma once

// Controlled G-SDE problems and control policies.
//
//   dX = b(t,X,u) dt + mu(t,X,u) d<B> + sigma(t,X,u) dB,   X(0) = x0
//   J^P(u) = E^P[ int_0^T f(t,X,u) dt + g(X(T)) ]

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "glab/error.hpp"
#include "glab/scenario.hpp"

namespace glab {

using Fn3 = std::function<double(double t, double x, double u)>;
using Fn1 = std::function<double(double)>;

/// Central-difference step used wherever an analytic partial is missing.
inline double fd_step(double at) { return std::max(1e-6, 1e-6 * std::abs(at)); }

/// A coefficient (t, x, u) -> real with optional analytic partials.
struct Coefficient {
  Fn3 value;
  Fn3 d_x;  // may be empty: central difference
  Fn3 d_u;  // may be empty: central difference

  static Coefficient zero() {
    auto z = [](double, double, double) { return 0.0; };
    return {z, z, z};
  }

  double operator()(double t, double x, double u) const { return value(t, x, u); }

  double dx(double t, double x, double u) const {
    if (d_x) return d_x(t, x, u);
    const double h = fd_step(x);
    return (value(t, x + h, u) - value(t, x - h, u)) / (2.0 * h);
  }

  double du(double t, double x, double u) const {
    if (d_u) return d_u(t, x, u);
    const double h = fd_step(u);
    return (value(t, x, u + h) - value(t, x, u - h)) / (2.0 * h);
  }

  bool analytic() const noexcept { return static_cast<bool>(d_x) && static_cast<bool>(d_u); }
};

/// Closed convex control interval.
struct ControlSet {
  double lo = -10.0;
  double hi = 10.0;
  double clip(double u) const noexcept { return std::clamp(u, lo, hi); }
  bool contains(double u) const noexcept { return u >= lo && u <= hi; }
};

struct ControlProblem {
  std::string id;
  Coefficient drift;        // b
  Coefficient qv_drift;     // mu, multiplies d<B>
  Coefficient diffusion;    // sigma, multiplies dB
  Coefficient running;      // f
  Fn1 terminal;             // g
  Fn1 terminal_derivative;  // g'
  ControlSet controls;
  double delay = 0.0;
  double x0 = 1.0;
  VolatilityBounds bounds;
  /// Simulate ln X instead of X; requires X > 0.
  bool multiplicative = false;
  /// Known homogeneity of the adjoint, p ~ x^gamma; used to weight the
  /// regression basis when set.
  std::optional<double> adjoint_power;

  void validate() const {
    if (!drift.value || !qv_drift.value || !diffusion.value || !running.value || !terminal || !terminal_derivative)
      throw InvalidArgument("control problem '" + id + "' is missing a coefficient");
    if (!(controls.lo <= controls.hi)) throw InvalidArgument("control set U is empty");
    if (delay < 0.0) throw InvalidArgument("information delay must be >= 0");
    if (multiplicative && !(x0 > 0.0)) throw InvalidArgument("multiplicative problems need x0 > 0");
    bounds.validate();
  }
};

/// Information handed to a policy at step k: time, and the driver and state
/// paths truncated at the delayed node (t_k - delta)^+.
struct ControlContext {
  std::size_t step = 0;
  double t = 0.0;
  std::size_t info_index = 0;
  std::span<const double> b;  // b(t_0 .. t_info)
  std::span<const double> x;  // X(t_0 .. t_info)

  double delayed_state() const { return x.empty() ? 0.0 : x.back(); }
};

/// Admissible control policy. Open-loop policies depend on t only,
/// feedback policies on (t, delayed state), path rules on the delayed path.
class Control {
 public:
  enum class Kind { open_loop = 0, feedback = 1, path_rule = 2 };
  using Policy = std::function<double(const ControlContext&)>;

  Control() = default;

  static Control open_loop(std::function<double(double)> u, std::string label = "open_loop") {
    return Control(Kind::open_loop, [u = std::move(u)](const ControlContext& c) { return u(c.t); },
                   std::move(label));
  }
  static Control constant(double v) {
    return open_loop([v](double) { return v; }, "const(" + std::to_string(v) + ")");
  }
  static Control feedback(std::function<double(double, double)> u, std::string label = "feedback") {
    return Control(Kind::feedback,
                   [u = std::move(u)](const ControlContext& c) { return u(c.t, c.delayed_state()); },
                   std::move(label));
  }
  static Control path_rule(Policy p, std::string label = "path_rule") {
    return Control(Kind::path_rule, std::move(p), std::move(label));
  }

  Kind kind() const noexcept { return kind_; }
  bool deterministic() const noexcept { return kind_ == Kind::open_loop; }
  const std::string& label() const noexcept { return label_; }
  explicit operator bool() const noexcept { return static_cast<bool>(policy_); }

  double operator()(const ControlContext& c) const { return policy_(c); }

  /// Value of a Markovian policy at (t, x), with no path history.
  double at(std::size_t step, double t, double x) const {
    if (kind_ == Kind::path_rule) throw UnsupportedMode("path-rule controls are not Markovian");
    const double xs[1] = {x};
    ControlContext c{step, t, 0, {}, std::span<const double>(xs, 1)};
    return policy_(c);
  }

  /// u + a * beta, pointwise.
  Control plus(const Control& beta, double a) const {
    const Kind k = std::max(kind_, beta.kind_);
    return Control(
        k, [u = policy_, b = beta.policy_, a](const ControlContext& c) { return u(c) + a * b(c); },
        label_ + "+" + std::to_string(a) + "*" + beta.label_);
  }

 private:
  Control(Kind kind, Policy policy, std::string label)
      : kind_(kind), policy_(std::move(policy)), label_(std::move(label)) {}

  Kind kind_ = Kind::open_loop;
  Policy policy_;
  std::string label_;
};

/// A named perturbation direction beta.
struct Perturbation {
  std::string label;
  Control beta;
};

}  // namespace glab
