#pragma once

// Built-in control problems with closed-form oracles:
//   example1         dX = dB - c dt,                      J = E[int ln c dt + X(T)]
//   example2         dX = X (b dt + dB) - c dt,           J = E[int ln c dt + X(T)]
//   example3         dX = X (m u d<B> + s u dB),          J = E[ln X(T)]
//   example3_general dX = X (b u dt + m u d<B> + s u dB), J = E[ln X(T)]
//   counterexample   dX = X (m u d<B> + s u dB),          J = E[X(T)^alpha / alpha]

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/numeric/odeint.hpp>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "glab/control_problem.hpp"
#include "glab/error.hpp"
#include "glab/grid.hpp"
#include "glab/regression.hpp"
#include "glab/scenario.hpp"

namespace glab {

enum class BuiltinId { example1, example2, example3, example3_general, counterexample };

inline constexpr std::array<std::string_view, 5> kBuiltinNames{"example1", "example2", "example3",
                                                               "example3_general", "counterexample"};

inline std::string_view to_string(BuiltinId id) { return kBuiltinNames[static_cast<std::size_t>(id)]; }

inline std::optional<BuiltinId> parse_builtin_id(std::string_view s) {
  for (std::size_t i = 0; i < kBuiltinNames.size(); ++i)
    if (kBuiltinNames[i] == s) return static_cast<BuiltinId>(i);
  return std::nullopt;
}

/// Deterministic time function; constant unless fn is set.
struct TimeFunction {
  double constant = 0.0;
  Fn1 fn;
  double operator()(double t) const { return fn ? fn(t) : constant; }
  bool is_constant() const noexcept { return !fn; }
};

struct BuiltinParams {
  double x0 = 1.0;
  double horizon = 1.0;
  VolatilityBounds bounds{0.25, 1.0};
  TimeFunction rate{0.5, {}};  // b(t): example2 drift, example3_general return drift
  TimeFunction m{1.0, {}};
  TimeFunction s{1.0, {}};
  double alpha = 0.5;
  /// Empty means the per-problem default.
  std::optional<ControlSet> controls;
};

namespace detail {

inline double integrate(const Fn1& f, double a, double b) {
  if (b <= a) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-12);
}

inline void check_nonzero_s(const BuiltinParams& p) {
  for (int i = 0; i <= 1000; ++i) {
    const double t = p.horizon * i / 1000.0;
    if (!(std::abs(p.s(t)) > 0.0) || !std::isfinite(p.s(t)) || !std::isfinite(p.m(t)))
      throw InvalidArgument("s(t) must be finite and non-zero on [0, T]");
  }
}

/// c(t) = alpha m^2 / (2 (1 - alpha) s^2), the exponent rate of the power-utility value.
inline double power_rate(const BuiltinParams& p, double t) {
  const double m = p.m(t), s = p.s(t);
  return p.alpha * m * m / (2.0 * (1.0 - p.alpha) * s * s);
}

}  // namespace detail

struct Builtin {
  BuiltinId id;
  BuiltinParams params;
  ControlProblem problem;
  Control candidate;
  BasisSpec basis;
  std::vector<double> a_grid;

  TimeGrid grid(std::size_t n_steps) const { return TimeGrid(params.horizon, n_steps); }
};

/// beta = 1, 1 on [T/2, T], 1 on [0, T/2), and 1{t >= T/2} sign(B(T/2)).
inline std::vector<Perturbation> default_perturbations(const TimeGrid& grid) {
  const double half = 0.5 * grid.horizon();
  const std::size_t k_half = grid.floor_index(half);
  const double t_half = grid.time(k_half);
  std::vector<Perturbation> out;
  out.push_back({"one", Control::constant(1.0)});
  out.push_back({"late", Control::open_loop([t_half](double t) { return t >= t_half ? 1.0 : 0.0; }, "late")});
  out.push_back({"early", Control::open_loop([t_half](double t) { return t < t_half ? 1.0 : 0.0; }, "early")});
  out.push_back({"sign_switch", Control::path_rule(
                                    [k_half](const ControlContext& c) {
                                      if (c.step < k_half || c.info_index < k_half) return 0.0;
                                      const double b = c.b[k_half];
                                      return b > 0.0 ? 1.0 : (b < 0.0 ? -1.0 : 0.0);
                                    },
                                    "sign_switch")});
  return out;
}

/// Candidate for example3_general under a constant d<B>/dt = theta_sq:
/// u = (b + m theta^2) / (s^2 theta^2).
inline Control example3_general_control(const BuiltinParams& p, double theta_sq) {
  return Control::open_loop(
      [p, theta_sq](double t) {
        const double s = p.s(t);
        return (p.rate(t) + p.m(t) * theta_sq) / (s * s * theta_sq);
      },
      "omega_wise(theta_sq=" + std::to_string(theta_sq) + ")");
}

inline Builtin builtin(BuiltinId id, const BuiltinParams& params = {}) {
  const BuiltinParams p = params;
  p.bounds.validate();
  if (!(p.horizon > 0.0)) throw InvalidArgument("horizon must be positive");
  Builtin out{id, p, {}, {}, {}, {-0.5, -0.25, 0.25, 0.5}};
  ControlProblem& pr = out.problem;
  pr.id = std::string(to_string(id));
  pr.x0 = p.x0;
  pr.bounds = p.bounds;
  pr.qv_drift = Coefficient::zero();
  pr.running = Coefficient::zero();

  auto log_utility = [&pr] {
    pr.running = Coefficient{[](double, double, double c) { return std::log(c); },
                             [](double, double, double) { return 0.0; },
                             [](double, double, double c) { return 1.0 / c; }};
    pr.terminal = [](double x) { return x; };
    pr.terminal_derivative = [](double) { return 1.0; };
    pr.controls = {0.05, 20.0};
  };
  auto merton = [&pr, p](bool with_drift) {
    detail::check_nonzero_s(p);
    if (!(p.x0 > 0.0)) throw InvalidArgument("Merton problems need x0 > 0");
    const auto m = p.m, s = p.s, r = p.rate;
    if (with_drift)
      pr.drift = Coefficient{[r](double t, double x, double u) { return x * u * r(t); },
                             [r](double t, double, double u) { return u * r(t); },
                             [r](double t, double x, double) { return x * r(t); }};
    else
      pr.drift = Coefficient::zero();
    pr.qv_drift = Coefficient{[m](double t, double x, double u) { return x * u * m(t); },
                              [m](double t, double, double u) { return u * m(t); },
                              [m](double t, double x, double) { return x * m(t); }};
    pr.diffusion = Coefficient{[s](double t, double x, double u) { return x * u * s(t); },
                               [s](double t, double, double u) { return u * s(t); },
                               [s](double t, double x, double) { return x * s(t); }};
    pr.multiplicative = true;
    pr.controls = {-10.0, 10.0};
  };

  switch (id) {
    case BuiltinId::example1:
      pr.drift = Coefficient{[](double, double, double c) { return -c; }, [](double, double, double) { return 0.0; },
                             [](double, double, double) { return -1.0; }};
      pr.diffusion = Coefficient{[](double, double, double) { return 1.0; },
                                 [](double, double, double) { return 0.0; },
                                 [](double, double, double) { return 0.0; }};
      log_utility();
      out.candidate = Control::constant(1.0);
      break;
    case BuiltinId::example2: {
      const auto r = p.rate;
      pr.drift = Coefficient{[r](double t, double x, double c) { return x * r(t) - c; },
                             [r](double t, double, double) { return r(t); },
                             [](double, double, double) { return -1.0; }};
      pr.diffusion = Coefficient{[](double, double x, double) { return x; },
                                 [](double, double, double) { return 1.0; },
                                 [](double, double, double) { return 0.0; }};
      log_utility();
      const double horizon = p.horizon;
      out.candidate = Control::open_loop(
          [r, horizon](double t) {
            const double tail = r.is_constant() ? r.constant * (horizon - t) : detail::integrate(r.fn, t, horizon);
            return std::exp(-tail);
          },
          "exp(-int_t^T b)");
      break;
    }
    case BuiltinId::example3:
    case BuiltinId::example3_general: {
      const bool general = id == BuiltinId::example3_general;
      merton(general);
      pr.terminal = [](double x) { return std::log(x); };
      pr.terminal_derivative = [](double x) { return 1.0 / x; };
      pr.adjoint_power = -1.0;
      if (general) {
        out.candidate = example3_general_control(p, p.bounds.sigma_high_sq);
      } else {
        const auto m = p.m, s = p.s;
        out.candidate = Control::open_loop([m, s](double t) { return m(t) / (s(t) * s(t)); }, "m/s^2");
      }
      break;
    }
    case BuiltinId::counterexample: {
      if (!(p.alpha > 0.0 && p.alpha < 1.0)) throw InvalidArgument("counterexample needs alpha in (0, 1)");
      merton(false);
      const double a = p.alpha;
      pr.terminal = [a](double x) { return std::pow(x, a) / a; };
      pr.terminal_derivative = [a](double x) { return std::pow(x, a - 1.0); };
      pr.adjoint_power = a - 1.0;
      const auto m = p.m, s = p.s;
      out.candidate =
          Control::open_loop([m, s, a](double t) { return m(t) / ((1.0 - a) * s(t) * s(t)); }, "m/((1-alpha)s^2)");
      out.a_grid.clear();
      for (int i = 8; i >= 1; --i) out.a_grid.push_back(-0.1 * i);
      for (int i = 1; i <= 8; ++i) out.a_grid.push_back(0.1 * i);
      break;
    }
  }
  if (p.controls) pr.controls = *p.controls;
  out.basis = BasisSpec{3,
                        pr.multiplicative ? BasisSpec::Coordinate::log_state : BasisSpec::Coordinate::state,
                        pr.adjoint_power};
  pr.validate();
  return out;
}

/// Exact J^P(candidate) under the constant scenario d<B>/dt = theta_sq.
/// example3_general is evaluated at its scenario-wise optimum.
inline double value_oracle(BuiltinId id, const BuiltinParams& p, double theta_sq) {
  if (!p.bounds.contains_sq(theta_sq)) throw BoundsError("oracle volatility outside the bounds");
  const double T = p.horizon;
  switch (id) {
    case BuiltinId::example1:
      return p.x0 - T;
    case BuiltinId::example2: {
      // mean state: dM/dt = b M - c, M(0) = x0; value = int ln c dt + M(T)
      auto tail = [&p, T](double t) {
        return p.rate.is_constant() ? p.rate.constant * (T - t) : detail::integrate(p.rate.fn, t, T);
      };
      using State = std::array<double, 2>;
      State y{p.x0, 0.0};
      auto rhs = [&](const State& s, State& dy, double t) {
        const double c = std::exp(-tail(t));
        dy[0] = p.rate(t) * s[0] - c;
        dy[1] = std::log(c);
      };
      namespace ode = boost::numeric::odeint;
      ode::integrate_adaptive(ode::make_controlled(1e-10, 1e-10, ode::runge_kutta_dopri5<State>()), rhs, y, 0.0, T,
                              T / 100.0);
      return y[1] + y[0];
    }
    case BuiltinId::example3:
      return std::log(p.x0) + detail::integrate(
                                  [&p, theta_sq](double t) {
                                    const double m = p.m(t), s = p.s(t);
                                    return m * m / (2.0 * s * s) * theta_sq;
                                  },
                                  0.0, T);
    case BuiltinId::example3_general:
      return std::log(p.x0) + detail::integrate(
                                  [&p, theta_sq](double t) {
                                    const double a = p.rate(t) + p.m(t) * theta_sq, s = p.s(t);
                                    return a * a / (2.0 * s * s * theta_sq);
                                  },
                                  0.0, T);
    case BuiltinId::counterexample:
      return std::pow(p.x0, p.alpha) / p.alpha *
             std::exp(detail::integrate([&p, theta_sq](double t) { return detail::power_rate(p, t) * theta_sq; }, 0.0,
                                        T));
  }
  return 0.0;
}

inline double value_oracle(BuiltinId id, const BuiltinParams& p, const ScenarioProcess& scenario) {
  if (scenario.kind() != ScenarioProcess::Kind::constant)
    throw UnsupportedMode("value oracle needs a constant scenario");
  return value_oracle(id, p, *scenario.deterministic_theta_sq(0));
}

/// Closed-form per-measure adjoint p^P(t, x) at the candidate control under a
/// constant scenario.
inline double adjoint_oracle(BuiltinId id, const BuiltinParams& p, double t, double x, double theta_sq) {
  switch (id) {
    case BuiltinId::example1:
      return 1.0;
    case BuiltinId::example2:
      return std::exp(p.rate.is_constant() ? p.rate.constant * (p.horizon - t)
                                           : detail::integrate(p.rate.fn, t, p.horizon));
    case BuiltinId::example3:
    case BuiltinId::example3_general:
      return 1.0 / x;
    case BuiltinId::counterexample:
      return std::pow(x, p.alpha - 1.0) *
             std::exp(detail::integrate([&p, theta_sq](double r) { return detail::power_rate(p, r) * theta_sq; }, t,
                                        p.horizon));
  }
  return 0.0;
}

/// p^G(t, x) for the counterexample: the adjoint under the largest volatility.
inline double counterexample_p_g(const BuiltinParams& p, double t, double x) {
  return adjoint_oracle(BuiltinId::counterexample, p, t, x, p.bounds.sigma_high_sq);
}

/// E[K(T)] under the constant reference theta_sq for the counterexample, where
/// K(t) = int_0^t c(r) p^G(r) (d<B>(r) - sigma_high^2 dr).
inline double counterexample_k_terminal(const BuiltinParams& p, double theta_sq) {
  const double T = p.horizon;
  const double hi = p.bounds.sigma_high_sq;
  auto c = [&p](double r) { return detail::power_rate(p, r); };
  return detail::integrate(
      [&](double r) {
        const double mean_pg = std::pow(p.x0, p.alpha - 1.0) *
                               std::exp(detail::integrate([&](double v) { return c(v) * theta_sq; }, 0.0, r) +
                                        detail::integrate([&](double v) { return c(v) * hi; }, r, T));
        return c(r) * (theta_sq - hi) * mean_pg;
      },
      0.0, T);
}

}  // namespace glab
