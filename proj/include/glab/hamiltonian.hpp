#pragma once

#include "glab/control_problem.hpp"

namespace glab {

/// H = f + (b + mu * rho) p + sigma * rho * q, with rho = d<B>/dt.
inline double hamiltonian(const ControlProblem& pr, double t, double x, double u, double p, double q,
                          double qv_density) {
  return pr.running(t, x, u) + (pr.drift(t, x, u) + pr.qv_drift(t, x, u) * qv_density) * p +
         pr.diffusion(t, x, u) * qv_density * q;
}

inline bool analytic_partials(const ControlProblem& pr) {
  return pr.running.analytic() && pr.drift.analytic() && pr.qv_drift.analytic() && pr.diffusion.analytic();
}

/// dH/du; analytic when every coefficient carries d_u, else a central
/// difference that turns one-sided at the boundary of U.
inline double dH_du(const ControlProblem& pr, double t, double x, double u, double p, double q, double qv_density) {
  if (analytic_partials(pr))
    return pr.running.du(t, x, u) + (pr.drift.du(t, x, u) + pr.qv_drift.du(t, x, u) * qv_density) * p +
           pr.diffusion.du(t, x, u) * qv_density * q;
  const double h = fd_step(u);
  const double up = u + h <= pr.controls.hi ? u + h : u;
  const double dn = u - h >= pr.controls.lo ? u - h : u;
  if (up == dn) return 0.0;
  return (hamiltonian(pr, t, x, up, p, q, qv_density) - hamiltonian(pr, t, x, dn, p, q, qv_density)) / (up - dn);
}

/// x-derivatives of the coefficients at (t, x, u). dH/dx is linear in (p, q)
/// with these as weights, so one evaluation serves any number of adjoints.
struct StatePartials {
  double fx = 0.0, bx = 0.0, mux = 0.0, sx = 0.0;

  double dH_dx(double p, double q, double qv_density) const {
    return fx + (bx + mux * qv_density) * p + sx * qv_density * q;
  }
};

inline StatePartials state_partials(const ControlProblem& pr, double t, double x, double u) {
  return {pr.running.dx(t, x, u), pr.drift.dx(t, x, u), pr.qv_drift.dx(t, x, u), pr.diffusion.dx(t, x, u)};
}

inline double dH_dx(const ControlProblem& pr, double t, double x, double u, double p, double q, double qv_density) {
  return state_partials(pr, t, x, u).dH_dx(p, q, qv_density);
}

}  // namespace glab
