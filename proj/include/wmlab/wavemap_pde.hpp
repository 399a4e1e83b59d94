// =====================================================================
// Radial wave-map evolution on a uniform grid.
//
//   u_tt = u_rr + u_r/r - k^2 sin(2u)/(2 r^2)
//
// Nodes sit at r_i = (i+1) h with h = r_max/n, so the origin is a ghost
// point where equivariance forces u(0) = 0 (u ~ r^k) and the last node
// is exactly r_max.  Spatial stencils are second-order central; time
// stepping is classical RK4 (default) or leapfrog (velocity Verlet).
// =====================================================================
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <vector>

#include "wmlab/common.hpp"
#include "wmlab/functionals.hpp"
#include "wmlab/grid.hpp"
#include "wmlab/profiles.hpp"
#include "wmlab/tower_ode.hpp"

namespace wmlab {

enum class TimeIntegrator { Rk4, Leapfrog };
enum class BoundaryKind { DirichletAsymptotic, Absorbing };

// Evolution grid: uniform, r_i = (i+1) h with h = r_max/n.
inline std::shared_ptr<const RadialGrid> make_evolution_grid(double r_max, int n) {
  require(r_max > 0 && n >= 8, "evolution grid needs r_max > 0 and n >= 8");
  const double h = r_max / n;
  return share(make_uniform_grid(h, r_max, n));
}

struct SolverConfig {
  std::shared_ptr<const RadialGrid> grid;
  int k = 3;
  double cfl = 0.5;  // dt = cfl * h; hard cap 0.9
  TimeIntegrator integrator = TimeIntegrator::Rk4;
  BoundaryKind boundary = BoundaryKind::DirichletAsymptotic;
  double snapshot_cadence = 0.25;  // time between stored snapshots
  // Boundary asymptote u(infinity).  NaN means "capture from the data's
  // last node when stepping starts"; absorbing walls want it explicit.
  double u_inf = std::numeric_limits<double>::quiet_NaN();
};

inline void validate(const SolverConfig& cfg) {
  require(static_cast<bool>(cfg.grid), "solver config needs a grid");
  require(cfg.grid->kind == GridKind::Uniform, "evolution requires a uniform grid");
  require(cfg.grid->n >= 8, "evolution grid too small");
  const double h = cfg.grid->step;
  require(std::abs(cfg.grid->r_min - h) <= 1e-12 * h,
          "evolution grid must place nodes at r_i = (i+1) h (first node at h)");
  require(cfg.k >= 1, "k must be positive");
  require(cfg.cfl > 0 && cfg.cfl <= 0.9, "cfl must lie in (0, 0.9]");
  require(cfg.snapshot_cadence > 0, "snapshot cadence must be positive");
}

namespace detail {

// Non-finite guard: a sum is branch-free; only on failure rescan to name
// the offending node.
inline void require_finite(const std::vector<double>& v, const char* what, double t) {
  double s = 0;
  for (double x : v) s += x;
  if (std::isfinite(s)) return;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) { bad = i; break; }
  char msg[160];
  std::snprintf(msg, sizeof msg, "instability: non-finite %s at node %zu, t = %.6g", what, bad, t);
  throw numerical_error(msg);
}

}  // namespace detail

// Acceleration L(u) = u_rr + u_r/r - k^2 sin(2u)/(2 r^2), second-order
// central with the equivariant ghost u(0) = 0 at the first node and
// one-sided differences at the outermost node.
inline void accel_into(int k, const ScalarField& u, std::vector<double>& out) {
  const RadialGrid& g = *u.grid;
  const int n = g.n;
  const double inv_h2 = 1.0 / (g.step * g.step);
  const double inv_2h = 0.5 / g.step;
  const double k2 = static_cast<double>(k) * k;
  out.resize(n);
  const std::vector<double>& w = u.v;
  for (int i = 0; i < n; ++i) {
    const double r = g.r[i];
    double u_rr, u_r;
    if (i == 0) {  // ghost u(0) = 0
      u_rr = (w[1] - 2.0 * w[0]) * inv_h2;
      u_r = w[1] * inv_2h;
    } else if (i == n - 1) {
      u_rr = (2.0 * w[n - 1] - 5.0 * w[n - 2] + 4.0 * w[n - 3] - w[n - 4]) * inv_h2;
      u_r = (3.0 * w[n - 1] - 4.0 * w[n - 2] + w[n - 3]) * inv_2h;
    } else {
      u_rr = (w[i + 1] - 2.0 * w[i] + w[i - 1]) * inv_h2;
      u_r = (w[i + 1] - w[i - 1]) * inv_2h;
    }
    out[i] = u_rr + u_r / r - k2 * std::sin(2.0 * w[i]) / (2.0 * r * r);
  }
}

// First-order form rhs: d/dt (u, udot) = (udot, L(u)).
inline FieldPair pde_rhs(int k, const FieldPair& p) {
  require(k >= 1, "k must be positive");
  require(p.u.grid == p.udot.grid, "pair components must share a grid");
  require(p.u.grid->kind == GridKind::Uniform, "pde rhs requires a uniform grid");
  require(p.u.grid->n >= 5, "pde rhs needs at least 5 nodes");
  detail::require_finite(p.u.v, "u", 0.0);
  FieldPair d{p.udot, ScalarField(p.u.grid)};
  accel_into(k, p.u, d.udot.v);
  return d;
}

namespace detail {

inline void apply_boundary(const SolverConfig& cfg, double u_inf, FieldPair& p) {
  const int n = cfg.grid->n;
  if (cfg.boundary == BoundaryKind::DirichletAsymptotic) {
    p.u.v[n - 1] = u_inf;
    p.udot.v[n - 1] = 0.0;
    return;
  }
  // Outgoing relation for w = u - u_inf:  w_t = -w_r - w/(2r).
  const double w_r =
      (3.0 * p.u.v[n - 1] - 4.0 * p.u.v[n - 2] + p.u.v[n - 3]) * (0.5 / cfg.grid->step);
  p.udot.v[n - 1] = -w_r - (p.u.v[n - 1] - u_inf) / (2.0 * cfg.grid->r_max);
}

inline void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace detail

// One explicit time step in place.  Refuses |dt| beyond the CFL bound;
// negative dt steps backwards (used by the reversal checks).
inline void step(const SolverConfig& cfg, FieldPair& p, double dt) {
  validate(cfg);
  require(p.u.grid == cfg.grid && p.udot.grid == cfg.grid, "state must live on the solver grid");
  require(dt != 0 && std::isfinite(dt), "dt must be a nonzero finite number");
  require(std::abs(dt) <= cfg.cfl * cfg.grid->step * (1.0 + 1e-12),
          "dt violates the CFL bound cfl*h");
  const double u_inf = std::isfinite(cfg.u_inf) ? cfg.u_inf : p.u.v.back();
  const int n = cfg.grid->n;
  const int k = cfg.k;
  std::vector<double>& u = p.u.v;
  std::vector<double>& v = p.udot.v;
  if (cfg.integrator == TimeIntegrator::Leapfrog) {
    // velocity Verlet: kick-drift-kick
    static thread_local std::vector<double> a;
    accel_into(k, p.u, a);
    detail::axpy(v, 0.5 * dt, a);
    detail::axpy(u, dt, v);
    accel_into(k, p.u, a);
    detail::axpy(v, 0.5 * dt, a);
  } else {
    // Classical RK4 on (u, v)' = (v, L(u)), reduced so only L evaluations
    // appear:  u1 = u0 + dt v0 + dt^2/6 (a1 + a2 + a3),
    //          v1 = v0 + dt/6 (a1 + 2 a2 + 2 a3 + a4).
    static thread_local std::vector<double> a1, a2, a3, a4, u0, v0;
    u0 = u;
    v0 = v;
    accel_into(k, p.u, a1);
    for (int i = 0; i < n; ++i) u[i] = u0[i] + 0.5 * dt * v0[i];
    accel_into(k, p.u, a2);
    for (int i = 0; i < n; ++i) u[i] = u0[i] + 0.5 * dt * (v0[i] + 0.5 * dt * a1[i]);
    accel_into(k, p.u, a3);
    for (int i = 0; i < n; ++i) u[i] = u0[i] + dt * (v0[i] + 0.5 * dt * a2[i]);
    accel_into(k, p.u, a4);
    for (int i = 0; i < n; ++i) {
      u[i] = u0[i] + dt * (v0[i] + (dt / 6.0) * (a1[i] + a2[i] + a3[i]));
      v[i] = v0[i] + (dt / 6.0) * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
    }
  }
  detail::apply_boundary(cfg, u_inf, p);
}

namespace detail {

// Largest radius carrying data distinguishable from the boundary
// asymptote; used to report when wall reflections can re-enter.
inline double support_radius(const FieldPair& p, double u_inf) {
  const RadialGrid& g = *p.u.grid;
  double scale = std::abs(u_inf);
  for (int i = 0; i < g.n; ++i)
    scale = std::max({scale, std::abs(p.u.v[i]), std::abs(p.udot.v[i])});
  const double tol = 1e-10 * std::max(scale, 1e-300);
  for (int i = g.n - 1; i >= 0; --i) {
    const double dev = std::max(std::abs(p.u.v[i] - u_inf), std::abs(p.udot.v[i]));
    if (dev > tol) return g.r[i];
  }
  return 0.0;
}

}  // namespace detail

struct EvolutionRecord {
  std::vector<double> times;
  std::vector<FieldPair> snapshots;
  std::vector<double> energy;         // per snapshot
  std::vector<double> max_amplitude;  // per snapshot, max |u|
  long total_steps = 0;
  double dt = 0;
  // Waves leaving the data's support reach the wall and return; interior
  // radii r are boundary-clean until reflection_time + (r_max - r).
  double reflection_time = 0;
  bool unstable = false;
  double failure_time = 0;  // meaningful when unstable
};

inline EvolutionRecord evolve(const SolverConfig& cfg, FieldPair state, double t0, double t1) {
  validate(cfg);
  require(t1 > t0, "evolve needs t1 > t0");
  require(state.u.grid == cfg.grid && state.udot.grid == cfg.grid,
          "initial data must live on the solver grid");
  SolverConfig c = cfg;
  if (!std::isfinite(c.u_inf)) c.u_inf = state.u.v.back();
  const double span = t1 - t0;
  const long n_steps =
      std::max<long>(1, static_cast<long>(std::ceil(span / (c.cfl * c.grid->step) - 1e-9)));
  const double dt = span / static_cast<double>(n_steps);
  const long cadence = std::max<long>(1, std::llround(c.snapshot_cadence / dt));

  EvolutionRecord rec;
  rec.dt = dt;
  rec.reflection_time = t0 + (c.grid->r_max - detail::support_radius(state, c.u_inf));
  detail::apply_boundary(c, c.u_inf, state);

  auto snap = [&](double t) {
    rec.times.push_back(t);
    rec.snapshots.push_back(state);
    rec.energy.push_back(energy(state, c.k));
    double m = 0;
    for (double x : state.u.v) m = std::max(m, std::abs(x));
    rec.max_amplitude.push_back(m);
  };
  snap(t0);

  for (long s = 1; s <= n_steps; ++s) {
    const double t = t0 + dt * static_cast<double>(s);
    try {
      step(c, state, dt);
      detail::require_finite(state.u.v, "u", t);
      detail::require_finite(state.udot.v, "udot", t);
    } catch (const numerical_error&) {
      rec.unstable = true;
      rec.failure_time = t;
      rec.total_steps = s;
      return rec;  // partial record up to the last stable snapshot
    }
    rec.total_steps = s;
    if (s % cadence == 0 || s == n_steps) snap(t);
  }
  return rec;
}

// Tower initial data on the evolution grid.  Scales and velocities come
// from the stable-manifold initializer of the modulation ODE at cfg.t0;
// the grid must resolve the innermost bubble with >= 32 nodes per core.
inline FieldPair build_initial_data(const TowerConstants& consts, const ShootingConfig& shoot,
                                    const std::vector<double>& nu0,
                                    std::shared_ptr<const RadialGrid> grid,
                                    std::vector<int> iota = {}) {
  require(static_cast<bool>(grid), "initial data needs a grid");
  require(grid->kind == GridKind::Uniform, "evolution initial data lives on a uniform grid");
  if (iota.empty()) iota = default_signs(consts.J);
  const ShootingConfig sc = resolve_epsilons(consts, shoot);
  const TowerState s0 = stable_manifold_init(consts, sc, nu0);
  const double lam_min = s0.lambda.back();
  if (grid->step > lam_min / 32.0) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "grid cannot resolve the innermost bubble: h = %.3g > lambda_J/32 = %.3g",
                  grid->step, lam_min / 32.0);
    throw usage_error(msg);
  }
  TowerConfig tower{consts.k, consts.J, iota, s0.lambda, s0.b};
  return sample_tower_pair(tower, std::move(grid));
}

}  // namespace wmlab
