// =====================================================================
// Energy and virial functionals around multi-bubbles.
//
// Conventions: E is the conserved wave-map energy; E2 is the
// second-order energy <Hg,Hg> + <gdot,H gdot> built on the multi-bubble
// linearization; M0 is the single-scale Morawetz form and M its
// delta0-weighted ladder over the tower; I = E2 + delta_tilde M.
// Sampling probes draw smooth random bump fields, project them onto the
// discrete orthogonality complement, and report worst-case quadratic
// form ratios.
// =====================================================================
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wmlab/grid.hpp"
#include "wmlab/operators.hpp"
#include "wmlab/profiles.hpp"
#include "wmlab/rng.hpp"

namespace wmlab {

struct MorawetzParams {
  double delta = 0.1;   // small correction weight inside M0
  double delta0 = 0.1;  // geometric weight across bubbles
  PsiParams psi;
};

inline void validate(const MorawetzParams& p) {
  require(p.delta > 0 && p.delta <= 0.5, "Morawetz delta must lie in (0, 0.5]");
  require(p.delta0 > 0 && p.delta0 < 1, "Morawetz delta0 must lie in (0, 1)");
  validate(p.psi);
}

struct EnergyMorawetzParams {
  double delta_tilde = 0.05;
  MorawetzParams mor;
};

// Conserved energy 2 pi int (udot^2 + u_r^2 + k^2 sin^2 u / r^2) / 2.
inline double energy(const FieldPair& pair, int k) {
  const ScalarField d1 = deriv_r(pair.u);
  const auto& grid = *pair.u.grid;
  double s = 0;
  for (int i = 0; i < grid.n; ++i) {
    const double r = grid.r[i];
    const double su = std::sin(pair.u.v[i]);
    s += grid.w[i] * 0.5 * (sq(pair.udot.v[i]) + sq(d1.v[i]) + sq(k * su / r));
  }
  return 2.0 * pi * s;
}

// Linearization around the multi-bubble of cfg, applied through the
// closed-form potential (no trig of sums of arctans).
inline ScalarField apply_H_multibubble(const TowerConfig& cfg, const ScalarField& g) {
  ScalarField u(g.grid);
  for (int i = 0; i < g.grid->n; ++i) u.v[i] = multibubble(cfg, g.grid->r[i]);
  return apply_operator(op_H_of_U(cfg.k, std::move(u)), g);
}

// E2 = <Hg, Hg> + <gdot, H gdot>
inline double quadratic_E2(const TowerConfig& cfg, const FieldPair& g) {
  const ScalarField hg = apply_H_multibubble(cfg, g.u);
  const ScalarField hgdot = apply_H_multibubble(cfg, g.udot);
  return inner(hg, hg) + inner(g.udot, hgdot);
}

// M0[lambda; g, gdot] = <A gdot, Lambda_psi (A g)> - delta <A gdot, lambda (r+lambda)^{-2} A g>
inline double morawetz_M0(int k, double lambda, const MorawetzParams& p, const ScalarField& g,
                          const ScalarField& gdot) {
  require(lambda > 0, "Morawetz scale must be positive");
  const ScalarField ag = apply_operator(op_A(k, lambda), g);
  const ScalarField agdot = apply_operator(op_A(k, lambda), gdot);
  const ScalarField lag = apply_operator(op_Lambda_psi(k, lambda, p.psi), ag);
  const auto& grid = *g.grid;
  double s = 0;
  for (int i = 0; i < grid.n; ++i) {
    const double w = lambda / sq(grid.r[i] + lambda);
    s += grid.w[i] * agdot.v[i] * (lag.v[i] - p.delta * w * ag.v[i]);
  }
  return s;
}

inline double morawetz_M(const TowerConfig& cfg, const MorawetzParams& p, const ScalarField& g,
                         const ScalarField& gdot) {
  double s = 0, w = 1;
  for (int j = 0; j < cfg.J; ++j, w *= p.delta0)
    s += w * morawetz_M0(cfg.k, cfg.lambda[j], p, g, gdot);
  return s;
}

// ---------------------------------------------------------------------
// Orthogonalization against the tower's gauge directions
// ---------------------------------------------------------------------

// Unit-scaled bubble direction iota_j LambdaQ(r/lambda_j)/lambda_j.
inline ScalarField bubble_direction(const TowerConfig& cfg, int j,
                                    const std::shared_ptr<const RadialGrid>& grid) {
  ScalarField d(grid);
  for (int i = 0; i < grid->n; ++i)
    d.v[i] = cfg.iota[j] * lambda_q(cfg.k, grid->r[i] / cfg.lambda[j]) / cfg.lambda[j];
  return d;
}

inline ScalarField z_test_field(const TowerConfig& cfg, const ZProfile& z, int i,
                                const std::shared_ptr<const RadialGrid>& grid) {
  ScalarField f(grid);
  for (int m = 0; m < grid->n; ++m)
    f.v[m] = cfg.iota[i] * z(grid->r[m] / cfg.lambda[i]) / cfg.lambda[i];
  return f;
}

// Remove the bubble directions so <Z_{;i}, f> = 0 for every i.
// The Gram matrix <Z_i, D_j> is near-identity at separated scales.
inline void project_orthogonal(const TowerConfig& cfg, const ZProfile& z, ScalarField& f) {
  const int J = cfg.J;
  std::vector<ScalarField> dirs, tests;
  dirs.reserve(J);
  tests.reserve(J);
  for (int j = 0; j < J; ++j) {
    dirs.push_back(bubble_direction(cfg, j, f.grid));
    tests.push_back(z_test_field(cfg, z, j, f.grid));
  }
  std::vector<double> G(J * J), m(J);
  for (int i = 0; i < J; ++i) {
    m[i] = inner(tests[i], f);
    for (int j = 0; j < J; ++j) G[i * J + j] = inner(tests[i], dirs[j]);
  }
  const std::vector<double> c = solve_dense(J, G, m);
  for (int j = 0; j < J; ++j)
    for (int i = 0; i < f.grid->n; ++i) f.v[i] -= c[j] * dirs[j].v[i];
}

// ---------------------------------------------------------------------
// Monotonicity and combined functionals
// ---------------------------------------------------------------------

struct MonotonicityDefect {
  double lhs;     // -{ M[g, -Hg] + M[gdot, gdot] }
  double mor_sq;  // ladder of localized second-order norms
  double ratio;
};

// Projects the pair onto the orthogonality complement, then evaluates
// the defect of the virial monotonicity inequality.
inline MonotonicityDefect monotonicity_defect(const TowerConfig& cfg, const MorawetzParams& p,
                                              FieldPair g, const ZProfile& z) {
  project_orthogonal(cfg, z, g.u);
  project_orthogonal(cfg, z, g.udot);
  const ScalarField hg = apply_H_multibubble(cfg, g.u);
  const double lhs = morawetz_M(cfg, p, g.u, hg) - morawetz_M(cfg, p, g.udot, g.udot);
  const double mor_sq = mor_norm_sq(cfg, p.delta0, g);
  if (!(mor_sq > 1e-28)) throw numerical_error("degenerate sample: vanishing Mor norm");
  return {lhs, mor_sq, lhs / mor_sq};
}

inline double energy_morawetz_I(const TowerConfig& cfg, const EnergyMorawetzParams& p,
                                const FieldPair& g) {
  return quadratic_E2(cfg, g) + p.delta_tilde * morawetz_M(cfg, p.mor, g.u, g.udot);
}

// NL_Q(g) = (k^2 / 2 r^2) { (cos 2g - 1) sin 2Q + (sin 2g - 2g) cos 2Q },
// with the parenthesized factors evaluated cancellation-free.
inline ScalarField nonlinear_NL(const TowerConfig& cfg, const ScalarField& g) {
  ScalarField out(g.grid);
  const double k2 = sq(static_cast<double>(cfg.k));
  for (int i = 0; i < g.grid->n; ++i) {
    const double r = g.grid->r[i];
    const double q2 = 2.0 * multibubble(cfg, r);
    const double gg = g.v[i];
    out.v[i] = k2 / (2.0 * r * r) *
               (-one_minus_cos(2.0 * gg) * std::sin(q2) + sin_minus_x(2.0 * gg) * std::cos(q2));
  }
  return out;
}

// ---------------------------------------------------------------------
// Random smooth samples: Gaussian bumps in log r spanning the tower's
// range of scales.  Deterministic given the Rng state.
// ---------------------------------------------------------------------

inline ScalarField random_bump_field(const TowerConfig& cfg,
                                     const std::shared_ptr<const RadialGrid>& grid, Rng& rng) {
  const double x_lo = std::log(cfg.lambda[cfg.J - 1]) - 1.5;
  const double x_hi = std::log(cfg.lambda[0]) + 2.5;
  const int nb = static_cast<int>(rng.uniform_int(3, 7));
  ScalarField f(grid);
  for (int b = 0; b < nb; ++b) {
    const double c = rng.uniform(x_lo, x_hi);
    const double w = rng.uniform(0.3, 1.2);
    const double a = rng.uniform(0.2, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    for (int i = 0; i < grid->n; ++i) {
      const double x = std::log(grid->r[i]);
      f.v[i] += a * std::exp(-0.5 * sq((x - c) / w));
    }
  }
  return f;
}

// ---------------------------------------------------------------------
// Coercivity sampling
// ---------------------------------------------------------------------

enum class CoercivityKind { Hdot1, Hdot2, AWeighted };

struct RatioSample {
  double min_ratio;
  int argmin;
  std::vector<double> ratios;
};

namespace detail {

inline double coercivity_ratio(const TowerConfig& cfg, CoercivityKind which, const ZProfile& z,
                               ScalarField g) {
  project_orthogonal(cfg, z, g);
  switch (which) {
    case CoercivityKind::Hdot1: {
      const ScalarField hg = apply_H_multibubble(cfg, g);
      return inner(hg, g) / h1k_norm_sq(g);
    }
    case CoercivityKind::Hdot2: {
      const ScalarField hg = apply_H_multibubble(cfg, g);
      return inner(hg, hg) / h2k_norm_sq(g);
    }
    case CoercivityKind::AWeighted: {
      // first-factor coercivity at the outermost scale, both weights
      // Both sides scale identically under y = r/lam, so the ratio can
      // be taken directly in r with the weight evaluated at y.
      const double lam = cfg.lambda[0];
      const ScalarField ag = apply_operator(op_A(cfg.k, lam), g);
      const ScalarField gm1 = weighted_minus_ell(g, 1);
      double lhs1 = 0, rhs1 = 0, lhs2 = 0, rhs2 = 0;
      const auto& grid = *g.grid;
      for (int i = 0; i < grid.n; ++i) {
        const double y = grid.r[i] / lam;
        const double w1 = 1.0 / ((1.0 + y) * y * y);
        const double w2 = 1.0 / sq(1.0 + y);
        lhs1 += grid.w[i] * w1 * sq(ag.v[i]);
        rhs1 += grid.w[i] * w1 * sq(gm1.v[i]);
        lhs2 += grid.w[i] * w2 * sq(ag.v[i]);
        rhs2 += grid.w[i] * w2 * sq(gm1.v[i]);
      }
      return std::min(lhs1 / rhs1, lhs2 / rhs2);
    }
  }
  throw usage_error("unknown coercivity kind");
}

}  // namespace detail

inline RatioSample coercivity_sample(const TowerConfig& cfg, CoercivityKind which, int trials,
                                          uint64_t seed,
                                          const std::shared_ptr<const RadialGrid>& grid,
                                          const ZProfile& z) {
  require(trials >= 1, "coercivity sampling needs at least one trial");
  RatioSample out{0, -1, {}};
  out.ratios.reserve(trials);
  for (int i = 0; i < trials; ++i) {
    Rng rng = Rng::for_trial(seed, static_cast<uint64_t>(i));
    const double ratio = detail::coercivity_ratio(cfg, which, z, random_bump_field(cfg, grid, rng));
    out.ratios.push_back(ratio);
    if (out.argmin < 0 || ratio < out.min_ratio) {
      out.min_ratio = ratio;
      out.argmin = i;
    }
  }
  return out;
}

// Virial-defect sampling: random pairs, orthogonalized inside
// monotonicity_defect, one ratio per trial.  Trial i draws from the
// decorrelated stream Rng::for_trial(seed, i) so runs are reproducible
// and seeds interleave independently.
inline RatioSample defect_sample(const TowerConfig& cfg, const MorawetzParams& p, int trials,
                                 uint64_t seed, const std::shared_ptr<const RadialGrid>& grid,
                                 const ZProfile& z) {
  require(trials >= 1, "defect sampling needs at least one trial");
  RatioSample out{0, -1, {}};
  out.ratios.reserve(trials);
  for (int i = 0; i < trials; ++i) {
    Rng rng = Rng::for_trial(seed, static_cast<uint64_t>(i));
    FieldPair g{random_bump_field(cfg, grid, rng), random_bump_field(cfg, grid, rng)};
    const double ratio = monotonicity_defect(cfg, p, std::move(g), z).ratio;
    out.ratios.push_back(ratio);
    if (out.argmin < 0 || ratio < out.min_ratio) {
      out.min_ratio = ratio;
      out.argmin = i;
    }
  }
  return out;
}

}  // namespace wmlab
