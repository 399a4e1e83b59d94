// =====================================================================
// Linearized operators around bubbles and the norms they live in.
//
// H_U  = -d_rr - (1/r)d_r + k^2 cos(2U)/r^2      (linearization at U)
// A    = -d_r + k cos(Q_lambda)/r                 (first-order factor)
// A*   =  d_r + (1 + k cos(Q_lambda))/r           (formal adjoint)
// H = A*A around one bubble; Htilde = AA* has the repulsive potential
// (k^2 + 1 + 2k cosQ)/r^2.  Lambda_psi is the truncated scaling vector
// field driving the Morawetz forms; Lambda_s = r d_r + 1 - s.
// =====================================================================
#pragma once

#include <cmath>

#include "wmlab/grid.hpp"
#include "wmlab/profiles.hpp"

namespace wmlab {

struct PsiParams {
  double delta_prime = 0.1;
};

inline void validate(const PsiParams& p) {
  require(p.delta_prime > 0 && p.delta_prime <= 0.2, "psi delta' must lie in (0, 0.2]");
}

// psi(y) = y/<y> - delta' y/<y>^2, the truncated virial weight.
inline double psi_weight(const PsiParams& p, double y) {
  const double a = std::sqrt(1.0 + y * y);
  return y / a - p.delta_prime * y / (a * a);
}

inline double psi_weight_deriv(const PsiParams& p, double y) {
  const double a2 = 1.0 + y * y;
  return 1.0 / (a2 * std::sqrt(a2)) - p.delta_prime * (1.0 - y * y) / (a2 * a2);
}

enum class OpTag { HofU, Hscaled, Ascaled, AstarScaled, HtildeScaled, LambdaPsiScaled, LambdaS };

struct OperatorKind {
  OpTag tag;
  int k = 3;
  double lambda = 1;       // scale, for the *_scaled tags
  double s = 0;            // Lambda_s index
  PsiParams psi;           // Lambda_psi weight
  ScalarField background;  // HofU potential source
};

inline OperatorKind op_H_of_U(int k, ScalarField U) {
  return {OpTag::HofU, k, 1, 0, {}, std::move(U)};
}
inline OperatorKind op_H(int k, double lambda = 1) {
  require(lambda > 0, "operator scale must be positive");
  return {OpTag::Hscaled, k, lambda, 0, {}, {}};
}
inline OperatorKind op_A(int k, double lambda = 1) {
  require(lambda > 0, "operator scale must be positive");
  return {OpTag::Ascaled, k, lambda, 0, {}, {}};
}
inline OperatorKind op_Astar(int k, double lambda = 1) {
  require(lambda > 0, "operator scale must be positive");
  return {OpTag::AstarScaled, k, lambda, 0, {}, {}};
}
inline OperatorKind op_Htilde(int k, double lambda = 1) {
  require(lambda > 0, "operator scale must be positive");
  return {OpTag::HtildeScaled, k, lambda, 0, {}, {}};
}
inline OperatorKind op_Lambda_psi(int k, double lambda, PsiParams psi = {}) {
  require(lambda > 0, "operator scale must be positive");
  validate(psi);
  return {OpTag::LambdaPsiScaled, k, lambda, 0, psi, {}};
}
inline OperatorKind op_Lambda_s(double s) { return {OpTag::LambdaS, 0, 1, s, {}, {}}; }

inline ScalarField apply_operator(const OperatorKind& op, const ScalarField& g) {
  const auto& grid = *g.grid;
  ScalarField out(g.grid);
  switch (op.tag) {
    case OpTag::HofU: {
      require(op.background.grid == g.grid, "H_U background must share the field's grid");
      const ScalarField d1 = deriv_r(g), d2 = deriv_rr(g);
      const double k2 = sq(static_cast<double>(op.k));
      for (int i = 0; i < grid.n; ++i) {
        const double r = grid.r[i];
        out.v[i] = -d2.v[i] - d1.v[i] / r + k2 * std::cos(2.0 * op.background.v[i]) / (r * r) * g.v[i];
      }
      return out;
    }
    case OpTag::Hscaled: {
      const ScalarField d1 = deriv_r(g), d2 = deriv_rr(g);
      const double k2 = sq(static_cast<double>(op.k));
      for (int i = 0; i < grid.n; ++i) {
        const double r = grid.r[i];
        const QTrig t = q_trig(op.k, r / op.lambda);
        const double cos2q = t.cos_q * t.cos_q - t.sin_q * t.sin_q;
        out.v[i] = -d2.v[i] - d1.v[i] / r + k2 * cos2q / (r * r) * g.v[i];
      }
      return out;
    }
    case OpTag::Ascaled: {
      const ScalarField d1 = deriv_r(g);
      for (int i = 0; i < grid.n; ++i) {
        const double r = grid.r[i];
        out.v[i] = -d1.v[i] + op.k * q_trig(op.k, r / op.lambda).cos_q / r * g.v[i];
      }
      return out;
    }
    case OpTag::AstarScaled: {
      const ScalarField d1 = deriv_r(g);
      for (int i = 0; i < grid.n; ++i) {
        const double r = grid.r[i];
        out.v[i] = d1.v[i] + (1.0 + op.k * q_trig(op.k, r / op.lambda).cos_q) / r * g.v[i];
      }
      return out;
    }
    case OpTag::HtildeScaled: {
      const ScalarField d1 = deriv_r(g), d2 = deriv_rr(g);
      const double k2 = sq(static_cast<double>(op.k));
      for (int i = 0; i < grid.n; ++i) {
        const double r = grid.r[i];
        const double vt = k2 + 1.0 + 2.0 * op.k * q_trig(op.k, r / op.lambda).cos_q;
        out.v[i] = -d2.v[i] - d1.v[i] / r + vt / (r * r) * g.v[i];
      }
      return out;
    }
    case OpTag::LambdaPsiScaled: {
      const ScalarField d1 = deriv_r(g);
      for (int i = 0; i < grid.n; ++i) {
        const double r = grid.r[i], y = r / op.lambda;
        const double p = psi_weight(op.psi, y);
        const double pr = psi_weight_deriv(op.psi, y) / op.lambda;
        out.v[i] = p * d1.v[i] + 0.5 * (pr + p / r) * g.v[i];
      }
      return out;
    }
    case OpTag::LambdaS: {
      const ScalarField d1 = deriv_r(g);
      for (int i = 0; i < grid.n; ++i)
        out.v[i] = grid.r[i] * d1.v[i] + (1.0 - op.s) * g.v[i];
      return out;
    }
  }
  throw usage_error("unknown operator tag");
}

// ---------------------------------------------------------------------
// Norms (all with the r dr measure)
// ---------------------------------------------------------------------

inline double l2_norm_sq(const ScalarField& g) { return inner(g, g); }
inline double l2_norm(const ScalarField& g) { return std::sqrt(l2_norm_sq(g)); }

// k-equivariant H^1: int g_r^2 + (g/r)^2
inline double h1k_norm_sq(const ScalarField& g) {
  const ScalarField d1 = deriv_r(g);
  double s = 0;
  for (int i = 0; i < g.grid->n; ++i) {
    const double r = g.grid->r[i];
    s += g.grid->w[i] * (sq(d1.v[i]) + sq(g.v[i] / r));
  }
  return s;
}

// k-equivariant H^2: int g_rr^2 + (g_r/r)^2 + (g/r^2)^2
inline double h2k_norm_sq(const ScalarField& g) {
  const ScalarField d1 = deriv_r(g), d2 = deriv_rr(g);
  double s = 0;
  for (int i = 0; i < g.grid->n; ++i) {
    const double r = g.grid->r[i];
    s += g.grid->w[i] * (sq(d2.v[i]) + sq(d1.v[i] / r) + sq(g.v[i] / (r * r)));
  }
  return s;
}

// Pair norms: H^1 pairs L^2 velocity, H^2 pairs H^1 velocity.
inline double h1_pair_norm_sq(const FieldPair& g) {
  return h1k_norm_sq(g.u) + l2_norm_sq(g.udot);
}
inline double h2_pair_norm_sq(const FieldPair& g) {
  return h2k_norm_sq(g.u) + h1k_norm_sq(g.udot);
}

// Pointwise weighted magnitude |g|_{-ell}.
inline ScalarField weighted_minus_ell(const ScalarField& g, int ell) {
  require(ell == 1 || ell == 2, "weighted magnitude available for ell in {1,2} only");
  ScalarField out(g.grid);
  const ScalarField d1 = deriv_r(g);
  if (ell == 1) {
    for (int i = 0; i < g.grid->n; ++i) {
      const double r = g.grid->r[i];
      out.v[i] = std::sqrt(sq(d1.v[i]) + sq(g.v[i] / r));
    }
    return out;
  }
  const ScalarField d2 = deriv_rr(g);
  for (int i = 0; i < g.grid->n; ++i) {
    const double r = g.grid->r[i];
    out.v[i] = std::sqrt(sq(d2.v[i]) + sq(d1.v[i] / r) + sq(g.v[i] / (r * r)));
  }
  return out;
}

// Localized second-order norm at scale lambda:
//   int { (g_rr^2 + gdot_r^2 + (gdot/r)^2) / ((lambda+r)(1+y))
//         + (g_r^2 + (g/r)^2) / (r^2 (lambda+r)) },   y = r/lambda.
inline double mor_norm_sq(double lambda, const FieldPair& g) {
  require(lambda > 0, "Mor norm scale must be positive");
  const ScalarField d1 = deriv_r(g.u), d2 = deriv_rr(g.u), e1 = deriv_r(g.udot);
  double s = 0;
  const auto& grid = *g.u.grid;
  for (int i = 0; i < grid.n; ++i) {
    const double r = grid.r[i], y = r / lambda;
    const double top = sq(d2.v[i]) + sq(e1.v[i]) + sq(g.udot.v[i] / r);
    const double low = sq(d1.v[i]) + sq(g.u.v[i] / r);
    s += grid.w[i] * (top / ((lambda + r) * (1.0 + y)) + low / (r * r * (lambda + r)));
  }
  return s;
}

// Multi-bubble version: geometric ladder over the tower scales.
inline double mor_norm_sq(const TowerConfig& cfg, double delta0, const FieldPair& g) {
  double s = 0, w = 1;
  for (int j = 0; j < cfg.J; ++j, w *= delta0) s += w * mor_norm_sq(cfg.lambda[j], g);
  return s;
}

}  // namespace wmlab
