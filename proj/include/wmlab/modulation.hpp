// =====================================================================
// Parameter extraction: split a field pair into a bubble tower plus
// remainder by imposing orthogonality to the localized scaling
// directions Z(./lambda_i).
//
// The scales solve F_i(lambda) = <lambda_i^{-2} Z_{;i}, u - Q(lambda)> = 0
// by a damped Newton iteration in ln lambda whose Jacobian is near the
// identity (Z is normalized against LambdaQ).  The velocities then solve
// the J x J Gram system matching udot against the tower's scaling
// directions, and bhat_j = kappa^{-1} <LambdaQ_{ul;j}, udot> gives the
// refined velocity diagnostic.
// =====================================================================
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "wmlab/common.hpp"
#include "wmlab/functionals.hpp"
#include "wmlab/grid.hpp"
#include "wmlab/operators.hpp"
#include "wmlab/profiles.hpp"
#include "wmlab/tower_ode.hpp"
#include "wmlab/wavemap_pde.hpp"

namespace wmlab {

struct Decomposition {
  TowerConfig cfg;  // recovered lambda and b; iota fixed by the caller
  FieldPair g;      // remainder: u - Q(iota,lambda), udot - sum_j b_j iota_j LambdaQ_lambda_j/lambda_j
  std::vector<double> residuals;  // 2J orthogonality values: <Z_{;i}/l_i^2, g>, then <Z_{ul;i}, gdot>
  std::vector<double> bhat;
  int newton_iters = 0;
};

namespace detail {

// <iota_i lambda_i^{-p} Z(./lambda_i), w> for every i; p = 1 pairs against
// velocities (underline convention), p = 2 against scale variations.
inline std::vector<double> ortho_values(const ZProfile& z, const TowerConfig& cfg,
                                        const RadialGrid& g, const std::vector<double>& w,
                                        bool underline) {
  // underline: weight 1/lambda (velocity pairing); else 1/lambda^2 (scale pairing)
  std::vector<double> out(cfg.J, 0.0);
  for (int i = 0; i < cfg.J; ++i) {
    const double lam = cfg.lambda[i];
    const double fac = cfg.iota[i] * (underline ? 1.0 / lam : 1.0 / (lam * lam));
    double acc = 0;
    for (int m = 0; m < g.n; ++m) {
      const double y = g.r[m] / lam;
      if (z.kind == ZKind::Cutoff && y >= 2.0) break;  // grid is ordered in r
      acc += g.w[m] * z(y) * w[m];
    }
    out[i] = fac * acc;
  }
  return out;
}

}  // namespace detail

// Newton solve for the scales, then the linear solve for velocities.
// lambda_guess must be ordered (decreasing) and inside the basin.
inline Decomposition decompose(const FieldPair& pair, int k, int J, std::vector<int> iota,
                               std::vector<double> lambda_guess, double tol = 1e-12,
                               int max_iter = 50) {
  require(pair.u.grid == pair.udot.grid, "pair components must share a grid");
  require(J >= 1 && static_cast<int>(lambda_guess.size()) == J, "need one scale guess per bubble");
  if (iota.empty()) iota = default_signs(J);
  require(static_cast<int>(iota.size()) == J, "need one sign per bubble");
  for (int j = 0; j + 1 < J; ++j)
    require(lambda_guess[j] > lambda_guess[j + 1] && lambda_guess[j + 1] > 0,
            "scale guess must be ordered and positive");
  require(lambda_guess[J - 1] > 0, "scales must be positive");

  const RadialGrid& g = *pair.u.grid;
  const ZProfile z = make_z_profile(k, ZKind::Cutoff);
  TowerConfig cfg{k, J, iota, lambda_guess, {}};

  std::vector<double> diff(g.n);
  auto build_diff = [&](const TowerConfig& c) {
    for (int m = 0; m < g.n; ++m) diff[m] = pair.u.v[m] - multibubble(c, g.r[m]);
  };
  auto f_norm = [](const std::vector<double>& f) {
    double m = 0;
    for (double x : f) m = std::max(m, std::abs(x));
    return m;
  };

  build_diff(cfg);
  std::vector<double> F = detail::ortho_values(z, cfg, g, diff, false);
  double fn = f_norm(F);
  const double scale = std::max(1.0, std::sqrt(h1k_norm_sq(pair.u)));
  std::string trace;
  int iters = 0;
  while (fn > tol * scale && iters < max_iter) {
    ++iters;
    // analytic Jacobian in x = ln lambda:
    //   M_ij = <l_i^{-2} Z_{;i}, LambdaQ_{;j}> - 1_{i=j} <l_i^{-2} (L_{-1}Z)_{;i}, u - Q>
    std::vector<double> M(static_cast<std::size_t>(J) * J, 0.0);
    for (int i = 0; i < J; ++i) {
      const double li = cfg.lambda[i];
      for (int m = 0; m < g.n; ++m) {
        const double y = g.r[m] / li;
        if (z.kind == ZKind::Cutoff && y >= 2.0) break;
        const double zi = cfg.iota[i] * z(y) / (li * li);
        if (zi == 0.0) continue;
        for (int j = 0; j < J; ++j)
          M[i * J + j] += g.w[m] * zi * cfg.iota[j] * lambda_q(k, g.r[m] / cfg.lambda[j]);
        M[i * J + i] -= g.w[m] * cfg.iota[i] * z.lam_minus1(y) / (li * li) * diff[m];
      }
    }
    std::vector<double> step = F;
    for (double& s : step) s = -s;
    step = solve_dense(J, M, step);  // delta ln lambda
    double damp = 1.0;
    TowerConfig next = cfg;
    std::vector<double> Fn;
    double fn_next = 0;
    bool ok = false;
    for (int halve = 0; halve < 30; ++halve) {
      bool ordered = true;
      for (int j = 0; j < J; ++j) next.lambda[j] = cfg.lambda[j] * std::exp(damp * step[j]);
      for (int j = 0; j + 1 < J; ++j)
        if (!(next.lambda[j] > next.lambda[j + 1])) ordered = false;
      if (ordered) {
        build_diff(next);
        Fn = detail::ortho_values(z, next, g, diff, false);
        fn_next = f_norm(Fn);
        if (fn_next < fn || fn_next <= tol * scale) {
          ok = true;
          break;
        }
      }
      damp *= 0.5;
    }
    {
      char line[160];
      std::snprintf(line, sizeof line, "  iter %d: |F| = %.3e, damp = %.3g, lambda1 = %.6g\n",
                    iters, fn, damp, cfg.lambda[0]);
      trace += line;
    }
    if (!ok) throw numerical_error("decompose: Newton left the basin (no productive step)\n" + trace);
    cfg = next;
    F = Fn;
    fn = fn_next;
  }
  if (fn > tol * scale)
    throw numerical_error("decompose: Newton failed to converge in " + std::to_string(max_iter) +
                          " iterations\n" + trace);

  // velocities: full Gram system  G b = <Z_{ul;i}, udot>
  std::vector<double> G(static_cast<std::size_t>(J) * J, 0.0);
  for (int i = 0; i < J; ++i) {
    const double li = cfg.lambda[i];
    for (int m = 0; m < g.n; ++m) {
      const double y = g.r[m] / li;
      if (z.kind == ZKind::Cutoff && y >= 2.0) break;
      const double zi = cfg.iota[i] * z(y) / li;
      for (int j = 0; j < J; ++j)
        G[i * J + j] +=
            g.w[m] * zi * cfg.iota[j] * lambda_q(k, g.r[m] / cfg.lambda[j]) / cfg.lambda[j];
    }
  }
  std::vector<double> rhs = detail::ortho_values(z, cfg, g, pair.udot.v, true);
  cfg.b = solve_dense(J, G, rhs);

  Decomposition dec;
  dec.cfg = cfg;
  dec.newton_iters = iters;
  dec.g = FieldPair{ScalarField(pair.u.grid), ScalarField(pair.u.grid)};
  for (int m = 0; m < g.n; ++m) {
    dec.g.u.v[m] = pair.u.v[m] - multibubble(cfg, g.r[m]);
    double v = 0;
    for (int j = 0; j < J; ++j)
      v += cfg.b[j] * cfg.iota[j] * lambda_q(k, g.r[m] / cfg.lambda[j]) / cfg.lambda[j];
    dec.g.udot.v[m] = pair.udot.v[m] - v;
  }
  dec.residuals = detail::ortho_values(z, cfg, g, dec.g.u.v, false);
  std::vector<double> rv = detail::ortho_values(z, cfg, g, dec.g.udot.v, true);
  dec.residuals.insert(dec.residuals.end(), rv.begin(), rv.end());

  // refined velocities bhat_j = kappa^{-1} <LambdaQ_{ul;j}, udot>
  dec.bhat.assign(J, 0.0);
  const double kap = kappa_norm(k);
  for (int j = 0; j < J; ++j) {
    double acc = 0;
    for (int m = 0; m < g.n; ++m)
      acc += g.w[m] * lambda_q(k, g.r[m] / cfg.lambda[j]) * pair.udot.v[m];
    dec.bhat[j] = cfg.iota[j] * acc / (cfg.lambda[j] * kap);
  }
  return dec;
}

inline std::vector<double> refined_bhat(const FieldPair& pair, const TowerConfig& cfg) {
  validate(cfg);
  const RadialGrid& g = *pair.udot.grid;
  const double kap = kappa_norm(cfg.k);
  std::vector<double> out(cfg.J, 0.0);
  for (int j = 0; j < cfg.J; ++j) {
    double acc = 0;
    for (int m = 0; m < g.n; ++m)
      acc += g.w[m] * lambda_q(cfg.k, g.r[m] / cfg.lambda[j]) * pair.udot.v[m];
    out[j] = cfg.iota[j] * acc / (cfg.lambda[j] * kap);
  }
  return out;
}

// Bootstrap window flags for one tracked snapshot (tower frame, t < 0).
struct SnapshotWindow {
  bool evaluated = false;  // only meaningful at negative times
  double h1_margin = 0, h2_margin = 0;  // |g| norms over their |t|-power bounds
  double lambda1_margin = 0, b1_margin = 0, nu_margin = 0, nudot_margin = 0;
  bool all_ok() const {
    return h1_margin <= 1 && h2_margin <= 1 && lambda1_margin <= 1 && b1_margin <= 1 &&
           nu_margin <= 1 && nudot_margin <= 1;
  }
};

struct TrackPoint {
  double t = 0;
  Decomposition dec;
  NuState nu;  // populated at negative times
  SnapshotWindow window;
};

struct TrackResult {
  std::vector<TrackPoint> points;
  bool truncated = false;   // basin loss mid-series
  double failure_time = 0;  // meaningful when truncated
  std::string failure_reason;
};

// Warm-started decomposition along an evolution record.  The first frame's
// guess defaults to the modulation ODE's exact scales at that time when the
// record lives at negative times, so callers of the standard pipeline can
// omit it.
inline TrackResult track(const EvolutionRecord& record, int k, int J, std::vector<int> iota = {},
                         std::vector<double> lambda_guess0 = {}) {
  require(!record.snapshots.empty(), "track needs at least one snapshot");
  if (iota.empty()) iota = default_signs(J);
  const bool tower_frame = record.times.front() < 0;
  TowerConstants consts;
  std::vector<double> eps;
  if (k >= 3 && (tower_frame || lambda_guess0.empty())) {
    consts = constants(k, J);
    eps = default_epsilons(consts);
  }
  std::vector<double> guess = lambda_guess0;
  if (guess.empty()) {
    require(k >= 3, "first-frame guess required when no tower prediction exists (k < 3)");
    guess.resize(J);
    if (tower_frame) {
      for (int j = 0; j < J; ++j) guess[j] = exact_lambda(consts, j, record.times.front());
    } else {
      for (int j = 0; j < J; ++j) guess[j] = (j == 0) ? 1.0 : exact_lambda(consts, j, -1.0);
    }
  }

  TrackResult out;
  for (std::size_t s = 0; s < record.snapshots.size(); ++s) {
    const double t = record.times[s];
    TrackPoint pt;
    pt.t = t;
    try {
      pt.dec = decompose(record.snapshots[s], k, J, iota, guess);
    } catch (const numerical_error& e) {
      out.truncated = true;
      out.failure_time = t;
      out.failure_reason = e.what();
      return out;
    }
    guess = pt.dec.cfg.lambda;  // warm start
    if (tower_frame && t < 0 && k >= 3) {
      TowerState st{t, pt.dec.cfg.lambda, pt.dec.cfg.b};
      pt.nu = to_nu(consts, st);
      pt.window.evaluated = true;
      const double at = -t;
      pt.window.h1_margin = std::sqrt(h1_pair_norm_sq(pt.dec.g)) * at;
      pt.window.h2_margin = std::sqrt(h2_pair_norm_sq(pt.dec.g)) * std::pow(at, 1.0 + eps[0]);
      pt.window.lambda1_margin = std::abs(pt.dec.cfg.lambda[0] - 1.0) * std::pow(at, eps[1]);
      pt.window.b1_margin = std::abs(pt.dec.cfg.b[0]) * at;
      for (int j = 1; j < J; ++j) {
        pt.window.nu_margin =
            std::max(pt.window.nu_margin, std::abs(pt.nu.nu[j]) * std::pow(at, eps[j + 1]));
        pt.window.nudot_margin = std::max(pt.window.nudot_margin, std::abs(pt.nu.nudot[j - 1]));
      }
    }
    out.points.push_back(std::move(pt));
  }
  return out;
}

}  // namespace wmlab
