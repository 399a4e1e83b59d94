// =====================================================================
// Closed-form tower constants, the modulation ODE with its exact
// collapsing solution, the linearized eigenstructure per bubble, and
// the backward-construction shooting driver.
//
// Indexing: public sequences are 0-based arrays whose slot jdx holds
// the quantity for bubble j = jdx + 1 of the math convention.  The
// outermost bubble (j = 1) has alpha = 0, lambda^ex = 1, b^ex = 0; its
// eigen slots are unused.  All dynamics run at negative times toward
// 0-, where |t| shrinks and the inner scales collapse.
// =====================================================================
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "wmlab/common.hpp"
#include "wmlab/grid.hpp"
#include "wmlab/profiles.hpp"

namespace wmlab {

struct TowerConstants {
  int k = 3, J = 1;
  double kappa = 0;
  std::vector<double> alpha;        // (k/(k-2))^{j-1} - 1
  std::vector<double> gamma;        // gamma_1 = 1; gamma_j^{k-2} = kappa/(8k^2) a(a+1) gamma_{j-1}^k
  std::vector<double> sigma_plus;   // unstable rate per bubble, j >= 2
  std::vector<double> sigma_minus;  // stable rate per bubble, j >= 2
  std::vector<std::array<double, 4>> A;  // 2x2 row-major linearization blocks
  std::vector<std::array<double, 4>> P;  // eigenvector columns (1, 1 + sigma/alpha)
};

inline TowerConstants constants(int k, int J) {
  require(k >= 3, "tower constants need k >= 3 (k = 2 scales are exponential, out of scope)");
  require(J >= 1 && J <= 16, "tower size J must lie in [1, 16]");
  TowerConstants c;
  c.k = k;
  c.J = J;
  c.kappa = kappa_norm(k);
  c.alpha.resize(J);
  c.gamma.resize(J);
  c.sigma_plus.assign(J, 0.0);
  c.sigma_minus.assign(J, 0.0);
  c.A.assign(J, {0, 0, 0, 0});
  c.P.assign(J, {1, 0, 0, 1});
  const double q = static_cast<double>(k) / (k - 2);
  for (int j = 1; j <= J; ++j) {
    const double a = std::pow(q, j - 1) - 1.0;
    c.alpha[j - 1] = a;
    if (j == 1) {
      c.gamma[0] = 1.0;
      continue;
    }
    c.gamma[j - 1] = std::pow(c.kappa / (8.0 * k * k) * a * (a + 1.0), 1.0 / (k - 2)) *
                     std::pow(c.gamma[j - 2], q);
    // sigma^2 + (2a+1) sigma - (k-2) a (a+1) = 0
    const double half = a + 0.5;
    const double disc = std::sqrt(half * half + (k - 2) * a * (a + 1.0));
    const double sp = -half + disc, sm = -half - disc;
    c.sigma_plus[j - 1] = sp;
    c.sigma_minus[j - 1] = sm;
    c.A[j - 1] = {-a, a, (k - 1.0) * (a + 1.0), -(a + 1.0)};
    c.P[j - 1] = {1.0, 1.0, 1.0 + sp / a, 1.0 + sm / a};
  }
  return c;
}

// max entry of A - P diag(sigma+, sigma-) P^{-1} for bubble jdx >= 1
inline double diagonalization_residual(const TowerConstants& c, int jdx) {
  require(jdx >= 1 && jdx < c.J, "diagonalization defined for j >= 2");
  const auto& A = c.A[jdx];
  const auto& P = c.P[jdx];
  const double sp = c.sigma_plus[jdx], sm = c.sigma_minus[jdx];
  const double det = P[0] * P[3] - P[1] * P[2];
  const std::array<double, 4> Pi = {P[3] / det, -P[1] / det, -P[2] / det, P[0] / det};
  const std::array<double, 4> PD = {P[0] * sp, P[1] * sm, P[2] * sp, P[3] * sm};
  double res = 0;
  for (int r = 0; r < 2; ++r)
    for (int col = 0; col < 2; ++col) {
      const double m = PD[2 * r] * Pi[col] + PD[2 * r + 1] * Pi[2 + col];
      res = std::max(res, std::abs(m - A[2 * r + col]));
    }
  return res;
}

struct TowerState {
  double t = -1;
  std::vector<double> lambda, b;
};

inline void validate_state(const TowerConstants& c, const TowerState& s) {
  require(s.t < 0, "tower states live at negative times");
  require(static_cast<int>(s.lambda.size()) == c.J && static_cast<int>(s.b.size()) == c.J,
          "state size must match the tower");
  for (double l : s.lambda) require(l > 0 && std::isfinite(l), "scales must be positive finite");
  for (int j = 1; j < c.J; ++j)
    require(s.lambda[j] < s.lambda[j - 1], "scale ordering lost");
  for (double bb : s.b) require(std::isfinite(bb), "b must be finite");
}

inline double exact_lambda(const TowerConstants& c, int jdx, double t) {
  return c.gamma[jdx] * std::pow(-t, -c.alpha[jdx]);
}

inline double exact_b(const TowerConstants& c, int jdx, double t) {
  if (c.alpha[jdx] == 0.0) return 0.0;
  return -c.alpha[jdx] * c.gamma[jdx] * std::pow(-t, -(c.alpha[jdx] + 1.0));
}

inline TowerState exact_solution(const TowerConstants& c, double t) {
  require(t < 0, "exact solution defined for t < 0");
  TowerState s;
  s.t = t;
  s.lambda.resize(c.J);
  s.b.resize(c.J);
  for (int j = 0; j < c.J; ++j) {
    s.lambda[j] = exact_lambda(c, j, t);
    s.b[j] = exact_b(c, j, t);
  }
  return s;
}

// ---------------------------------------------------------------------
// Right-hand side
// ---------------------------------------------------------------------

enum class RhsMode { Leading, FullInteraction };

struct OdeSystem {
  TowerConstants consts;
  std::vector<int> iota;
  RhsMode mode = RhsMode::Leading;
};

inline OdeSystem make_system(TowerConstants c, std::vector<int> iota, RhsMode mode) {
  require(static_cast<int>(iota.size()) == c.J, "iota length must equal J");
  for (int s : iota) require(s == 1 || s == -1, "signs must be +1 or -1");
  return {std::move(c), std::move(iota), mode};
}

struct TowerDeriv {
  std::vector<double> dlambda, db;
};

namespace detail {

// Fixed relative quadrature for <LambdaQ(./lambda_j), f_i>: nodes in
// y = r/lambda_j on [1e-4, 1e4] at ~0.04 log spacing.  The integrand
// falls off like y^{+-2k} outside, so the truncated tails are far below
// the integrator tolerance at every admissible k.
struct InteractionQuad {
  std::vector<double> y, w, lamq;
};

inline const InteractionQuad& interaction_quad(int k) {
  static std::mutex mu;
  static std::map<int, InteractionQuad> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(k);
  if (it == cache.end()) {
    const RadialGrid g = make_log_grid(1e-4, 1e4, 461);
    InteractionQuad q;
    q.y = g.r;
    q.w = g.w;
    q.lamq.resize(g.n);
    for (int i = 0; i < g.n; ++i) q.lamq[i] = lambda_q(k, g.r[i]);
    it = cache.emplace(k, std::move(q)).first;
  }
  return it->second;
}

}  // namespace detail

inline TowerDeriv ode_rhs(const OdeSystem& sys, const TowerState& s) {
  const TowerConstants& c = sys.consts;
  validate_state(c, s);
  TowerDeriv d;
  d.dlambda.resize(c.J);
  d.db.assign(c.J, 0.0);  // outermost bubble: free scaling direction, b1' = 0
  for (int j = 0; j < c.J; ++j) d.dlambda[j] = -s.b[j];
  if (c.J == 1) return d;
  if (sys.mode == RhsMode::Leading) {
    const double coef = 8.0 * c.k * c.k / c.kappa;
    for (int j = 1; j < c.J; ++j)
      d.db[j] = -coef * pow_int(s.lambda[j], c.k - 1) / pow_int(s.lambda[j - 1], c.k);
  } else {
    const auto& q = detail::interaction_quad(c.k);
    TowerConfig cfg;
    cfg.k = c.k;
    cfg.J = c.J;
    cfg.iota = sys.iota;
    cfg.lambda = s.lambda;
    const int n = static_cast<int>(q.y.size());
    for (int j = 1; j < c.J; ++j) {
      const double lam = s.lambda[j];
      double acc = 0;
      for (int i = 0; i < n; ++i) acc += q.w[i] * q.lamq[i] * interaction_term(cfg, lam * q.y[i]);
      // b_j' = kappa^{-1} lambda_j^{-1} <LambdaQ_{;j}, f_i>, the iota_j riding inside ;j
      d.db[j] = sys.iota[j] * lam * acc / c.kappa;
    }
  }
  return d;
}

inline TowerDeriv ode_rhs(const TowerConstants& c, const TowerState& s, RhsMode mode) {
  return ode_rhs(OdeSystem{c, default_signs(c.J), mode}, s);
}

// Relative residual of the closed-form power laws under the leading right
// side at one time: the laws satisfy lambda_t = -b and
// b_t = -8k^2 kappa^{-1} lambda_j^{k-1}/lambda_{j-1}^k identically.
inline double exact_rhs_residual(const TowerConstants& c, double t) {
  const TowerState s = exact_solution(c, t);
  const TowerDeriv d = ode_rhs(c, s, RhsMode::Leading);
  double worst = 0;
  for (int j = 0; j < c.J; ++j) {
    const double dl = c.alpha[j] * c.gamma[j] * std::pow(-t, -(c.alpha[j] + 1.0));
    const double db = -c.alpha[j] * (c.alpha[j] + 1.0) * c.gamma[j] * std::pow(-t, -(c.alpha[j] + 2.0));
    const double sl = std::abs(dl) + std::abs(s.lambda[j] / t);
    const double sb = std::abs(db) + std::abs(s.b[j] / t) + 1e-300;
    worst = std::max(worst, std::abs(d.dlambda[j] - dl) / sl);
    worst = std::max(worst, std::abs(d.db[j] - db) / sb);
  }
  return worst;
}

// ---------------------------------------------------------------------
// Adaptive integration (Dormand-Prince 5(4), relative error control)
// ---------------------------------------------------------------------

struct Trajectory {
  std::vector<TowerState> states;
  std::vector<TowerDeriv> derivs;  // aligned with states; enables dense output
  bool halted = false;             // blow-down: ordering lost, stepsize underflow, budget
  std::string halt_reason;
};

struct IntegrateOptions {
  double rtol = 1e-10;
  double h_init = 0;  // <= 0 selects automatically
  long max_steps = 4000000;
  bool store = true;
};

// Observer runs on every accepted node (including the initial one);
// returning false stops the run without marking it halted.
using StepObserver = std::function<bool(const TowerState&, const TowerDeriv&)>;

namespace detail {

inline bool rhs_into(const OdeSystem& sys, double t, const std::vector<double>& y,
                     std::vector<double>& f) {
  const int J = sys.consts.J;
  TowerState s;
  s.t = t;
  s.lambda.assign(y.begin(), y.begin() + J);
  s.b.assign(y.begin() + J, y.end());
  for (double v : y)
    if (!std::isfinite(v)) return false;
  try {
    const TowerDeriv d = ode_rhs(sys, s);
    for (int j = 0; j < J; ++j) {
      f[j] = d.dlambda[j];
      f[J + j] = d.db[j];
    }
  } catch (const usage_error&) {
    return false;  // a trial stage wandered out of the admissible cone
  }
  return true;
}

inline TowerState unpack_state(int J, double t, const std::vector<double>& y) {
  TowerState s;
  s.t = t;
  s.lambda.assign(y.begin(), y.begin() + J);
  s.b.assign(y.begin() + J, y.end());
  return s;
}

inline TowerDeriv unpack_deriv(int J, const std::vector<double>& f) {
  TowerDeriv d;
  d.dlambda.assign(f.begin(), f.begin() + J);
  d.db.assign(f.begin() + J, f.end());
  return d;
}

}  // namespace detail

inline Trajectory integrate(const OdeSystem& sys, const TowerState& s0, double t_end,
                            const IntegrateOptions& opt = {}, const StepObserver& obs = {}) {
  const TowerConstants& c = sys.consts;
  validate_state(c, s0);
  require(t_end > s0.t && t_end < 0, "integration runs forward in t toward 0-");
  require(opt.rtol > 0 && opt.rtol < 1e-1, "rtol must lie in (0, 0.1)");

  // Dormand-Prince tableau
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 5179.0 / 57600, e3 = 7571.0 / 16695, e4 = 393.0 / 640,
                          e5 = -92097.0 / 339200, e6 = 187.0 / 2100, e7 = 1.0 / 40;

  const int n = 2 * c.J;
  std::vector<double> y(n), k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), yt(n), y5(n), y4(n);
  for (int j = 0; j < c.J; ++j) {
    y[j] = s0.lambda[j];
    y[c.J + j] = s0.b[j];
  }

  Trajectory tr;
  auto emit = [&](double t, const std::vector<double>& yy, const std::vector<double>& ff) {
    const TowerState s = detail::unpack_state(c.J, t, yy);
    const TowerDeriv d = detail::unpack_deriv(c.J, ff);
    if (opt.store) {
      tr.states.push_back(s);
      tr.derivs.push_back(d);
    }
    return !obs || obs(s, d);
  };

  double t = s0.t;
  if (!detail::rhs_into(sys, t, y, k1)) {
    tr.halted = true;
    tr.halt_reason = "right-hand side rejected the initial state";
    return tr;
  }
  if (!emit(t, y, k1)) return tr;

  double h = opt.h_init > 0 ? opt.h_init : 0.01 * (-t) * std::pow(opt.rtol, 0.2);
  h = std::min(h, t_end - t);
  long steps = 0;
  int rejects_in_a_row = 0;

  while (t < t_end) {
    if (++steps > opt.max_steps) {
      tr.halted = true;
      tr.halt_reason = "step budget exhausted";
      break;
    }
    if (h < 1e-14 * (-t)) {
      tr.halted = true;
      tr.halt_reason = "stepsize underflow (blow-down at t = " + std::to_string(t) + ")";
      break;
    }
    if (t + h > t_end) h = t_end - t;

    bool ok = true;
    for (int i = 0; i < n; ++i) yt[i] = y[i] + h * a21 * k1[i];
    ok = ok && detail::rhs_into(sys, t + c2 * h, yt, k2);
    if (ok) {
      for (int i = 0; i < n; ++i) yt[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
      ok = detail::rhs_into(sys, t + c3 * h, yt, k3);
    }
    if (ok) {
      for (int i = 0; i < n; ++i) yt[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
      ok = detail::rhs_into(sys, t + c4 * h, yt, k4);
    }
    if (ok) {
      for (int i = 0; i < n; ++i)
        yt[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
      ok = detail::rhs_into(sys, t + c5 * h, yt, k5);
    }
    if (ok) {
      for (int i = 0; i < n; ++i)
        yt[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
      ok = detail::rhs_into(sys, t + h, yt, k6);
    }
    if (ok) {
      for (int i = 0; i < n; ++i)
        y5[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
      ok = detail::rhs_into(sys, t + h, y5, k7);
    }
    if (!ok) {
      h *= 0.3;
      if (++rejects_in_a_row > 200) {
        tr.halted = true;
        tr.halt_reason = "persistent stage failures (blow-down at t = " + std::to_string(t) + ")";
        break;
      }
      continue;
    }

    double err = 0;
    for (int i = 0; i < n; ++i) {
      y4[i] = y[i] + h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                          e7 * k7[i]);
      const double sc = opt.rtol * std::max(std::abs(y[i]), std::abs(y5[i])) + 1e-300;
      const double q = (y5[i] - y4[i]) / sc;
      err += q * q;
    }
    err = std::sqrt(err / n);

    if (err <= 1.0) {
      rejects_in_a_row = 0;
      t += h;
      y = y5;
      k1 = k7;  // first-same-as-last
      bool valid = true;
      for (int j = 0; j < c.J; ++j)
        valid = valid && y[j] > 0 && (j == 0 || y[j] < y[j - 1]);
      if (!valid) {
        tr.halted = true;
        tr.halt_reason = "scale ordering lost at t = " + std::to_string(t);
        break;
      }
      if (!emit(t, y, k1)) return tr;
      const double fac = std::clamp(0.9 * std::pow(err + 1e-30, -0.2), 0.2, 5.0);
      h *= fac;
    } else {
      ++rejects_in_a_row;
      h *= std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
    }
  }
  return tr;
}

// Cubic Hermite dense output on the stored nodes.
inline TowerState sample_state(const Trajectory& tr, double t) {
  require(!tr.states.empty(), "empty trajectory");
  const auto& st = tr.states;
  require(t >= st.front().t && t <= st.back().t, "sample time outside the trajectory");
  int lo = 0, hi = static_cast<int>(st.size()) - 1;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    (st[mid].t <= t ? lo : hi) = mid;
  }
  const TowerState &s0 = st[lo], &s1 = st[lo + 1];
  const TowerDeriv &d0 = tr.derivs[lo], &d1 = tr.derivs[lo + 1];
  const double h = s1.t - s0.t;
  const double th = (t - s0.t) / h;
  const double h00 = (1 + 2 * th) * sq(1 - th), h10 = th * sq(1 - th);
  const double h01 = th * th * (3 - 2 * th), h11 = th * th * (th - 1);
  const int J = static_cast<int>(s0.lambda.size());
  TowerState out;
  out.t = t;
  out.lambda.resize(J);
  out.b.resize(J);
  for (int j = 0; j < J; ++j) {
    out.lambda[j] = h00 * s0.lambda[j] + h * h10 * d0.dlambda[j] + h01 * s1.lambda[j] +
                    h * h11 * d1.dlambda[j];
    out.b[j] = h00 * s0.b[j] + h * h10 * d0.db[j] + h01 * s1.b[j] + h * h11 * d1.db[j];
  }
  return out;
}

// ---------------------------------------------------------------------
// Deviation coordinates relative to the exact collapse
// ---------------------------------------------------------------------

struct NuState {
  double t = -1;
  std::vector<double> nu;        // lambda_j/lambda_j^ex - 1, all j
  std::vector<double> nudot;     // b_j/b_j^ex - 1, j >= 2 only (b_1^ex = 0)
  std::vector<double> nuhatdot;  // optional refined velocities; empty unless provided
  double b1 = 0;                 // tracked raw, window |b1| <= |t|^{-1}
};

inline NuState to_nu(const TowerConstants& c, const TowerState& s) {
  validate_state(c, s);
  NuState n;
  n.t = s.t;
  n.b1 = s.b[0];
  n.nu.resize(c.J);
  n.nudot.resize(c.J - 1);
  for (int j = 0; j < c.J; ++j) n.nu[j] = s.lambda[j] / exact_lambda(c, j, s.t) - 1.0;
  for (int j = 1; j < c.J; ++j) n.nudot[j - 1] = s.b[j] / exact_b(c, j, s.t) - 1.0;
  return n;
}

inline TowerState from_nu(const TowerConstants& c, const NuState& n) {
  require(n.t < 0, "nu states live at negative times");
  require(static_cast<int>(n.nu.size()) == c.J &&
              static_cast<int>(n.nudot.size()) == c.J - 1,
          "nu state size must match the tower");
  TowerState s;
  s.t = n.t;
  s.lambda.resize(c.J);
  s.b.resize(c.J);
  s.b[0] = n.b1;
  for (int j = 0; j < c.J; ++j) s.lambda[j] = (1.0 + n.nu[j]) * exact_lambda(c, j, n.t);
  for (int j = 1; j < c.J; ++j) s.b[j] = (1.0 + n.nudot[j - 1]) * exact_b(c, j, n.t);
  return s;
}

// Eigen coordinates of (nu_j, nudot_j): unstable grows like |t|^{-sigma_+},
// stable decays like |t|^{-sigma_-}.  Data with nudot = (1+sigma_+/alpha) nu
// satisfies P_u = nu, P_s = 0 exactly.
struct EigenCoords {
  double unstable = 0, stable = 0;
};

inline EigenCoords eigen_coordinates(const TowerConstants& c, int jdx, double nu, double nudot) {
  require(jdx >= 1 && jdx < c.J, "eigen coordinates exist for j >= 2");
  const double a = c.alpha[jdx], sp = c.sigma_plus[jdx], sm = c.sigma_minus[jdx];
  const double det = (sm - sp) / a;
  return {((1.0 + sm / a) * nu - nudot) / det, (-(1.0 + sp / a) * nu + nudot) / det};
}

// Initial data with a single bubble's eigenmode excited.
inline TowerState eigen_perturbed_init(const TowerConstants& c, double t0, int jdx, double amp,
                                       bool unstable_dir) {
  require(jdx >= 1 && jdx < c.J, "eigen perturbation needs j >= 2");
  NuState n;
  n.t = t0;
  n.nu.assign(c.J, 0.0);
  n.nudot.assign(c.J - 1, 0.0);
  const double sig = unstable_dir ? c.sigma_plus[jdx] : c.sigma_minus[jdx];
  n.nu[jdx] = amp;
  n.nudot[jdx - 1] = amp * (1.0 + sig / c.alpha[jdx]);
  return from_nu(c, n);
}

// ---------------------------------------------------------------------
// Shooting
// ---------------------------------------------------------------------

// eps[0] > eps[1] > ... > eps[J]; eps[0] < 1/2, eps[1] < 2/(k-2),
// eps[j] < sigma_{j,+} for j >= 2.
inline std::vector<double> default_epsilons(const TowerConstants& c) {
  std::vector<double> eps(c.J + 1);
  const double cap1 = 2.0 / (c.k - 2);
  double inner = std::min(cap1, 0.5);
  if (c.J >= 2) inner = std::min(inner, c.sigma_plus[c.J - 1]);
  eps[c.J] = 0.5 * inner;
  for (int j = c.J - 1; j >= 1; --j) {
    const double ub = (j >= 2 ? c.sigma_plus[j - 1] : cap1) * 0.999;
    eps[j] = std::min(ub, 1.2 * eps[j + 1]);
  }
  eps[0] = std::min(0.49, 1.2 * eps[1]);
  return eps;
}

struct ShootingConfig {
  double t0 = -1e4, T_boot = -1e2;
  std::vector<double> eps;       // size J+1; empty selects default_epsilons
  double bisection_tol = 1e-12;  // bracket width relative to the box half-width
  int max_iter = 60;             // bisection depth per level
  RhsMode rhs_mode = RhsMode::Leading;
  double rtol = 1e-8;  // integrator tolerance inside classify
};

inline void validate(const TowerConstants& c, const ShootingConfig& cfg) {
  require(cfg.t0 < cfg.T_boot && cfg.T_boot < 0, "need t0 < T_boot < 0");
  require(static_cast<int>(cfg.eps.size()) == c.J + 1, "eps must have one entry per level");
  for (int j = 0; j < c.J; ++j)
    require(cfg.eps[j] > cfg.eps[j + 1] && cfg.eps[j + 1] > 0, "eps must decrease strictly");
  require(cfg.eps[0] < 0.5, "eps0 must stay below 1/2");
  require(cfg.eps[1] < 2.0 / (c.k - 2), "eps1 must stay below 2/(k-2)");
  for (int j = 2; j <= c.J; ++j)
    require(cfg.eps[j] < c.sigma_plus[j - 1], "eps_j must stay below sigma_{j,+}");
  require(cfg.bisection_tol > 0 && cfg.bisection_tol < 0.5, "bisection_tol in (0, 0.5)");
  require(cfg.max_iter >= 4 && cfg.max_iter <= 200, "max_iter in [4, 200]");
  require(cfg.rtol > 0 && cfg.rtol < 1e-2, "shooting rtol in (0, 1e-2)");
}

inline ShootingConfig resolve_epsilons(const TowerConstants& c, ShootingConfig cfg) {
  if (cfg.eps.empty()) cfg.eps = default_epsilons(c);
  validate(c, cfg);
  return cfg;
}

// Data on the candidate manifold: nudot = +(1 + sigma_+/alpha) nu kills the
// stable coordinate, so the shooting parameters move purely along the
// unstable directions.
inline TowerState stable_manifold_init(const TowerConstants& c, const ShootingConfig& cfg,
                                       const std::vector<double>& nu0) {
  require(static_cast<int>(nu0.size()) == c.J - 1, "nu0 needs one entry per j >= 2");
  require(static_cast<int>(cfg.eps.size()) == c.J + 1,
          "config eps must be resolved first (resolve_epsilons)");
  require(cfg.t0 < 0, "t0 must be negative");
  TowerState s = exact_solution(c, cfg.t0);
  s.lambda[0] = 1.0;
  s.b[0] = 0.0;
  for (int j = 1; j < c.J; ++j) {
    const double box = std::pow(-cfg.t0, -cfg.eps[j + 1]);
    require(std::abs(nu0[j - 1]) <= box * (1.0 + 1e-12), "nu0 outside the shooting box");
    const double factor = 1.0 + c.sigma_plus[j] / c.alpha[j];
    s.lambda[j] = (1.0 + nu0[j - 1]) * exact_lambda(c, j, cfg.t0);
    s.b[j] = (1.0 + factor * nu0[j - 1]) * exact_b(c, j, cfg.t0);
  }
  return s;
}

struct ExitEvent {
  int j = 0;     // math index >= 2 of the level that exited; 0 = none
  int sign = 0;  // sign of nu_j at the exit
  double t = 0;
};

struct WindowReport {
  // margins are max over the run of |quantity| / bound; ok iff <= 1 (+ slack)
  double lambda1_margin = 0, b1_margin = 0, nu_margin = 0, nudot_margin = 0;
  bool lambda1_ok = true, b1_ok = true, nu_ok = true, nudot_ok = true;
  bool all_ok() const { return lambda1_ok && b1_ok && nu_ok && nudot_ok; }
};

struct ClassifyResult {
  bool reached = false;
  ExitEvent exit;
  WindowReport window;
  Trajectory traj;  // populated when store was requested
};

// Integrates manifold data forward and applies the exit rule: reject at the
// first node where |nu_j| |t|^{eps_j} >= 1 with outward radial derivative
// d/dt(|t|^{eps_j} |nu_j|) > 0.  Outer levels are tested first.
inline ClassifyResult classify(const OdeSystem& sys, const ShootingConfig& cfg,
                               const std::vector<double>& nu0, bool store = false) {
  const TowerConstants& c = sys.consts;
  require(static_cast<int>(cfg.eps.size()) == c.J + 1,
          "config eps must be resolved first (resolve_epsilons)");
  const TowerState s0 = stable_manifold_init(c, cfg, nu0);
  ClassifyResult res;
  WindowReport& win = res.window;
  auto observer = [&](const TowerState& s, const TowerDeriv&) -> bool {
    const double at = -s.t;
    win.lambda1_margin =
        std::max(win.lambda1_margin, std::abs(s.lambda[0] - 1.0) * std::pow(at, cfg.eps[1]));
    win.b1_margin = std::max(win.b1_margin, std::abs(s.b[0]) * at);
    for (int j = 1; j < c.J; ++j) {
      const double lam_ex = exact_lambda(c, j, s.t);
      const double b_ex = exact_b(c, j, s.t);
      const double nu = s.lambda[j] / lam_ex - 1.0;
      const double nudot = s.b[j] / b_ex - 1.0;
      const double eps = cfg.eps[j + 1];
      const double barrier = std::abs(nu) * std::pow(at, eps);
      win.nu_margin = std::max(win.nu_margin, barrier);
      win.nudot_margin = std::max(win.nudot_margin, std::abs(nudot));
      if (barrier >= 1.0) {
        const double nu_t = (-s.b[j] + b_ex * (1.0 + nu)) / lam_ex;
        const double sgn = nu > 0 ? 1.0 : -1.0;
        if (at * sgn * nu_t - eps * std::abs(nu) > 0) {
          res.exit = {j + 1, nu > 0 ? 1 : -1, s.t};
          return false;
        }
      }
    }
    return true;
  };
  IntegrateOptions opt;
  opt.rtol = cfg.rtol;
  opt.store = store;
  Trajectory tr = integrate(sys, s0, cfg.T_boot, opt, observer);
  if (tr.halted)
    throw numerical_error("tower integration broke down while shooting: " + tr.halt_reason);
  res.traj = std::move(tr);
  res.reached = (res.exit.j == 0);
  const double slack = 1.0 + 1e-9;
  win.lambda1_ok = win.lambda1_margin <= slack;
  win.b1_ok = win.b1_margin <= slack;
  win.nu_ok = win.nu_margin <= slack;
  win.nudot_ok = win.nudot_margin <= slack;
  return res;
}

struct ShootResult {
  std::vector<double> nu0_star;  // one entry per j >= 2
  Trajectory trajectory;
  WindowReport window;
  long classify_calls = 0;
  bool monotone_ok = true;  // endpoint/bracket signs stayed consistent
  std::vector<std::string> history;
};

namespace detail {

struct ShootOutcome {
  enum Kind { Success, Exit, Exhausted } kind = Exhausted;
  ExitEvent exit;
  std::vector<double> nu0;
};

}  // namespace detail

// Nested bisection over the box product: the innermost index is resolved
// first; an exit at an outer level propagates upward and moves that
// level's bracket.  Success anywhere wins immediately.
inline ShootResult shoot(const TowerConstants& consts, ShootingConfig cfg,
                         std::vector<int> iota = {}) {
  if (iota.empty()) iota = default_signs(consts.J);
  cfg = resolve_epsilons(consts, cfg);
  const OdeSystem sys = make_system(consts, std::move(iota), cfg.rhs_mode);
  ShootResult out;

  if (consts.J == 1) {
    ClassifyResult r = classify(sys, cfg, {}, true);
    ++out.classify_calls;
    if (!r.reached) throw numerical_error("single-bubble run failed to reach T_boot");
    out.trajectory = std::move(r.traj);
    out.window = r.window;
    out.history.push_back("J=1: trivially reached T_boot");
    return out;
  }

  std::vector<double> nu0(consts.J - 1, 0.0);
  auto log_eval = [&](int lvl, double x, const detail::ShootOutcome& o) {
    char buf[160];
    const char* what = o.kind == detail::ShootOutcome::Success   ? "reached"
                       : o.kind == detail::ShootOutcome::Exhausted ? "exhausted"
                                                                   : "exit";
    if (o.kind == detail::ShootOutcome::Exit)
      std::snprintf(buf, sizeof buf, "level %d: nu0=% .12e -> exit(j=%d, sign=%+d)", lvl, x,
                    o.exit.j, o.exit.sign);
    else
      std::snprintf(buf, sizeof buf, "level %d: nu0=% .12e -> %s", lvl, x, what);
    out.history.push_back(buf);
  };

  std::function<detail::ShootOutcome(int)> solve = [&](int lvl) -> detail::ShootOutcome {
    const double box = std::pow(-cfg.t0, -cfg.eps[lvl]);
    auto eval = [&](double x) -> detail::ShootOutcome {
      nu0[lvl - 2] = x;
      detail::ShootOutcome o;
      if (lvl == consts.J) {
        ++out.classify_calls;
        const ClassifyResult r = classify(sys, cfg, nu0, false);
        if (r.reached) {
          o.kind = detail::ShootOutcome::Success;
          o.nu0 = nu0;
        } else {
          o.kind = detail::ShootOutcome::Exit;
          o.exit = r.exit;
        }
      } else {
        o = solve(lvl + 1);
      }
      log_eval(lvl, x, o);
      return o;
    };

    auto run_bisection = [&](double lo, double hi, int s_lo,
                             int s_hi) -> detail::ShootOutcome {
      for (int it = 0; it < cfg.max_iter; ++it) {
        if (hi - lo < cfg.bisection_tol * box) break;
        const double mid = 0.5 * (lo + hi);
        detail::ShootOutcome o = eval(mid);
        if (o.kind != detail::ShootOutcome::Exit || o.exit.j < lvl) return o;
        if (o.exit.sign == s_lo) {
          lo = mid;
        } else if (o.exit.sign == s_hi) {
          hi = mid;
        } else {
          out.monotone_ok = false;
          break;
        }
      }
      detail::ShootOutcome o;
      o.kind = detail::ShootOutcome::Exhausted;
      return o;
    };

    detail::ShootOutcome olo = eval(-box);
    if (olo.kind != detail::ShootOutcome::Exit || olo.exit.j < lvl) return olo;
    detail::ShootOutcome ohi = eval(box);
    if (ohi.kind != detail::ShootOutcome::Exit || ohi.exit.j < lvl) return ohi;

    if (olo.exit.sign != ohi.exit.sign) {
      detail::ShootOutcome o = run_bisection(-box, box, olo.exit.sign, ohi.exit.sign);
      if (o.kind != detail::ShootOutcome::Exhausted) return o;
    } else {
      out.monotone_ok = false;
    }

    // Grid-scan fallback: locate a sign change (or a success) on a coarse
    // sweep, then bisect inside that cell.
    out.history.push_back("level " + std::to_string(lvl) + ": grid scan fallback");
    const int scan_n = 17;
    double prev_x = -box;
    detail::ShootOutcome prev = olo;
    for (int i = 1; i < scan_n; ++i) {
      const double x = -box + (2.0 * box) * i / (scan_n - 1);
      detail::ShootOutcome o = (i == scan_n - 1) ? ohi : eval(x);
      if (o.kind != detail::ShootOutcome::Exit || o.exit.j < lvl) return o;
      if (o.exit.sign != prev.exit.sign) {
        detail::ShootOutcome r = run_bisection(prev_x, x, prev.exit.sign, o.exit.sign);
        if (r.kind != detail::ShootOutcome::Exhausted) return r;
      }
      prev_x = x;
      prev = o;
    }
    detail::ShootOutcome o;
    o.kind = detail::ShootOutcome::Exhausted;
    return o;
  };

  detail::ShootOutcome found = solve(2);
  if (found.kind != detail::ShootOutcome::Success) {
    std::string msg = "shooting failed: bisection budget exhausted; history tail:";
    const size_t start = out.history.size() > 40 ? out.history.size() - 40 : 0;
    for (size_t i = start; i < out.history.size(); ++i) msg += "\n  " + out.history[i];
    throw numerical_error(msg);
  }

  out.nu0_star = found.nu0;
  ClassifyResult r = classify(sys, cfg, out.nu0_star, true);
  ++out.classify_calls;
  if (!r.reached) throw numerical_error("accepted shooting parameters failed on replay");
  out.trajectory = std::move(r.traj);
  out.window = r.window;
  return out;
}

// ---------------------------------------------------------------------
// Power-law fitting in log|t|
// ---------------------------------------------------------------------

struct PowerFit {
  double slope = 0, intercept = 0, rms = 0;
  int npts = 0;
};

// Least squares of log|q| against log|t|; the quantity must keep one sign.
inline PowerFit exponent_fit(const std::vector<double>& t, const std::vector<double>& q) {
  require(t.size() == q.size() && t.size() >= 10, "fit needs >= 10 aligned samples");
  const double s0 = q.front();
  require(s0 != 0.0, "fit quantity vanishes");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = static_cast<int>(t.size());
  for (int i = 0; i < n; ++i) {
    require(t[i] < 0, "fit times must be negative");
    require(q[i] * s0 > 0, "fit quantity changes sign");
    const double x = std::log(-t[i]), y = std::log(std::abs(q[i]));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = n * sxx - sx * sx;
  require(std::abs(den) > 1e-30 * n * sxx, "degenerate fit abscissa");
  PowerFit f;
  f.npts = n;
  f.slope = (n * sxy - sx * sy) / den;
  f.intercept = (sy - f.slope * sx) / n;
  double rss = 0;
  for (int i = 0; i < n; ++i) {
    const double x = std::log(-t[i]), y = std::log(std::abs(q[i]));
    rss += sq(y - (f.intercept + f.slope * x));
  }
  f.rms = std::sqrt(rss / n);
  return f;
}

}  // namespace wmlab
