// =====================================================================
// Radial grids for k-equivariant fields on (0, infinity).
//
// Two node layouts: log-uniform (resolves widely separated bubble
// scales) and uniform (wave propagation at fixed CFL).  Quadrature
// weights integrate against the planar radial measure r dr: each pair
// of cells carries the quadratic Lagrange basis integrated exactly
// against the measure (Gauss-Legendre, well past machine precision),
// so constants are reproduced to roundoff and smooth integrands
// converge at fourth order.  Derivatives are fourth-order stencils,
// taken in the log coordinate on log grids.
// =====================================================================
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "wmlab/common.hpp"

namespace wmlab {

enum class GridKind { LogUniform, Uniform };

struct RadialGrid {
  GridKind kind;
  double r_min = 0, r_max = 0;
  int n = 0;
  double step = 0;  // spacing in log r (LogUniform) or r (Uniform)
  std::vector<double> r;  // nodes, ascending
  std::vector<double> w;  // quadrature weights: sum w_i f(r_i) ~ int f r dr
};

namespace detail {

// 12-point Gauss-Legendre on [-1,1]; exact for polynomials through degree 23,
// and effectively exact for the gently varying measures below.
inline const std::array<double, 12>& gl_x() {
  static const std::array<double, 12> x = {
      -0.9815606342467192, -0.9041172563704749, -0.7699026741943047,
      -0.5873179542866175, -0.3678314989981802, -0.1252334085114689,
      0.1252334085114689,  0.3678314989981802,  0.5873179542866175,
      0.7699026741943047,  0.9041172563704749,  0.9815606342467192};
  return x;
}
inline const std::array<double, 12>& gl_w() {
  static const std::array<double, 12> w = {
      0.0471753363865118, 0.1069393259953184, 0.1600783285433462,
      0.2031674267230659, 0.2334925365383548, 0.2491470458134028,
      0.2491470458134028, 0.2334925365383548, 0.2031674267230659,
      0.1600783285433462, 0.1069393259953184, 0.0471753363865118};
  return w;
}

// Accumulate exact integrals of the Lagrange basis on nodes x0..x2 (quadratic)
// or x0..x1 (linear) against measure(x) dx into the weight array.
template <int Deg>
void add_cell_weights(const std::vector<double>& x, int i0,
                      const std::function<double(double)>& measure,
                      std::vector<double>& w) {
  const double a = x[i0], b = x[i0 + Deg];
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  for (int q = 0; q < 12; ++q) {
    const double xq = mid + half * gl_x()[q];
    const double mw = gl_w()[q] * half * measure(xq);
    for (int j = 0; j <= Deg; ++j) {
      double L = 1.0;
      for (int m = 0; m <= Deg; ++m)
        if (m != j) L *= (xq - x[i0 + m]) / (x[i0 + j] - x[i0 + m]);
      w[i0 + j] += mw * L;
    }
  }
}

inline void build_weights(std::vector<double>& w, const std::vector<double>& x,
                          const std::function<double(double)>& measure) {
  const int n = static_cast<int>(x.size());
  w.assign(n, 0.0);
  int i = 0;
  if ((n - 1) % 2 != 0) {  // odd cell count: sweep the first cell linearly
    add_cell_weights<1>(x, 0, measure, w);
    i = 1;
  }
  for (; i + 2 <= n - 1; i += 2) add_cell_weights<2>(x, i, measure, w);
}

}  // namespace detail

inline RadialGrid make_log_grid(double r_min, double r_max, int n) {
  require(r_min > 0 && r_max > r_min && n >= 5, "log grid needs 0 < r_min < r_max and n >= 5");
  RadialGrid g;
  g.kind = GridKind::LogUniform;
  g.r_min = r_min;
  g.r_max = r_max;
  g.n = n;
  const double x0 = std::log(r_min), x1 = std::log(r_max);
  g.step = (x1 - x0) / (n - 1);
  std::vector<double> x(n);
  g.r.resize(n);
  for (int i = 0; i < n; ++i) {
    x[i] = x0 + g.step * i;
    g.r[i] = std::exp(x[i]);
  }
  g.r.front() = r_min;
  g.r.back() = r_max;
  // int f(r) r dr = int f e^{2x} dx
  detail::build_weights(g.w, x, [](double xx) { return std::exp(2.0 * xx); });
  return g;
}

inline RadialGrid make_uniform_grid(double r_min, double r_max, int n) {
  require(r_min >= 0 && r_max > r_min && n >= 5, "uniform grid needs r_min < r_max and n >= 5");
  RadialGrid g;
  g.kind = GridKind::Uniform;
  g.r_min = r_min;
  g.r_max = r_max;
  g.n = n;
  g.step = (r_max - r_min) / (n - 1);
  g.r.resize(n);
  for (int i = 0; i < n; ++i) g.r[i] = r_min + g.step * i;
  detail::build_weights(g.w, g.r, [](double rr) { return rr; });
  return g;
}

inline std::shared_ptr<const RadialGrid> share(RadialGrid g) {
  return std::make_shared<const RadialGrid>(std::move(g));
}

// ---------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------

struct ScalarField {
  std::shared_ptr<const RadialGrid> grid;
  std::vector<double> v;

  ScalarField() = default;
  explicit ScalarField(std::shared_ptr<const RadialGrid> g)
      : grid(std::move(g)), v(grid->n, 0.0) {}
};

struct FieldPair {
  ScalarField u;     // angle
  ScalarField udot;  // time derivative
};

template <class F>
ScalarField sample_field(const std::shared_ptr<const RadialGrid>& g, F&& f) {
  ScalarField out(g);
  for (int i = 0; i < g->n; ++i) out.v[i] = f(g->r[i]);
  return out;
}

inline double integral(const ScalarField& f) {
  double s = 0;
  const auto& w = f.grid->w;
  for (int i = 0; i < f.grid->n; ++i) s += w[i] * f.v[i];
  return s;
}

inline double inner(const ScalarField& f, const ScalarField& g) {
  double s = 0;
  const auto& w = f.grid->w;
  for (int i = 0; i < f.grid->n; ++i) s += w[i] * f.v[i] * g.v[i];
  return s;
}

// ---------------------------------------------------------------------
// Fourth-order derivatives.  On log grids d/dr = (1/r) d/dx with x = log r;
// edge rows use one-sided stencils of the same order.
// ---------------------------------------------------------------------

namespace detail {

inline void diff1_uniform(const std::vector<double>& f, double h, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  d.resize(n);
  const double c = 1.0 / (12.0 * h);
  for (int i = 2; i < n - 2; ++i)
    d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) * c;
  d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * c;
  d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * c;
  d[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) * c;
  d[n - 1] = (-25.0 * f[n - 1] + 48.0 * f[n - 2] - 36.0 * f[n - 3] + 16.0 * f[n - 4] - 3.0 * f[n - 5]) * (-c);
}

inline void diff2_uniform(const std::vector<double>& f, double h, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  d.resize(n);
  const double c = 1.0 / (12.0 * h * h);
  for (int i = 2; i < n - 2; ++i)
    d[i] = (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2]) * c;
  // 4th-order one-sided second derivative (6 points)
  auto fwd = [&](int i, int s) {
    return (45.0 * f[i] - 154.0 * f[i + s] + 214.0 * f[i + 2 * s] - 156.0 * f[i + 3 * s] +
            61.0 * f[i + 4 * s] - 10.0 * f[i + 5 * s]) * c;
  };
  d[0] = fwd(0, 1);
  d[1] = fwd(1, 1);
  d[n - 1] = fwd(n - 1, -1);
  d[n - 2] = fwd(n - 2, -1);
}

}  // namespace detail

inline ScalarField deriv_r(const ScalarField& f) {
  ScalarField out(f.grid);
  if (f.grid->kind == GridKind::Uniform) {
    detail::diff1_uniform(f.v, f.grid->step, out.v);
  } else {
    detail::diff1_uniform(f.v, f.grid->step, out.v);
    for (int i = 0; i < f.grid->n; ++i) out.v[i] /= f.grid->r[i];
  }
  return out;
}

inline ScalarField deriv_rr(const ScalarField& f) {
  ScalarField out(f.grid);
  if (f.grid->kind == GridKind::Uniform) {
    detail::diff2_uniform(f.v, f.grid->step, out.v);
  } else {
    std::vector<double> d1, d2;
    detail::diff1_uniform(f.v, f.grid->step, d1);
    detail::diff2_uniform(f.v, f.grid->step, d2);
    for (int i = 0; i < f.grid->n; ++i) {
      const double r = f.grid->r[i];
      out.v[i] = (d2[i] - d1[i]) / (r * r);  // f_rr = (f_xx - f_x) / r^2
    }
  }
  return out;
}

// Monotone cubic (Fritsch-Carlson) interpolation used when moving fields
// between grids.  Below the source range fields follow the r^k origin
// behavior; above it they hold the last value.
class MonotoneCubic {
 public:
  MonotoneCubic(const std::vector<double>& x, const std::vector<double>& y, int k_origin)
      : x_(x), y_(y), k_(k_origin) {
    const int n = static_cast<int>(x.size());
    m_.assign(n, 0.0);
    std::vector<double> d(n - 1);
    for (int i = 0; i < n - 1; ++i) d[i] = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
    m_[0] = d[0];
    m_[n - 1] = d[n - 2];
    for (int i = 1; i < n - 1; ++i)
      m_[i] = (d[i - 1] * d[i] <= 0.0) ? 0.0 : 0.5 * (d[i - 1] + d[i]);
    for (int i = 0; i < n - 1; ++i) {
      if (d[i] == 0.0) { m_[i] = m_[i + 1] = 0.0; continue; }
      const double a = m_[i] / d[i], b = m_[i + 1] / d[i];
      const double s = a * a + b * b;
      if (s > 9.0) {
        const double t = 3.0 / std::sqrt(s);
        m_[i] = t * a * d[i];
        m_[i + 1] = t * b * d[i];
      }
    }
  }

  double operator()(double x) const {
    if (x <= x_.front())
      return y_.front() * std::pow(x / x_.front(), k_);
    if (x >= x_.back()) return y_.back();
    auto it = std::upper_bound(x_.begin(), x_.end(), x);
    const int i = static_cast<int>(it - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i], t = (x - x_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return y_[i] * (2 * t3 - 3 * t2 + 1) + h * m_[i] * (t3 - 2 * t2 + t) +
           y_[i + 1] * (-2 * t3 + 3 * t2) + h * m_[i + 1] * (t3 - t2);
  }

 private:
  std::vector<double> x_, y_, m_;
  int k_;
};

inline ScalarField resample(const ScalarField& f, const std::shared_ptr<const RadialGrid>& target,
                            int k_origin) {
  MonotoneCubic interp(f.grid->r, f.v, k_origin);
  return sample_field(target, [&](double r) { return interp(r); });
}

}  // namespace wmlab
