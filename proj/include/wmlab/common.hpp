// Shared error taxonomy and small numeric helpers for the wave-map lab.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmlab {

inline constexpr const char* version_string = "wmlab 0.1.0";

// Bad arguments / malformed configs.  CLI maps this to exit code 2.
struct usage_error : std::runtime_error {
  explicit usage_error(const std::string& m) : std::runtime_error(m) {}
};

// Solver breakdowns: Newton stall, ordering collapse, CFL violation, ...
// CLI maps this to exit code 3.
struct numerical_error : std::runtime_error {
  explicit numerical_error(const std::string& m) : std::runtime_error(m) {}
};

inline constexpr double pi = 3.14159265358979323846;

inline double sq(double x) { return x * x; }

// sin(x) - x without cancellation for small |x|.
inline double sin_minus_x(double x) {
  if (std::abs(x) > 1e-3) return std::sin(x) - x;
  const double x2 = x * x;
  // x^3 terms of the sine series; truncation error < 1e-40 for |x|<=1e-3
  return -x * x2 * (1.0 / 6.0) * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0));
}

// 1 - cos(x) evaluated stably ( = 2 sin^2(x/2) ).
inline double one_minus_cos(double x) {
  const double s = std::sin(0.5 * x);
  return 2.0 * s * s;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw usage_error(what);
}

// Solve A x = rhs in place (row-major n x n, partial pivoting); returns x.
// Meant for the small Gram and Jacobian systems (n <= a few dozen).
inline std::vector<double> solve_dense(int n, std::vector<double> A, std::vector<double> rhs) {
  for (int c = 0; c < n; ++c) {
    int p = c;
    for (int r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[p * n + c])) p = r;
    if (A[p * n + c] == 0.0) throw numerical_error("singular linear system");
    if (p != c) {
      for (int j = c; j < n; ++j) std::swap(A[p * n + j], A[c * n + j]);
      std::swap(rhs[p], rhs[c]);
    }
    for (int r = c + 1; r < n; ++r) {
      const double f = A[r * n + c] / A[c * n + c];
      if (f == 0.0) continue;
      for (int j = c; j < n; ++j) A[r * n + j] -= f * A[c * n + j];
      rhs[r] -= f * rhs[c];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; --r) {
    double s = rhs[r];
    for (int j = r + 1; j < n; ++j) s -= A[r * n + j] * x[j];
    x[r] = s / A[r * n + r];
  }
  return x;
}

}  // namespace wmlab
