// Independent oracles used by the tests: finite differences, an exact Gamma
// CDF/quantile, brute-force quadrature, and reference samplers. Nothing here
// touches the library's implementation paths it is used to check.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include <Eigen/Core>

#include "smile/rng.hpp"

namespace oracles {

/// Central finite-difference gradient with step h_i = base (1 + |x_i|).
inline Eigen::VectorXd finite_diff_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double base = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = base * (1.0 + std::abs(x[i]));
    Eigen::VectorXd lo = x, hi = x;
    lo[i] -= h;
    hi[i] += h;
    g[i] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

/// Regularized lower incomplete gamma P(a, x): series for x < a+1, continued
/// fraction otherwise.
inline double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_p domain");
  if (x == 0.0) return 0.0;
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  // Lentz continued fraction for Q(a, x).
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  const double q = std::exp(-x + a * std::log(x) - gln) * h;
  return 1.0 - q;
}

/// Exact Gamma(shape, scale) quantile by bisection on gamma_p.
inline double gamma_quantile_exact(double p, double shape, double scale) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("p domain");
  double lo = 0.0;
  double hi = shape * scale + 10.0 * std::sqrt(shape) * scale + 10.0 * scale;
  while (gamma_p(shape, hi / scale) < p) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (gamma_p(shape, mid / scale) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Marsaglia-Tsang Gamma(shape >= 1, scale) sampler driven by the library's
/// RNG stream (used only to generate test data).
inline double gamma_sample(smile::RngStream& rng, double shape, double scale) {
  if (shape < 1.0) throw std::invalid_argument("shape >= 1 only");
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

/// Simpson integration of f over [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2 != 0) ++n;
  const double h = (b - a) / n;
  double sum = f(a) + f(b);
  for (int i = 1; i < n; ++i) sum += f(a + i * h) * (i % 2 == 0 ? 2.0 : 4.0);
  return sum * h / 3.0;
}

/// Moments of one banana pair density exp(-(x^2-y)^2/q - (x-1)^2) by 2-d
/// Simpson quadrature. Returns {E[x^2], E[y], E[y^2], Var(x^2), Var(y^2)}.
struct BananaMoments {
  double m2x, m1y, m2y, var_x2, var_y2;
};

inline BananaMoments banana_moments(double q, int nx = 800, int ny = 1600) {
  const double xa = -3.0, xb = 5.0;
  const double ya = -6.0, yb = 40.0;
  double z = 0.0, m2x = 0.0, m1y = 0.0, m2y = 0.0, m4x = 0.0, m4y = 0.0;
  auto integrate_y = [&](double x, const std::function<double(double)>& w) {
    return simpson(
        [&](double y) {
          const double r = x * x - y;
          return std::exp(-r * r / q - (x - 1.0) * (x - 1.0)) * w(y);
        },
        ya, yb, ny);
  };
  auto outer = [&](const std::function<double(double, double)>& w) {
    return simpson([&](double x) { return integrate_y(x, [&](double y) { return w(x, y); }); },
                   xa, xb, nx);
  };
  z = outer([](double, double) { return 1.0; });
  m2x = outer([](double x, double) { return x * x; }) / z;
  m1y = outer([](double, double y) { return y; }) / z;
  m2y = outer([](double, double y) { return y * y; }) / z;
  m4x = outer([](double x, double) { return x * x * x * x; }) / z;
  m4y = outer([](double, double y) { return y * y * y * y; }) / z;
  return {m2x, m1y, m2y, m4x - m2x * m2x, m4y - m2y * m2y};
}

/// Stationary covariance of the linear recurrence s' = M s + noise with
/// noise covariance Q, by fixed-point iteration.
inline Eigen::Matrix2d lyapunov_fixed_point(const Eigen::Matrix2d& m, const Eigen::Matrix2d& q) {
  Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
  for (int i = 0; i < 200000; ++i) {
    const Eigen::Matrix2d next = m * s * m.transpose() + q;
    if ((next - s).cwiseAbs().maxCoeff() < 1e-15) return next;
    s = next;
  }
  return s;
}

}  // namespace oracles
