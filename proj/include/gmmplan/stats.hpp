// Copyright 2026 The gmmplan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Quantiles and densities of the standard normal, chi-squared, F, Student-t
// and Hotelling T^2 distributions. Everything here is a pure function.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gmmplan::stats {

/// Probabilities closer than this to 0 or 1 are rejected.
inline constexpr double kTailCutoff = 1e-12;

namespace detail {

inline void require_probability(double p, const char* who) {
  if (!(p >= kTailCutoff && p <= 1.0 - kTailCutoff)) {
    throw std::domain_error(std::string(who) + ": probability must lie in (1e-12, 1-1e-12), got " +
                            std::to_string(p));
  }
}

inline void require_dof(double dof, const char* who) {
  if (!(dof >= 1.0) || !std::isfinite(dof)) {
    throw std::domain_error(std::string(who) + ": degrees of freedom must be >= 1");
  }
}

// Regularized lower incomplete gamma by its power series; good for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  double ap = a;
  for (int n = 0; n < 100000; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma by Lentz's continued fraction; x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 100000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m < 200000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) break;
  }
  return h;
}

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Find the root of an increasing function on (lo, +inf) given a starting
// guess. Bracket doubling followed by Newton steps guarded by bisection.
template <class F, class DF>
double solve_increasing(F&& f, DF&& df, double guess, double lo) {
  double a = lo;
  double b = std::max(guess, lo + 1e-300);
  double fb = f(b);
  int expand = 0;
  while (fb < 0.0) {
    a = b;
    b = b * 2.0 + 1.0;
    fb = f(b);
    if (++expand > 2000) throw std::runtime_error("solve_increasing: failed to bracket root");
  }
  double x = guess > a && guess < b ? guess : 0.5 * (a + b);
  for (int it = 0; it < 300; ++it) {
    const double fx = f(x);
    if (fx == 0.0) return x;
    if (fx < 0.0) a = x; else b = x;
    const double slope = df(x);
    double next = (slope > 0.0 && std::isfinite(slope)) ? x - fx / slope : 0.5 * (a + b);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::fabs(next - x) <= 1e-15 * std::max(std::fabs(x), 1e-300)) return next;
    x = next;
    if ((b - a) <= 4e-16 * std::max(std::fabs(a), std::fabs(b))) return x;
  }
  return x;
}

}  // namespace detail

/// Standard normal density.
inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Inverse standard normal CDF. Acklam's rational approximation refined by
/// Halley steps against the erfc-based CDF.
inline double normal_quantile(double p) {
  detail::require_probability(p, "normal_quantile");
  if (p == 0.5) return 0.0;
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double z;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    z = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    z = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    z = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Work in whichever tail keeps the residual well conditioned.
  for (int i = 0; i < 3; ++i) {
    const double e = p < 0.5 ? normal_cdf(z) - p : (1.0 - p) - normal_cdf(-z);
    const double u = e / normal_pdf(z);
    z -= u / (1.0 + 0.5 * z * u);
  }
  return z;
}

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  return x < a + 1.0 ? detail::gamma_p_series(a, x) : 1.0 - detail::gamma_q_fraction(a, x);
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
inline double gamma_q(double a, double x) {
  if (x <= 0.0) return 1.0;
  return x < a + 1.0 ? 1.0 - detail::gamma_p_series(a, x) : detail::gamma_q_fraction(a, x);
}

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front =
      std::exp(a * std::log(x) + b * std::log1p(-x) - detail::log_beta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_fraction(b, a, 1.0 - x) / b;
}

/// Chi-squared CDF.
inline double chi2_cdf(double x, double dof) { return gamma_p(0.5 * dof, 0.5 * x); }

/// Inverse chi-squared CDF.
inline double chi2_quantile(double p, int dof) {
  detail::require_probability(p, "chi2_quantile");
  detail::require_dof(dof, "chi2_quantile");
  const double a = 0.5 * dof;
  // Wilson-Hilferty start in the scaled variable y = x / 2.
  const double z = normal_quantile(p);
  const double h = 2.0 / (9.0 * dof);
  double guess = dof * std::pow(std::max(1.0 - h + z * std::sqrt(h), 1e-3), 3.0) * 0.5;
  if (!(guess > 0.0)) guess = 1e-3;
  const double log_norm = std::lgamma(a);
  auto density = [&](double y) { return std::exp((a - 1.0) * std::log(y) - y - log_norm); };
  double y;
  if (p <= 0.5) {
    y = detail::solve_increasing([&](double v) { return gamma_p(a, v) - p; }, density, guess, 0.0);
  } else {
    const double q = 1.0 - p;
    y = detail::solve_increasing([&](double v) { return q - gamma_q(a, v); }, density, guess, 0.0);
  }
  return 2.0 * y;
}

/// F-distribution CDF.
inline double f_cdf(double f, double d1, double d2) {
  if (f <= 0.0) return 0.0;
  return incomplete_beta(0.5 * d1, 0.5 * d2, d1 * f / (d1 * f + d2));
}

/// F-distribution survival function, evaluated without cancellation.
inline double f_sf(double f, double d1, double d2) {
  if (f <= 0.0) return 1.0;
  return incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d1 * f + d2));
}

inline double f_pdf(double f, double d1, double d2) {
  if (f <= 0.0) return 0.0;
  const double log_pdf = 0.5 * d1 * std::log(d1) + 0.5 * d2 * std::log(d2) +
                         (0.5 * d1 - 1.0) * std::log(f) -
                         0.5 * (d1 + d2) * std::log(d2 + d1 * f) -
                         detail::log_beta(0.5 * d1, 0.5 * d2);
  return std::exp(log_pdf);
}

/// Inverse F-distribution CDF.
inline double f_quantile(double p, int d1, int d2) {
  detail::require_probability(p, "f_quantile");
  detail::require_dof(d1, "f_quantile");
  detail::require_dof(d2, "f_quantile");
  const double guess = 1.0;
  auto density = [&](double f) { return f_pdf(f, d1, d2); };
  if (p <= 0.5) {
    return detail::solve_increasing([&](double f) { return f_cdf(f, d1, d2) - p; }, density,
                                    guess, 0.0);
  }
  const double q = 1.0 - p;
  return detail::solve_increasing([&](double f) { return q - f_sf(f, d1, d2); }, density, guess,
                                  0.0);
}

/// Student-t CDF.
inline double student_t_cdf(double t, double dof) {
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t >= 0.0 ? 1.0 - tail : tail;
}

/// Inverse Student-t CDF.
inline double student_t_quantile(double p, int dof) {
  detail::require_probability(p, "student_t_quantile");
  detail::require_dof(dof, "student_t_quantile");
  if (p == 0.5) return 0.0;
  const double upper = p > 0.5 ? 1.0 - p : p;  // one-sided tail mass
  const double nu = dof;
  auto tail = [&](double t) { return 0.5 * incomplete_beta(0.5 * nu, 0.5, nu / (nu + t * t)); };
  auto density = [&](double t) {
    return std::exp(std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                    0.5 * std::log(nu * std::numbers::pi) -
                    0.5 * (nu + 1.0) * std::log1p(t * t / nu));
  };
  const double t = detail::solve_increasing([&](double v) { return upper - tail(v); }, density,
                                            std::fabs(normal_quantile(upper)), 0.0);
  return p > 0.5 ? t : -t;
}

/// Inverse CDF of Hotelling's T^2 with dimension `dim` and `m` degrees of
/// freedom: dim*m/(m-dim+1) times the F(dim, m-dim+1) quantile.
inline double hotelling_t2_quantile(double p, int dim, int m) {
  if (dim < 1) throw std::domain_error("hotelling_t2_quantile: dim must be >= 1");
  if (m < dim) throw std::domain_error("hotelling_t2_quantile: requires m >= dim");
  const int d2 = m - dim + 1;
  return static_cast<double>(dim) * m / d2 * f_quantile(p, dim, d2);
}

}  // namespace gmmplan::stats
