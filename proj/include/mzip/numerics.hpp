#pragma once

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mzip/error.hpp"

namespace mzip {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

inline double log_norm_pdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

/// Standard normal cdf. Saturates to 0 / 1 in the far tails.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

/// log Phi(x), accurate for arbitrarily negative x.
inline double log_norm_cdf(double x) {
  if (x > -35.0) {
    if (x > 5.0) return std::log1p(-0.5 * std::erfc(x * std::numbers::sqrt2 / 2.0));
    return std::log(norm_cdf(x));
  }
  // Asymptotic Mills-ratio series; relative error below 1e-14 for x <= -35.
  const double r = 1.0 / (x * x);
  const double series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
  return log_norm_pdf(x) - std::log(-x) + std::log(series);
}

/// Standard normal quantile: rational approximation (Acklam) refined by one
/// Halley step on norm_cdf.
inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(Errc::domain_error, "numerics", "norm_quantile requires 0 < p < 1, got " + std::to_string(p));
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  // Work in the lower half so the tail is resolved to full relative precision.
  const bool upper = p > 0.5;
  const double pl = upper ? 1.0 - p : p;
  double x;
  if (pl < p_low) {
    const double q = std::sqrt(-2.0 * std::log(pl));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = pl - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  // Halley refinement. e / pdf is formed in log space to survive the deep tail.
  const double e = norm_cdf(x) - pl;
  if (e != 0.0) {
    const double u = (e > 0 ? 1.0 : -1.0) * std::exp(std::log(std::abs(e)) - log_norm_pdf(x));
    x -= u / (1.0 + 0.5 * x * u);
  }
  return upper ? -x : x;
}

inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw Error(Errc::empty_input, "numerics", "log_sum_exp of an empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (const double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// log(exp(a) + exp(b)).
inline double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (a == -std::numeric_limits<double>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

/// Gauss-Hermite rule for integrals against exp(-x^2) (physicists' weight).
struct QuadratureRule {
  std::vector<double> nodes;    // strictly increasing
  std::vector<double> weights;  // positive, sum to sqrt(pi)

  int order() const { return static_cast<int>(nodes.size()); }
};

inline QuadratureRule gauss_hermite(int order) {
  if (order < 2 || order > 100) {
    throw Error(Errc::domain_error, "numerics", "Gauss-Hermite order must be in [2, 100], got " + std::to_string(order));
  }
  const int n = order;
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  std::vector<double> x(n), w(n);

  // Orthonormal Hermite recurrence; returns (p_n(z), p_n'(z)).
  auto eval = [n, pim4](double z) {
    double p1 = pim4, p2 = 0.0;
    for (int j = 0; j < n; ++j) {
      const double p3 = p2;
      p2 = p1;
      p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
    }
    return std::pair{p1, std::sqrt(2.0 * n) * p2};
  };

  // Largest roots first (descending), Newton from asymptotic initial guesses.
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[i - 2];
    }
    for (int it = 0; it < 100; ++it) {
      const auto [p, dp] = eval(z);
      const double z1 = z;
      z = z1 - p / dp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    if (n % 2 == 1 && i == m - 1) z = 0.0;
    const double dp = eval(z).second;
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = w[n - 1 - i] = 2.0 / (dp * dp);
  }
  std::reverse(x.begin(), x.end());
  std::reverse(w.begin(), w.end());
  return {std::move(x), std::move(w)};
}

/// Upper tail of the chi-square distribution.
inline double chi2_sf(double x, double df) {
  if (!(df > 0.0)) throw Error(Errc::domain_error, "numerics", "chi-square df must be positive");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

}  // namespace mzip
