#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

namespace panelstate {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double normal_pdf(double x) noexcept {
  return std::exp(-0.5 * x * x - kLogSqrt2Pi);
}

/// Standard normal CDF.
inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x * kInvSqrt2); }

/// log Phi(x), finite for every finite x.
inline double normal_log_cdf(double x) noexcept {
  if (std::isnan(x)) return x;
  if (x > 0.0) return std::log1p(-0.5 * std::erfc(x * kInvSqrt2));
  if (x > -37.0) return std::log(0.5 * std::erfc(-x * kInvSqrt2));
  if (x == -std::numeric_limits<double>::infinity()) return x;
  // Asymptotic (Mills ratio) expansion for the far lower tail.
  const double x2inv = 1.0 / (x * x);
  const double series = 1.0 - x2inv * (1.0 - 3.0 * x2inv * (1.0 - 5.0 * x2inv));
  return -0.5 * x * x - std::log(-x) - kLogSqrt2Pi + std::log(series);
}

/// Upper tail probability 1 - Phi(x).
inline double normal_sf(double x) noexcept { return 0.5 * std::erfc(x * kInvSqrt2); }

/// Inverse standard normal CDF. Returns +-inf at the end points.
inline double normal_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

/// Inverse of the upper tail: x with 1 - Phi(x) = q.
inline double normal_sf_inverse(double q) {
  if (q <= 0.0) return std::numeric_limits<double>::infinity();
  if (q >= 1.0) return -std::numeric_limits<double>::infinity();
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * q);
}

}  // namespace panelstate
