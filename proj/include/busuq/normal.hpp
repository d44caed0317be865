#pragma once

#include <cmath>
#include <numbers>

namespace busuq {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z - kLogSqrt2Pi); }

inline double normal_log_pdf(double x, double mean, double sigma) {
  const double z = (x - mean) / sigma;
  return -0.5 * z * z - std::log(sigma) - kLogSqrt2Pi;
}

// Inverse standard normal CDF. Rational approximation followed by one Halley
// refinement against erfc; absolute error is at the level of double rounding.
double normal_quantile(double p);

}  // namespace busuq
