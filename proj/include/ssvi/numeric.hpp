#pragma once

#include <cmath>
#include <numbers>

namespace ssvi {

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double norm_logpdf(double x) { return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi); }

/// log(1 + e^t) without overflow.
inline double log1pexp(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}

/// Clipped ramp min(max(x,0),1).
inline double ramp(double x) { return x <= 0 ? 0.0 : (x >= 1 ? 1.0 : x); }

}  // namespace ssvi
