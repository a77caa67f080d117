#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

namespace bnf::math {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

// log(1 + exp(x)) without overflow for large |x|.
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> out(v.size());
  if (v.empty()) return out;
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

inline double normal_log_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

inline double normal_pdf(double z) { return std::exp(normal_log_pdf(z)); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Inverse of the standard normal cdf for p in (0, 1).
inline double normal_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

}  // namespace bnf::math
