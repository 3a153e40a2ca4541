#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's numeric kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "rmflow/tensor.hpp"

namespace oracle {

inline rmflow::Tensor naive_matmul(const rmflow::Tensor& a, const rmflow::Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      long double s = 0.0L;
      for (std::size_t l = 0; l < k; ++l) s += static_cast<long double>(a[i * k + l]) * b[l * m + j];
      out[i * m + j] = static_cast<double>(s);
    }
  return rmflow::Tensor({n, m}, std::move(out));
}

inline double max_abs_diff(const rmflow::Tensor& a, const rmflow::Tensor& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double max_abs(const rmflow::Tensor& a) {
  double d = 0.0;
  for (double v : a.data()) d = std::max(d, std::abs(v));
  return d;
}

/// ||a − b||∞ / max(||b||∞, floor).
inline double rel_err(const rmflow::Tensor& a, const rmflow::Tensor& b, double floor = 1e-8) {
  return max_abs_diff(a, b) / std::max(max_abs(b), floor);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Two-sided Kolmogorov statistic sup|F_n − F| of a sample against a CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Critical value of the KS statistic at level α = 0.001 (asymptotic).
inline double ks_critical_001(std::size_t n) { return 1.9495 / std::sqrt(static_cast<double>(n)); }

/// Half-width of a 5-sigma binomial band for a proportion p over n trials.
inline double binomial_band(double p, std::size_t n) {
  return 5.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

inline double sample_mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sample_var(const std::vector<double>& x) {
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Central difference of a scalar function of one variable.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace oracle
