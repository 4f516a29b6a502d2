#pragma once

// Reference implementations used only by the tests. Everything here is
// written directly from the textbook formulas, independently of the library
// code paths it is checking.

#include <cmath>
#include <vector>

namespace oracle {

constexpr double kPi = 3.14159265358979323846;

inline double log_normal(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * kPi * var) - (x - mean) * (x - mean) / (2.0 * var);
}

inline double log_gamma_pdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

// Success-probability form of the negative binomial: p = size/(size+mu),
// P(n) = C(n+size-1, n) p^size (1-p)^n.
inline double negbin_lpmf(long long n, double mu, double size) {
  const double p = size / (size + mu);
  return std::lgamma(static_cast<double>(n) + size) - std::lgamma(size) -
         std::lgamma(static_cast<double>(n) + 1.0) + size * std::log(p) +
         static_cast<double>(n) * std::log1p(-p);
}

// Mean and variance by direct summation of exp(lpmf) until the tail is
// negligible. Returns {total_mass, mean, variance}.
struct PmfMoments {
  double mass = 0.0;
  double mean = 0.0;
  double var = 0.0;
};

// Regularized lower incomplete gamma P(a, x) by series expansion; accurate
// for the small x it is used at.
inline double gamma_cdf_lower(double a, double x) {
  if (x <= 0.0) return 0.0;
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 5000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (term < sum * 1e-16) break;
  }
  return sum * std::exp(a * std::log(x) - x - std::lgamma(a));
}

template <typename LogPmf>
PmfMoments pmf_moments(LogPmf lpmf, long long n_max, double tail_tol = 1e-14) {
  double mass = 0.0, m1 = 0.0, m2 = 0.0;
  for (long long n = 0; n <= n_max; ++n) {
    const double p = std::exp(lpmf(n));
    mass += p;
    m1 += static_cast<double>(n) * p;
    m2 += static_cast<double>(n) * static_cast<double>(n) * p;
    if (n > 10 && p < tail_tol && mass > 0.5) break;
  }
  PmfMoments out;
  out.mass = mass;
  out.mean = m1 / mass;
  out.var = m2 / mass - out.mean * out.mean;
  return out;
}

}  // namespace oracle
