#pragma once

// Deterministic, portable random number generation.
//
// Core generator: xoshiro256++ (Blackman & Vigna, public domain), seeded
// through SplitMix64. Substreams are derived from (seed, key...) so every
// chain, replicate, and predictive draw owns an independent stream that is
// reproducible from the run seed alone. All variate algorithms are fixed
// here (Box-Muller normals, Marsaglia-Tsang gammas, inversion/PTRS
// Poisson), so identical seeds give identical draws on every platform.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace delaycast {

struct SplitMix64 {
  std::uint64_t x;

  std::uint64_t next() {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) { reseed(seed, {}); }

  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) { reseed(seed, keys); }

  // Independent substream addressed by (seed, keys...).
  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    return Rng(seed, keys);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1], safe as a log argument.
  double uniform_pos() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (cosine branch only; no cached value,
  // so consumption per call is fixed).
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Gamma(shape, scale) via Marsaglia-Tsang; shape < 1 handled by the
  // boost G(a) = G(a+1) * U^{1/a}, applied in log space.
  double gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
      throw std::domain_error("gamma draw requires positive shape and scale");
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0, scale) * std::exp(std::log(u) / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

  // Poisson: sequential inversion below rate 30, Hormann's PTRS above.
  long long poisson(double rate) {
    if (!(rate >= 0.0) || !std::isfinite(rate))
      throw std::domain_error("poisson draw requires a finite non-negative rate");
    if (rate == 0.0) return 0;
    if (rate < 30.0) return poisson_inversion(rate);
    return poisson_ptrs(rate);
  }

  // Negative binomial with mean `mean` and scale `phi`
  // (variance mean * (1 + mean/phi)), via the gamma-Poisson mixture.
  long long negbin(double mean, double phi) {
    if (!(mean > 0.0) || !(phi > 0.0))
      throw std::domain_error("negbin draw requires positive mean and scale");
    return poisson(gamma(phi, mean / phi));
  }

 private:
  std::uint64_t s_[4];

  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  void reseed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    SplitMix64 sm{seed};
    for (std::uint64_t k : keys) sm.x = sm.next() ^ (k * 0x9E3779B97F4A7C15ULL);
    for (auto& w : s_) w = sm.next();
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;  // xoshiro forbids the zero state
  }

  long long poisson_inversion(double rate) {
    const double exp_neg = std::exp(-rate);
    double prod = 1.0;
    long long k = -1;
    do {
      ++k;
      prod *= uniform_pos();
    } while (prod > exp_neg);
    return k;
  }

  long long poisson_ptrs(double rate) {
    const double b = 0.931 + 2.53 * std::sqrt(rate);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_rate = std::log(rate);
    for (;;) {
      const double u = uniform() - 0.5;
      const double v = uniform_pos();
      const double us = 0.5 - std::abs(u);
      const double kf = std::floor((2.0 * a / us + b) * u + rate + 0.43);
      if (us >= 0.07 && v <= v_r) return static_cast<long long>(kf);
      if (kf < 0.0 || (us < 0.013 && v > us)) continue;
      const double k = kf;
      if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
          k * log_rate - rate - std::lgamma(k + 1.0))
        return static_cast<long long>(kf);
    }
  }
};

}  // namespace delaycast
