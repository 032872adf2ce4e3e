#pragma once

// Random variate generation shared by the sampler, the simulator and the
// forecaster. All draws go through an explicitly passed Rng so that every
// chain and every sub-stream is reproducible from its seed.

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string_view>

#include "stfm/errors.hpp"

namespace stfm {

using Rng = std::mt19937_64;

// Derives a child seed from a master seed and a stream name (splitmix64 over
// an FNV-1a hash of the name), so named sub-streams never collide.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (h | 1ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double std_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

// Uniform on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  double u;
  do {
    u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  } while (u <= 0.0);
  return u;
}

inline double gamma_draw(double shape, double rate, Rng& rng) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw DomainError("gamma_draw: shape and rate must be positive");
  }
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

// Inverse gamma with density proportional to v^{-shape-1} exp(-rate / v).
inline double inv_gamma_draw(double shape, double rate, Rng& rng) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw DomainError("inv_gamma_draw: shape and rate must be positive");
  }
  double g = 0.0;
  while (!(g > 0.0)) g = std::gamma_distribution<double>(shape, 1.0)(rng);
  return rate / g;
}

inline double beta_draw(double a, double b, Rng& rng) {
  const double x = gamma_draw(a, 1.0, rng);
  const double y = gamma_draw(b, 1.0, rng);
  return x / (x + y);
}

// Upper tail probability of the standard normal.
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

// Inverse of normal_sf for p in (0, 1).
inline double normal_isf(double p) {
  return std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

namespace detail {

// One-sided tail N(0,1) restricted to [a, inf), a > 0 large, by the
// exponential rejection sampler of Robert (1995).
inline double normal_tail_draw(double a, Rng& rng) {
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(uniform_open(rng)) / alpha;
    const double rho = std::exp(-0.5 * (z - alpha) * (z - alpha));
    if (uniform_open(rng) <= rho) return z;
  }
}

}  // namespace detail

// Normal(mean, sd^2) truncated to the open interval (lo, hi). Inverse-CDF on
// whichever tail keeps the probabilities representable; far tails fall back to
// rejection. The result is always strictly inside (lo, hi).
inline double truncated_normal_draw(double mean, double sd, double lo, double hi, Rng& rng) {
  if (!(sd > 0.0) || !(lo < hi)) {
    throw DomainError("truncated_normal_draw: need sd > 0 and lo < hi");
  }
  double a = (lo - mean) / sd;
  double b = (hi - mean) / sd;
  bool flipped = false;
  if (a + b < 0.0) {
    // Work in the right half so tail probabilities keep precision.
    const double na = -b;
    b = -a;
    a = na;
    flipped = true;
  }
  double z;
  const double pa = normal_sf(a);
  const double pb = normal_sf(b);
  if (pa > 0.0 && pa - pb > 1e-300) {
    const double u = uniform_open(rng);
    const double p = pa - u * (pa - pb);
    z = normal_isf(std::min(std::max(p, std::numeric_limits<double>::min()), 1.0 - 1e-16));
  } else {
    do {
      z = detail::normal_tail_draw(a, rng);
    } while (z >= b);
  }
  z = std::clamp(z, a, b);
  if (flipped) z = -z;
  double x = mean + sd * z;
  if (x <= lo) x = std::nextafter(lo, hi);
  if (x >= hi) x = std::nextafter(hi, lo);
  return x;
}

}  // namespace stfm
