#pragma once

#include <cmath>
#include <limits>

#include "treex/error.hpp"
#include "treex/rng.hpp"

namespace treex {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Standard normal survival function 1 - Phi(z), accurate in the upper tail.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

inline double normal_pdf(double z) {
  constexpr double inv_sqrt_2pi = 0.398942280401432677939946059934;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

// Phi(b) - Phi(a) for standardized bounds a < b, evaluated on whichever side of
// zero keeps the subtraction away from catastrophic cancellation.
inline double standard_interval_probability(double a, double b) {
  if (!(a < b)) return 0.0;
  if (a >= 0.0) return normal_sf(a) - normal_sf(b);
  if (b <= 0.0) return normal_cdf(b) - normal_cdf(a);
  return 1.0 - normal_cdf(a) - normal_sf(b);
}

// Pr[lo < X <= hi] for X ~ N(mu, sigma^2).
inline double normal_interval_probability(double mu, double sigma, double lo, double hi) {
  return standard_interval_probability((lo - mu) / sigma, (hi - mu) / sigma);
}

namespace detail {

inline constexpr double kTailCutoff = 6.0;

// Draw from N(0,1) restricted to (a, b] with a >= kTailCutoff.
inline double sample_upper_tail(double a, double b, Rng& rng) {
  if (b - a < 2.0 / a) {
    // Narrow window: uniform proposal, accept with exp((a^2 - z^2) / 2) >= exp(-2 - ...).
    for (;;) {
      const double z = a + (b - a) * rng.uniform_open();
      if (rng.uniform() <= std::exp(0.5 * (a * a - z * z))) return z;
    }
  }
  // Robert (1995) translated-exponential proposal with the optimal rate.
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a + rng.exponential() / lambda;
    if (z > b) continue;
    const double d = z - lambda;
    if (rng.uniform() <= std::exp(-0.5 * d * d)) return z;
  }
}

// Inverse-CDF draw from N(0,1) restricted to (a, b], both bounds inside the
// numerically safe range of the CDF on the side where the mass lives.
inline double sample_inverse_cdf(double a, double b, Rng& rng) {
  const double u = rng.uniform_open();
  if (a > 0.0) {
    const double qa = normal_sf(a);
    const double qb = normal_sf(b);
    const double q = qb + u * (qa - qb);
    return -standard_normal_quantile(q);
  }
  const double pa = normal_cdf(a);
  const double pb = normal_cdf(b);
  return standard_normal_quantile(pa + u * (pb - pa));
}

}  // namespace detail

// One draw from N(0,1) restricted to (a, b].
inline double sample_standard_truncated_normal(double a, double b, Rng& rng) {
  if (!(a < b)) throw InputError("truncated normal: empty interval");
  double z;
  if (a >= detail::kTailCutoff) {
    z = detail::sample_upper_tail(a, b, rng);
  } else if (b <= -detail::kTailCutoff) {
    z = -detail::sample_upper_tail(-b, -a, rng);
  } else {
    z = detail::sample_inverse_cdf(a, b, rng);
  }
  // Round-off can land exactly on (or past) a bound.
  if (!(z > a)) z = std::nextafter(a, kInf);
  if (z > b) z = b;
  return z;
}

// One draw from N(mu, sigma^2) restricted to (lo, hi]. Infinite bounds allowed.
inline double sample_truncated_normal(double mu, double sigma, double lo, double hi, Rng& rng) {
  if (!(sigma > 0.0)) throw InputError("truncated normal: sigma must be positive");
  if (!(lo < hi)) throw InputError("truncated normal: requires lo < hi");
  const double a = (lo - mu) / sigma;
  const double b = (hi - mu) / sigma;
  double x = mu + sigma * sample_standard_truncated_normal(a, b, rng);
  if (!(x > lo)) x = std::nextafter(lo, kInf);
  if (x > hi) x = hi;
  return x;
}

}  // namespace treex
