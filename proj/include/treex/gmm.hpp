#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "treex/core.hpp"
#include "treex/error.hpp"
#include "treex/normal.hpp"
#include "treex/rng.hpp"

namespace treex {

// Sink for non-fatal diagnostics (dropped mixture components, starvation, ...).
inline std::function<void(std::string_view)>& warning_sink() {
  static std::function<void(std::string_view)> sink = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}
// Serialized so that parallel replicates can warn concurrently.
inline void warn(std::string_view msg) {
  static std::mutex mu;
  std::lock_guard lock(mu);
  if (warning_sink()) warning_sink()(msg);
}

inline constexpr double kDefaultZFloor = 1e-300;

// Mixture of K axis-aligned Gaussians over R^d. Means and standard deviations
// are stored row-major (component j, dimension i) at j * d + i.
struct GaussianMixture {
  std::size_t d = 0;
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> stddevs;
  // When set, the mixture is truncated to the cube |x_i| <= domain_bound.
  std::optional<double> domain_bound;

  std::size_t components() const { return weights.size(); }
  double mean(std::size_t j, std::size_t i) const { return means[j * d + i]; }
  double stddev(std::size_t j, std::size_t i) const { return stddevs[j * d + i]; }

  void validate() const {
    const std::size_t k = weights.size();
    if (k == 0 || d == 0) throw InputError("mixture needs at least one component and dimension");
    if (means.size() != k * d || stddevs.size() != k * d)
      throw InputError("mixture parameter arrays have wrong size");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw InputError("mixture weight negative or NaN");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InputError("mixture weights do not sum to 1");
    for (double m : means)
      if (!std::isfinite(m)) throw InputError("mixture mean not finite");
    for (double s : stddevs)
      if (!(s > 0.0) || !std::isfinite(s)) throw InputError("mixture stddev must be positive");
    if (domain_bound && !(*domain_bound > 0.0)) throw InputError("domain bound must be positive");
  }

  friend bool operator==(const GaussianMixture&, const GaussianMixture&) = default;
};

namespace detail {

inline double component_log_density(const GaussianMixture& g, std::size_t j,
                                    std::span<const double> x) {
  constexpr double half_log_2pi = 0.918938533204672741780329736406;
  double acc = 0.0;
  for (std::size_t i = 0; i < g.d; ++i) {
    const double s = g.stddev(j, i);
    const double z = (x[i] - g.mean(j, i)) / s;
    acc -= std::log(s) + half_log_2pi + 0.5 * z * z;
  }
  return acc;
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = -kInf;
  for (double x : v) mx = std::max(mx, x);
  if (mx == -kInf) return -kInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

// Density of the untruncated mixture.
inline double log_pdf(const GaussianMixture& g, std::span<const double> x) {
  if (x.size() != g.d) throw InputError("mixture pdf: dimension mismatch");
  std::vector<double> terms(g.components());
  for (std::size_t j = 0; j < g.components(); ++j)
    terms[j] = std::log(g.weights[j]) + detail::component_log_density(g, j, x);
  return detail::log_sum_exp(terms);
}

inline double pdf(const GaussianMixture& g, std::span<const double> x) {
  return std::exp(log_pdf(g, x));
}

// The mixture restricted to a box: reweighted components, each truncated per dimension.
class ConditionalMixture {
 public:
  const GaussianMixture& base() const { return *base_; }
  const BoxConstraint& box() const { return box_; }
  // Renormalized component weights.
  const std::vector<double>& weights() const { return weights_; }
  // Pr_{x ~ P}[x in box].
  double mass() const { return mass_; }

  void sample_into(Rng& rng, std::span<double> out) const {
    const GaussianMixture& g = *base_;
    const std::size_t j = rng.categorical(weights_);
    for (std::size_t i = 0; i < g.d; ++i)
      out[i] = sample_truncated_normal(g.mean(j, i), g.stddev(j, i), box_.lower[i], box_.upper[i],
                                       rng);
  }

  std::vector<double> sample(Rng& rng) const {
    std::vector<double> x(base_->d);
    sample_into(rng, x);
    return x;
  }

 private:
  friend ConditionalMixture condition(const GaussianMixture&, const BoxConstraint&, double);
  ConditionalMixture(const GaussianMixture& g, BoxConstraint box)
      : base_(&g), box_(std::move(box)) {}

  const GaussianMixture* base_;
  BoxConstraint box_;
  std::vector<double> weights_;
  double mass_ = 0.0;
};

// Conditions the mixture on a box. The domain bound, when present, is conjoined
// first. Throws EmptyRegion when the box mass falls below z_floor.
inline ConditionalMixture condition(const GaussianMixture& g, const BoxConstraint& box,
                                    double z_floor = kDefaultZFloor) {
  if (box.dim() != g.d) throw InputError("condition: box dimension mismatch");
  BoxConstraint effective = box;
  if (g.domain_bound) {
    auto outer = intersect(box, BoxConstraint{std::vector<double>(g.d, -*g.domain_bound),
                                              std::vector<double>(g.d, *g.domain_bound)});
    if (!outer) throw EmptyRegion(0.0);
    effective = std::move(*outer);
  }
  if (!effective.satisfiable()) throw EmptyRegion(0.0);

  const std::size_t k = g.components();
  std::vector<double> log_terms(k);
  for (std::size_t j = 0; j < k; ++j) {
    double acc = g.weights[j] > 0.0 ? std::log(g.weights[j]) : -kInf;
    for (std::size_t i = 0; i < g.d && acc > -kInf; ++i) {
      if (effective.lower[i] == -kInf && effective.upper[i] == kInf) continue;
      const double p = normal_interval_probability(g.mean(j, i), g.stddev(j, i),
                                                   effective.lower[i], effective.upper[i]);
      acc += p > 0.0 ? std::log(p) : -kInf;
    }
    log_terms[j] = acc;
  }
  const double log_z = detail::log_sum_exp(log_terms);
  const double z = std::exp(log_z);
  if (!(z >= z_floor) || log_z == -kInf) throw EmptyRegion(z);

  ConditionalMixture cm(g, std::move(effective));
  cm.weights_.resize(k);
  for (std::size_t j = 0; j < k; ++j) cm.weights_[j] = std::exp(log_terms[j] - log_z);
  cm.mass_ = z;
  return cm;
}

// Unconditional draw: j ~ Categorical(weights), then x ~ N(mu_j, diag(sigma_j^2)).
inline std::vector<double> sample(const GaussianMixture& g, Rng& rng) {
  if (g.domain_bound) return condition(g, BoxConstraint::unconstrained(g.d)).sample(rng);
  std::vector<double> x(g.d);
  const std::size_t j = rng.categorical(g.weights);
  for (std::size_t i = 0; i < g.d; ++i) x[i] = g.mean(j, i) + g.stddev(j, i) * rng.normal();
  return x;
}

// ---------------------------------------------------------------------------
// EM fitting

struct EmConfig {
  std::size_t max_iters = 300;
  // Stop when the per-row log-likelihood improves by less than this.
  double loglik_tol = 1e-7;
  // Variance floor per dimension = variance_floor * (data range)^2.
  double variance_floor = 1e-6;
  std::size_t n_init = 3;
  std::uint64_t seed = 0;
};

struct EmResult {
  GaussianMixture model;
  double log_likelihood = -kInf;
  // Total log-likelihood after every E-step of the winning restart.
  std::vector<double> trace;
  // Bayesian information criterion of the returned model.
  double bic = kInf;
};

namespace detail {

inline std::vector<double> variance_floors(const Dataset& data, double factor) {
  std::vector<double> floors(data.d);
  for (std::size_t i = 0; i < data.d; ++i) {
    double lo = kInf, hi = -kInf;
    for (std::size_t r = 0; r < data.n; ++r) {
      lo = std::min(lo, data.row(r)[i]);
      hi = std::max(hi, data.row(r)[i]);
    }
    const double range = hi - lo;
    floors[i] = range > 0.0 ? factor * range * range : factor;
  }
  return floors;
}

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// k-means++ seeding followed by a hard assignment to build the starting mixture.
inline GaussianMixture kmeanspp_init(const Dataset& data, std::size_t k,
                                     std::span<const double> floors, Rng& rng) {
  const std::size_t n = data.n, d = data.d;
  std::vector<std::size_t> centers{rng.below(n)};
  std::vector<double> dist(n, kInf);
  while (centers.size() < k) {
    auto c = data.row(centers.back());
    for (std::size_t r = 0; r < n; ++r) dist[r] = std::min(dist[r], sq_dist(data.row(r), c));
    double total = 0.0;
    for (double v : dist) total += v;
    centers.push_back(total > 0.0 ? rng.categorical(dist) : rng.below(n));
  }

  std::vector<std::size_t> assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    double best = kInf;
    for (std::size_t j = 0; j < k; ++j) {
      const double dj = sq_dist(data.row(r), data.row(centers[j]));
      if (dj < best) {
        best = dj;
        assign[r] = j;
      }
    }
  }

  std::vector<double> global_mean(d, 0.0), global_var(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) global_mean[i] += data.row(r)[i] / double(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double e = data.row(r)[i] - global_mean[i];
      global_var[i] += e * e / double(n);
    }

  GaussianMixture g;
  g.d = d;
  g.weights.assign(k, 0.0);
  g.means.assign(k * d, 0.0);
  g.stddevs.assign(k * d, 0.0);
  std::vector<double> var(k * d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    g.weights[assign[r]] += 1.0;
    for (std::size_t i = 0; i < d; ++i) g.means[assign[r] * d + i] += data.row(r)[i];
  }
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i)
      g.means[j * d + i] = g.weights[j] > 0 ? g.means[j * d + i] / g.weights[j]
                                            : data.row(centers[j])[i];
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double e = data.row(r)[i] - g.means[assign[r] * d + i];
      var[assign[r] * d + i] += e * e;
    }
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i) {
      double v = g.weights[j] >= 2.0 ? var[j * d + i] / g.weights[j] : global_var[i];
      g.stddevs[j * d + i] = std::sqrt(std::max(v, floors[i]));
    }
  for (auto& w : g.weights) w = std::max(w, 1.0) / double(n);
  double total = 0.0;
  for (double w : g.weights) total += w;
  for (auto& w : g.weights) w /= total;
  return g;
}

// E-step: fills responsibilities (n x k) and returns the total log-likelihood.
inline double expectation(const GaussianMixture& g, const Dataset& data, std::vector<double>& resp) {
  const std::size_t k = g.components();
  resp.resize(data.n * k);
  double ll = 0.0;
  for (std::size_t r = 0; r < data.n; ++r) {
    std::span<double> lr(resp.data() + r * k, k);
    for (std::size_t j = 0; j < k; ++j)
      lr[j] = std::log(g.weights[j]) + component_log_density(g, j, data.row(r));
    const double lse = log_sum_exp(lr);
    ll += lse;
    for (auto& v : lr) v = std::exp(v - lse);
  }
  return ll;
}

inline void maximization(GaussianMixture& g, const Dataset& data, const std::vector<double>& resp,
                         std::span<const double> floors) {
  const std::size_t k = g.components(), d = g.d, n = data.n;
  std::vector<double> nk(k, 0.0);
  std::fill(g.means.begin(), g.means.end(), 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < k; ++j) {
      const double w = resp[r * k + j];
      nk[j] += w;
      for (std::size_t i = 0; i < d; ++i) g.means[j * d + i] += w * data.row(r)[i];
    }
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < d; ++i)
      g.means[j * d + i] = nk[j] > 0 ? g.means[j * d + i] / nk[j] : g.means[j * d + i];
  std::vector<double> var(k * d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < k; ++j) {
      const double w = resp[r * k + j];
      for (std::size_t i = 0; i < d; ++i) {
        const double e = data.row(r)[i] - g.means[j * d + i];
        var[j * d + i] += w * e * e;
      }
    }
  for (std::size_t j = 0; j < k; ++j) {
    g.weights[j] = nk[j] / double(n);
    for (std::size_t i = 0; i < d; ++i) {
      const double v = nk[j] > 0 ? var[j * d + i] / nk[j] : floors[i];
      g.stddevs[j * d + i] = std::sqrt(std::max(v, floors[i]));
    }
  }
}

// Removes components whose weight fell below 1e-8; returns how many were dropped.
inline std::size_t drop_degenerate(GaussianMixture& g) {
  constexpr double min_weight = 1e-8;
  const std::size_t d = g.d;
  GaussianMixture kept;
  kept.d = d;
  kept.domain_bound = g.domain_bound;
  for (std::size_t j = 0; j < g.components(); ++j) {
    if (g.weights[j] < min_weight) continue;
    kept.weights.push_back(g.weights[j]);
    kept.means.insert(kept.means.end(), g.means.begin() + j * d, g.means.begin() + (j + 1) * d);
    kept.stddevs.insert(kept.stddevs.end(), g.stddevs.begin() + j * d,
                        g.stddevs.begin() + (j + 1) * d);
  }
  const std::size_t dropped = g.components() - kept.components();
  if (dropped == 0) return 0;
  double total = 0.0;
  for (double w : kept.weights) total += w;
  for (auto& w : kept.weights) w /= total;
  g = std::move(kept);
  return dropped;
}

inline double bic(double log_likelihood, std::size_t k, std::size_t d, std::size_t n) {
  const double params = double(k - 1) + 2.0 * double(k * d);
  return -2.0 * log_likelihood + params * std::log(double(n));
}

}  // namespace detail

// Diagonal-covariance EM, best of cfg.n_init k-means++ restarts by log-likelihood.
inline EmResult fit_em(const Dataset& data, std::size_t k, const EmConfig& cfg = {}) {
  data.validate();
  if (k == 0) throw ConfigError("fit_em: K must be at least 1");
  if (k > data.n) throw ConfigError("fit_em: K exceeds the number of rows");
  const auto floors = detail::variance_floors(data, cfg.variance_floor);

  EmResult best;
  std::vector<double> resp;
  for (std::size_t restart = 0; restart < std::max<std::size_t>(cfg.n_init, 1); ++restart) {
    Rng rng(stream_seed(cfg.seed, restart));
    GaussianMixture g = detail::kmeanspp_init(data, k, floors, rng);
    std::vector<double> trace;
    double ll = detail::expectation(g, data, resp);
    trace.push_back(ll);
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
      detail::maximization(g, data, resp, floors);
      if (std::size_t dropped = detail::drop_degenerate(g))
        warn("fit_em: dropped " + std::to_string(dropped) + " degenerate component(s)");
      const double next = detail::expectation(g, data, resp);
      trace.push_back(next);
      const bool converged = next - ll < cfg.loglik_tol * double(data.n);
      ll = next;
      if (converged) break;
    }
    if (ll > best.log_likelihood) {
      best.model = std::move(g);
      best.log_likelihood = ll;
      best.trace = std::move(trace);
    }
  }
  best.bic = detail::bic(best.log_likelihood, best.model.components(), data.d, data.n);
  return best;
}

// Fits every K in the grid (capped at max(1, n / 10)) and keeps the lowest BIC.
inline EmResult fit_em_bic(const Dataset& data, std::span<const std::size_t> grid,
                           const EmConfig& cfg = {}) {
  const std::size_t cap = std::max<std::size_t>(1, data.n / 10);
  std::optional<EmResult> best;
  for (std::size_t k : grid) {
    if (k == 0 || k > cap) continue;
    EmResult r = fit_em(data, k, cfg);
    if (!best || r.bic < best->bic) best = std::move(r);
  }
  if (!best) best = fit_em(data, 1, cfg);
  return *best;
}

inline const std::vector<std::size_t>& default_k_grid() {
  static const std::vector<std::size_t> grid{1, 2, 5, 10, 20};
  return grid;
}

}  // namespace treex
