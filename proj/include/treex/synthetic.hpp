#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>

#include "treex/core.hpp"
#include "treex/rng.hpp"

namespace treex {

// Imbalanced binary risk-prediction data standing in for an EMR extract:
// a few continuous covariates (age, bmi, labs) and many sparse binary
// indicator columns, some of which become more common with age. The label is
// Bernoulli under a logistic model whose intercept is calibrated so that the
// expected positive rate on the generated rows equals `positive_rate`.
inline Dataset make_risk_dataset(std::size_t n = 578, std::size_t d = 50,
                                 double positive_rate = 0.118, std::uint64_t seed = 0) {
  constexpr std::size_t n_cont = 6;
  if (d < n_cont + 6) throw InputError("make_risk_dataset: need at least 12 features");
  if (!(positive_rate > 0.0 && positive_rate < 1.0)) throw InputError("bad positive rate");
  Rng rng(seed);
  const std::size_t n_bin = d - n_cont;

  std::vector<double> base_logit(n_bin), age_slope(n_bin);
  for (std::size_t k = 0; k < n_bin; ++k) {
    const double p = 0.03 + 0.37 * rng.uniform();
    base_logit[k] = std::log(p / (1.0 - p));
    age_slope[k] = rng.uniform() < 0.4 ? 0.8 : 0.0;
  }

  Dataset ds;
  ds.n = n;
  ds.d = d;
  ds.m = 2;
  ds.column_names = {"age", "bmi", "glucose", "hba1c_proxy", "bp_systolic", "lab_other"};
  for (std::size_t k = 0; k < n_bin; ++k) ds.column_names.push_back("code_" + std::to_string(k));
  ds.features.resize(n * d);

  std::vector<double> score(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto x = ds.row(r);
    const double z_age = rng.normal();
    x[0] = std::clamp(55.0 + 12.0 * z_age, 18.0, 90.0);
    x[1] = 28.0 + 5.0 * rng.normal();
    x[2] = 0.5 * z_age + rng.normal();
    x[3] = rng.normal();
    x[4] = 120.0 + 15.0 * (0.4 * z_age + rng.normal());
    x[5] = rng.normal();
    for (std::size_t k = 0; k < n_bin; ++k) {
      const double logit = base_logit[k] + age_slope[k] * (x[0] - 55.0) / 12.0;
      x[n_cont + k] = rng.uniform() < 1.0 / (1.0 + std::exp(-logit)) ? 1.0 : 0.0;
    }
    const double z_bmi = (x[1] - 28.0) / 5.0;
    score[r] = 1.2 * (x[0] - 55.0) / 12.0 + 1.0 * z_bmi + 1.2 * x[2] + 0.8 * x[3] +
               0.8 * x[n_cont + 0] + 0.6 * (x[n_cont + 1] > 0.5 && z_bmi > 0.0 ? 1.0 : 0.0);
  }

  // Intercept by bisection on the mean predicted probability.
  auto mean_prob = [&](double b) {
    double s = 0.0;
    for (double v : score) s += 1.0 / (1.0 + std::exp(-(v + b)));
    return s / double(n);
  };
  double lo = -30.0, hi = 30.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_prob(mid) < positive_rate ? lo : hi) = mid;
  }
  const double intercept = 0.5 * (lo + hi);

  ds.labels.emplace(n);
  for (std::size_t r = 0; r < n; ++r)
    (*ds.labels)[r] = rng.uniform() < 1.0 / (1.0 + std::exp(-(score[r] + intercept))) ? 1 : 0;
  return ds;
}

}  // namespace treex

#include "treex/blackbox.hpp"
#include "treex/gmm.hpp"

namespace treex {

// Fixed 2-d problem with a closed-form greedy tree: a two-component mixture
// and a three-class function that is constant on three disjoint boxes.
struct OracleProblem {
  GaussianMixture gmm;
  std::unique_ptr<BoxFunction> f;
  std::size_t max_nodes = 7;
};

inline OracleProblem make_oracle_problem() {
  OracleProblem p;
  p.gmm.d = 2;
  p.gmm.weights = {0.6, 0.4};
  p.gmm.means = {0.0, 0.0, 1.0, 1.0};
  p.gmm.stddevs = {1.0, 1.0, 0.7, 0.8};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<BoxConstraint> boxes = {
      {{-inf, -inf}, {-0.5, 0.5}},
      {{0.3, -1.0}, {inf, inf}},
      {{-0.5, 1.0}, {0.3, inf}},
  };
  p.f = synthetic_box_blackbox(2, 3, std::move(boxes), {1, 2, 1}, 0);
  return p;
}

}  // namespace treex
