#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "treex/blackbox.hpp"
#include "treex/core.hpp"
#include "treex/gmm.hpp"

namespace treex {

struct FidelityReport {
  double accuracy = 0.0;
  std::optional<double> f1;  // binary problems only
  std::size_t n_test = 0;
  // confusion[y_f][y_surrogate]
  std::vector<std::vector<std::size_t>> confusion;
};

// Agreement of a surrogate with the blackbox on the given points.
inline FidelityReport fidelity(const Blackbox& surrogate, const Blackbox& f, const Dataset& points,
                               Label positive_class = 1) {
  if (points.n == 0) throw InputError("fidelity: no test points");
  if (points.d != f.dim() || points.d != surrogate.dim())
    throw InputError("fidelity: dimension mismatch");
  const int m = std::max(f.classes(), surrogate.classes());
  FidelityReport r;
  r.n_test = points.n;
  r.confusion.assign(m, std::vector<std::size_t>(m, 0));
  std::size_t agree = 0;
  for (std::size_t k = 0; k < points.n; ++k) {
    const Label truth = f.predict(points.row(k));
    const Label guess = surrogate.predict(points.row(k));
    ++r.confusion[truth][guess];
    agree += truth == guess;
  }
  r.accuracy = double(agree) / double(points.n);
  if (m == 2) {
    const Label pos = positive_class, neg = 1 - positive_class;
    const double tp = double(r.confusion[pos][pos]);
    const double fp = double(r.confusion[neg][pos]);
    const double fn = double(r.confusion[pos][neg]);
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    r.f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return r;
}

inline FidelityReport fidelity(const DecisionTree& tree, const Blackbox& f, const Dataset& points,
                               Label positive_class = 1) {
  return fidelity(TreeBlackbox(tree), f, points, positive_class);
}

struct Agreement {
  double rate = 0.0;
  double standard_error = 0.0;
};

// Monte Carlo estimate of Pr_{x ~ P}[A(x) = B(x)] from n fresh draws.
inline Agreement agreement(const DecisionTree& a, const DecisionTree& b, const GaussianMixture& g,
                           std::size_t n, Rng& rng) {
  if (a.dim() != b.dim() || a.dim() != g.d) throw InputError("agreement: dimension mismatch");
  if (n == 0) throw InputError("agreement: need at least one sample");
  std::size_t same = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto x = sample(g, rng);
    same += a.predict(x) == b.predict(x);
  }
  const double p = double(same) / double(n);
  return {p, std::sqrt(p * (1.0 - p) / double(n))};
}

// ---------------------------------------------------------------------------
// Experiment results

struct ExperimentRow {
  std::string algorithm;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  std::optional<double> fidelity_acc;  // empty when the run failed
  std::optional<double> fidelity_f1;
  std::size_t budget = 0;
  double wall_ms = 0.0;
  std::size_t tree_size = 0;  // realized node count (may be below the target size)
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;

  void append(ExperimentRow row) { rows.push_back(std::move(row)); }

  // Median of a metric over all successful rows for (algorithm, size).
  std::optional<double> median(const std::string& algorithm, std::size_t size,
                               bool use_f1 = true) const {
    std::vector<double> v;
    for (const auto& r : rows) {
      if (r.algorithm != algorithm || r.size != size) continue;
      const auto& metric = use_f1 ? r.fidelity_f1 : r.fidelity_acc;
      if (metric) v.push_back(*metric);
    }
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  }

  void write_csv(std::ostream& os) const {
    os << "algorithm,size,seed,fidelity_acc,fidelity_f1,budget,wall_ms\n";
    auto opt = [](const std::optional<double>& v) {
      if (!v) return std::string();
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", *v);
      return std::string(buf);
    };
    for (const auto& r : rows) {
      char wall[32];
      std::snprintf(wall, sizeof wall, "%.1f", r.wall_ms);
      os << r.algorithm << ',' << r.size << ',' << r.seed << ',' << opt(r.fidelity_acc) << ','
         << opt(r.fidelity_f1) << ',' << r.budget << ',' << wall << '\n';
    }
  }
};

}  // namespace treex
