#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "treex/blackbox.hpp"
#include "treex/core.hpp"
#include "treex/extract.hpp"
#include "treex/rng.hpp"

namespace treex {

struct ForestConfig {
  std::size_t n_trees = 50;
  std::size_t max_depth = 8;
  // 0 means round(sqrt(d)).
  std::size_t features_per_split = 0;
  std::size_t min_samples_split = 2;
  bool balance = false;
  std::uint64_t seed = 0;
};

// Bagged Gini trees; prediction is the majority vote, ties to the lower class.
class RandomForest final : public Blackbox {
 public:
  RandomForest() = default;
  RandomForest(std::size_t d, int m, std::vector<DecisionTree> trees)
      : d_(d), m_(m), trees_(std::move(trees)) {
    if (trees_.empty()) throw InputError("random forest needs at least one tree");
    for (const auto& t : trees_)
      if (t.dim() != d_ || t.classes() != m_) throw InputError("forest tree shape mismatch");
  }

  Label predict(std::span<const double> x) const override {
    if (x.size() != d_) throw InputError("random forest: dimension mismatch");
    std::vector<int> votes(m_, 0);
    for (const auto& t : trees_) ++votes[t.predict(x)];
    return static_cast<Label>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  std::size_t dim() const override { return d_; }
  int classes() const override { return m_; }

  const std::vector<DecisionTree>& trees() const { return trees_; }

  // Mean class composition of the bootstrap samples seen in training.
  std::vector<double> bootstrap_class_share;

 private:
  std::size_t d_ = 0;
  int m_ = 0;
  std::vector<DecisionTree> trees_;
};

namespace detail {

struct ForestGrower {
  const Dataset& data;
  const ForestConfig& cfg;
  std::size_t mtry;
  std::size_t bootstrap_size;
  Rng& rng;

  struct Best {
    double decrease = 0.0;
    std::size_t dim = 0;
    double threshold = 0.0;
  };

  static double gini_of(const std::vector<double>& counts, double n) {
    double sq = 0.0;
    for (double c : counts) sq += (c / n) * (c / n);
    return 1.0 - sq;
  }

  Best find_split(const std::vector<std::size_t>& rows) {
    const int m = data.m;
    const auto& labels = *data.labels;
    std::vector<double> total(m, 0.0);
    for (auto r : rows) total[labels[r]] += 1.0;
    const double n = double(rows.size());
    const double parent = gini_of(total, n);

    std::vector<std::size_t> dims(data.d);
    std::iota(dims.begin(), dims.end(), std::size_t{0});
    for (std::size_t k = 0; k < mtry; ++k) std::swap(dims[k], dims[k + rng.below(data.d - k)]);

    Best best;
    std::vector<std::size_t> order = rows;
    std::vector<double> left(m);
    for (std::size_t k = 0; k < mtry; ++k) {
      const std::size_t dim = dims[k];
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = data.row(a)[dim], vb = data.row(b)[dim];
        return va < vb || (va == vb && a < b);
      });
      std::fill(left.begin(), left.end(), 0.0);
      for (std::size_t p = 0; p + 1 < order.size(); ++p) {
        left[labels[order[p]]] += 1.0;
        const double v = data.row(order[p])[dim], next = data.row(order[p + 1])[dim];
        if (!(v < next)) continue;
        const double nl = double(p + 1), nr = n - nl;
        double sl = 0.0, sr = 0.0;
        for (int y = 0; y < m; ++y) {
          sl += (left[y] / nl) * (left[y] / nl);
          const double rc = total[y] - left[y];
          sr += (rc / nr) * (rc / nr);
        }
        const double decrease = parent - nl / n * (1.0 - sl) - nr / n * (1.0 - sr);
        if (decrease > best.decrease + 1e-12) {
          double t = v + (next - v) / 2.0;
          if (!(t < next)) t = v;
          best = {decrease, dim, t};
        }
      }
    }
    return best;
  }

  NodeStats stats_of(const std::vector<std::size_t>& rows) {
    std::vector<Label> ys;
    ys.reserve(rows.size());
    for (auto r : rows) ys.push_back((*data.labels)[r]);
    NodeStats s;
    s.class_histogram = class_histogram(ys, data.m);
    s.label = argmax_label(s.class_histogram);
    s.mass = double(rows.size()) / double(bootstrap_size);
    return s;
  }

  void grow(DecisionTree& tree, NodeId node, const std::vector<std::size_t>& rows,
            std::size_t depth) {
    if (depth >= cfg.max_depth || rows.size() < cfg.min_samples_split) return;
    const auto& st = tree.node(node).stats;
    if (*std::max_element(st.class_histogram.begin(), st.class_histogram.end()) >= 1.0) return;
    Best b = find_split(rows);
    if (b.decrease <= 0.0) return;
    std::vector<std::size_t> l, r;
    for (auto row : rows) (data.row(row)[b.dim] <= b.threshold ? l : r).push_back(row);
    auto [ln, rn] = tree.split_leaf(node, b.dim, b.threshold, stats_of(l), stats_of(r));
    grow(tree, ln, l, depth + 1);
    grow(tree, rn, r, depth + 1);
  }
};

// Row indices with every minority class topped up (by resampling its rows
// with replacement) to the size of the largest class.
inline std::vector<std::size_t> balanced_rows(const std::vector<Label>& labels, int m, Rng& rng) {
  std::vector<std::vector<std::size_t>> by_class(m);
  for (std::size_t r = 0; r < labels.size(); ++r) by_class[labels[r]].push_back(r);
  std::size_t largest = 0;
  for (const auto& c : by_class) largest = std::max(largest, c.size());
  std::vector<std::size_t> rows(labels.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  for (const auto& c : by_class) {
    if (c.empty()) continue;
    for (std::size_t k = c.size(); k < largest; ++k) rows.push_back(c[rng.below(c.size())]);
  }
  return rows;
}

}  // namespace detail

inline RandomForest train_random_forest(const Dataset& data, const ForestConfig& cfg) {
  data.validate();
  if (!data.labels) throw InputError("train_random_forest: dataset has no labels");
  if (cfg.n_trees == 0) throw ConfigError("train_random_forest: n_trees must be positive");
  Rng rng(cfg.seed);
  const auto& labels = *data.labels;

  std::vector<std::size_t> distinct(data.m, 0);
  for (Label y : labels) ++distinct[y];
  const auto present = std::count_if(distinct.begin(), distinct.end(), [](auto c) { return c > 0; });
  if (present < 2) {
    warn("train_random_forest: single-class data, forest is constant");
    NodeStats s;
    s.class_histogram = class_histogram(labels, data.m);
    s.label = argmax_label(s.class_histogram);
    s.mass = 1.0;
    RandomForest f(data.d, data.m, {DecisionTree::single_leaf(data.d, data.m, s)});
    f.bootstrap_class_share = s.class_histogram;
    return f;
  }

  const std::vector<std::size_t> base = cfg.balance
                                            ? detail::balanced_rows(labels, data.m, rng)
                                            : [&] {
                                                std::vector<std::size_t> r(data.n);
                                                std::iota(r.begin(), r.end(), std::size_t{0});
                                                return r;
                                              }();
  std::size_t mtry = cfg.features_per_split;
  if (mtry == 0) mtry = std::max<std::size_t>(1, std::size_t(std::lround(std::sqrt(double(data.d)))));
  mtry = std::min(mtry, data.d);

  std::vector<DecisionTree> trees;
  std::vector<double> share(data.m, 0.0);
  for (std::size_t t = 0; t < cfg.n_trees; ++t) {
    std::vector<std::size_t> rows(base.size());
    for (auto& r : rows) r = base[rng.below(base.size())];
    for (auto r : rows) share[labels[r]] += 1.0 / double(rows.size() * cfg.n_trees);
    detail::ForestGrower grower{data, cfg, mtry, rows.size(), rng};
    DecisionTree tree = DecisionTree::single_leaf(data.d, data.m, grower.stats_of(rows));
    grower.grow(tree, 0, rows, 0);
    trees.push_back(std::move(tree));
  }
  RandomForest forest(data.d, data.m, std::move(trees));
  forest.bootstrap_class_share = std::move(share);
  return forest;
}

}  // namespace treex
