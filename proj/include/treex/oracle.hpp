#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <queue>
#include <vector>

#include "treex/blackbox.hpp"
#include "treex/core.hpp"
#include "treex/gmm.hpp"
#include "treex/normal.hpp"

namespace treex {

// Closed-form exact greedy tree for a box-piecewise-constant f under a
// diagonal mixture. Pr[f = y AND C] is a finite sum over components and boxes
// of products of one-dimensional normal interval probabilities.
class ExactGreedyOracle {
 public:
  struct ExactSplit {
    std::size_t dim = 0;
    double threshold = 0.0;
    double gain = 0.0;
  };

  struct Result {
    DecisionTree tree;
    // Exact gain of the committed split at internal nodes, best potential gain at leaves.
    std::vector<double> node_gain;
  };

  ExactGreedyOracle(const GaussianMixture& g, const BoxFunction& f) : g_(&g), f_(&f) {
    g.validate();
    if (f.dim() != g.d) throw InputError("oracle: dimension mismatch");
    if (g.domain_bound) {
      domain_ = BoxConstraint{std::vector<double>(g.d, -*g.domain_bound),
                              std::vector<double>(g.d, *g.domain_bound)};
      domain_mass_ = raw_mass(*domain_);
    }
  }

  // Pr_{x ~ P}[C].
  double mass(const BoxConstraint& c) const {
    auto eff = restrict(c);
    return eff ? raw_mass(*eff) / domain_mass_ : 0.0;
  }

  // Pr_{x ~ P}[f(x) = y AND C] for every class y.
  std::vector<double> joint_class_mass(const BoxConstraint& c) const {
    std::vector<double> out(f_->classes(), 0.0);
    auto eff = restrict(c);
    if (!eff) return out;
    double inside = 0.0;
    for (std::size_t b = 0; b < f_->boxes().size(); ++b) {
      auto cut = intersect(*eff, f_->boxes()[b]);
      if (!cut) continue;
      const double p = raw_mass(*cut) / domain_mass_;
      out[f_->labels()[b]] += p;
      inside += p;
    }
    out[f_->default_label()] += std::max(0.0, raw_mass(*eff) / domain_mass_ - inside);
    return out;
  }

  // H(f, C) = (1 - sum_y Pr[f = y | C]^2) Pr[C].
  double impurity(const BoxConstraint& c) const {
    const auto joint = joint_class_mass(c);
    double total = 0.0;
    for (double p : joint) total += p;
    if (total <= 0.0) return 0.0;
    double sq = 0.0;
    for (double p : joint) sq += (p / total) * (p / total);
    return (1.0 - sq) * total;
  }

  double gain(const BoxConstraint& c, std::size_t dim, double t) const {
    auto l = conjoin(c, {dim, t, Sense::LE});
    auto r = conjoin(c, {dim, t, Sense::GT});
    return impurity(c) - (l ? impurity(*l) : 0.0) - (r ? impurity(*r) : 0.0);
  }

  // Maximizer of the exact gain over all dimensions and thresholds. Candidate
  // pieces are delimited by the box edges of f; each piece is scanned on a grid
  // and refined by golden-section search.
  std::optional<ExactSplit> best_split(const BoxConstraint& c) const {
    const double parent = impurity(c);
    if (parent <= kZeroGain) return std::nullopt;
    std::optional<ExactSplit> best;
    auto consider = [&](std::size_t dim, double t, double gval) {
      if (!best || gval > best->gain) best = ExactSplit{dim, t, gval};
    };
    for (std::size_t dim = 0; dim < g_->d; ++dim) {
      double lo = kInf, hi = -kInf;
      for (std::size_t j = 0; j < g_->components(); ++j) {
        lo = std::min(lo, g_->mean(j, dim) - 10.0 * g_->stddev(j, dim));
        hi = std::max(hi, g_->mean(j, dim) + 10.0 * g_->stddev(j, dim));
      }
      lo = std::max(lo, c.lower[dim]);
      hi = std::min(hi, c.upper[dim]);
      if (!(lo < hi)) continue;
      std::vector<double> cuts{lo, hi};
      for (const auto& b : f_->boxes())
        for (double e : {b.lower[dim], b.upper[dim]})
          if (e > lo && e < hi) cuts.push_back(e);
      std::sort(cuts.begin(), cuts.end());
      cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

      for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double a = cuts[k], b = cuts[k + 1];
        constexpr int grid = 32;
        std::vector<double> ts(grid + 1), gs(grid + 1);
        for (int q = 0; q <= grid; ++q) {
          ts[q] = a + (b - a) * double(q) / grid;
          gs[q] = gain(c, dim, ts[q]);
        }
        const auto qb = std::size_t(std::max_element(gs.begin(), gs.end()) - gs.begin());
        double left = ts[qb == 0 ? 0 : qb - 1], right = ts[std::min<std::size_t>(qb + 1, grid)];
        const auto [t_ref, g_ref] = golden_max(c, dim, left, right);
        if (g_ref > gs[qb])
          consider(dim, t_ref, g_ref);
        else
          consider(dim, ts[qb], gs[qb]);
      }
    }
    if (!best || best->gain <= kZeroGain) return std::nullopt;
    return best;
  }

  // Exact greedy tree with at most max_nodes nodes.
  Result build(std::size_t max_nodes) const {
    const int m = f_->classes();
    const auto root_box = BoxConstraint::unconstrained(g_->d);
    Result out{DecisionTree::single_leaf(g_->d, m, stats_for(root_box)), {0.0}};

    struct Entry {
      NodeId leaf;
      BoxConstraint box;
      ExactSplit split;
    };
    auto worse = [](const Entry& a, const Entry& b) {
      if (a.split.gain != b.split.gain) return a.split.gain < b.split.gain;
      return a.leaf > b.leaf;
    };
    std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> frontier(worse);
    auto enqueue = [&](NodeId id, const BoxConstraint& box) {
      auto s = best_split(box);
      out.node_gain.resize(out.tree.nodes().size(), 0.0);
      out.node_gain[id] = s ? s->gain : 0.0;
      out.tree.node(id).stats.cached_gain = out.node_gain[id];
      if (s) frontier.push({id, box, *s});
    };
    enqueue(0, root_box);

    std::size_t size = 1;
    while (!frontier.empty() && size + 2 <= max_nodes) {
      Entry e = frontier.top();
      frontier.pop();
      const AxisConstraint c{e.split.dim, e.split.threshold, Sense::LE};
      auto lb = conjoin(e.box, c);
      auto rb = conjoin(e.box, c.negated());
      if (!lb || !rb) continue;
      auto [l, r] =
          out.tree.split_leaf(e.leaf, e.split.dim, e.split.threshold, stats_for(*lb), stats_for(*rb));
      size += 2;
      enqueue(l, *lb);
      enqueue(r, *rb);
      out.node_gain[e.leaf] = e.split.gain;
    }
    out.node_gain.resize(out.tree.nodes().size(), 0.0);
    return out;
  }

  static constexpr double kZeroGain = 1e-12;

 private:
  std::optional<BoxConstraint> restrict(const BoxConstraint& c) const {
    if (!domain_) return c.satisfiable() ? std::optional<BoxConstraint>(c) : std::nullopt;
    return intersect(c, *domain_);
  }

  double raw_mass(const BoxConstraint& c) const {
    double total = 0.0;
    for (std::size_t j = 0; j < g_->components(); ++j) {
      double p = g_->weights[j];
      for (std::size_t i = 0; i < g_->d && p > 0.0; ++i)
        p *= normal_interval_probability(g_->mean(j, i), g_->stddev(j, i), c.lower[i], c.upper[i]);
      total += p;
    }
    return total;
  }

  NodeStats stats_for(const BoxConstraint& box) const {
    NodeStats s;
    const auto joint = joint_class_mass(box);
    double total = 0.0;
    for (double p : joint) total += p;
    s.class_histogram.assign(joint.size(), 0.0);
    if (total > 0.0)
      for (std::size_t y = 0; y < joint.size(); ++y) s.class_histogram[y] = joint[y] / total;
    s.label = argmax_label(s.class_histogram);
    s.mass = total;
    return s;
  }

  std::pair<double, double> golden_max(const BoxConstraint& c, std::size_t dim, double a,
                                       double b) const {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
    double g1 = gain(c, dim, x1), g2 = gain(c, dim, x2);
    while (b - a > 1e-8) {
      if (g1 < g2) {
        a = x1;
        x1 = x2;
        g1 = g2;
        x2 = a + inv_phi * (b - a);
        g2 = gain(c, dim, x2);
      } else {
        b = x2;
        x2 = x1;
        g2 = g1;
        x1 = b - inv_phi * (b - a);
        g1 = gain(c, dim, x1);
      }
    }
    const double t = 0.5 * (a + b);
    return {t, gain(c, dim, t)};
  }

  const GaussianMixture* g_;
  const BoxFunction* f_;
  std::optional<BoxConstraint> domain_;
  double domain_mass_ = 1.0;
};

inline ExactGreedyOracle::Result exact_greedy_oracle(const GaussianMixture& g, const BoxFunction& f,
                                                     std::size_t max_nodes) {
  return ExactGreedyOracle(g, f).build(max_nodes);
}

}  // namespace treex
