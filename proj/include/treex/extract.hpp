#pragma once

#include <algorithm>
#include <cassert>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <sstream>
#include <vector>

#include "treex/blackbox.hpp"
#include "treex/core.hpp"
#include "treex/gmm.hpp"
#include "treex/rng.hpp"

namespace treex {

// Points (row-major, d columns) with one label each.
struct LabeledSample {
  std::size_t d = 0;
  std::vector<double> points;
  std::vector<Label> labels;

  explicit LabeledSample(std::size_t dim = 0) : d(dim) {}

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> point(std::size_t k) const { return {points.data() + k * d, d}; }
  void push(std::span<const double> x, Label y) {
    points.insert(points.end(), x.begin(), x.end());
    labels.push_back(y);
  }
};

// Normalized class histogram of a sample (all zeros when empty).
inline std::vector<double> class_histogram(std::span<const Label> labels, int m) {
  std::vector<double> h(m, 0.0);
  for (Label y : labels) h[y] += 1.0;
  if (!labels.empty())
    for (auto& v : h) v /= double(labels.size());
  return h;
}

// Weighted Gini impurity H = (1 - sum_y p_y^2) * Pr[C].
inline double gini_term(std::span<const double> hist, double mass) {
  double sq = 0.0, total = 0.0;
  for (double p : hist) {
    sq += p * p;
    total += p;
  }
  if (total == 0.0) return 0.0;
  return (1.0 - sq) * mass;
}

// Empirical gain of splitting the region (mass `mass`, samples drawn from it)
// at x[dim] <= threshold. Side masses are mass times the side fractions.
inline double estimate_split(const LabeledSample& s, double mass, std::size_t dim, double threshold,
                             int m) {
  const std::size_t n = s.size();
  if (n == 0) return 0.0;
  std::vector<Label> left, right;
  for (std::size_t k = 0; k < n; ++k)
    (s.point(k)[dim] <= threshold ? left : right).push_back(s.labels[k]);
  if (left.empty() || right.empty()) return 0.0;
  const double fl = double(left.size()) / double(n);
  const double fr = double(right.size()) / double(n);
  return gini_term(class_histogram(s.labels, m), mass) -
         gini_term(class_histogram(left, m), mass * fl) -
         gini_term(class_histogram(right, m), mass * fr);
}

enum class ThresholdStrategy { Midpoints, Quantiles };

struct SplitSearch {
  ThresholdStrategy strategy = ThresholdStrategy::Midpoints;
  std::size_t quantiles = 256;
  double min_gain = 0.0;
};

struct SplitCandidate {
  std::size_t dim = 0;
  double threshold = 0.0;
  double gain = 0.0;
  Label left_label = 0;
  Label right_label = 0;
  std::vector<double> left_hist;
  std::vector<double> right_hist;
  double left_fraction = 0.0;
};

// Exhaustive empirical argmax of the gain over dimensions and candidate
// thresholds. Returns nullopt when the best gain does not exceed min_gain.
// Ties go to the lowest dimension, then the smallest threshold.
inline std::optional<SplitCandidate> best_split_on(const LabeledSample& s, double mass, int m,
                                                   const SplitSearch& search = {}) {
  const std::size_t n = s.size();
  if (n < 2) return std::nullopt;
  const std::vector<double> all_hist = class_histogram(s.labels, m);
  const double parent = gini_term(all_hist, mass);
  if (parent <= 0.0) return std::nullopt;

  std::vector<double> total(m, 0.0);
  for (Label y : s.labels) total[y] += 1.0;

  std::vector<std::size_t> order(n);
  std::vector<double> left(m), right(m), hl(m), hr(m);
  double best_gain = -kInf;
  std::size_t best_dim = 0;
  double best_threshold = 0.0;

  for (std::size_t dim = 0; dim < s.d; ++dim) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double va = s.point(a)[dim], vb = s.point(b)[dim];
      return va < vb || (va == vb && a < b);
    });
    std::fill(left.begin(), left.end(), 0.0);
    std::size_t last_bucket = std::numeric_limits<std::size_t>::max();
    for (std::size_t p = 0; p + 1 < n; ++p) {
      left[s.labels[order[p]]] += 1.0;
      const double v = s.point(order[p])[dim];
      const double next = s.point(order[p + 1])[dim];
      if (!(v < next)) continue;
      if (search.strategy == ThresholdStrategy::Quantiles) {
        const std::size_t bucket = (p + 1) * search.quantiles / n;
        if (bucket == last_bucket) continue;
        last_bucket = bucket;
      }
      const double nl = double(p + 1), nr = double(n - p - 1);
      for (int y = 0; y < m; ++y) {
        hl[y] = left[y] / nl;
        hr[y] = (total[y] - left[y]) / nr;
      }
      const double gain = parent - gini_term(hl, mass * nl / double(n)) -
                          gini_term(hr, mass * nr / double(n));
      if (gain > best_gain) {
        best_gain = gain;
        best_dim = dim;
        double t = v + (next - v) / 2.0;
        if (!(t < next)) t = v;
        best_threshold = t;
      }
    }
  }
  if (!(best_gain > search.min_gain)) return std::nullopt;

  SplitCandidate c;
  c.dim = best_dim;
  c.threshold = best_threshold;
  c.gain = best_gain;
  std::vector<Label> l, r;
  for (std::size_t k = 0; k < n; ++k)
    (s.point(k)[best_dim] <= best_threshold ? l : r).push_back(s.labels[k]);
  c.left_hist = class_histogram(l, m);
  c.right_hist = class_histogram(r, m);
  c.left_label = argmax_label(c.left_hist);
  c.right_label = argmax_label(c.right_hist);
  c.left_fraction = double(l.size()) / double(n);
  return c;
}

// Samples drawn for one node together with the node's (estimated) mass.
struct NodeDraw {
  LabeledSample sample;
  double mass = 0.0;
};

// A node sampler supplies labeled points for a box; nullopt marks a region
// with no usable mass (such nodes become permanent leaves).
template <class S>
concept NodeSampler = requires(S s, const BoxConstraint& box) {
  { s.draw(box) } -> std::same_as<std::optional<NodeDraw>>;
};

// n labeled draws from the mixture conditioned on each requested box.
class ActiveSampler {
 public:
  ActiveSampler(const GaussianMixture& g, const Blackbox& f, std::size_t n, Rng& rng)
      : g_(&g), f_(&f), n_(n), rng_(&rng) {}
  ActiveSampler(GaussianMixture&&, const Blackbox&, std::size_t, Rng&) = delete;

  std::optional<NodeDraw> draw(const BoxConstraint& box) {
    std::optional<ConditionalMixture> cm;
    try {
      cm.emplace(condition(*g_, box));
    } catch (const EmptyRegion&) {
      return std::nullopt;
    }
    NodeDraw out{LabeledSample(g_->d), cm->mass()};
    out.sample.points.reserve(n_ * g_->d);
    out.sample.labels.reserve(n_);
    std::vector<double> x(g_->d);
    for (std::size_t k = 0; k < n_; ++k) {
      cm->sample_into(*rng_, x);
      assert(box.contains(x));
      out.sample.push(x, f_->predict(x));
    }
    return out;
  }

 private:
  const GaussianMixture* g_;
  const Blackbox* f_;
  std::size_t n_;
  Rng* rng_;
};

// Best split for the region `box` estimated from n fresh conditional samples.
inline std::optional<SplitCandidate> best_split(const GaussianMixture& g, const BoxConstraint& box,
                                                const Blackbox& f, std::size_t n, Rng& rng,
                                                const SplitSearch& search = {}) {
  ActiveSampler sampler(g, f, n, rng);
  auto draw = sampler.draw(box);
  if (!draw) return std::nullopt;
  return best_split_on(draw->sample, draw->mass, f.classes(), search);
}

struct FrontierEntry {
  NodeId leaf = 0;
  BoxConstraint box;
  double mass = 0.0;
  double priority_gain = 0.0;
  SplitCandidate priority_split;
};

enum class DrawPurpose { Root, Priority, Commit };

struct NodeSampleRecord {
  NodeId node = 0;
  std::size_t depth = 0;
  DrawPurpose purpose = DrawPurpose::Root;
  std::size_t samples = 0;
  double mass = 0.0;
};

struct GrowthResult {
  DecisionTree tree;
  std::size_t expansions = 0;
  std::size_t estimations = 0;
  std::vector<NodeSampleRecord> sample_log;
};

namespace detail {

inline std::string describe_box(const BoxConstraint& box) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < box.dim(); ++i) {
    if (box.lower[i] == -kInf && box.upper[i] == kInf) continue;
    os << " x" << i << " in (" << box.lower[i] << ", " << box.upper[i] << ']';
  }
  os << " }";
  return os.str();
}

template <NodeSampler S>
std::optional<NodeDraw> guarded_draw(S& sampler, const BoxConstraint& box, NodeId node) {
  try {
    return sampler.draw(box);
  } catch (const EmptyRegion&) {
    return std::nullopt;
  } catch (const std::exception& e) {
    throw BlackboxError("labeling failed at node " + std::to_string(node) + " box " +
                        describe_box(box) + ": " + e.what());
  }
}

}  // namespace detail

// Greedy best-first tree growth. The leaf with the highest estimated potential
// gain is expanded; its split is refit on a separate draw from the sampler.
// Growth stops when no leaf has gain above min_gain or the next expansion
// would exceed max_nodes.
template <NodeSampler S>
GrowthResult grow_greedy(S& sampler, std::size_t d, int m, std::size_t max_nodes,
                         const SplitSearch& search = {}) {
  GrowthResult out;
  auto root_draw = detail::guarded_draw(sampler, BoxConstraint::unconstrained(d), 0);
  if (!root_draw || root_draw->sample.empty())
    throw InputError("grow_greedy: no samples available at the root");
  out.sample_log.push_back({0, 0, DrawPurpose::Root, root_draw->sample.size(), root_draw->mass});
  ++out.estimations;

  NodeStats root_stats;
  root_stats.class_histogram = class_histogram(root_draw->sample.labels, m);
  root_stats.label = argmax_label(root_stats.class_histogram);
  root_stats.mass = root_draw->mass;
  out.tree = DecisionTree::single_leaf(d, m, root_stats);

  auto worse = [](const FrontierEntry& a, const FrontierEntry& b) {
    if (a.priority_gain != b.priority_gain) return a.priority_gain < b.priority_gain;
    return a.leaf > b.leaf;
  };
  std::priority_queue<FrontierEntry, std::vector<FrontierEntry>, decltype(worse)> frontier(worse);
  std::vector<std::size_t> depth{0};

  auto enqueue = [&](NodeId leaf, BoxConstraint box, const NodeDraw& draw) {
    auto cand = best_split_on(draw.sample, draw.mass, m, search);
    out.tree.node(leaf).stats.cached_gain = cand ? cand->gain : 0.0;
    if (cand) {
      const double gain = cand->gain;
      frontier.push({leaf, std::move(box), draw.mass, gain, std::move(*cand)});
    }
  };
  enqueue(0, BoxConstraint::unconstrained(d), *root_draw);

  std::size_t size = 1;
  while (!frontier.empty() && size + 2 <= max_nodes) {
    FrontierEntry top = frontier.top();
    frontier.pop();

    auto commit = detail::guarded_draw(sampler, top.box, top.leaf);
    out.sample_log.push_back({top.leaf, depth[top.leaf], DrawPurpose::Commit,
                              commit ? commit->sample.size() : 0, commit ? commit->mass : 0.0});
    if (!commit) continue;
    auto split = best_split_on(commit->sample, commit->mass, m, search);
    if (!split) continue;

    NodeStats ls, rs;
    ls.label = split->left_label;
    ls.class_histogram = split->left_hist;
    rs.label = split->right_label;
    rs.class_histogram = split->right_hist;
    const auto [l, r] = out.tree.split_leaf(top.leaf, split->dim, split->threshold, ls, rs);
    ++out.expansions;
    size += 2;
    depth.resize(out.tree.nodes().size(), 0);
    depth[l] = depth[r] = depth[top.leaf] + 1;

    const AxisConstraint c{split->dim, split->threshold, Sense::LE};
    for (auto [child, constraint] : {std::pair{l, c}, std::pair{r, c.negated()}}) {
      auto box = conjoin(top.box, constraint);
      if (!box) continue;
      auto draw = detail::guarded_draw(sampler, *box, child);
      ++out.estimations;
      out.sample_log.push_back({child, depth[child], DrawPurpose::Priority,
                                draw ? draw->sample.size() : 0, draw ? draw->mass : 0.0});
      if (!draw) continue;
      out.tree.node(child).stats.mass = draw->mass;
      enqueue(child, std::move(*box), *draw);
    }
  }
  return out;
}

struct ExtractionConfig {
  std::size_t max_nodes = 15;
  std::size_t samples_per_node = 200;
  double min_gain = 0.0;
  ThresholdStrategy strategy = ThresholdStrategy::Midpoints;
  std::size_t quantiles = 256;
  std::uint64_t seed = 0;
  bool prune = false;
  std::size_t prune_samples = 2000;
  std::vector<double> prune_alphas{0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2};

  void validate() const {
    if (max_nodes < 1) throw ConfigError("max_nodes must be at least 1");
    if (samples_per_node < 2) throw ConfigError("samples_per_node must be at least 2");
    if (!(min_gain >= 0.0)) throw ConfigError("min_gain must be nonnegative");
    if (strategy == ThresholdStrategy::Quantiles && quantiles < 1)
      throw ConfigError("quantiles must be positive");
  }
  SplitSearch search() const { return {strategy, quantiles, min_gain}; }
};

struct ExtractionResult {
  DecisionTree tree;
  std::size_t blackbox_calls = 0;
  std::size_t expansions = 0;
  std::size_t estimations = 0;
  std::vector<NodeSampleRecord> sample_log;
};

inline DecisionTree prune(const DecisionTree& tree, const GaussianMixture& g, const Blackbox& f,
                   std::size_t n_val, std::span<const double> alphas, Rng& rng);

// Estimated greedy extraction with active sampling from the mixture.
inline ExtractionResult extract_tree(const GaussianMixture& g, const Blackbox& f,
                                     const ExtractionConfig& cfg) {
  cfg.validate();
  g.validate();
  if (f.dim() != g.d) throw InputError("extract: blackbox and mixture dimensions differ");
  Rng rng(cfg.seed);
  CountingBlackbox counted(f);
  ActiveSampler sampler(g, counted, cfg.samples_per_node, rng);
  GrowthResult grown = grow_greedy(sampler, g.d, f.classes(), cfg.max_nodes, cfg.search());
  ExtractionResult out{std::move(grown.tree), counted.calls(), grown.expansions, grown.estimations,
                       std::move(grown.sample_log)};
  if (cfg.prune) {
    Rng prune_rng(stream_seed(cfg.seed, 0x7072756e65));
    out.tree = prune(out.tree, g, f, cfg.prune_samples, cfg.prune_alphas, prune_rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cost-complexity pruning

namespace detail {

inline LabeledSample draw_labeled(const GaussianMixture& g, const Blackbox& f, std::size_t n,
                                  Rng& rng) {
  LabeledSample s(g.d);
  for (std::size_t k = 0; k < n; ++k) {
    auto x = sample(g, rng);
    s.push(x, f.predict(x));
  }
  return s;
}

inline double agreement_rate(const DecisionTree& t, const LabeledSample& s) {
  if (s.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t k = 0; k < s.size(); ++k) hit += t.predict(s.point(k)) == s.labels[k];
  return double(hit) / double(s.size());
}

}  // namespace detail

// Weakest-link pruning. Subtree errors are measured on one fresh validation
// draw; the alpha whose subtree agrees best with f on a second draw wins
// (ties to the smaller tree). alpha = 0 leaves the tree unchanged.
inline DecisionTree prune(const DecisionTree& tree, const GaussianMixture& g, const Blackbox& f,
                          std::size_t n_val, std::span<const double> alphas, Rng& rng) {
  if (tree.nodes().empty()) throw InputError("prune: empty tree");
  if (n_val == 0) throw ConfigError("prune: need validation samples");
  const int m = tree.classes();
  const LabeledSample fit = detail::draw_labeled(g, f, n_val, rng);
  const LabeledSample select = detail::draw_labeled(g, f, n_val, rng);

  // Per-node class counts of validation points passing through each node.
  const std::size_t nn = tree.nodes().size();
  std::vector<std::vector<double>> counts(nn, std::vector<double>(m, 0.0));
  std::vector<double> reach(nn, 0.0);
  for (std::size_t k = 0; k < fit.size(); ++k) {
    NodeId id = tree.root();
    for (;;) {
      counts[id][fit.labels[k]] += 1.0;
      reach[id] += 1.0;
      const auto& s = tree.node(id).split;
      if (!s) break;
      id = fit.point(k)[s->dim] <= s->threshold ? s->left : s->right;
    }
  }
  auto collapsed_label = [&](NodeId id) {
    const Label stored = tree.node(id).stats.label;
    const Label maj = argmax_label(counts[id]);
    return counts[id][stored] == counts[id][maj] ? stored : maj;
  };
  auto error_as_leaf = [&](NodeId id, Label y) {
    return (reach[id] - counts[id][y]) / double(fit.size());
  };

  struct Step {
    double alpha;
    DecisionTree tree;
  };
  std::vector<Step> sequence{{0.0, tree}};
  DecisionTree current = tree;
  while (!current.node(current.root()).is_leaf()) {
    // Subtree error and node count, post-order over the current tree.
    std::vector<double> sub_err(nn, 0.0), sub_size(nn, 0.0);
    auto order = current.reachable();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const auto& node = current.node(*it);
      if (node.is_leaf()) {
        sub_err[*it] = error_as_leaf(*it, node.stats.label);
        sub_size[*it] = 1.0;
      } else {
        sub_err[*it] = sub_err[node.split->left] + sub_err[node.split->right];
        sub_size[*it] = 1.0 + sub_size[node.split->left] + sub_size[node.split->right];
      }
    }
    double weakest = kInf;
    for (NodeId id : order) {
      if (current.node(id).is_leaf()) continue;
      const double link =
          (error_as_leaf(id, collapsed_label(id)) - sub_err[id]) / (sub_size[id] - 1.0);
      weakest = std::min(weakest, link);
    }
    for (NodeId id : order) {
      const auto& node = current.node(id);
      if (node.is_leaf()) continue;
      const double link =
          (error_as_leaf(id, collapsed_label(id)) - sub_err[id]) / (sub_size[id] - 1.0);
      if (link <= weakest + 1e-15) current.collapse(id, collapsed_label(id));
    }
    sequence.push_back({std::max(weakest, 0.0), current});
  }

  const DecisionTree* chosen = nullptr;
  double chosen_fid = -1.0;
  for (double alpha : alphas) {
    const DecisionTree* candidate = &sequence.front().tree;
    if (alpha > 0.0)
      for (const auto& step : sequence)
        if (step.alpha <= alpha) candidate = &step.tree;
    const double fid = detail::agreement_rate(*candidate, select);
    if (fid > chosen_fid || (fid == chosen_fid && candidate->size() < chosen->size())) {
      chosen = candidate;
      chosen_fid = fid;
    }
  }
  if (!chosen) return tree;
  return chosen->compacted();
}

}  // namespace treex
