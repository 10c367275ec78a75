#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treex/error.hpp"
#include "treex/normal.hpp"

namespace treex {

using Label = int;

// Row-major n x d feature matrix with optional integer labels in [0, m).
struct Dataset {
  std::vector<double> features;
  std::size_t n = 0;
  std::size_t d = 0;
  std::optional<std::vector<Label>> labels;
  std::vector<std::string> column_names;
  int m = 0;

  std::span<const double> row(std::size_t i) const { return {features.data() + i * d, d}; }
  std::span<double> row(std::size_t i) { return {features.data() + i * d, d}; }

  void validate() const {
    if (n == 0 || d == 0) throw InputError("dataset must have at least one row and one column");
    if (features.size() != n * d) throw InputError("dataset feature matrix has wrong size");
    if (!column_names.empty() && column_names.size() != d)
      throw InputError("dataset column name count does not match d");
    for (double v : features)
      if (!std::isfinite(v)) throw InputError("dataset contains a non-finite feature value");
    if (labels) {
      if (labels->size() != n) throw InputError("dataset label count does not match n");
      for (Label y : *labels)
        if (y < 0 || y >= m) throw InputError("dataset label outside [0, m)");
    }
  }

  // Rows selected by index, labels and metadata carried along.
  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.n = rows.size();
    out.d = d;
    out.m = m;
    out.column_names = column_names;
    out.features.reserve(rows.size() * d);
    if (labels) out.labels.emplace();
    for (std::size_t r : rows) {
      auto x = row(r);
      out.features.insert(out.features.end(), x.begin(), x.end());
      if (labels) out.labels->push_back((*labels)[r]);
    }
    return out;
  }
};

enum class Sense { LE, GT };

// x[dim] <= threshold (LE) or x[dim] > threshold (GT).
struct AxisConstraint {
  std::size_t dim = 0;
  double threshold = 0.0;
  Sense sense = Sense::LE;

  bool holds(std::span<const double> x) const {
    return sense == Sense::LE ? x[dim] <= threshold : x[dim] > threshold;
  }
  AxisConstraint negated() const {
    return {dim, threshold, sense == Sense::LE ? Sense::GT : Sense::LE};
  }
};

// Conjunction of axis-aligned constraints in canonical form: lower_i < x_i <= upper_i.
struct BoxConstraint {
  std::vector<double> lower;
  std::vector<double> upper;

  static BoxConstraint unconstrained(std::size_t d) {
    return {std::vector<double>(d, -kInf), std::vector<double>(d, kInf)};
  }

  std::size_t dim() const { return lower.size(); }

  bool satisfiable() const {
    for (std::size_t i = 0; i < lower.size(); ++i)
      if (!(lower[i] < upper[i])) return false;
    return true;
  }

  bool contains(std::span<const double> x) const {
    for (std::size_t i = 0; i < lower.size(); ++i)
      if (!(x[i] > lower[i] && x[i] <= upper[i])) return false;
    return true;
  }

  bool is_unconstrained() const {
    return std::all_of(lower.begin(), lower.end(), [](double v) { return v == -kInf; }) &&
           std::all_of(upper.begin(), upper.end(), [](double v) { return v == kInf; });
  }

  friend bool operator==(const BoxConstraint&, const BoxConstraint&) = default;
};

// Canonical box for box AND c; nullopt when the result is empty.
inline std::optional<BoxConstraint> conjoin(BoxConstraint box, const AxisConstraint& c) {
  if (c.dim >= box.dim()) throw InputError("constraint dimension out of range");
  if (c.sense == Sense::LE)
    box.upper[c.dim] = std::min(box.upper[c.dim], c.threshold);
  else
    box.lower[c.dim] = std::max(box.lower[c.dim], c.threshold);
  if (!(box.lower[c.dim] < box.upper[c.dim])) return std::nullopt;
  return box;
}

// Intersection of two boxes; nullopt when empty.
inline std::optional<BoxConstraint> intersect(const BoxConstraint& a, const BoxConstraint& b) {
  BoxConstraint out = a;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    out.lower[i] = std::max(a.lower[i], b.lower[i]);
    out.upper[i] = std::min(a.upper[i], b.upper[i]);
    if (!(out.lower[i] < out.upper[i])) return std::nullopt;
  }
  return out;
}

using NodeId = std::uint32_t;

// Statistics carried by every node. For internal nodes they describe the node
// as it was while it was still a leaf (used when pruning collapses it back).
struct NodeStats {
  Label label = 0;
  std::vector<double> class_histogram;
  double mass = 0.0;         // estimated Pr[C_N]
  double cached_gain = 0.0;  // best split gain estimated while a leaf

  friend bool operator==(const NodeStats&, const NodeStats&) = default;
};

struct Split {
  std::size_t dim = 0;
  double threshold = 0.0;
  NodeId left = 0;   // x[dim] <= threshold
  NodeId right = 0;  // x[dim] > threshold

  friend bool operator==(const Split&, const Split&) = default;
};

struct TreeNode {
  NodeStats stats;
  std::optional<Split> split;

  bool is_leaf() const { return !split.has_value(); }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

// Binary axis-aligned decision tree stored as an arena of nodes.
class DecisionTree {
 public:
  DecisionTree() = default;

  static DecisionTree single_leaf(std::size_t d, int m, NodeStats stats) {
    DecisionTree t;
    t.d_ = d;
    t.m_ = m;
    t.nodes_.push_back({std::move(stats), std::nullopt});
    return t;
  }

  // Arena constructor used by deserialization; validates the structure.
  DecisionTree(std::size_t d, int m, std::vector<TreeNode> nodes, NodeId root = 0)
      : nodes_(std::move(nodes)), root_(root), d_(d), m_(m) {
    validate();
  }

  // Turns leaf `id` into an internal node and returns the new (left, right) leaves.
  std::pair<NodeId, NodeId> split_leaf(NodeId id, std::size_t dim, double threshold,
                                       NodeStats left_stats, NodeStats right_stats) {
    if (id >= nodes_.size() || !nodes_[id].is_leaf()) throw InputError("split_leaf: not a leaf");
    if (dim >= d_) throw InputError("split_leaf: dimension out of range");
    const auto l = static_cast<NodeId>(nodes_.size());
    const auto r = static_cast<NodeId>(nodes_.size() + 1);
    nodes_.push_back({std::move(left_stats), std::nullopt});
    nodes_.push_back({std::move(right_stats), std::nullopt});
    nodes_[id].split = Split{dim, threshold, l, r};
    return {l, r};
  }

  const TreeNode& node(NodeId id) const { return nodes_.at(id); }
  TreeNode& node(NodeId id) { return nodes_.at(id); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  NodeId root() const { return root_; }
  std::size_t dim() const { return d_; }
  int classes() const { return m_; }

  // Internal + leaf nodes reachable from the root.
  std::size_t size() const { return reachable().size(); }

  std::size_t leaf_count() const {
    std::size_t c = 0;
    for (NodeId id : reachable()) c += nodes_[id].is_leaf() ? 1 : 0;
    return c;
  }

  NodeId leaf_for(std::span<const double> x) const {
    if (x.size() != d_) throw InputError("tree_predict: dimension mismatch");
    NodeId id = root_;
    while (const auto& s = nodes_[id].split) id = x[s->dim] <= s->threshold ? s->left : s->right;
    return id;
  }

  Label predict(std::span<const double> x) const { return nodes_[leaf_for(x)].stats.label; }

  // Node ids reachable from the root in depth-first preorder.
  std::vector<NodeId> reachable() const {
    std::vector<NodeId> out;
    if (nodes_.empty()) return out;
    std::vector<NodeId> stack{root_};
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      out.push_back(id);
      if (const auto& s = nodes_[id].split) {
        stack.push_back(s->right);
        stack.push_back(s->left);
      }
    }
    return out;
  }

  // Box C_N of every reachable node, indexed by node id (unreachable ids stay empty).
  std::vector<std::optional<BoxConstraint>> path_boxes() const {
    std::vector<std::optional<BoxConstraint>> boxes(nodes_.size());
    if (nodes_.empty()) return boxes;
    boxes[root_] = BoxConstraint::unconstrained(d_);
    for (NodeId id : reachable()) {
      const auto& s = nodes_[id].split;
      if (!s || !boxes[id]) continue;
      AxisConstraint c{s->dim, s->threshold, Sense::LE};
      boxes[s->left] = conjoin(*boxes[id], c);
      boxes[s->right] = conjoin(*boxes[id], c.negated());
    }
    return boxes;
  }

  std::vector<std::size_t> depths() const {
    std::vector<std::size_t> depth(nodes_.size(), 0);
    for (NodeId id : reachable())
      if (const auto& s = nodes_[id].split) depth[s->left] = depth[s->right] = depth[id] + 1;
    return depth;
  }

  // Replaces the subtree under `id` by a leaf with the given label.
  void collapse(NodeId id, Label label) {
    nodes_.at(id).split.reset();
    nodes_[id].stats.label = label;
  }

  // Copy with unreachable nodes removed and ids renumbered in preorder.
  DecisionTree compacted() const {
    auto order = reachable();
    std::vector<NodeId> remap(nodes_.size(), 0);
    for (std::size_t k = 0; k < order.size(); ++k) remap[order[k]] = static_cast<NodeId>(k);
    std::vector<TreeNode> out;
    out.reserve(order.size());
    for (NodeId id : order) {
      TreeNode n = nodes_[id];
      if (n.split) {
        n.split->left = remap[n.split->left];
        n.split->right = remap[n.split->right];
      }
      out.push_back(std::move(n));
    }
    return DecisionTree(d_, m_, std::move(out), 0);
  }

  // Throws InputError when the arena is not a proper binary tree with valid
  // labels and satisfiable path boxes.
  void validate() const {
    if (nodes_.empty()) throw InputError("tree has no nodes");
    if (root_ >= nodes_.size()) throw InputError("tree root out of range");
    std::vector<int> seen(nodes_.size(), 0);
    std::vector<NodeId> stack{root_};
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      if (seen[id]++) throw InputError("tree contains a cycle or shared child");
      const auto& n = nodes_[id];
      if (n.stats.label < 0 || n.stats.label >= m_) throw InputError("tree label outside [0, m)");
      if (n.split) {
        if (n.split->dim >= d_) throw InputError("tree split dimension out of range");
        if (!std::isfinite(n.split->threshold)) throw InputError("tree threshold not finite");
        if (n.split->left >= nodes_.size() || n.split->right >= nodes_.size())
          throw InputError("tree child id out of range");
        stack.push_back(n.split->left);
        stack.push_back(n.split->right);
      }
    }
    // conjoin yields nullopt for an empty path box
    const auto boxes = path_boxes();
    for (NodeId id : reachable())
      if (!boxes[id]) throw InputError("tree has an unsatisfiable path");
  }

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;

 private:
  std::vector<TreeNode> nodes_;
  NodeId root_ = 0;
  std::size_t d_ = 0;
  int m_ = 0;
};

// Index of the largest entry, ties to the lowest index.
inline Label argmax_label(std::span<const double> hist) {
  Label best = 0;
  for (std::size_t y = 1; y < hist.size(); ++y)
    if (hist[y] > hist[best]) best = static_cast<Label>(y);
  return best;
}

}  // namespace treex
