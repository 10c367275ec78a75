#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "treex/core.hpp"
#include "treex/error.hpp"

namespace treex {

// Opaque label function f: R^d -> [m]. Implementations must be pure.
class Blackbox {
 public:
  virtual ~Blackbox() = default;
  virtual Label predict(std::span<const double> x) const = 0;
  virtual std::size_t dim() const = 0;
  virtual int classes() const = 0;
  virtual bool thread_safe() const { return true; }
};

// Forwards to another blackbox and counts evaluations.
class CountingBlackbox final : public Blackbox {
 public:
  explicit CountingBlackbox(const Blackbox& inner) : inner_(&inner) {}

  Label predict(std::span<const double> x) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_->predict(x);
  }
  std::size_t dim() const override { return inner_->dim(); }
  int classes() const override { return inner_->classes(); }
  bool thread_safe() const override { return inner_->thread_safe(); }

  std::size_t calls() const { return calls_.load(std::memory_order_relaxed); }

 private:
  const Blackbox* inner_;
  mutable std::atomic<std::size_t> calls_{0};
};

// Decision tree used as a blackbox.
class TreeBlackbox final : public Blackbox {
 public:
  explicit TreeBlackbox(DecisionTree tree) : tree_(std::move(tree)) {}
  Label predict(std::span<const double> x) const override { return tree_.predict(x); }
  std::size_t dim() const override { return tree_.dim(); }
  int classes() const override { return tree_.classes(); }
  const DecisionTree& tree() const { return tree_; }

 private:
  DecisionTree tree_;
};

// Piecewise-constant function: label of the (unique) box containing x, or
// default_label outside every box. Boxes must be pairwise disjoint.
class BoxFunction final : public Blackbox {
 public:
  BoxFunction(std::size_t d, int m, std::vector<BoxConstraint> boxes, std::vector<Label> labels,
              Label default_label)
      : d_(d), m_(m), boxes_(std::move(boxes)), labels_(std::move(labels)),
        default_label_(default_label) {
    if (boxes_.size() != labels_.size()) throw InputError("box function: one label per box");
    if (default_label_ < 0 || default_label_ >= m_) throw InputError("box function: bad default");
    for (std::size_t b = 0; b < boxes_.size(); ++b) {
      if (boxes_[b].dim() != d_) throw InputError("box function: box dimension mismatch");
      if (!boxes_[b].satisfiable()) throw InputError("box function: empty box");
      if (labels_[b] < 0 || labels_[b] >= m_) throw InputError("box function: bad label");
      for (std::size_t c = 0; c < b; ++c)
        if (intersect(boxes_[b], boxes_[c])) throw InputError("box function: overlapping boxes");
    }
  }

  Label predict(std::span<const double> x) const override {
    if (x.size() != d_) throw InputError("box function: dimension mismatch");
    for (std::size_t b = 0; b < boxes_.size(); ++b)
      if (boxes_[b].contains(x)) return labels_[b];
    return default_label_;
  }
  std::size_t dim() const override { return d_; }
  int classes() const override { return m_; }

  const std::vector<BoxConstraint>& boxes() const { return boxes_; }
  const std::vector<Label>& labels() const { return labels_; }
  Label default_label() const { return default_label_; }

 private:
  std::size_t d_;
  int m_;
  std::vector<BoxConstraint> boxes_;
  std::vector<Label> labels_;
  Label default_label_;
};

inline std::unique_ptr<BoxFunction> synthetic_box_blackbox(std::size_t d, int m,
                                                           std::vector<BoxConstraint> boxes,
                                                           std::vector<Label> labels,
                                                           Label default_label = 0) {
  return std::make_unique<BoxFunction>(d, m, std::move(boxes), std::move(labels), default_label);
}

}  // namespace treex
