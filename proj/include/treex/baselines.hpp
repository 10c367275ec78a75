#pragma once

#include <cstdint>
#include <limits>
#include <optional>

#include "treex/blackbox.hpp"
#include "treex/core.hpp"
#include "treex/extract.hpp"
#include "treex/gmm.hpp"

namespace treex {

// Serves the points of a fixed labeled pool that fall inside each box; the
// node mass is the fraction of the pool inside it.
class SubsetSampler {
 public:
  explicit SubsetSampler(const LabeledSample& pool) : pool_(&pool) {}

  std::optional<NodeDraw> draw(const BoxConstraint& box) {
    NodeDraw out{LabeledSample(pool_->d), 0.0};
    for (std::size_t k = 0; k < pool_->size(); ++k)
      if (box.contains(pool_->point(k))) out.sample.push(pool_->point(k), pool_->labels[k]);
    if (out.sample.empty()) return std::nullopt;
    out.mass = double(out.sample.size()) / double(pool_->size());
    return out;
  }

 private:
  const LabeledSample* pool_;
};

// CART on the training set relabeled by the blackbox.
inline ExtractionResult cart_extract(const Dataset& train, const Blackbox& f, std::size_t max_nodes,
                                     const SplitSearch& search = {}) {
  train.validate();
  if (train.d != f.dim()) throw InputError("cart: dataset and blackbox dimensions differ");
  CountingBlackbox counted(f);
  LabeledSample pool(train.d);
  for (std::size_t r = 0; r < train.n; ++r) pool.push(train.row(r), counted.predict(train.row(r)));
  SubsetSampler sampler(pool);
  GrowthResult grown = grow_greedy(sampler, train.d, f.classes(), max_nodes, search);
  return {std::move(grown.tree), counted.calls(), grown.expansions, grown.estimations,
          std::move(grown.sample_log)};
}

struct BornAgainConfig {
  std::size_t max_nodes = 15;
  std::size_t samples_per_node = 200;
  // Draws from the unconditional mixture shared by all nodes.
  std::size_t total_sample_budget = 0;
  std::size_t max_rejection_attempts = 1'000'000;
  std::uint64_t seed = 0;
  SplitSearch search{};
};

// Rejection sampling from the unconditional mixture. Every draw consumes the
// shared budget; only accepted draws are labeled. A node stops drawing once it
// has its quota, its attempt allowance is spent, or the budget runs out.
class RejectionSampler {
 public:
  RejectionSampler(const GaussianMixture& g, const Blackbox& f, std::size_t quota,
                   std::size_t budget, std::size_t max_attempts_per_sample, Rng& rng)
      : unconditional_(condition(g, BoxConstraint::unconstrained(g.d))),
        f_(&f),
        quota_(quota),
        remaining_(budget),
        max_attempts_(max_attempts_per_sample),
        rng_(&rng) {}

  std::optional<NodeDraw> draw(const BoxConstraint& box) {
    const std::size_t d = unconditional_.base().d;
    const std::size_t allowance =
        quota_ > std::numeric_limits<std::size_t>::max() / std::max<std::size_t>(max_attempts_, 1)
            ? std::numeric_limits<std::size_t>::max()
            : quota_ * max_attempts_;
    NodeDraw out{LabeledSample(d), 0.0};
    std::vector<double> x(d);
    std::size_t draws = 0;
    while (out.sample.size() < quota_ && draws < allowance && remaining_ > 0) {
      unconditional_.sample_into(*rng_, x);
      --remaining_;
      ++draws;
      ++draws_used_;
      if (box.contains(x)) out.sample.push(x, f_->predict(x));
    }
    if (out.sample.size() < quota_) ++starved_nodes_;
    if (out.sample.empty()) return std::nullopt;
    out.mass = unconditional_.mass() * double(out.sample.size()) / double(draws);
    return out;
  }

  std::size_t remaining_budget() const { return remaining_; }
  std::size_t draws_used() const { return draws_used_; }
  std::size_t starved_nodes() const { return starved_nodes_; }

 private:
  ConditionalMixture unconditional_;
  const Blackbox* f_;
  std::size_t quota_;
  std::size_t remaining_;
  std::size_t max_attempts_;
  Rng* rng_;
  std::size_t draws_used_ = 0;
  std::size_t starved_nodes_ = 0;
};

// Born-again extraction: the same greedy loop as extract_tree with node samples
// obtained by rejection from the unconditional mixture.
inline ExtractionResult born_again_extract(const GaussianMixture& g, const Blackbox& f,
                                           const BornAgainConfig& cfg) {
  g.validate();
  if (f.dim() != g.d) throw InputError("born-again: blackbox and mixture dimensions differ");
  if (cfg.samples_per_node < 2) throw ConfigError("samples_per_node must be at least 2");
  if (cfg.total_sample_budget == 0) throw ConfigError("born-again needs a positive sample budget");
  Rng rng(cfg.seed);
  CountingBlackbox counted(f);
  RejectionSampler sampler(g, counted, cfg.samples_per_node, cfg.total_sample_budget,
                           cfg.max_rejection_attempts, rng);
  GrowthResult grown = grow_greedy(sampler, g.d, f.classes(), cfg.max_nodes, cfg.search);
  if (sampler.starved_nodes() > 0)
    warn("born-again: " + std::to_string(sampler.starved_nodes()) +
         " node draw(s) ended below quota");
  return {std::move(grown.tree), counted.calls(), grown.expansions, grown.estimations,
          std::move(grown.sample_log)};
}

}  // namespace treex
