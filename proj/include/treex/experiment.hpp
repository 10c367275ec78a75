#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "treex/baselines.hpp"
#include "treex/cartpole.hpp"
#include "treex/eval.hpp"
#include "treex/extract.hpp"
#include "treex/forest.hpp"
#include "treex/gmm.hpp"

namespace treex {

enum class Algorithm { Ours, Cart, BornAgain };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Ours: return "ours";
    case Algorithm::Cart: return "cart";
    case Algorithm::BornAgain: return "born-again";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "ours") return Algorithm::Ours;
  if (s == "cart") return Algorithm::Cart;
  if (s == "born-again" || s == "born_again") return Algorithm::BornAgain;
  throw InputError("unknown algorithm '" + s + "' (expected ours, cart, born-again)");
}

// Everything one (seed) replicate needs: data split, blackbox, input model.
struct TaskInstance {
  Dataset train;
  Dataset test;
  std::shared_ptr<const Blackbox> blackbox;
  GaussianMixture gmm;
};

class TaskPreset {
 public:
  virtual ~TaskPreset() = default;
  virtual TaskInstance instance(std::uint64_t seed, const EmConfig& em) const = 0;
  virtual std::size_t samples_per_node() const = 0;
  virtual std::string name() const = 0;
};

// Cart-pole: one value-iteration policy; per seed, fresh rollout states for
// training and testing.
class CartPolePreset final : public TaskPreset {
 public:
  struct Options {
    CartPoleSystem system{};
    PolicyConfig policy{};
    std::size_t n_train = 100;
    std::size_t n_test = 100;
    std::size_t samples_per_node = 200;
  };

  explicit CartPolePreset(Options opt)
      : opt_(opt), policy_(std::make_shared<TabularPolicy>(learn_policy(opt.system, opt.policy))) {}
  CartPolePreset(Options opt, std::shared_ptr<const TabularPolicy> policy)
      : opt_(opt), policy_(std::move(policy)) {}

  TaskInstance instance(std::uint64_t seed, const EmConfig& em) const override {
    TaskInstance t;
    t.train = collect_states(*policy_, opt_.system, opt_.n_train, stream_seed(seed, 1));
    t.test = collect_states(*policy_, opt_.system, opt_.n_test, stream_seed(seed, 2));
    t.blackbox = policy_;
    EmConfig cfg = em;
    cfg.seed = stream_seed(seed, 3);
    t.gmm = fit_em_bic(t.train, default_k_grid(), cfg).model;
    return t;
  }
  std::size_t samples_per_node() const override { return opt_.samples_per_node; }
  std::string name() const override { return "cartpole"; }
  const TabularPolicy& policy() const { return *policy_; }

 private:
  Options opt_;
  std::shared_ptr<const TabularPolicy> policy_;
};

// Labeled tabular data: per seed a random train/test split, a random forest
// trained on the (optionally balanced) training part, and a mixture fitted to
// the training features.
class ClassificationPreset final : public TaskPreset {
 public:
  struct Options {
    double train_fraction = 0.7;
    ForestConfig forest{.n_trees = 50, .max_depth = 8, .balance = true};
    std::size_t samples_per_node = 1000;
  };

  ClassificationPreset(Dataset data, Options opt) : data_(std::move(data)), opt_(opt) {
    data_.validate();
    if (!data_.labels) throw InputError("classification preset needs labeled data");
  }

  TaskInstance instance(std::uint64_t seed, const EmConfig& em) const override {
    Rng rng(stream_seed(seed, 1));
    std::vector<std::size_t> idx(data_.n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t k = 0; k + 1 < idx.size(); ++k) std::swap(idx[k], idx[k + rng.below(idx.size() - k)]);
    const auto n_train = static_cast<std::size_t>(std::lround(opt_.train_fraction * double(data_.n)));
    if (n_train == 0 || n_train >= data_.n) throw ConfigError("train fraction leaves a split empty");
    std::vector<std::size_t> tr(idx.begin(), idx.begin() + long(n_train));
    std::vector<std::size_t> te(idx.begin() + long(n_train), idx.end());
    TaskInstance t;
    t.train = data_.subset(tr);
    t.test = data_.subset(te);
    ForestConfig fc = opt_.forest;
    fc.seed = stream_seed(seed, 2);
    t.blackbox = std::make_shared<RandomForest>(train_random_forest(t.train, fc));
    EmConfig cfg = em;
    cfg.seed = stream_seed(seed, 3);
    t.gmm = fit_em_bic(t.train, default_k_grid(), cfg).model;
    return t;
  }
  std::size_t samples_per_node() const override { return opt_.samples_per_node; }
  std::string name() const override { return "classification"; }

 private:
  Dataset data_;
  Options opt_;
};

struct CurveConfig {
  std::vector<std::size_t> sizes{3, 7, 11, 15};
  std::vector<Algorithm> algorithms{Algorithm::Ours, Algorithm::Cart, Algorithm::BornAgain};
  std::size_t n_seeds = 20;
  Label positive_class = 1;
  std::size_t threads = 1;
  EmConfig em{};
  bool record_timing = true;
};

namespace detail {

inline ExperimentRow empty_row(Algorithm a, std::size_t size, std::uint64_t seed) {
  ExperimentRow row;
  row.algorithm = algorithm_name(a);
  row.size = size;
  row.seed = seed;
  return row;
}

inline std::vector<ExperimentRow> run_replicate(const TaskPreset& task, std::uint64_t seed,
                                                const CurveConfig& cfg) {
  std::vector<ExperimentRow> rows;
  TaskInstance inst;
  try {
    inst = task.instance(seed, cfg.em);
  } catch (const std::exception& e) {
    warn("replicate " + std::to_string(seed) + " failed: " + e.what());
    for (std::size_t size : cfg.sizes)
      for (Algorithm a : cfg.algorithms) rows.push_back(empty_row(a, size, seed));
    return rows;
  }
  const Blackbox& f = *inst.blackbox;
  for (std::size_t size : cfg.sizes) {
    ExtractionConfig ec;
    ec.max_nodes = size;
    ec.samples_per_node = task.samples_per_node();
    ec.seed = stream_seed(seed, 100 + size);
    std::optional<ExtractionResult> ours;
    auto run_ours = [&] {
      if (!ours) ours = extract_tree(inst.gmm, f, ec);
      return *ours;
    };
    for (Algorithm a : cfg.algorithms) {
      ExperimentRow row = empty_row(a, size, seed);
      const auto start = std::chrono::steady_clock::now();
      try {
        ExtractionResult r;
        switch (a) {
          case Algorithm::Ours:
            r = run_ours();
            break;
          case Algorithm::Cart:
            r = cart_extract(inst.train, f, size);
            break;
          case Algorithm::BornAgain: {
            BornAgainConfig bc;
            bc.max_nodes = size;
            bc.samples_per_node = task.samples_per_node();
            bc.total_sample_budget = run_ours().blackbox_calls;
            bc.seed = ec.seed;
            r = born_again_extract(inst.gmm, f, bc);
            break;
          }
        }
        const auto rep = fidelity(r.tree, f, inst.test, cfg.positive_class);
        row.fidelity_acc = rep.accuracy;
        row.fidelity_f1 = rep.f1;
        row.budget = r.blackbox_calls;
        row.tree_size = r.tree.size();
      } catch (const std::exception& e) {
        warn("run " + row.algorithm + " size " + std::to_string(size) + " seed " +
             std::to_string(seed) + " failed: " + e.what());
      }
      if (cfg.record_timing)
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                start)
                          .count();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace detail

// Fidelity of each algorithm at each size for seeds 0 .. n_seeds-1. Seeds run
// in parallel on cfg.threads workers; rows are emitted in (seed, size,
// algorithm) order regardless of scheduling.
inline ExperimentResult run_fidelity_curve(const TaskPreset& task, const CurveConfig& cfg) {
  std::vector<std::vector<ExperimentRow>> per_seed(cfg.n_seeds);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t s; (s = next.fetch_add(1)) < cfg.n_seeds;)
      per_seed[s] = detail::run_replicate(task, s, cfg);
  };
  const std::size_t threads = std::clamp<std::size_t>(cfg.threads, 1, std::max<std::size_t>(cfg.n_seeds, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  ExperimentResult out;
  for (auto& rows : per_seed)
    for (auto& r : rows) out.append(std::move(r));
  return out;
}

}  // namespace treex
