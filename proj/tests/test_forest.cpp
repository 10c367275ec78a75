#include <gtest/gtest.h>

#include "treex/forest.hpp"

using namespace treex;

namespace {

// Two overlapping Gaussian clouds with a minority class.
Dataset clouds(std::size_t n, double minority, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.n = n;
  ds.d = 3;
  ds.m = 2;
  std::vector<Label> y(n);
  for (std::size_t k = 0; k < n; ++k) {
    y[k] = rng.uniform() < minority ? 1 : 0;
    for (std::size_t i = 0; i < 3; ++i) ds.features.push_back(rng.normal() + (y[k] && i == 0 ? 1.5 : 0.0));
  }
  ds.labels = y;
  return ds;
}

double accuracy(const RandomForest& f, const Dataset& ds) {
  std::size_t hit = 0;
  for (std::size_t r = 0; r < ds.n; ++r) hit += f.predict(ds.row(r)) == (*ds.labels)[r];
  return double(hit) / double(ds.n);
}

}  // namespace

TEST(Forest, SeparableDataIsFitExactly) {
  Dataset ds;
  ds.n = 200;
  ds.d = 2;
  ds.m = 2;
  std::vector<Label> y;
  Rng rng(1);
  for (std::size_t k = 0; k < ds.n; ++k) {
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
    ds.features.insert(ds.features.end(), {a, b});
    y.push_back(a + b > 0 ? 1 : 0);
  }
  ds.labels = y;
  ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.max_depth = 12;
  auto f = train_random_forest(ds, cfg);
  EXPECT_GE(accuracy(f, ds), 0.99);
}

TEST(Forest, DeterministicGivenSeed) {
  auto ds = clouds(300, 0.3, 2);
  ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.seed = 9;
  auto a = train_random_forest(ds, cfg), b = train_random_forest(ds, cfg);
  EXPECT_EQ(a.trees(), b.trees());
  cfg.seed = 10;
  EXPECT_NE(a.trees(), train_random_forest(ds, cfg).trees());
}

TEST(Forest, DepthLimitHolds) {
  auto ds = clouds(500, 0.4, 3);
  ForestConfig cfg;
  cfg.n_trees = 8;
  cfg.max_depth = 3;
  const auto f = train_random_forest(ds, cfg);
  for (const auto& t : f.trees()) {
    const auto d = t.depths();
    for (NodeId id : t.reachable()) EXPECT_LE(d[id], 3u);
  }
}

TEST(Forest, BalancingEqualizesBootstrapClasses) {
  auto ds = clouds(2000, 0.1, 4);
  ForestConfig cfg;
  cfg.n_trees = 20;
  auto plain = train_random_forest(ds, cfg);
  EXPECT_NEAR(plain.bootstrap_class_share[1], 0.1, 0.03);
  cfg.balance = true;
  auto bal = train_random_forest(ds, cfg);
  EXPECT_NEAR(bal.bootstrap_class_share[1], 0.5, 0.02);
}

TEST(Forest, BalancingRaisesMinorityRecall) {
  auto ds = clouds(2000, 0.1, 5);
  ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.max_depth = 4;
  auto recall = [&](const RandomForest& f) {
    double tp = 0, pos = 0;
    for (std::size_t r = 0; r < ds.n; ++r)
      if ((*ds.labels)[r] == 1) {
        pos += 1;
        tp += f.predict(ds.row(r)) == 1;
      }
    return tp / pos;
  };
  const double plain = recall(train_random_forest(ds, cfg));
  cfg.balance = true;
  EXPECT_GT(recall(train_random_forest(ds, cfg)), plain);
}

TEST(Forest, VoteTiesGoToLowerClass) {
  NodeStats zero, one;
  zero.label = 0;
  zero.class_histogram = {1, 0};
  one.label = 1;
  one.class_histogram = {0, 1};
  RandomForest f(1, 2, {DecisionTree::single_leaf(1, 2, one), DecisionTree::single_leaf(1, 2, zero)});
  EXPECT_EQ(f.predict(std::vector<double>{0.0}), 0);
  EXPECT_THROW(f.predict(std::vector<double>{0.0, 1.0}), InputError);
}

TEST(Forest, SingleClassDataIsConstant) {
  auto ds = clouds(50, 0.0, 6);
  std::vector<std::string> seen;
  auto saved = warning_sink();
  warning_sink() = [&](std::string_view s) { seen.emplace_back(s); };
  auto f = train_random_forest(ds, ForestConfig{});
  warning_sink() = saved;
  EXPECT_EQ(f.trees().size(), 1u);
  EXPECT_EQ(f.predict(std::vector<double>{9, 9, 9}), 0);
  EXPECT_EQ(seen.size(), 1u);
}

TEST(Forest, ConfigAndInputValidation) {
  auto ds = clouds(50, 0.5, 7);
  ForestConfig cfg;
  cfg.n_trees = 0;
  EXPECT_THROW(train_random_forest(ds, cfg), ConfigError);
  ds.labels.reset();
  EXPECT_THROW(train_random_forest(ds, ForestConfig{}), InputError);
}
