#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "treex/extract.hpp"
#include "treex/oracle.hpp"
#include "treex/synthetic.hpp"

using namespace treex;

namespace {

class FnBlackbox final : public Blackbox {
 public:
  FnBlackbox(std::size_t d, int m, std::function<Label(std::span<const double>)> fn)
      : d_(d), m_(m), fn_(std::move(fn)) {}
  Label predict(std::span<const double> x) const override { return fn_(x); }
  std::size_t dim() const override { return d_; }
  int classes() const override { return m_; }

 private:
  std::size_t d_;
  int m_;
  std::function<Label(std::span<const double>)> fn_;
};

GaussianMixture standard_normal(std::size_t d) {
  GaussianMixture g;
  g.d = d;
  g.weights = {1.0};
  g.means.assign(d, 0.0);
  g.stddevs.assign(d, 1.0);
  return g;
}

// Independent Gini gain: explicit partition, counts, and the textbook formula.
double brute_gain(const LabeledSample& s, double mass, std::size_t dim, double t, int m) {
  std::map<int, double> all, left, right;
  double nl = 0, nr = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    all[s.labels[k]] += 1;
    if (s.point(k)[dim] <= t) {
      left[s.labels[k]] += 1;
      nl += 1;
    } else {
      right[s.labels[k]] += 1;
      nr += 1;
    }
  }
  (void)m;
  if (nl == 0 || nr == 0) return 0.0;
  auto gini = [](const std::map<int, double>& c, double n) {
    double g = 1.0;
    for (const auto& [y, v] : c) g -= (v / n) * (v / n);
    return g;
  };
  const double n = nl + nr;
  return mass * gini(all, n) - mass * (nl / n) * gini(left, nl) - mass * (nr / n) * gini(right, nr);
}

LabeledSample random_sample(Rng& rng, std::size_t n, std::size_t d, int m, bool discrete) {
  LabeledSample s(d);
  std::vector<double> x(d);
  for (std::size_t k = 0; k < n; ++k) {
    for (auto& v : x) v = discrete ? double(rng.below(4)) : rng.normal();
    s.push(x, Label(rng.below(std::size_t(m))));
  }
  return s;
}

bool same_structure(const DecisionTree& a, NodeId ia, const DecisionTree& b, NodeId ib,
                    double tol) {
  const auto& na = a.node(ia);
  const auto& nb = b.node(ib);
  if (na.is_leaf() != nb.is_leaf()) return false;
  if (na.is_leaf()) return na.stats.label == nb.stats.label;
  if (na.split->dim != nb.split->dim) return false;
  if (std::abs(na.split->threshold - nb.split->threshold) > tol) return false;
  return same_structure(a, na.split->left, b, nb.split->left, tol) &&
         same_structure(a, na.split->right, b, nb.split->right, tol);
}

}  // namespace

TEST(Gini, Examples) {
  EXPECT_EQ(gini_term(std::vector<double>{1.0, 0.0}, 0.7), 0.0);
  EXPECT_DOUBLE_EQ(gini_term(std::vector<double>{0.5, 0.5}, 1.0), 0.5);
  EXPECT_NEAR(gini_term(std::vector<double>{0.3, 0.7}, 0.4), 0.168, 1e-15);
  EXPECT_EQ(gini_term(std::vector<double>{0.0, 0.0}, 0.0), 0.0);
}

TEST(EstimateSplit, PureNodeHasZeroGain) {
  Rng rng(1);
  LabeledSample s(2);
  for (int k = 0; k < 50; ++k) s.push(std::vector<double>{rng.normal(), rng.normal()}, 1);
  for (double t : {-1.0, 0.0, 0.7}) EXPECT_EQ(estimate_split(s, 1.0, 0, t, 2), 0.0);
}

TEST(EstimateSplit, PerfectSplitRemovesAllImpurity) {
  LabeledSample s(1);
  for (int k = 0; k < 100; ++k) {
    const double x = (k < 50 ? -1.0 : 1.0) * (1 + k % 7);
    s.push(std::vector<double>{x}, x <= 0 ? 1 : 0);
  }
  EXPECT_NEAR(estimate_split(s, 0.6, 0, 0.0, 2), 0.6 * 0.5, 1e-15);
}

TEST(EstimateSplit, EmptySampleAndEmptySide) {
  LabeledSample s(1);
  EXPECT_EQ(estimate_split(s, 1.0, 0, 0.0, 2), 0.0);
  s.push(std::vector<double>{1.0}, 0);
  s.push(std::vector<double>{2.0}, 1);
  EXPECT_EQ(estimate_split(s, 1.0, 0, 5.0, 2), 0.0);
}

TEST(EstimateSplit, MatchesBruteForceGini) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + int(rng.below(3));
    const auto s = random_sample(rng, 50, 2, m, trial % 3 == 0);
    const double mass = rng.uniform();
    for (int k = 0; k < 5; ++k) {
      const std::size_t dim = rng.below(2);
      const double t = s.point(rng.below(50))[dim];
      EXPECT_NEAR(estimate_split(s, mass, dim, t, m), brute_gain(s, mass, dim, t, m), 1e-12);
    }
  }
}

TEST(BestSplitOn, IsEmpiricalArgmaxOverMidpoints) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + int(rng.below(2));
    const auto s = random_sample(rng, 40, 3, m, trial % 2 == 0);
    auto c = best_split_on(s, 1.0, m);
    double best = 0.0;
    for (std::size_t dim = 0; dim < 3; ++dim) {
      std::vector<double> v;
      for (std::size_t k = 0; k < s.size(); ++k) v.push_back(s.point(k)[dim]);
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      for (std::size_t k = 0; k + 1 < v.size(); ++k)
        best = std::max(best, brute_gain(s, 1.0, dim, 0.5 * (v[k] + v[k + 1]), m));
    }
    if (best <= 0.0) {
      EXPECT_FALSE(c);
      continue;
    }
    ASSERT_TRUE(c);
    EXPECT_NEAR(c->gain, best, 1e-12);
    EXPECT_NEAR(brute_gain(s, 1.0, c->dim, c->threshold, m), c->gain, 1e-12);
    // Threshold lies strictly between two observed values.
    bool below = false, above = false;
    for (std::size_t k = 0; k < s.size(); ++k) {
      below |= s.point(k)[c->dim] <= c->threshold;
      above |= s.point(k)[c->dim] > c->threshold;
      EXPECT_NE(s.point(k)[c->dim], c->threshold);
    }
    EXPECT_TRUE(below && above);
  }
}

TEST(BestSplitOn, TiesGoToLowestDimThenSmallestThreshold) {
  // Columns 0 and 1 identical; labels give two equally good thresholds on each.
  LabeledSample s(2);
  const double xs[] = {0, 1, 2, 3, 4, 5};
  const Label ys[] = {0, 1, 1, 1, 1, 0};
  for (int k = 0; k < 6; ++k) s.push(std::vector<double>{xs[k], xs[k]}, ys[k]);
  auto c = best_split_on(s, 1.0, 2);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->dim, 0u);
  EXPECT_DOUBLE_EQ(c->threshold, 0.5);
}

TEST(BestSplitOn, MinGainSuppressesWeakSplits) {
  Rng rng(4);
  const auto s = random_sample(rng, 60, 2, 2, false);
  auto c = best_split_on(s, 1.0, 2);
  ASSERT_TRUE(c);
  SplitSearch strict;
  strict.min_gain = c->gain;
  EXPECT_FALSE(best_split_on(s, 1.0, 2, strict));
}

TEST(BestSplitOn, QuantileStrategyStaysClose) {
  Rng rng(5);
  LabeledSample s(1);
  for (int k = 0; k < 5000; ++k) {
    const double x = rng.normal();
    s.push(std::vector<double>{x}, x <= 0.3 ? 1 : 0);
  }
  SplitSearch q;
  q.strategy = ThresholdStrategy::Quantiles;
  q.quantiles = 64;
  auto exact = best_split_on(s, 1.0, 2);
  auto coarse = best_split_on(s, 1.0, 2, q);
  ASSERT_TRUE(exact && coarse);
  EXPECT_NEAR(exact->threshold, 0.3, 0.01);
  EXPECT_NEAR(coarse->threshold, 0.3, 0.05);
  EXPECT_LE(coarse->gain, exact->gain + 1e-15);
}

TEST(BestSplit, ConstantFunctionHasNoSplit) {
  FnBlackbox f(2, 2, [](auto) { return 1; });
  Rng rng(6);
  EXPECT_FALSE(best_split(standard_normal(2), BoxConstraint::unconstrained(2), f, 500, rng));
}

TEST(BestSplit, FindsThresholdAtZero) {
  FnBlackbox f(1, 2, [](auto x) { return x[0] <= 0 ? 1 : 0; });
  Rng rng(7);
  auto c = best_split(standard_normal(1), BoxConstraint::unconstrained(1), f, 10000, rng);
  ASSERT_TRUE(c);
  EXPECT_LE(std::abs(c->threshold), 0.05);
  EXPECT_EQ(c->left_label, 1);
  EXPECT_EQ(c->right_label, 0);
  EXPECT_NEAR(c->gain, 0.5, 0.01);
}

TEST(BestSplit, PicksInformativeDimension) {
  FnBlackbox f(2, 2, [](auto x) { return x[0] <= 0.4 ? 0 : 1; });
  int hits = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    auto c = best_split(standard_normal(2), BoxConstraint::unconstrained(2), f, 1000, rng);
    hits += c && c->dim == 0;
  }
  EXPECT_GE(hits, 19);
}

TEST(BestSplit, EmptyRegionGivesNone) {
  FnBlackbox f(1, 2, [](auto x) { return x[0] <= 0 ? 1 : 0; });
  Rng rng(8);
  EXPECT_FALSE(best_split(standard_normal(1), BoxConstraint{{50.0}, {kInf}}, f, 100, rng));
}

TEST(ActiveSampler, DrawsInsideTheBox) {
  FnBlackbox f(2, 2, [](auto x) { return x[1] > 0 ? 1 : 0; });
  Rng rng(9);
  const auto g = standard_normal(2);
  ActiveSampler sampler(g, f, 5000, rng);
  const BoxConstraint box{{0.5, -kInf}, {1.0, -0.2}};
  auto d = sampler.draw(box);
  ASSERT_TRUE(d);
  for (std::size_t k = 0; k < d->sample.size(); ++k) ASSERT_TRUE(box.contains(d->sample.point(k)));
  EXPECT_NEAR(d->mass, (normal_cdf(1.0) - normal_cdf(0.5)) * normal_cdf(-0.2), 1e-15);
}

TEST(Extract, ConstantFunctionGivesSingleLeaf) {
  FnBlackbox f(3, 3, [](auto) { return 2; });
  ExtractionConfig cfg;
  auto r = extract_tree(standard_normal(3), f, cfg);
  EXPECT_EQ(r.tree.size(), 1u);
  EXPECT_EQ(r.tree.predict(std::vector<double>{0, 0, 0}), 2);
}

TEST(Extract, RespectsSizeAndBudgetAccounting) {
  auto p = make_oracle_problem();
  for (std::size_t k : {1u, 2u, 3u, 4u, 7u, 15u}) {
    ExtractionConfig cfg;
    cfg.max_nodes = k;
    cfg.samples_per_node = 300;
    cfg.seed = k;
    auto r = extract_tree(p.gmm, *p.f, cfg);
    EXPECT_LE(r.tree.size(), k);
    EXPECT_EQ(r.tree.size() % 2, 1u);
    std::size_t logged = 0;
    for (const auto& rec : r.sample_log) logged += rec.samples;
    EXPECT_EQ(r.blackbox_calls, logged);
    EXPECT_LE(r.blackbox_calls, 2 * cfg.samples_per_node * (r.expansions + r.estimations));
  }
}

TEST(Extract, DeterministicGivenSeed) {
  auto p = make_oracle_problem();
  ExtractionConfig cfg;
  cfg.seed = 99;
  auto a = extract_tree(p.gmm, *p.f, cfg);
  auto b = extract_tree(p.gmm, *p.f, cfg);
  EXPECT_EQ(a.tree, b.tree);
  EXPECT_EQ(a.blackbox_calls, b.blackbox_calls);
}

TEST(Extract, FrontierPicksHighestGainLeafFirst) {
  // After the root split, the right side carries all remaining impurity.
  FnBlackbox f(1, 3, [](auto x) { return x[0] <= -1 ? 0 : (x[0] <= 1 ? 1 : 2); });
  ExtractionConfig cfg;
  cfg.max_nodes = 5;
  cfg.samples_per_node = 5000;
  auto r = extract_tree(standard_normal(1), f, cfg);
  EXPECT_EQ(r.tree.size(), 5u);
  for (double x : {-2.0, 0.0, 2.0}) EXPECT_EQ(r.tree.predict(std::vector<double>{x}), f.predict(std::vector<double>{x}));
}

TEST(Extract, MatchesExactGreedyTreeStructure) {
  const auto p = make_oracle_problem();
  const auto oracle = ExactGreedyOracle(p.gmm, *p.f).build(p.max_nodes);
  int same = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    ExtractionConfig cfg;
    cfg.max_nodes = 7;
    cfg.samples_per_node = 10000;
    cfg.seed = s;
    auto r = extract_tree(p.gmm, *p.f, cfg);
    same += same_structure(r.tree, r.tree.root(), oracle.tree, oracle.tree.root(), 0.05);
  }
  EXPECT_GE(same, 18);
}

TEST(Extract, GainEstimatesWithinFourStandardErrors) {
  // Delta-method SE of the empirical gain at the oracle's root split.
  const auto p = make_oracle_problem();
  ExactGreedyOracle oracle(p.gmm, *p.f);
  const auto root = BoxConstraint::unconstrained(2);
  const auto split = oracle.best_split(root);
  ASSERT_TRUE(split);
  const double exact = split->gain;
  int inside = 0, trials = 0;
  const auto cm = condition(p.gmm, root);
  for (std::size_t n : {100u, 1000u, 10000u}) {
    for (int t = 0; t < 67; ++t, ++trials) {
      Rng rng(1000 * n + t);
      std::vector<double> cell(6, 0.0);  // side * 3 + class
      std::vector<double> x(2);
      for (std::size_t k = 0; k < n; ++k) {
        cm.sample_into(rng, x);
        cell[(x[split->dim] <= split->threshold ? 0 : 3) + p.f->predict(x)] += 1.0 / double(n);
      }
      const double fl = cell[0] + cell[1] + cell[2], fr = 1.0 - fl;
      double est = 0;
      for (int y = 0; y < 3; ++y) {
        if (fl > 0) est += cell[y] * cell[y] / fl;
        if (fr > 0) est += cell[3 + y] * cell[3 + y] / fr;
        est -= std::pow(cell[y] + cell[3 + y], 2);
      }
      std::vector<double> grad(6);
      double sl = 0, sr = 0;
      for (int y = 0; y < 3; ++y) {
        sl += cell[y] * cell[y];
        sr += cell[3 + y] * cell[3 + y];
      }
      for (int y = 0; y < 3; ++y) {
        const double tot = cell[y] + cell[3 + y];
        grad[y] = (fl > 0 ? 2 * cell[y] / fl - sl / (fl * fl) : 0) - 2 * tot;
        grad[3 + y] = (fr > 0 ? 2 * cell[3 + y] / fr - sr / (fr * fr) : 0) - 2 * tot;
      }
      double mean = 0, sq = 0;
      for (int c = 0; c < 6; ++c) {
        mean += cell[c] * grad[c];
        sq += cell[c] * grad[c] * grad[c];
      }
      const double se = std::sqrt(std::max(sq - mean * mean, 0.0) / double(n));
      inside += std::abs(est - exact) <= 4 * se;
    }
  }
  EXPECT_GE(double(inside) / trials, 0.95);
}

TEST(Extract, BlackboxFailureCarriesContext) {
  FnBlackbox f(1, 2, [](auto x) -> Label {
    if (x[0] > 1.5) throw std::runtime_error("model crashed");
    return x[0] <= 0 ? 0 : 1;
  });
  ExtractionConfig cfg;
  cfg.samples_per_node = 2000;
  try {
    extract_tree(standard_normal(1), f, cfg);
    FAIL() << "expected BlackboxError";
  } catch (const BlackboxError& e) {
    EXPECT_NE(std::string(e.what()).find("node 0"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("model crashed"), std::string::npos);
  }
}

TEST(Extract, ConfigValidation) {
  FnBlackbox f(1, 2, [](auto) { return 0; });
  ExtractionConfig cfg;
  cfg.samples_per_node = 1;
  EXPECT_THROW(extract_tree(standard_normal(1), f, cfg), ConfigError);
  cfg = {};
  cfg.max_nodes = 0;
  EXPECT_THROW(extract_tree(standard_normal(1), f, cfg), ConfigError);
  FnBlackbox wrong(2, 2, [](auto) { return 0; });
  EXPECT_THROW(extract_tree(standard_normal(1), wrong, ExtractionConfig{}), InputError);
}

TEST(Prune, ZeroAlphaKeepsTree) {
  auto p = make_oracle_problem();
  ExtractionConfig cfg;
  cfg.samples_per_node = 500;
  auto r = extract_tree(p.gmm, *p.f, cfg);
  Rng rng(1);
  std::vector<double> alphas{0.0};
  EXPECT_EQ(prune(r.tree, p.gmm, *p.f, 1000, alphas, rng).size(), r.tree.size());
}

TEST(Prune, HugeAlphaGivesRootLeaf) {
  auto p = make_oracle_problem();
  ExtractionConfig cfg;
  cfg.samples_per_node = 500;
  auto r = extract_tree(p.gmm, *p.f, cfg);
  Rng rng(2);
  std::vector<double> alphas{1e6};
  auto t = prune(r.tree, p.gmm, *p.f, 1000, alphas, rng);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.node(t.root()).stats.label, r.tree.node(r.tree.root()).stats.label);
}

TEST(Prune, CollapsesSameLabelSubtree) {
  // x0 <= 0 -> (x1 <= 0 ? 1 : 1), else 0: the left subtree is redundant.
  auto leaf = [](Label y) {
    NodeStats s;
    s.label = y;
    s.class_histogram = {y == 0 ? 1.0 : 0.0, y == 1 ? 1.0 : 0.0};
    return s;
  };
  auto t = DecisionTree::single_leaf(2, 2, leaf(1));
  auto [l, r] = t.split_leaf(0, 0, 0.0, leaf(1), leaf(0));
  t.split_leaf(l, 1, 0.0, leaf(1), leaf(1));
  FnBlackbox f(2, 2, [](auto x) { return x[0] <= 0 ? 1 : 0; });
  Rng rng(3);
  std::vector<double> alphas{1e-3};
  auto pruned = prune(t, standard_normal(2), f, 2000, alphas, rng);
  EXPECT_EQ(pruned.size(), 3u);
  EXPECT_EQ(pruned.predict(std::vector<double>{-1, -1}), 1);
  EXPECT_EQ(pruned.predict(std::vector<double>{1, -1}), 0);
}

TEST(Prune, ExtractWithPruneNeverGrows) {
  auto p = make_oracle_problem();
  ExtractionConfig cfg;
  cfg.max_nodes = 15;
  cfg.samples_per_node = 300;
  auto plain = extract_tree(p.gmm, *p.f, cfg);
  cfg.prune = true;
  auto pruned = extract_tree(p.gmm, *p.f, cfg);
  EXPECT_LE(pruned.tree.size(), plain.tree.size());
  EXPECT_NO_THROW(pruned.tree.validate());
}
