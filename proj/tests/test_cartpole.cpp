#include <gtest/gtest.h>

#include "treex/cartpole.hpp"

using namespace treex;

namespace {

PolicyConfig small_config() {
  PolicyConfig cfg;
  cfg.grid = {6, 6, 6, 6};
  cfg.n_transition_samples = 200'000;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(CartPole, OneStepFromRest) {
  CartPoleSystem sys;
  auto r = cartpole_step(sys, {0, 0, 0, 0}, kRight);
  // Frozen from the equations of motion: x_acc = 9.7561, theta_acc = -14.6341.
  EXPECT_EQ(r.state[0], 0.0);
  EXPECT_NEAR(r.state[1], 0.195122, 1e-6);
  EXPECT_EQ(r.state[2], 0.0);
  EXPECT_NEAR(r.state[3], -0.292683, 1e-6);
  EXPECT_FALSE(r.terminal);
}

TEST(CartPole, MirrorSymmetry) {
  CartPoleSystem sys;
  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    CartPoleState s;
    for (auto& v : s) v = rng.uniform(-0.2, 0.2);
    const auto a = cartpole_step(sys, s, kRight);
    const auto b = cartpole_step(sys, {-s[0], -s[1], -s[2], -s[3]}, kLeft);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(a.state[i], -b.state[i], 1e-12);
  }
}

TEST(CartPole, TerminalBeyondLimits) {
  CartPoleSystem sys;
  EXPECT_TRUE(cartpole_terminal(sys, {2.41, 0, 0, 0}));
  EXPECT_FALSE(cartpole_terminal(sys, {2.4, 0, 0, 0}));
  EXPECT_TRUE(cartpole_terminal(sys, {0, 0, -0.21, 0}));
  EXPECT_FALSE(cartpole_terminal(sys, {0, 0, 0.2, 5.0}));
}

TEST(GridAxis, ClampsToEdgeBins) {
  GridAxis a{-1.0, 1.0, 4};
  EXPECT_EQ(a.index(-5.0), 0u);
  EXPECT_EQ(a.index(-0.75), 0u);
  EXPECT_EQ(a.index(-0.5), 1u);
  EXPECT_EQ(a.index(0.99), 3u);
  EXPECT_EQ(a.index(7.0), 3u);
  EXPECT_EQ(a.index(std::nan("")), 0u);
  EXPECT_DOUBLE_EQ(a.edge(2), 0.0);
}

TEST(Policy, ValueIterationResidualContracts) {
  PolicyReport rep;
  auto cfg = small_config();
  learn_policy(CartPoleSystem{}, cfg, &rep);
  ASSERT_GT(rep.residuals.size(), 2u);
  for (std::size_t k = 1; k < rep.residuals.size(); ++k)
    EXPECT_LE(rep.residuals[k], cfg.discount * rep.residuals[k - 1] + 1e-12);
  EXPECT_LT(rep.residuals.back(), cfg.vi_tol);
}

TEST(Policy, DeterministicGivenSeed) {
  auto cfg = small_config();
  EXPECT_EQ(learn_policy(CartPoleSystem{}, cfg), learn_policy(CartPoleSystem{}, cfg));
}

TEST(Policy, DefaultConfigBalancesThePole) {
  const CartPoleSystem sys;
  auto policy = learn_policy(sys, PolicyConfig{});
  EXPECT_GE(mean_rollout_reward(policy, sys, 100, 7), 195.0);
}

TEST(Policy, ConfigValidation) {
  auto cfg = small_config();
  cfg.discount = 1.0;
  EXPECT_THROW(learn_policy(CartPoleSystem{}, cfg), ConfigError);
  cfg = small_config();
  cfg.grid[2] = 0;
  EXPECT_THROW(learn_policy(CartPoleSystem{}, cfg), ConfigError);
}

TEST(Policy, TabularLookupUsesCells) {
  std::array<GridAxis, 4> axes{GridAxis{-1, 1, 2}, GridAxis{-1, 1, 1}, GridAxis{-1, 1, 1},
                               GridAxis{-1, 1, 1}};
  TabularPolicy p(axes, {kLeft, kRight});
  EXPECT_EQ(p.cell_count(), 2u);
  EXPECT_EQ(p.predict(std::vector<double>{-0.5, 0, 0, 0}), kLeft);
  EXPECT_EQ(p.predict(std::vector<double>{0.5, 0, 0, 0}), kRight);
}

TEST(Rollout, ConstantPolicyFallsQuickly) {
  std::array<GridAxis, 4> axes{GridAxis{-1, 1, 1}, GridAxis{-1, 1, 1}, GridAxis{-1, 1, 1},
                               GridAxis{-1, 1, 1}};
  TabularPolicy push_right(axes, {kRight});
  const CartPoleSystem sys;
  const double r = mean_rollout_reward(push_right, sys, 20, 1);
  EXPECT_GE(r, 1.0);
  EXPECT_LT(r, 50.0);
}

TEST(Collect, StatesAreLabeledAndLive) {
  const CartPoleSystem sys;
  auto policy = learn_policy(sys, small_config());
  auto ds = collect_states(policy, sys, 300, 11);
  ASSERT_EQ(ds.n, 300u);
  EXPECT_NO_THROW(ds.validate());
  for (std::size_t r = 0; r < ds.n; ++r) {
    CartPoleState s{ds.row(r)[0], ds.row(r)[1], ds.row(r)[2], ds.row(r)[3]};
    EXPECT_FALSE(cartpole_terminal(sys, s));
    EXPECT_EQ((*ds.labels)[r], policy.predict(s));
  }
  auto again = collect_states(policy, sys, 300, 11);
  EXPECT_EQ(ds.features, again.features);
  EXPECT_NE(ds.features, collect_states(policy, sys, 300, 12).features);
  EXPECT_THROW(collect_states(policy, sys, 0, 1), InputError);
}
