#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "treex/blackbox.hpp"
#include "treex/core.hpp"
#include "treex/gmm.hpp"
#include "treex/rng.hpp"

namespace treex {

// Classic cart-pole constants (SI units, Euler integration).
struct CartPoleSystem {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force = 10.0;
  double dt = 0.02;
  double theta_limit = 12.0 * std::numbers::pi / 180.0;
  double x_limit = 2.4;
  std::size_t max_steps = 200;
  double init_spread = 0.05;
};

// (cart position, cart velocity, pole angle, pole angular velocity)
using CartPoleState = std::array<double, 4>;

enum CartPoleAction : Label { kLeft = 0, kRight = 1 };

struct CartPoleStep {
  CartPoleState state;
  bool terminal = false;
};

inline bool cartpole_terminal(const CartPoleSystem& sys, const CartPoleState& s) {
  return std::abs(s[0]) > sys.x_limit || std::abs(s[2]) > sys.theta_limit;
}

inline CartPoleStep cartpole_step(const CartPoleSystem& sys, const CartPoleState& s, Label action) {
  const double f = action == kRight ? sys.force : -sys.force;
  const double total = sys.cart_mass + sys.pole_mass;
  const double pml = sys.pole_mass * sys.half_length;
  const double sin_t = std::sin(s[2]), cos_t = std::cos(s[2]);
  const double temp = (f + pml * s[3] * s[3] * sin_t) / total;
  const double theta_acc = (sys.gravity * sin_t - cos_t * temp) /
                           (sys.half_length * (4.0 / 3.0 - sys.pole_mass * cos_t * cos_t / total));
  const double x_acc = temp - pml * theta_acc * cos_t / total;
  CartPoleStep out;
  out.state = {s[0] + sys.dt * s[1], s[1] + sys.dt * x_acc, s[2] + sys.dt * s[3],
               s[3] + sys.dt * theta_acc};
  out.terminal = cartpole_terminal(sys, out.state);
  return out;
}

// Uniform grid over [lo, hi]; values outside clamp to the edge bins.
struct GridAxis {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t bins = 1;

  std::size_t index(double v) const {
    const double u = (v - lo) / (hi - lo) * double(bins);
    if (!(u > 0.0)) return 0;
    return std::min(bins - 1, static_cast<std::size_t>(u));
  }
  double edge(std::size_t k) const { return lo + (hi - lo) * double(k) / double(bins); }

  friend bool operator==(const GridAxis&, const GridAxis&) = default;
};

// Lookup-table policy over a 4-d grid of cells.
class TabularPolicy final : public Blackbox {
 public:
  TabularPolicy() = default;
  TabularPolicy(std::array<GridAxis, 4> axes, std::vector<Label> actions)
      : axes_(axes), actions_(std::move(actions)) {
    if (actions_.size() != cell_count()) throw InputError("policy table has wrong size");
    for (Label a : actions_)
      if (a != kLeft && a != kRight) throw InputError("policy action outside {left, right}");
  }

  std::size_t cell_count() const {
    std::size_t c = 1;
    for (const auto& a : axes_) c *= a.bins;
    return c;
  }

  std::size_t cell(std::span<const double> x) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < 4; ++i) c = c * axes_[i].bins + axes_[i].index(x[i]);
    return c;
  }

  Label predict(std::span<const double> x) const override {
    if (x.size() != 4) throw InputError("cart-pole policy: expected 4 features");
    return actions_[cell(x)];
  }
  std::size_t dim() const override { return 4; }
  int classes() const override { return 2; }

  const std::array<GridAxis, 4>& axes() const { return axes_; }
  const std::vector<Label>& actions() const { return actions_; }

  friend bool operator==(const TabularPolicy& a, const TabularPolicy& b) {
    return a.axes_ == b.axes_ && a.actions_ == b.actions_;
  }

 private:
  std::array<GridAxis, 4> axes_{};
  std::vector<Label> actions_;
};

struct PolicyConfig {
  std::array<std::size_t, 4> grid{10, 10, 10, 10};
  // Half-widths of the discretized ranges: x [m], x_dot [m/s], theta [rad], theta_dot [rad/s].
  std::array<double, 4> half_range{2.4, 2.0, 12.0 * std::numbers::pi / 180.0, 2.0};
  // Total simulated transitions, spread uniformly over (cell, action) pairs.
  std::size_t n_transition_samples = 2'000'000;
  double discount = 0.99;
  double vi_tol = 1e-6;
  std::size_t max_sweeps = 100'000;
  std::uint64_t seed = 0;
};

struct PolicyReport {
  std::vector<double> residuals;
  std::size_t unvisited_pairs = 0;
};

// Estimates a discretized MDP from random transitions and solves it by value
// iteration. Reward is +1 per transition into a non-terminal state.
inline TabularPolicy learn_policy(const CartPoleSystem& sys, const PolicyConfig& cfg,
                                  PolicyReport* report = nullptr) {
  std::array<GridAxis, 4> axes;
  for (std::size_t i = 0; i < 4; ++i) {
    if (cfg.grid[i] == 0) throw ConfigError("policy grid sizes must be positive");
    axes[i] = {-cfg.half_range[i], cfg.half_range[i], cfg.grid[i]};
  }
  if (axes[0].hi < sys.x_limit || axes[2].hi < sys.theta_limit)
    throw ConfigError("policy grid must cover the termination bounds");
  if (!(cfg.discount > 0.0 && cfg.discount < 1.0)) throw ConfigError("discount must be in (0, 1)");

  TabularPolicy shape(axes, std::vector<Label>(
                                [&] {
                                  std::size_t c = 1;
                                  for (auto g : cfg.grid) c *= g;
                                  return c;
                                }(),
                                kLeft));
  const std::size_t cells = shape.cell_count();
  const std::size_t pairs = cells * 2;

  // Raw transition records (pair, next cell or `cells` for terminal), then
  // aggregated into sparse rows.
  Rng rng(cfg.seed);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> records;
  records.reserve(cfg.n_transition_samples);
  for (std::size_t k = 0; k < cfg.n_transition_samples; ++k) {
    const std::size_t pair = rng.below(pairs);
    std::size_t c = pair / 2;
    const Label a = static_cast<Label>(pair % 2);
    CartPoleState s;
    for (std::size_t i = 4; i-- > 0;) {
      const std::size_t idx = c % axes[i].bins;
      c /= axes[i].bins;
      s[i] = rng.uniform(axes[i].edge(idx), axes[i].edge(idx + 1));
    }
    const auto step = cartpole_step(sys, s, a);
    const std::size_t next = step.terminal ? cells : shape.cell(step.state);
    records.emplace_back(static_cast<std::uint32_t>(pair), static_cast<std::uint32_t>(next));
  }
  std::sort(records.begin(), records.end());

  std::vector<std::size_t> row_start(pairs + 1, 0);
  std::vector<std::uint32_t> next_cell;
  std::vector<double> prob;
  std::vector<std::size_t> visits(pairs, 0);
  for (const auto& r : records) ++visits[r.first];
  for (std::size_t k = 0; k < records.size();) {
    std::size_t j = k;
    while (j < records.size() && records[j] == records[k]) ++j;
    const auto [pair, next] = records[k];
    if (next != cells) {
      next_cell.push_back(next);
      prob.push_back(double(j - k) / double(visits[pair]));
      ++row_start[pair + 1];
    }
    k = j;
  }
  for (std::size_t p = 0; p < pairs; ++p) row_start[p + 1] += row_start[p];
  const std::size_t unvisited = std::count(visits.begin(), visits.end(), std::size_t{0});

  auto q_value = [&](std::size_t pair, const std::vector<double>& v) {
    double q = 0.0;
    for (std::size_t e = row_start[pair]; e < row_start[pair + 1]; ++e)
      q += prob[e] * (1.0 + cfg.discount * v[next_cell[e]]);
    return q;
  };

  std::vector<double> value(cells, 0.0), next_value(cells, 0.0);
  std::vector<double> residuals;
  for (std::size_t sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    double residual = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
      next_value[c] = std::max(q_value(2 * c, value), q_value(2 * c + 1, value));
      residual = std::max(residual, std::abs(next_value[c] - value[c]));
    }
    value.swap(next_value);
    residuals.push_back(residual);
    if (residual < cfg.vi_tol) break;
  }

  std::vector<Label> actions(cells, kLeft);
  for (std::size_t c = 0; c < cells; ++c)
    actions[c] = q_value(2 * c + 1, value) > q_value(2 * c, value) ? kRight : kLeft;
  if (report) {
    report->residuals = std::move(residuals);
    report->unvisited_pairs = unvisited;
  }
  if (unvisited > 0)
    warn("learn_policy: " + std::to_string(unvisited) + " unvisited (cell, action) pairs");
  return TabularPolicy(axes, std::move(actions));
}

inline CartPoleState random_initial_state(const CartPoleSystem& sys, Rng& rng) {
  CartPoleState s;
  for (auto& v : s) v = rng.uniform(-sys.init_spread, sys.init_spread);
  return s;
}

// Steps survived (reward +1 per step) from `start`, capped at sys.max_steps.
inline double rollout_reward(const Blackbox& policy, const CartPoleSystem& sys,
                             CartPoleState start) {
  CartPoleState s = start;
  std::size_t steps = 0;
  while (steps < sys.max_steps) {
    const auto r = cartpole_step(sys, s, policy.predict(s));
    ++steps;
    if (r.terminal) break;
    s = r.state;
  }
  return double(steps);
}

inline double mean_rollout_reward(const Blackbox& policy, const CartPoleSystem& sys,
                                  std::size_t episodes, std::uint64_t seed) {
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e)
    total += rollout_reward(policy, sys, random_initial_state(sys, rng));
  return total / double(episodes);
}

// States visited while executing the policy from random near-upright starts,
// subsampled uniformly without replacement. Labels are the policy's actions.
inline Dataset collect_states(const Blackbox& policy, const CartPoleSystem& sys,
                              std::size_t n_points, std::uint64_t seed) {
  if (n_points == 0) throw InputError("collect_states: n_points must be positive");
  Rng rng(seed);
  std::vector<CartPoleState> pool;
  const std::size_t target = 5 * n_points;
  while (pool.size() < target) {
    CartPoleState s = random_initial_state(sys, rng);
    for (std::size_t t = 0; t < sys.max_steps; ++t) {
      pool.push_back(s);
      const auto r = cartpole_step(sys, s, policy.predict(s));
      if (r.terminal) break;
      s = r.state;
    }
  }
  for (std::size_t k = 0; k < n_points; ++k) std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);

  Dataset out;
  out.n = n_points;
  out.d = 4;
  out.m = 2;
  out.column_names = {"x", "x_dot", "theta", "theta_dot"};
  out.labels.emplace();
  for (std::size_t k = 0; k < n_points; ++k) {
    out.features.insert(out.features.end(), pool[k].begin(), pool[k].end());
    out.labels->push_back(policy.predict(pool[k]));
  }
  return out;
}

}  // namespace treex
