#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "cptrl/errors.hpp"
#include "cptrl/mdp.hpp"
#include "cptrl/rng.hpp"

namespace cptrl {

// ---------------------------------------------------------------------------
// Small finite MDPs with hand-picked reward laws. Action index conventions
// are documented per constructor; grid worlds use actions
// 0 = up, 1 = right, 2 = down, 3 = left, and an illegal move leaves the agent
// in place with a penalty.
// ---------------------------------------------------------------------------

// One decision: action 0 ("safe") pays 1 surely, action 1 ("risky") pays
// 0 or 1.5 with equal probability. Horizon 1, then a terminal sink.
inline FiniteMdp two_state_counterexample() {
  FiniteMdp m = FiniteMdp::shell(2, 2, 1);
  m.name = "two_state_counterexample";
  m.r_max = 1.5;
  m.initial_dist = {1.0, 0.0};
  m.terminal[1] = 1;
  m.state_names = {"start", "done"};
  m.action_names = {"safe", "risky"};
  for (int a : {0, 1}) {
    m.transition[0][a] = {0.0, 1.0};
  }
  m.reward_law[0][0][1] = {{1.0, 1.0}};
  m.reward_law[0][1][1] = {{0.0, 0.5}, {1.5, 0.5}};
  m.validate();
  return m;
}

// Two decisions. The first transition pays 0 or 1 with equal probability
// regardless of the action; in the middle state, action 0 ("risky") pays 0 or
// 2 with equal probability and action 1 ("safe") pays 1 surely.
inline FiniteMdp exp_counterexample() {
  FiniteMdp m = FiniteMdp::shell(3, 2, 2);
  m.name = "exp_counterexample";
  m.r_max = 2.0;
  m.initial_dist = {1.0, 0.0, 0.0};
  m.terminal[2] = 1;
  m.state_names = {"start", "mid", "done"};
  m.action_names = {"risky", "safe"};
  for (int a : {0, 1}) {
    m.transition[0][a] = {0.0, 1.0, 0.0};
    m.reward_law[0][a][1] = {{0.0, 0.5}, {1.0, 0.5}};
  }
  m.transition[1][0] = {0.0, 0.0, 1.0};
  m.reward_law[1][0][2] = {{0.0, 0.5}, {2.0, 0.5}};
  m.transition[1][1] = {0.0, 0.0, 1.0};
  m.reward_law[1][1][2] = {{1.0, 1.0}};
  m.validate();
  return m;
}

// Two decisions, three second-step actions. The first transition pays +1 or
// -1 with equal probability and lands in the same middle state either way, so
// a policy keyed on (state, time) alone cannot react to the sign. Second
// step: action 0 ("sure") pays +1, action 1 ("risky") pays 0 or 3 with equal
// probability, action 2 ("null") pays 0.
inline FiniteMdp markov_test_env() {
  FiniteMdp m = FiniteMdp::shell(3, 3, 2);
  m.name = "markov_test_env";
  m.r_max = 3.0;
  m.initial_dist = {1.0, 0.0, 0.0};
  m.terminal[2] = 1;
  m.state_names = {"start", "mid", "done"};
  m.action_names = {"sure", "risky", "null"};
  for (int a : {0, 1, 2}) {
    m.transition[0][a] = {0.0, 1.0, 0.0};
    m.reward_law[0][a][1] = {{-1.0, 0.5}, {1.0, 0.5}};
  }
  m.transition[1][0] = {0.0, 0.0, 1.0};
  m.reward_law[1][0][2] = {{1.0, 1.0}};
  m.transition[1][1] = {0.0, 0.0, 1.0};
  m.reward_law[1][1][2] = {{0.0, 0.5}, {3.0, 0.5}};
  m.transition[1][2] = {0.0, 0.0, 1.0};
  m.reward_law[1][2][2] = {{0.0, 1.0}};
  m.validate();
  return m;
}

namespace detail {

struct GridGeometry {
  int n_rows, n_cols;
  int cell(int r, int c) const { return r * n_cols + c; }
  bool inside(int r, int c) const {
    return r >= 0 && r < n_rows && c >= 0 && c < n_cols;
  }
};

inline constexpr int kRowDelta[4] = {-1, 0, 1, 0};
inline constexpr int kColDelta[4] = {0, 1, 0, -1};
inline const char* kMoveNames[4] = {"up", "right", "down", "left"};

}  // namespace detail

// 4x4 grid, start uniform over the top three rows. Stepping onto an ordinary
// cell pays -1 or +0.8 with equal probability; the bottom-left corner pays +5
// and the bottom-right +6, both terminal. Bumping the wall keeps the agent in
// place and costs 1. Horizon 10.
inline FiniteMdp utility_grid_env() {
  detail::GridGeometry g{4, 4};
  FiniteMdp m = FiniteMdp::shell(16, 4, 10);
  m.name = "utility_grid_env";
  m.r_max = 6.0;
  const int goal_lo = g.cell(3, 0), goal_hi = g.cell(3, 3);
  m.terminal[goal_lo] = 1;
  m.terminal[goal_hi] = 1;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m.initial_dist[g.cell(r, c)] = 1.0 / 12.0;
  for (int a = 0; a < 4; ++a) m.action_names.push_back(detail::kMoveNames[a]);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      int s = g.cell(r, c);
      m.state_names.push_back("r" + std::to_string(r) + "c" + std::to_string(c));
      if (m.is_terminal(s)) continue;
      for (int a = 0; a < 4; ++a) {
        int r2 = r + detail::kRowDelta[a], c2 = c + detail::kColDelta[a];
        m.transition[s][a].assign(16, 0.0);
        if (!g.inside(r2, c2)) {
          m.transition[s][a][s] = 1.0;
          m.reward_law[s][a][s] = {{-1.0, 1.0}};
          continue;
        }
        int s2 = g.cell(r2, c2);
        m.transition[s][a][s2] = 1.0;
        if (s2 == goal_lo)
          m.reward_law[s][a][s2] = {{5.0, 1.0}};
        else if (s2 == goal_hi)
          m.reward_law[s][a][s2] = {{6.0, 1.0}};
        else
          m.reward_law[s][a][s2] = {{-1.0, 0.5}, {0.8, 0.5}};
      }
    }
  m.validate();
  return m;
}

// n x n grid (n odd), start in the top-right corner. Every cell on the
// diagonal opposite the start is terminal and sits at the same Manhattan
// distance n-1, so all of them cost the same to reach. A terminal k cells
// away from the center pays 1 -/+ k/n with equal probability (the center pays
// exactly 1). Ordinary moves cost 1/n, wall bumps 2/n. Horizon 2n.
inline FiniteMdp scaling_grid_env(int n) {
  if (n < 3 || n % 2 == 0)
    throw ArgumentError("scaling_grid_env: n must be odd and >= 3");
  detail::GridGeometry g{n, n};
  FiniteMdp m = FiniteMdp::shell(n * n, 4, 2 * n);
  m.name = "scaling_grid_env_" + std::to_string(n);
  const double sigma0 = 1.0 / n, mean = 1.0;
  const int center = (n - 1) / 2;
  m.r_max = mean + center * sigma0 + 2.0 / n;
  m.initial_dist[g.cell(0, n - 1)] = 1.0;
  for (int i = 0; i < n; ++i) m.terminal[g.cell(i, i)] = 1;
  for (int a = 0; a < 4; ++a) m.action_names.push_back(detail::kMoveNames[a]);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      int s = g.cell(r, c);
      m.state_names.push_back("r" + std::to_string(r) + "c" + std::to_string(c));
      if (m.is_terminal(s)) continue;
      for (int a = 0; a < 4; ++a) {
        int r2 = r + detail::kRowDelta[a], c2 = c + detail::kColDelta[a];
        m.transition[s][a].assign(n * n, 0.0);
        if (!g.inside(r2, c2)) {
          m.transition[s][a][s] = 1.0;
          m.reward_law[s][a][s] = {{-2.0 / n, 1.0}};
          continue;
        }
        int s2 = g.cell(r2, c2);
        m.transition[s][a][s2] = 1.0;
        if (m.is_terminal(s2)) {
          int k = std::abs(r2 - center);
          if (k == 0)
            m.reward_law[s][a][s2] = {{mean, 1.0}};
          else
            m.reward_law[s][a][s2] = {{mean - k * sigma0, 0.5},
                                      {mean + k * sigma0, 0.5}};
        } else {
          m.reward_law[s][a][s2] = {{-1.0 / n, 1.0}};
        }
      }
    }
  m.validate();
  return m;
}

// n x n road grid. Start in the middle of the left edge, terminal goal in the
// middle of the right edge. Interior cells are congestion-prone: entering one
// costs 0.5 most of the time but 10 with probability 0.05. Border cells cost
// a flat 1, the goal itself costs nothing, and wall bumps cost 1. The
// interior route is shorter and cheaper on average; the border route has no
// tail risk. Horizon 3n.
inline FiniteMdp traffic_grid_env(int n) {
  if (n < 3) throw ArgumentError("traffic_grid_env: n must be >= 3");
  detail::GridGeometry g{n, n};
  FiniteMdp m = FiniteMdp::shell(n * n, 4, 3 * n);
  m.name = "traffic_grid_env_" + std::to_string(n);
  m.r_max = 10.0;
  const int goal = g.cell(n / 2, n - 1);
  m.initial_dist[g.cell(n / 2, 0)] = 1.0;
  m.terminal[goal] = 1;
  for (int a = 0; a < 4; ++a) m.action_names.push_back(detail::kMoveNames[a]);
  auto border = [&](int r, int c) {
    return r == 0 || r == n - 1 || c == 0 || c == n - 1;
  };
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      int s = g.cell(r, c);
      m.state_names.push_back("r" + std::to_string(r) + "c" + std::to_string(c));
      if (m.is_terminal(s)) continue;
      for (int a = 0; a < 4; ++a) {
        int r2 = r + detail::kRowDelta[a], c2 = c + detail::kColDelta[a];
        m.transition[s][a].assign(n * n, 0.0);
        if (!g.inside(r2, c2)) {
          m.transition[s][a][s] = 1.0;
          m.reward_law[s][a][s] = {{-1.0, 1.0}};
          continue;
        }
        int s2 = g.cell(r2, c2);
        m.transition[s][a][s2] = 1.0;
        if (s2 == goal)
          m.reward_law[s][a][s2] = {{0.0, 1.0}};
        else if (border(r2, c2))
          m.reward_law[s][a][s2] = {{-1.0, 1.0}};
        else
          m.reward_law[s][a][s2] = {{-10.0, 0.05}, {-0.5, 0.95}};
      }
    }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Continuous-state battery management.
// ---------------------------------------------------------------------------

// Selling prices per two-hour slot; slot 0 starts at 6am, so slot 5 covers
// 4pm-6pm.
struct PriceSeries {
  std::vector<double> sell;

  void validate() const {
    if (sell.size() != 12)
      throw IngestError("price series: expected 12 slots, got " +
                        std::to_string(sell.size()));
    for (double p : sell)
      if (!(p >= 0.0) || !std::isfinite(p))
        throw IngestError("price series: prices must be finite and >= 0");
  }
};

// Synthetic default: baseline 1 with a bump peaking in the 4pm-6pm slot.
inline PriceSeries default_price_series() {
  PriceSeries ps;
  for (int s = 0; s < 12; ++s)
    ps.sell.push_back(1.0 + 2.0 * std::exp(-0.5 * (s - 5.0) * (s - 5.0)));
  return ps;
}

class ContinuousEnv {
 public:
  struct StepOut {
    std::vector<double> next_state;
    double reward;
    bool done;
  };

  virtual ~ContinuousEnv() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int horizon() const = 0;
  virtual double r_max() const = 0;
  // Per-dimension scale used to normalize observations for function
  // approximators.
  virtual std::vector<double> observation_scale() const = 0;
  virtual std::vector<double> reset(Rng& rng) const = 0;
  virtual StepOut step(const std::vector<double>& state,
                       const std::vector<double>& action, Rng& rng) const = 0;
};

struct ElecParams {
  double capacity = 10.0;
  double battery_init = 5.0;
  double solar_peak = 3.0;
  double consumption_lo = 0.2;
  double consumption_hi = 1.0;
  double buy_price = 0.0;  // <= 0 means "2 x the maximum selling price"
};

// One day of battery management in twelve two-hour slots. State is
// (slot, battery charge, selling price, solar production, home consumption).
// The scalar action is net energy sold this slot (negative = bought). Sales
// are capped by battery + production; whatever the household still lacks
// after production, trading, and the battery is bought automatically at the
// (higher) buying price, and charge beyond capacity is spilled.
class ElectricityEnv final : public ContinuousEnv {
 public:
  ElectricityEnv(PriceSeries prices, ElecParams params)
      : prices_(std::move(prices)), params_(params) {
    prices_.validate();
    if (!(params_.capacity > 0.0))
      throw ValidationError("electricity: capacity must be > 0");
    double max_sell = 0.0;
    for (double p : prices_.sell) max_sell = std::max(max_sell, p);
    if (params_.buy_price <= 0.0) params_.buy_price = 2.0 * max_sell;
    if (params_.buy_price <= max_sell)
      throw ValidationError("electricity: buying must cost more than selling");
    r_max_ = std::max(max_sell * (params_.capacity + params_.solar_peak),
                      params_.buy_price *
                          (params_.capacity + params_.consumption_hi));
  }

  int state_dim() const override { return 5; }
  int action_dim() const override { return 1; }
  int horizon() const override { return 12; }
  double r_max() const override { return r_max_; }

  std::vector<double> observation_scale() const override {
    double max_sell = 0.0;
    for (double p : prices_.sell) max_sell = std::max(max_sell, p);
    return {11.0, params_.capacity, max_sell,
            std::max(params_.solar_peak, 1e-9), params_.consumption_hi};
  }

  double production(int slot) const {
    if (slot < 0 || slot >= 6) return 0.0;
    return params_.solar_peak * std::sin(std::numbers::pi * (slot + 0.5) / 6.0);
  }

  const PriceSeries& prices() const { return prices_; }
  const ElecParams& params() const { return params_; }

  std::vector<double> reset(Rng& rng) const override {
    return {0.0, params_.battery_init, prices_.sell[0], production(0),
            rng.uniform(params_.consumption_lo, params_.consumption_hi)};
  }

  StepOut step(const std::vector<double>& state,
               const std::vector<double>& action, Rng& rng) const override {
    int slot = static_cast<int>(state[0]);
    double battery = state[1];
    double prod = state[3];
    double cons = state[4];
    double a = std::min(std::max(action[0], -params_.capacity), battery + prod);
    double sold = std::max(a, 0.0);
    double bought = std::max(-a, 0.0);
    double raw = battery + prod + bought - cons - sold;
    double forced = std::max(0.0, -raw);
    double next_battery = std::min(raw + forced, params_.capacity);
    double reward = prices_.sell[slot] * sold -
                    params_.buy_price * (bought + forced);
    int next_slot = slot + 1;
    bool done = next_slot >= 12;
    std::vector<double> next = {
        static_cast<double>(next_slot), next_battery,
        done ? 0.0 : prices_.sell[next_slot], production(next_slot),
        done ? 0.0
             : rng.uniform(params_.consumption_lo, params_.consumption_hi)};
    return {std::move(next), reward, done};
  }

 private:
  PriceSeries prices_;
  ElecParams params_;
  double r_max_ = 0.0;
};

inline ElectricityEnv electricity_env(PriceSeries prices, ElecParams params = {}) {
  return ElectricityEnv(std::move(prices), params);
}

}  // namespace cptrl
