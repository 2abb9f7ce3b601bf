#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "cptrl/envs.hpp"
#include "cptrl/mdp.hpp"
#include "cptrl/rng.hpp"

using namespace cptrl;
using Catch::Approx;

namespace {

// Always picks the same action index.
struct ConstPolicy {
  int action;
  int sample_action(const FiniteMdp&, const Trajectory&, int, int, double,
                    Rng&) const {
    return action;
  }
};

// Uniform over all actions.
struct UniformPolicy {
  int sample_action(const FiniteMdp& m, const Trajectory&, int, int, double,
                    Rng& rng) const {
    return static_cast<int>(rng.uniform_int(m.n_actions));
  }
};

const RewardLaw& law_on_edge(const FiniteMdp& m, int s, int a) {
  for (int s2 = 0; s2 < m.n_states; ++s2)
    if (m.transition[s][a][s2] > 0.0) return m.reward_law[s][a][s2];
  FAIL("no reachable next state");
  return m.reward_law[s][a][s];
}

}  // namespace

TEST_CASE("two-state bandit: structure and rollouts") {
  FiniteMdp m = two_state_counterexample();
  CHECK(m.n_states == 2);
  CHECK(m.n_actions == 2);
  CHECK(m.horizon == 1);
  CHECK(m.is_terminal(1));
  CHECK_FALSE(m.is_terminal(0));

  const RewardLaw& risky = m.reward_law[0][1][1];
  REQUIRE(risky.size() == 2);
  CHECK(risky[0].value == 0.0);
  CHECK(risky[1].value == 1.5);
  CHECK(risky[0].prob == Approx(0.5));

  Rng rng = Rng::stream({42, 0});
  for (int i = 0; i < 100; ++i) {
    Trajectory t = sample_trajectory(m, ConstPolicy{0}, rng);
    REQUIRE(t.steps.size() == 1);
    CHECK(t.return_value == 1.0);
  }

  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    Trajectory t = sample_trajectory(m, ConstPolicy{1}, rng);
    if (t.return_value == 1.5) ++hits;
  }
  // 3 binomial standard deviations is ~0.0047; allow 0.01.
  CHECK(std::abs(hits / static_cast<double>(n) - 0.5) < 0.01);
}

TEST_CASE("zero horizon gives an empty trajectory") {
  FiniteMdp m = two_state_counterexample();
  m.horizon = 0;
  Rng rng = Rng::stream({7});
  Trajectory t = sample_trajectory(m, ConstPolicy{1}, rng);
  CHECK(t.steps.empty());
  CHECK(t.return_value == 0.0);
}

TEST_CASE("two-step bandit with a noisy first transition") {
  FiniteMdp m = exp_counterexample();
  CHECK(m.horizon == 2);
  // First step: both actions share the coin-flip entry reward.
  for (int a : {0, 1}) {
    const RewardLaw& law = m.reward_law[0][a][1];
    REQUIRE(law.size() == 2);
    CHECK(law[0].value == 0.0);
    CHECK(law[1].value == 1.0);
  }
  // Second step: action 0 risky {0, 2}, action 1 safe 1.
  CHECK(m.reward_law[1][0][2].size() == 2);
  CHECK(m.reward_law[1][0][2][1].value == 2.0);
  REQUIRE(m.reward_law[1][1][2].size() == 1);
  CHECK(m.reward_law[1][1][2][0].value == 1.0);

  // Safe second action: returns are 1 or 2 with equal probability.
  Rng rng = Rng::stream({42, 1});
  std::map<double, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    counts[sample_trajectory(m, ConstPolicy{1}, rng).return_value]++;
  REQUIRE(counts.size() == 2);
  CHECK(std::abs(counts[1.0] / static_cast<double>(n) - 0.5) < 0.01);
  CHECK(std::abs(counts[2.0] / static_cast<double>(n) - 0.5) < 0.01);
}

TEST_CASE("three-action test chain: reachable returns") {
  FiniteMdp m = markov_test_env();
  CHECK(m.n_states == 3);
  CHECK(m.n_actions == 3);
  CHECK(m.horizon == 2);
  // First-step reward is the +/-1 coin for every action.
  for (int a = 0; a < 3; ++a) {
    const RewardLaw& law = m.reward_law[0][a][1];
    REQUIRE(law.size() == 2);
    CHECK(law[0].value == -1.0);
    CHECK(law[1].value == 1.0);
  }
  // Null action: return is exactly the first coin.
  Rng rng = Rng::stream({42, 2});
  for (int i = 0; i < 200; ++i) {
    double r = sample_trajectory(m, ConstPolicy{2}, rng).return_value;
    CHECK((r == 1.0 || r == -1.0));
  }
  // Sure action: -1+1=0 or 1+1=2.
  for (int i = 0; i < 200; ++i) {
    double r = sample_trajectory(m, ConstPolicy{0}, rng).return_value;
    CHECK((r == 0.0 || r == 2.0));
  }
  // Risky action support: {-1, 1} + {0, 3}.
  std::map<double, int> counts;
  for (int i = 0; i < 20000; ++i)
    counts[sample_trajectory(m, ConstPolicy{1}, rng).return_value]++;
  REQUIRE(counts.size() == 4);
  for (double v : {-1.0, 1.0, 2.0, 4.0}) {
    REQUIRE(counts.count(v) == 1);
    CHECK(std::abs(counts[v] / 20000.0 - 0.25) < 0.02);
  }
}

TEST_CASE("transition sampling matches the declared frequencies") {
  FiniteMdp m = exp_counterexample();
  Rng rng = Rng::stream({42, 3});
  // Entry reward of the first step is a fair coin; check the sampler.
  int ones = 0;
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    Trajectory t = sample_trajectory(m, UniformPolicy{}, rng);
    REQUIRE(t.steps.size() == 2);
    if (t.steps[0].reward == 1.0) ++ones;
  }
  double p = ones / static_cast<double>(n);
  double sd = std::sqrt(0.25 / n);
  CHECK(std::abs(p - 0.5) < 3.5 * sd);
}

TEST_CASE("return equals the discounted sum of step rewards") {
  for (FiniteMdp m : {markov_test_env(), utility_grid_env(),
                      traffic_grid_env(3), scaling_grid_env(5)}) {
    m.discount = 0.9;
    m.validate();
    Rng rng = Rng::stream({42, 4});
    for (int i = 0; i < 50; ++i) {
      Trajectory t = sample_trajectory(m, UniformPolicy{}, rng);
      double sum = 0.0, disc = 1.0;
      for (const Step& st : t.steps) {
        sum += disc * st.reward;
        disc *= m.discount;
      }
      CHECK(t.return_value == Approx(sum).margin(1e-12));
    }
  }
}

TEST_CASE("4x4 grid: starts, goals, and wall bumps") {
  FiniteMdp m = utility_grid_env();
  CHECK(m.n_states == 16);
  CHECK(m.horizon == 10);
  // Start uniform over the twelve non-bottom cells.
  double mass = 0.0;
  for (int s = 0; s < 12; ++s) {
    CHECK(m.initial_dist[s] == Approx(1.0 / 12.0));
    mass += m.initial_dist[s];
  }
  CHECK(mass == Approx(1.0));
  for (int s = 12; s < 16; ++s) CHECK(m.initial_dist[s] == 0.0);

  CHECK(m.is_terminal(12));  // bottom-left
  CHECK(m.is_terminal(15));  // bottom-right
  CHECK_FALSE(m.is_terminal(13));

  // From (2,0), moving down enters the +5 goal.
  REQUIRE(m.transition[8][2][12] == 1.0);
  REQUIRE(m.reward_law[8][2][12].size() == 1);
  CHECK(m.reward_law[8][2][12][0].value == 5.0);
  // From (2,3), moving down enters the +6 goal.
  CHECK(m.reward_law[11][2][15][0].value == 6.0);
  // From (0,0), moving up bumps the wall: stay, pay -1.
  REQUIRE(m.transition[0][0][0] == 1.0);
  REQUIRE(m.reward_law[0][0][0].size() == 1);
  CHECK(m.reward_law[0][0][0][0].value == -1.0);
  // Ordinary move: coin between -1 and +0.8.
  const RewardLaw& law = m.reward_law[0][1][1];
  REQUIRE(law.size() == 2);
  CHECK(law[0].value == -1.0);
  CHECK(law[1].value == Approx(0.8));
}

TEST_CASE("odd diagonal grid: spread grows away from the center") {
  CHECK_THROWS_AS(scaling_grid_env(2), ArgumentError);
  CHECK_THROWS_AS(scaling_grid_env(4), ArgumentError);
  CHECK_THROWS_AS(scaling_grid_env(1), ArgumentError);

  FiniteMdp m = scaling_grid_env(5);
  CHECK(m.n_states == 25);
  CHECK(m.horizon == 10);
  CHECK(m.initial_dist[4] == 1.0);  // top-right corner (0,4)
  for (int i = 0; i < 5; ++i) CHECK(m.is_terminal(5 * i + i));

  // Ordinary step costs 1/5; wall bump costs 2/5.
  CHECK(law_on_edge(m, 4, 2)[0].value == Approx(-0.2));  // (0,4) down
  CHECK(law_on_edge(m, 4, 0)[0].value == Approx(-0.4));  // (0,4) up = bump

  // Entering the center terminal (2,2) from (1,2) pays exactly 1.
  const RewardLaw& center = m.reward_law[7][2][12];
  REQUIRE(center.size() == 1);
  CHECK(center[0].value == 1.0);
  // Entering (1,1) from (1,2): one off center, coin between 0.8 and 1.2.
  const RewardLaw& k1 = m.reward_law[7][3][6];
  REQUIRE(k1.size() == 2);
  CHECK(k1[0].value == Approx(0.8));
  CHECK(k1[1].value == Approx(1.2));
  // Entering the corner terminal (0,0) from (0,1): coin between 0.6 and 1.4.
  const RewardLaw& k2 = m.reward_law[1][3][0];
  REQUIRE(k2.size() == 2);
  CHECK(k2[0].value == Approx(0.6));
  CHECK(k2[1].value == Approx(1.4));
}

TEST_CASE("road grid: congestion on the inside, flat cost on the border") {
  CHECK_THROWS_AS(traffic_grid_env(2), ArgumentError);
  FiniteMdp m = traffic_grid_env(5);
  CHECK(m.horizon == 15);
  CHECK(m.initial_dist[10] == 1.0);  // (2,0)
  CHECK(m.is_terminal(14));          // (2,4)

  // From (2,1), moving right enters interior (2,2): heavy-tailed cost.
  const RewardLaw& interior = m.reward_law[11][1][12];
  REQUIRE(interior.size() == 2);
  CHECK(interior[0].value == -10.0);
  CHECK(interior[0].prob == Approx(0.05));
  CHECK(interior[1].value == Approx(-0.5));
  CHECK(interior[1].prob == Approx(0.95));
  // From (1,0), moving up enters border cell (0,0): flat -1.
  const RewardLaw& border = m.reward_law[5][0][0];
  REQUIRE(border.size() == 1);
  CHECK(border[0].value == -1.0);
  // From (2,3), moving right enters the goal: free.
  const RewardLaw& entry = m.reward_law[13][1][14];
  REQUIRE(entry.size() == 1);
  CHECK(entry[0].value == 0.0);
}

TEST_CASE("battery day: physics of charge, trade, and spill") {
  ElectricityEnv env = electricity_env(default_price_series());
  CHECK(env.state_dim() == 5);
  CHECK(env.horizon() == 12);
  CHECK(env.params().buy_price == Approx(6.0));  // 2 x peak sell of 3
  CHECK(env.prices().sell[5] == Approx(3.0));
  // Peak selling price is in slot 5 (4pm-6pm).
  for (int s = 0; s < 12; ++s)
    CHECK(env.prices().sell[s] <= env.prices().sell[5]);
  // No solar at night.
  for (int s = 6; s < 12; ++s) CHECK(env.production(s) == 0.0);
  CHECK(env.production(2) == Approx(3.0 * std::sin(std::numbers::pi * 2.5 / 6.0)));

  Rng rng = Rng::stream({42, 5});
  const double cap = env.params().capacity;
  for (int episode = 0; episode < 200; ++episode) {
    std::vector<double> state = env.reset(rng);
    CHECK(state[0] == 0.0);
    CHECK(state[1] == Approx(5.0));
    CHECK(state[4] >= 0.2);
    CHECK(state[4] <= 1.0);
    int steps = 0;
    while (true) {
      double battery = state[1], prod = state[3];
      double action = rng.uniform(-3.0, 6.0);
      auto out = env.step(state, {action}, rng);
      ++steps;
      // Battery stays physical.
      CHECK(out.next_state[1] >= -1e-12);
      CHECK(out.next_state[1] <= cap + 1e-12);
      // Cannot sell more than battery + production allowed.
      double sold = std::max(std::min(action, battery + prod), 0.0);
      double income = env.prices().sell[static_cast<int>(state[0])] * sold;
      CHECK(out.reward <= income + 1e-9);
      if (out.done) break;
      state = out.next_state;
    }
    CHECK(steps == 12);
  }

  // Selling everything immediately: battery is drained, reward is positive.
  std::vector<double> s0 = env.reset(rng);
  auto out = env.step(s0, {100.0}, rng);
  CHECK(out.reward > 0.0);
  // Buying heavily fills the battery to at most capacity.
  auto out2 = env.step(s0, {-100.0}, rng);
  CHECK(out2.next_state[1] == Approx(cap));
  CHECK(out2.reward < 0.0);
}

TEST_CASE("price series ingestion rejects malformed input") {
  PriceSeries ps;
  ps.sell.assign(11, 1.0);
  CHECK_THROWS_AS(ps.validate(), IngestError);
  ps.sell.assign(12, 1.0);
  CHECK_NOTHROW(ps.validate());
  ps.sell[3] = -0.5;
  CHECK_THROWS_AS(ps.validate(), IngestError);
  ps.sell[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ps.validate(), IngestError);
}
