#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cptrl/errors.hpp"
#include "cptrl/rng.hpp"

namespace cptrl {

struct RewardAtom {
  double value;
  double prob;
};

using RewardLaw = std::vector<RewardAtom>;

// Finite-horizon tabular MDP. Rewards are finite laws attached to
// (state, action, next-state) triples; terminal states self-loop with zero
// reward, so an episode may simply stop there.
struct FiniteMdp {
  std::string name;
  int n_states = 0;
  int n_actions = 0;
  int horizon = 0;
  double discount = 1.0;
  double r_max = 0.0;
  std::vector<double> initial_dist;
  std::vector<std::vector<std::vector<double>>> transition;  // [s][a] -> dist over s'
  std::vector<std::vector<std::vector<RewardLaw>>> reward_law;  // [s][a][s']
  std::vector<std::uint8_t> terminal;
  std::vector<std::string> state_names, action_names;

  // All-self-loop shell with zero rewards; environment constructors overwrite
  // the interesting entries.
  static FiniteMdp shell(int n_states, int n_actions, int horizon) {
    FiniteMdp m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.horizon = horizon;
    m.initial_dist.assign(n_states, 0.0);
    m.terminal.assign(n_states, 0);
    m.transition.assign(
        n_states, std::vector<std::vector<double>>(
                      n_actions, std::vector<double>(n_states, 0.0)));
    m.reward_law.assign(
        n_states,
        std::vector<std::vector<RewardLaw>>(
            n_actions, std::vector<RewardLaw>(n_states)));
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) {
        m.transition[s][a][s] = 1.0;
        m.reward_law[s][a][s] = {{0.0, 1.0}};
      }
    return m;
  }

  bool is_terminal(int s) const { return terminal[s] != 0; }

  void validate() const {
    constexpr double kTol = 1e-12;
    if (n_states <= 0 || n_actions <= 0 || horizon < 0)
      throw ValidationError(name + ": empty state or action space");
    if (!(discount > 0.0 && discount <= 1.0))
      throw ValidationError(name + ": discount must be in (0, 1]");
    auto check_dist = [&](const std::vector<double>& d, const char* what) {
      double sum = 0.0;
      for (double p : d) {
        if (p < 0.0) throw ValidationError(name + std::string(": negative probability in ") + what);
        sum += p;
      }
      if (std::abs(sum - 1.0) > kTol)
        throw ValidationError(name + std::string(": ") + what + " does not sum to 1");
    };
    check_dist(initial_dist, "initial distribution");
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) {
        check_dist(transition[s][a], "transition row");
        for (int s2 = 0; s2 < n_states; ++s2) {
          if (transition[s][a][s2] == 0.0) continue;
          const RewardLaw& law = reward_law[s][a][s2];
          if (law.empty())
            throw ValidationError(name + ": reachable edge without a reward law");
          double sum = 0.0;
          for (const auto& atom : law) {
            if (atom.prob < 0.0)
              throw ValidationError(name + ": negative reward probability");
            if (std::abs(atom.value) > r_max + kTol)
              throw ValidationError(name + ": reward exceeds declared bound");
            sum += atom.prob;
          }
          if (std::abs(sum - 1.0) > kTol)
            throw ValidationError(name + ": reward law does not sum to 1");
        }
        if (is_terminal(s)) {
          if (transition[s][a][s] != 1.0)
            throw ValidationError(name + ": terminal state must self-loop");
          const RewardLaw& law = reward_law[s][a][s];
          if (law.size() != 1 || law[0].value != 0.0)
            throw ValidationError(name + ": terminal self-loop must pay 0");
        }
      }
  }
};

struct Step {
  int state;
  int action;
  double reward;
};

struct Trajectory {
  std::vector<Step> steps;
  double return_value = 0.0;
};

inline double sample_reward(const RewardLaw& law, Rng& rng) {
  if (law.size() == 1) return law[0].value;
  std::vector<double> probs(law.size());
  for (std::size_t i = 0; i < law.size(); ++i) probs[i] = law[i].prob;
  return law[rng.categorical(probs)].value;
}

// Rolls the chain initial -> policy -> transition forward, stopping at a
// terminal state or at the horizon. The policy sees the current state, the
// step index, the discounted partial return so far, and (for history-keyed
// policies) the whole prefix.
template <class Pol>
Trajectory sample_trajectory(const FiniteMdp& m, const Pol& pol, Rng& rng) {
  Trajectory traj;
  if (m.horizon == 0) return traj;
  int s = rng.categorical(m.initial_dist);
  double disc = 1.0;
  for (int t = 0; t < m.horizon; ++t) {
    if (m.is_terminal(s)) break;
    int a = pol.sample_action(m, traj, s, t, traj.return_value, rng);
    int s2 = rng.categorical(m.transition[s][a]);
    double r = sample_reward(m.reward_law[s][a][s2], rng);
    traj.steps.push_back({s, a, r});
    traj.return_value += disc * r;
    disc *= m.discount;
    s = s2;
  }
  return traj;
}

}  // namespace cptrl
