#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cptrl/cpt.hpp"
#include "cptrl/envs.hpp"
#include "cptrl/errors.hpp"
#include "cptrl/mdp.hpp"
#include "cptrl/phi.hpp"
#include "cptrl/policy.hpp"
#include "cptrl/utility.hpp"

namespace cptrl {

// ---------------------------------------------------------------------------
// Probability-table policy: rows of explicit action probabilities keyed by a
// feature indexer. Unlike the softmax kinds it can put probability exactly 0
// or 1 on an action, which grid searches over corner policies need.
// ---------------------------------------------------------------------------

class TabularProbPolicy {
 public:
  TabularProbPolicy(const FiniteMdp& m, HistoryAbstraction abstraction)
      : indexer_(m, std::move(abstraction)),
        rows_(indexer_.n_rows(),
              std::vector<double>(m.n_actions, 1.0 / m.n_actions)) {}

  const FeatureIndexer& indexer() const { return indexer_; }
  int n_rows() const { return indexer_.n_rows(); }

  void set_row(int row, std::vector<double> probs) {
    double sum = 0.0;
    for (double p : probs) {
      if (p < 0.0 || p > 1.0)
        throw ArgumentError("probability table: entry outside [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw ArgumentError("probability table: row does not sum to 1");
    rows_.at(row) = std::move(probs);
  }

  const std::vector<double>& action_probabilities(const FiniteMdp&,
                                                  const Trajectory& prefix,
                                                  int s, int t,
                                                  double partial_sum) const {
    return rows_[indexer_.row(prefix, s, t, partial_sum)];
  }

  int sample_action(const FiniteMdp& m, const Trajectory& prefix, int s, int t,
                    double partial_sum, Rng& rng) const {
    return rng.categorical(
        action_probabilities(m, prefix, s, t, partial_sum));
  }

 private:
  FeatureIndexer indexer_;
  std::vector<std::vector<double>> rows_;
};

// ---------------------------------------------------------------------------
// Exhaustive trajectory enumeration. Works for any policy exposing
// action_probabilities(m, prefix, s, t, partial_sum).
// ---------------------------------------------------------------------------

namespace detail {

template <class Pol, class Leaf>
void enumerate_paths(const FiniteMdp& m, const Pol& pol, Trajectory& prefix,
                     int s, int t, double sum, double prob, long long cap,
                     long long& leaves, Leaf&& on_leaf) {
  if (t >= m.horizon || m.is_terminal(s)) {
    if (++leaves > cap)
      throw ResourceError("return enumeration: more than " +
                          std::to_string(cap) + " trajectories");
    on_leaf(prefix, sum, prob);
    return;
  }
  const std::vector<double>& probs =
      pol.action_probabilities(m, prefix, s, t, sum);
  for (int a = 0; a < m.n_actions; ++a) {
    if (probs[a] <= 0.0) continue;
    for (int s2 = 0; s2 < m.n_states; ++s2) {
      double pt = m.transition[s][a][s2];
      if (pt <= 0.0) continue;
      for (const RewardAtom& atom : m.reward_law[s][a][s2]) {
        if (atom.prob <= 0.0) continue;
        prefix.steps.push_back({s, a, atom.value});
        enumerate_paths(m, pol, prefix, s2, t + 1, sum + atom.value,
                        prob * probs[a] * pt * atom.prob, cap, leaves,
                        on_leaf);
        prefix.steps.pop_back();
      }
    }
  }
}

}  // namespace detail

template <class Pol>
DiscreteDist enumerate_return_distribution(const FiniteMdp& m, const Pol& pol,
                                           double merge_tol = 1e-9,
                                           long long cap = 1000000) {
  std::vector<std::pair<double, double>> leaves_out;
  Trajectory prefix;
  long long leaves = 0;
  for (int s = 0; s < m.n_states; ++s) {
    if (m.initial_dist[s] <= 0.0) continue;
    detail::enumerate_paths(m, pol, prefix, s, 0, 0.0, m.initial_dist[s], cap,
                            leaves,
                            [&](const Trajectory&, double sum, double prob) {
                              leaves_out.emplace_back(sum, prob);
                            });
  }
  // Long products drift a hair below summing to exactly 1; renormalize before
  // the distribution's own 1e-12 check.
  double total = 0.0;
  for (auto& [v, p] : leaves_out) total += p;
  if (!(total > 0.0)) throw ValidationError("return enumeration: zero mass");
  for (auto& [v, p] : leaves_out) p /= total;
  return DiscreteDist(std::move(leaves_out), merge_tol);
}

template <class Pol>
double exact_cpt(const FiniteMdp& m, const Pol& pol, const CptSpec& spec) {
  return cpt_value_exact(enumerate_return_distribution(m, pol), spec);
}

// Exact distorted policy gradient: the expectation over all trajectories of
// phi(return) times the summed score. Evaluated in two passes — first the
// return law (which fixes phi), then a second enumeration that pushes
// phi-weighted scores onto every decision along each path via the subtree
// phi-expectations.
inline std::vector<double> exact_policy_gradient(const FiniteMdp& m,
                                                 const FinitePolicy& pol,
                                                 const CptSpec& spec,
                                                 long long cap = 1000000) {
  DiscreteDist law = enumerate_return_distribution(m, pol, 1e-9, cap);
  std::map<double, double> phi_cache;
  auto phi_at = [&](double v) {
    auto it = phi_cache.find(v);
    if (it != phi_cache.end()) return it->second;
    double val = phi_exact_discrete(v, law, spec).value();
    phi_cache.emplace(v, val);
    return val;
  };

  std::vector<double> grad(pol.params().theta.size(), 0.0);
  Trajectory prefix;

  // Returns the downstream-probability-weighted mean of phi(final return)
  // for the subtree rooted at (s, t, sum); adds score terms on the way.
  std::function<double(int, int, double, double)> walk =
      [&](int s, int t, double sum, double path_prob) -> double {
    if (t >= m.horizon || m.is_terminal(s)) return phi_at(sum);
    Feature f = pol.feature(prefix, s, t, sum);
    ActionDist dist = action_distribution(pol.params(), f);
    double expect = 0.0;
    for (int a = 0; a < m.n_actions; ++a) {
      if (dist.probs[a] <= 0.0) continue;
      double w_a = 0.0;
      for (int s2 = 0; s2 < m.n_states; ++s2) {
        double pt = m.transition[s][a][s2];
        if (pt <= 0.0) continue;
        for (const RewardAtom& atom : m.reward_law[s][a][s2]) {
          if (atom.prob <= 0.0) continue;
          prefix.steps.push_back({s, a, atom.value});
          double sub = walk(s2, t + 1, sum + atom.value,
                            path_prob * dist.probs[a] * pt * atom.prob);
          prefix.steps.pop_back();
          w_a += pt * atom.prob * sub;
        }
      }
      add_score_gradient(pol.params(), f, a, path_prob * dist.probs[a] * w_a,
                         grad);
      expect += dist.probs[a] * w_a;
    }
    return expect;
  };

  for (int s = 0; s < m.n_states; ++s)
    if (m.initial_dist[s] > 0.0) walk(s, 0, 0.0, m.initial_dist[s]);
  return grad;
}

// ---------------------------------------------------------------------------
// Unwinding: augment the state with (step index, running reward sum) and
// replace each reward by the utility increment it causes. Total transformed
// reward along a trajectory telescopes to U(return) - U(0), so plain expected
// reward on the unwound MDP solves the expected-utility problem.
// ---------------------------------------------------------------------------

struct UnwoundMdp {
  struct Node {
    int state;
    int t;
    double sigma;  // reward accumulated before reaching this node
  };
  struct Arc {
    int next;
    double prob;
    double reward;  // U(sigma + r) - U(sigma)
  };

  Utility utility = Utility::identity();
  int n_actions = 0;
  std::vector<Node> nodes;                        // topological in t
  std::vector<std::vector<std::vector<Arc>>> arcs;  // [node][action]
  std::vector<std::pair<int, double>> initial;     // (node, probability)
  // Per (t, state): sorted (sigma, node id) for tolerance lookups.
  std::map<std::pair<int, int>, std::vector<std::pair<double, int>>> index;

  bool is_leaf(int node) const { return arcs[node].empty(); }

  // Locates (s, t, sigma) among the materialized nodes, tolerating float
  // drift in the running sum; -1 when absent.
  int find_node(int s, int t, double sigma, double tol = 1e-9) const {
    auto it = index.find({t, s});
    if (it == index.end()) return -1;
    const auto& bucket = it->second;
    auto lb = std::lower_bound(
        bucket.begin(), bucket.end(), sigma - tol,
        [](const std::pair<double, int>& e, double v) { return e.first < v; });
    if (lb != bucket.end() && std::abs(lb->first - sigma) <= tol)
      return lb->second;
    return -1;
  }
};

inline UnwoundMdp unwind_mdp(const FiniteMdp& m, const Utility& utility,
                             double sigma_tol = 1e-9,
                             long long cap = 1000000) {
  UnwoundMdp u;
  u.utility = utility;
  u.n_actions = m.n_actions;

  auto intern = [&](int s, int t, double sigma) {
    auto& bucket = u.index[{t, s}];
    auto it = std::lower_bound(
        bucket.begin(), bucket.end(), sigma - sigma_tol,
        [](const std::pair<double, int>& e, double v) { return e.first < v; });
    if (it != bucket.end() && std::abs(it->first - sigma) <= sigma_tol)
      return it->second;
    if (static_cast<long long>(u.nodes.size()) >= cap)
      throw ResourceError("unwinding: more than " + std::to_string(cap) +
                          " augmented states");
    int id = static_cast<int>(u.nodes.size());
    u.nodes.push_back({s, t, sigma});
    u.arcs.emplace_back();
    bucket.insert(it, {sigma, id});
    return id;
  };

  std::vector<int> frontier;
  for (int s = 0; s < m.n_states; ++s)
    if (m.initial_dist[s] > 0.0) {
      int id = intern(s, 0, 0.0);
      u.initial.emplace_back(id, m.initial_dist[s]);
      frontier.push_back(id);
    }

  for (std::size_t q = 0; q < frontier.size(); ++q) {
    int id = frontier[q];
    UnwoundMdp::Node node = u.nodes[id];
    if (node.t >= m.horizon || m.is_terminal(node.state)) continue;
    u.arcs[id].assign(m.n_actions, {});
    for (int a = 0; a < m.n_actions; ++a) {
      for (int s2 = 0; s2 < m.n_states; ++s2) {
        double pt = m.transition[node.state][a][s2];
        if (pt <= 0.0) continue;
        for (const RewardAtom& atom : m.reward_law[node.state][a][s2]) {
          if (atom.prob <= 0.0) continue;
          double sigma2 = node.sigma + atom.value;
          std::size_t before = u.nodes.size();
          int next = intern(s2, node.t + 1, sigma2);
          if (u.nodes.size() > before) frontier.push_back(next);
          double r = utility(sigma2) - utility(node.sigma);
          u.arcs[id][a].push_back({next, pt * atom.prob, r});
        }
      }
    }
  }
  return u;
}

// Expected total transformed reward of a stochastic policy on the unwound
// graph, shifted back by U(0): the exact expected utility of the return.
// The policy is a callable (node id, node) -> action probability vector.
template <class ProbsAt>
double evaluate_policy_exact(const UnwoundMdp& u, ProbsAt&& probs_at) {
  std::vector<double> value(u.nodes.size(), 0.0);
  for (int id = static_cast<int>(u.nodes.size()); id-- > 0;) {
    if (u.is_leaf(id)) continue;
    const std::vector<double> probs = probs_at(id, u.nodes[id]);
    double v = 0.0;
    for (int a = 0; a < u.n_actions; ++a) {
      if (probs[a] <= 0.0) continue;
      double q = 0.0;
      for (const UnwoundMdp::Arc& arc : u.arcs[id][a])
        q += arc.prob * (arc.reward + value[arc.next]);
      v += probs[a] * q;
    }
    value[id] = v;
  }
  double total = u.utility(0.0);
  for (const auto& [id, p] : u.initial) total += p * value[id];
  return total;
}

// Deterministic argmax policy over the augmented states plus its value.
struct EutSolution {
  UnwoundMdp unwound;
  std::vector<int> best_action;  // per node; -1 on leaves
  double value = 0.0;

  // Rollout adapter on the original MDP: follows the argmax table by looking
  // up the current (state, step, running sum) among the augmented states.
  int sample_action(const FiniteMdp&, const Trajectory&, int s, int t,
                    double partial_sum, Rng&) const {
    int id = unwound.find_node(s, t, partial_sum);
    if (id < 0 || best_action[id] < 0)
      throw ArgumentError("dp policy: state not reached by the solver");
    return best_action[id];
  }
};

inline EutSolution solve_eut_dp(const FiniteMdp& m, const Utility& utility) {
  EutSolution sol;
  sol.unwound = unwind_mdp(m, utility);
  const UnwoundMdp& u = sol.unwound;
  std::vector<double> value(u.nodes.size(), 0.0);
  sol.best_action.assign(u.nodes.size(), -1);
  // Nodes are created frontier-first, so children always follow parents.
  for (int id = static_cast<int>(u.nodes.size()); id-- > 0;) {
    if (u.is_leaf(id)) continue;
    double best = -std::numeric_limits<double>::infinity();
    int best_a = -1;
    for (int a = 0; a < u.n_actions; ++a) {
      double q = 0.0;
      for (const UnwoundMdp::Arc& arc : u.arcs[id][a])
        q += arc.prob * (arc.reward + value[arc.next]);
      if (q > best + 1e-15) {
        best = q;
        best_a = a;
      }
    }
    value[id] = best;
    sol.best_action[id] = best_a;
  }
  sol.value = u.utility(0.0);
  for (const auto& [id, p] : u.initial) sol.value += p * value[id];
  return sol;
}

// ---------------------------------------------------------------------------
// Exhaustive search over small explicitly-parameterized policy families.
// Each axis is a probability scanned over an even grid on [0, 1].
// ---------------------------------------------------------------------------

struct PolicyGridSpec {
  std::string name;
  std::vector<int> resolution;  // points per axis, each >= 2
  std::function<TabularProbPolicy(const std::vector<double>&)> make_policy;
};

struct GridSearchResult {
  std::vector<double> best_params;
  double best_value = -std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::vector<double>, double>> table;
};

inline GridSearchResult grid_search_policy(const FiniteMdp& m,
                                           const CptSpec& spec,
                                           const PolicyGridSpec& grid) {
  if (grid.resolution.empty() || grid.resolution.size() > 3)
    throw ResourceError("grid search: supports 1 to 3 free parameters");
  for (int r : grid.resolution)
    if (r < 2) throw ArgumentError("grid search: resolution must be >= 2");

  GridSearchResult out;
  std::vector<int> idx(grid.resolution.size(), 0);
  std::vector<double> params(grid.resolution.size(), 0.0);
  while (true) {
    for (std::size_t i = 0; i < idx.size(); ++i)
      params[i] = static_cast<double>(idx[i]) / (grid.resolution[i] - 1);
    double value = exact_cpt(m, grid.make_policy(params), spec);
    out.table.emplace_back(params, value);
    if (value > out.best_value) {  // lexicographic-first wins ties
      out.best_value = value;
      out.best_params = params;
    }
    std::size_t axis = idx.size();
    while (axis-- > 0) {
      if (++idx[axis] < grid.resolution[axis]) break;
      idx[axis] = 0;
      if (axis == 0) return out;
    }
  }
}

// ---------------------------------------------------------------------------
// The hand-built policy families the counterexample environments are probed
// with. Action indices follow the environment constructors.
// ---------------------------------------------------------------------------

// One knob: probability of the risky arm in the one-step bandit.
inline PolicyGridSpec two_state_policy_grid(int resolution) {
  auto proto = std::make_shared<TabularProbPolicy>(
      two_state_counterexample(), HistoryAbstraction::markov());
  return {"two_state_p",
          {resolution},
          [proto](const std::vector<double>& p) {
            TabularProbPolicy pol = *proto;
            pol.set_row(0, {1.0 - p[0], p[0]});
            return pol;
          }};
}

// Second-step risky probability, blind to the first coin (markov class).
inline PolicyGridSpec exp_markov_policy_grid(int resolution) {
  FiniteMdp m = exp_counterexample();
  auto proto = std::make_shared<TabularProbPolicy>(
      m, HistoryAbstraction::markov());
  // Row of (t=1, s=1); action 0 is the risky arm.
  const int row = 1 * m.n_states + 1;
  return {"exp_markov",
          {resolution},
          [proto, row](const std::vector<double>& p) {
            TabularProbPolicy pol = *proto;
            pol.set_row(row, {p[0], 1.0 - p[0]});
            return pol;
          }};
}

// Risky probabilities (p0, p1) conditioned on the first reward being 0 or 1.
inline PolicyGridSpec exp_full_policy_grid(int resolution) {
  FiniteMdp m = exp_counterexample();
  HistoryAbstraction abs = HistoryAbstraction::sum_augmented({0.5});
  FeatureIndexer idx(m, abs);
  auto proto = std::make_shared<TabularProbPolicy>(m, abs);
  const int row_lo = idx.row({}, 1, 1, 0.0);  // first reward was 0
  const int row_hi = idx.row({}, 1, 1, 1.0);  // first reward was 1
  return {"exp_full",
          {resolution, resolution},
          [proto, row_lo, row_hi](const std::vector<double>& p) {
            TabularProbPolicy pol = *proto;
            pol.set_row(row_lo, {p[0], 1.0 - p[0]});
            pol.set_row(row_hi, {p[1], 1.0 - p[1]});
            return pol;
          }};
}

// Second-step mix between the sure +1 arm and the risky {0,3} arm. The null
// arm is left out: the sure arm dominates it outcome-for-outcome, so no
// monotone valuation ever prefers it.
inline PolicyGridSpec markov_test_markov_policy_grid(int resolution) {
  FiniteMdp m = markov_test_env();
  auto proto = std::make_shared<TabularProbPolicy>(
      m, HistoryAbstraction::markov());
  const int row = 1 * m.n_states + 1;
  return {"markov_test_markov",
          {resolution},
          [proto, row](const std::vector<double>& q) {
            TabularProbPolicy pol = *proto;
            pol.set_row(row, {1.0 - q[0], q[0], 0.0});
            return pol;
          }};
}

// Same mix, but allowed to react to the sign of the first reward.
inline PolicyGridSpec markov_test_full_policy_grid(int resolution) {
  FiniteMdp m = markov_test_env();
  HistoryAbstraction abs = HistoryAbstraction::sum_augmented({0.0});
  FeatureIndexer idx(m, abs);
  auto proto = std::make_shared<TabularProbPolicy>(m, abs);
  const int row_neg = idx.row({}, 1, 1, -1.0);
  const int row_pos = idx.row({}, 1, 1, 1.0);
  return {"markov_test_full",
          {resolution, resolution},
          [proto, row_neg, row_pos](const std::vector<double>& q) {
            TabularProbPolicy pol = *proto;
            pol.set_row(row_neg, {1.0 - q[0], q[0], 0.0});
            pol.set_row(row_pos, {1.0 - q[1], q[1], 0.0});
            return pol;
          }};
}

}  // namespace cptrl
