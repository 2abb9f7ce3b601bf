#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cptrl/errors.hpp"
#include "cptrl/mdp.hpp"
#include "cptrl/rng.hpp"

namespace cptrl {

// ---------------------------------------------------------------------------
// What a policy is allowed to look at. `stationary` sees only the current
// state, `markov` adds the step index, `sum_augmented` adds a binned running
// reward sum, and `full_history` keys on the entire observed prefix (only
// viable for tiny MDPs; enumeration is capped).
// ---------------------------------------------------------------------------

enum class HistoryKind { stationary, markov, sum_augmented, full_history };

struct HistoryAbstraction {
  HistoryKind kind = HistoryKind::markov;
  std::vector<double> bin_edges;  // sum_augmented only; strictly increasing

  static HistoryAbstraction stationary() { return {HistoryKind::stationary, {}}; }
  static HistoryAbstraction markov() { return {HistoryKind::markov, {}}; }
  static HistoryAbstraction sum_augmented(std::vector<double> edges) {
    if (edges.empty())
      throw ArgumentError("sum_augmented: need at least one bin edge");
    if (!std::is_sorted(edges.begin(), edges.end()) ||
        std::adjacent_find(edges.begin(), edges.end()) != edges.end())
      throw ArgumentError("sum_augmented: edges must be strictly increasing");
    return {HistoryKind::sum_augmented, std::move(edges)};
  }
  static HistoryAbstraction full_history() { return {HistoryKind::full_history, {}}; }

  int n_bins() const { return static_cast<int>(bin_edges.size()) + 1; }
};

inline const char* history_kind_name(HistoryKind k) {
  switch (k) {
    case HistoryKind::stationary: return "stationary";
    case HistoryKind::markov: return "markov";
    case HistoryKind::sum_augmented: return "sum_augmented";
    case HistoryKind::full_history: return "full_history";
  }
  return "?";
}

// Bin index of a running reward sum: the number of edges at or below it.
inline int bin_partial_return(const HistoryAbstraction& h, double partial_sum) {
  if (h.kind != HistoryKind::sum_augmented)
    throw ArgumentError("bin_partial_return: abstraction has no bins");
  return static_cast<int>(std::upper_bound(h.bin_edges.begin(),
                                           h.bin_edges.end(), partial_sum) -
                          h.bin_edges.begin());
}

// ---------------------------------------------------------------------------
// Feature: either a row into a logit table (finite MDPs) or a raw observation
// vector (continuous states, MLP policies).
// ---------------------------------------------------------------------------

struct Feature {
  int row = -1;
  std::vector<double> obs;
};

// Maps (prefix, state, time, running sum) to a table row for a given MDP and
// abstraction. For full_history the rows are enumerated up front by walking
// every reachable prefix.
class FeatureIndexer {
 public:
  FeatureIndexer() = default;

  FeatureIndexer(const FiniteMdp& m, HistoryAbstraction abstraction)
      : abstraction_(std::move(abstraction)) {
    n_states_ = m.n_states;
    switch (abstraction_.kind) {
      case HistoryKind::stationary:
        n_rows_ = m.n_states;
        break;
      case HistoryKind::markov:
        n_rows_ = m.horizon * m.n_states;
        break;
      case HistoryKind::sum_augmented:
        n_rows_ = m.horizon * m.n_states * abstraction_.n_bins();
        break;
      case HistoryKind::full_history: {
        std::vector<double> key;
        for (int s = 0; s < m.n_states; ++s)
          if (m.initial_dist[s] > 0.0) {
            key.assign(1, static_cast<double>(s));
            enumerate_histories(m, key, s, 0);
          }
        n_rows_ = static_cast<int>(history_rows_.size());
        break;
      }
    }
    if (n_rows_ <= 0)
      throw ValidationError("feature indexer: empty row space");
  }

  const HistoryAbstraction& abstraction() const { return abstraction_; }
  int n_rows() const { return n_rows_; }

  int row(const Trajectory& prefix, int s, int t, double partial_sum) const {
    switch (abstraction_.kind) {
      case HistoryKind::stationary:
        return s;
      case HistoryKind::markov:
        return t * n_states_ + s;
      case HistoryKind::sum_augmented:
        return (t * n_states_ + s) * abstraction_.n_bins() +
               bin_partial_return(abstraction_, partial_sum);
      case HistoryKind::full_history: {
        std::vector<double> key;
        key.reserve(3 * prefix.steps.size() + 1);
        for (const Step& st : prefix.steps) {
          key.push_back(static_cast<double>(st.state));
          key.push_back(static_cast<double>(st.action));
          key.push_back(st.reward);
        }
        key.push_back(static_cast<double>(s));
        auto it = history_rows_.find(key);
        if (it == history_rows_.end())
          throw ArgumentError("feature indexer: unknown history prefix");
        return it->second;
      }
    }
    throw ArgumentError("feature indexer: bad abstraction");
  }

  Feature feature(const Trajectory& prefix, int s, int t,
                  double partial_sum) const {
    return Feature{row(prefix, s, t, partial_sum), {}};
  }

 private:
  static constexpr int kMaxHistories = 10000;

  void enumerate_histories(const FiniteMdp& m, std::vector<double>& key, int s,
                           int t) {
    if (t >= m.horizon || m.is_terminal(s)) return;
    if (!history_rows_.count(key)) {
      if (static_cast<int>(history_rows_.size()) >= kMaxHistories)
        throw UnsupportedError(
            "full_history: more than 10000 distinct histories");
      int id = static_cast<int>(history_rows_.size());
      history_rows_.emplace(key, id);
    }
    for (int a = 0; a < m.n_actions; ++a)
      for (int s2 = 0; s2 < m.n_states; ++s2) {
        if (m.transition[s][a][s2] <= 0.0) continue;
        for (const RewardAtom& atom : m.reward_law[s][a][s2]) {
          if (atom.prob <= 0.0) continue;
          key.push_back(static_cast<double>(a));
          key.push_back(atom.value);
          key.push_back(static_cast<double>(s2));
          enumerate_histories(m, key, s2, t + 1);
          key.resize(key.size() - 3);
        }
      }
  }

  HistoryAbstraction abstraction_;
  int n_states_ = 0;
  int n_rows_ = 0;
  std::map<std::vector<double>, int> history_rows_;
};

// ---------------------------------------------------------------------------
// Parameter vector plus enough metadata to interpret it.
//   softmax_tabular:  theta[row * n_actions + a] is a logit
//   softmax_tanh:     same table, but logits are alpha * tanh(theta / alpha)
//   bernoulli_direct: theta[row] is P(action 1) directly (2 actions)
//   gaussian_mlp:     feed-forward tanh net for the mean, plus a learnable
//                     state-independent log-std per action dimension
// ---------------------------------------------------------------------------

enum class PolicyKind { softmax_tabular, softmax_tanh, bernoulli_direct, gaussian_mlp };

inline const char* policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::softmax_tabular: return "softmax_tabular";
    case PolicyKind::softmax_tanh: return "softmax_tanh";
    case PolicyKind::bernoulli_direct: return "bernoulli_direct";
    case PolicyKind::gaussian_mlp: return "gaussian_mlp";
  }
  return "?";
}

struct PolicyParams {
  HistoryAbstraction abstraction;
  PolicyKind kind = PolicyKind::softmax_tabular;
  std::vector<double> theta;

  // Discrete table kinds.
  int n_rows = 0;
  int n_actions = 0;
  double alpha_exploration = 1.0;  // softmax_tanh logit bound

  // gaussian_mlp: layer_sizes = {in, hidden..., out}; theta holds
  // (W, b) per layer followed by out log-std entries. Observations are
  // divided by obs_scale before the first layer.
  std::vector<int> layer_sizes;
  std::vector<double> obs_scale;

  static PolicyParams table(HistoryAbstraction abstraction, PolicyKind kind,
                            int n_rows, int n_actions) {
    if (kind == PolicyKind::gaussian_mlp)
      throw ArgumentError("table policy: use PolicyParams::mlp");
    if (n_rows <= 0 || n_actions <= 0)
      throw ArgumentError("table policy: empty table");
    if (kind == PolicyKind::bernoulli_direct && n_actions != 2)
      throw ArgumentError("bernoulli_direct: needs exactly 2 actions");
    PolicyParams p;
    p.abstraction = std::move(abstraction);
    p.kind = kind;
    p.n_rows = n_rows;
    p.n_actions = n_actions;
    p.theta.assign(kind == PolicyKind::bernoulli_direct
                       ? static_cast<std::size_t>(n_rows)
                       : static_cast<std::size_t>(n_rows) * n_actions,
                   kind == PolicyKind::bernoulli_direct ? 0.5 : 0.0);
    return p;
  }

  static PolicyParams mlp(int in_dim, int out_dim, std::vector<double> obs_scale,
                          Rng& init_rng, std::vector<int> hidden = {32, 32},
                          double log_std_init = std::log(0.5)) {
    if (in_dim <= 0 || out_dim <= 0)
      throw ArgumentError("mlp policy: bad dimensions");
    if (static_cast<int>(obs_scale.size()) != in_dim)
      throw ArgumentError("mlp policy: obs_scale size mismatch");
    PolicyParams p;
    p.kind = PolicyKind::gaussian_mlp;
    p.layer_sizes.push_back(in_dim);
    for (int h : hidden) p.layer_sizes.push_back(h);
    p.layer_sizes.push_back(out_dim);
    p.obs_scale = std::move(obs_scale);
    for (std::size_t l = 0; l + 1 < p.layer_sizes.size(); ++l) {
      int fan_in = p.layer_sizes[l], fan_out = p.layer_sizes[l + 1];
      double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (int i = 0; i < fan_out * fan_in; ++i)
        p.theta.push_back(init_rng.uniform(-bound, bound));
      for (int i = 0; i < fan_out; ++i) p.theta.push_back(0.0);
    }
    for (int i = 0; i < out_dim; ++i) p.theta.push_back(log_std_init);
    return p;
  }

  int n_params() const { return static_cast<int>(theta.size()); }

  bool is_discrete() const { return kind != PolicyKind::gaussian_mlp; }

  int action_dim() const {
    return is_discrete() ? 1 : layer_sizes.back();
  }

  // Keeps direct probabilities usable after a gradient step.
  void clamp_parameters() {
    if (kind == PolicyKind::bernoulli_direct)
      for (double& p : theta) p = std::min(std::max(p, 0.01), 0.99);
  }

  void validate() const {
    for (double v : theta)
      if (!std::isfinite(v))
        throw ValidationError("policy: non-finite parameter");
    if (is_discrete()) {
      std::size_t want = kind == PolicyKind::bernoulli_direct
                             ? static_cast<std::size_t>(n_rows)
                             : static_cast<std::size_t>(n_rows) * n_actions;
      if (theta.size() != want)
        throw ValidationError("policy: table size mismatch");
      if (kind == PolicyKind::softmax_tanh && !(alpha_exploration > 0.0))
        throw ValidationError("policy: exploration bound must be positive");
    } else {
      if (layer_sizes.size() < 2)
        throw ValidationError("policy: mlp needs at least input and output");
      if (theta.size() != static_cast<std::size_t>(mlp_weight_count()))
        throw ValidationError("policy: mlp parameter count mismatch");
    }
  }

  int mlp_weight_count() const {
    int n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
      n += layer_sizes[l + 1] * (layer_sizes[l] + 1);
    return n + layer_sizes.back();
  }
};

struct ActionDist {
  std::vector<double> probs;             // discrete kinds
  std::vector<double> mean, std_dev;     // gaussian_mlp

  bool is_discrete() const { return !probs.empty(); }
};

namespace detail {

inline void softmax_into(const std::vector<double>& logits,
                         std::vector<double>& out) {
  double mx = *std::max_element(logits.begin(), logits.end());
  out.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
}

// Logits of a table row, after the tanh squash if the kind uses one.
inline void row_logits(const PolicyParams& p, int row,
                       std::vector<double>& out) {
  out.resize(p.n_actions);
  const double* th = p.theta.data() + static_cast<std::size_t>(row) * p.n_actions;
  if (p.kind == PolicyKind::softmax_tanh) {
    for (int a = 0; a < p.n_actions; ++a)
      out[a] = p.alpha_exploration * std::tanh(th[a] / p.alpha_exploration);
  } else {
    for (int a = 0; a < p.n_actions; ++a) out[a] = th[a];
  }
}

struct MlpWorkspace {
  std::vector<std::vector<double>> activations;  // per layer, post-nonlinearity
  std::vector<double> mean;
};

// Forward pass; activations[0] is the scaled input.
inline void mlp_forward(const PolicyParams& p, const std::vector<double>& obs,
                        MlpWorkspace& ws) {
  const int n_layers = static_cast<int>(p.layer_sizes.size());
  ws.activations.assign(n_layers, {});
  ws.activations[0].resize(p.layer_sizes[0]);
  for (int i = 0; i < p.layer_sizes[0]; ++i)
    ws.activations[0][i] = obs[i] / p.obs_scale[i];
  const double* th = p.theta.data();
  for (int l = 0; l + 1 < n_layers; ++l) {
    int in = p.layer_sizes[l], out = p.layer_sizes[l + 1];
    const double* W = th;
    const double* b = th + out * in;
    th = b + out;
    auto& prev = ws.activations[l];
    auto& next = ws.activations[l + 1];
    next.resize(out);
    const bool last = (l + 2 == n_layers);
    for (int i = 0; i < out; ++i) {
      double z = b[i];
      for (int j = 0; j < in; ++j) z += W[i * in + j] * prev[j];
      next[i] = last ? z : std::tanh(z);
    }
  }
  ws.mean = ws.activations.back();
}

}  // namespace detail

inline ActionDist action_distribution(const PolicyParams& p, const Feature& f) {
  ActionDist d;
  switch (p.kind) {
    case PolicyKind::softmax_tabular:
    case PolicyKind::softmax_tanh: {
      std::vector<double> logits;
      detail::row_logits(p, f.row, logits);
      detail::softmax_into(logits, d.probs);
      break;
    }
    case PolicyKind::bernoulli_direct: {
      double q = p.theta[f.row];
      if (!(q >= 0.0 && q <= 1.0))
        throw ValidationError("bernoulli_direct: probability outside [0,1]");
      d.probs = {1.0 - q, q};
      break;
    }
    case PolicyKind::gaussian_mlp: {
      detail::MlpWorkspace ws;
      detail::mlp_forward(p, f.obs, ws);
      d.mean = ws.mean;
      int out = p.layer_sizes.back();
      d.std_dev.resize(out);
      const double* log_std = p.theta.data() + (p.n_params() - out);
      for (int i = 0; i < out; ++i) d.std_dev[i] = std::exp(log_std[i]);
      break;
    }
  }
  return d;
}

// Adds scale * d(log pi(action | feature))/d(theta) into grad (discrete kinds).
inline void add_score_gradient(const PolicyParams& p, const Feature& f,
                               int action, double scale,
                               std::vector<double>& grad) {
  switch (p.kind) {
    case PolicyKind::softmax_tabular: {
      std::vector<double> logits, probs;
      detail::row_logits(p, f.row, logits);
      detail::softmax_into(logits, probs);
      double* g = grad.data() + static_cast<std::size_t>(f.row) * p.n_actions;
      for (int b = 0; b < p.n_actions; ++b)
        g[b] += scale * ((b == action ? 1.0 : 0.0) - probs[b]);
      break;
    }
    case PolicyKind::softmax_tanh: {
      std::vector<double> logits, probs;
      detail::row_logits(p, f.row, logits);
      detail::softmax_into(logits, probs);
      const double* th =
          p.theta.data() + static_cast<std::size_t>(f.row) * p.n_actions;
      double* g = grad.data() + static_cast<std::size_t>(f.row) * p.n_actions;
      for (int b = 0; b < p.n_actions; ++b) {
        double t = std::tanh(th[b] / p.alpha_exploration);
        g[b] += scale * ((b == action ? 1.0 : 0.0) - probs[b]) * (1.0 - t * t);
      }
      break;
    }
    case PolicyKind::bernoulli_direct: {
      double q = p.theta[f.row];
      grad[f.row] += scale * (action == 1 ? 1.0 / q : -1.0 / (1.0 - q));
      break;
    }
    case PolicyKind::gaussian_mlp:
      throw ArgumentError("score gradient: gaussian policy takes a vector action");
  }
}

// Continuous-action overload: backpropagates d(log pi)/d(theta) through the
// mean network and the log-std head.
inline void add_score_gradient(const PolicyParams& p, const Feature& f,
                               const std::vector<double>& action, double scale,
                               std::vector<double>& grad) {
  if (p.kind != PolicyKind::gaussian_mlp)
    throw ArgumentError("score gradient: discrete policy takes an int action");
  detail::MlpWorkspace ws;
  detail::mlp_forward(p, f.obs, ws);
  const int n_layers = static_cast<int>(p.layer_sizes.size());
  const int out = p.layer_sizes.back();
  const double* log_std = p.theta.data() + (p.n_params() - out);
  double* g_log_std = grad.data() + (p.n_params() - out);

  // delta at the mean output: (a - mu) / sigma^2.
  std::vector<double> delta(out);
  for (int i = 0; i < out; ++i) {
    double sigma = std::exp(log_std[i]);
    double z = (action[i] - ws.mean[i]) / sigma;
    delta[i] = z / sigma;
    g_log_std[i] += scale * (z * z - 1.0);
  }

  // Walk the layers backwards; offsets[l] is where layer l's W block starts.
  std::vector<int> offsets(n_layers - 1);
  int off = 0;
  for (int l = 0; l + 1 < n_layers; ++l) {
    offsets[l] = off;
    off += p.layer_sizes[l + 1] * (p.layer_sizes[l] + 1);
  }
  for (int l = n_layers - 2; l >= 0; --l) {
    int in = p.layer_sizes[l], o = p.layer_sizes[l + 1];
    const double* W = p.theta.data() + offsets[l];
    double* gW = grad.data() + offsets[l];
    double* gb = gW + o * in;
    const auto& prev = ws.activations[l];
    for (int i = 0; i < o; ++i) {
      gb[i] += scale * delta[i];
      for (int j = 0; j < in; ++j) gW[i * in + j] += scale * delta[i] * prev[j];
    }
    if (l == 0) break;
    std::vector<double> delta_prev(in, 0.0);
    for (int j = 0; j < in; ++j) {
      double acc = 0.0;
      for (int i = 0; i < o; ++i) acc += W[i * in + j] * delta[i];
      double a = ws.activations[l][j];  // tanh activation of layer l
      delta_prev[j] = acc * (1.0 - a * a);
    }
    delta = std::move(delta_prev);
  }
}

inline std::vector<double> score_gradient(const PolicyParams& p,
                                          const Feature& f, int action) {
  std::vector<double> g(p.theta.size(), 0.0);
  add_score_gradient(p, f, action, 1.0, g);
  return g;
}

inline std::vector<double> score_gradient(const PolicyParams& p,
                                          const Feature& f,
                                          const std::vector<double>& action) {
  std::vector<double> g(p.theta.size(), 0.0);
  add_score_gradient(p, f, action, 1.0, g);
  return g;
}

// Entropy of the action distribution at a feature, and its gradient added
// into grad with the given scale. For the Gaussian kind this is the
// differential entropy, which depends only on the log-std head.
inline double add_entropy_gradient(const PolicyParams& p, const Feature& f,
                                   double scale, std::vector<double>& grad) {
  if (p.kind == PolicyKind::gaussian_mlp) {
    const int out = p.layer_sizes.back();
    const double* log_std = p.theta.data() + (p.n_params() - out);
    double* g = grad.data() + (p.n_params() - out);
    const double half_log_2pie = 0.5 * std::log(2.0 * std::numbers::pi) + 0.5;
    double ent = 0.0;
    for (int i = 0; i < out; ++i) {
      ent += log_std[i] + half_log_2pie;
      g[i] += scale;
    }
    return ent;
  }
  ActionDist d = action_distribution(p, f);
  double ent = 0.0;
  for (double q : d.probs)
    if (q > 0.0) ent -= q * std::log(q);
  if (p.kind == PolicyKind::bernoulli_direct) {
    double q = p.theta[f.row];
    grad[f.row] += scale * std::log((1.0 - q) / q);
    return ent;
  }
  const double* th =
      p.theta.data() + static_cast<std::size_t>(f.row) * p.n_actions;
  double* g = grad.data() + static_cast<std::size_t>(f.row) * p.n_actions;
  for (int b = 0; b < p.n_actions; ++b) {
    double dH = -d.probs[b] * (std::log(std::max(d.probs[b], 1e-300)) + ent);
    if (p.kind == PolicyKind::softmax_tanh) {
      double t = std::tanh(th[b] / p.alpha_exploration);
      dH *= 1.0 - t * t;
    }
    g[b] += scale * dH;
  }
  return ent;
}

inline std::pair<double, std::vector<double>> entropy_and_gradient(
    const PolicyParams& p, const Feature& f) {
  std::vector<double> g(p.theta.size(), 0.0);
  double ent = add_entropy_gradient(p, f, 1.0, g);
  return {ent, std::move(g)};
}

inline int sample_discrete(const ActionDist& d, Rng& rng) {
  return rng.categorical(d.probs);
}

inline std::vector<double> sample_gaussian(const ActionDist& d, Rng& rng) {
  std::vector<double> a(d.mean.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] = d.mean[i] + d.std_dev[i] * rng.normal();
  return a;
}

// ---------------------------------------------------------------------------
// Bundles an indexer with its table for rollouts on finite MDPs; satisfies
// the policy concept of sample_trajectory.
// ---------------------------------------------------------------------------

class FinitePolicy {
 public:
  FinitePolicy() = default;

  FinitePolicy(const FiniteMdp& m, HistoryAbstraction abstraction,
               PolicyKind kind)
      : indexer_(m, abstraction),
        params_(PolicyParams::table(std::move(abstraction), kind,
                                    indexer_.n_rows(), m.n_actions)) {}

  FinitePolicy(FeatureIndexer indexer, PolicyParams params)
      : indexer_(std::move(indexer)), params_(std::move(params)) {
    params_.validate();
    if (params_.n_rows != indexer_.n_rows())
      throw ValidationError("finite policy: indexer/table row mismatch");
  }

  const FeatureIndexer& indexer() const { return indexer_; }
  PolicyParams& params() { return params_; }
  const PolicyParams& params() const { return params_; }

  Feature feature(const Trajectory& prefix, int s, int t,
                  double partial_sum) const {
    return indexer_.feature(prefix, s, t, partial_sum);
  }

  int sample_action(const FiniteMdp&, const Trajectory& prefix, int s, int t,
                    double partial_sum, Rng& rng) const {
    ActionDist d =
        action_distribution(params_, feature(prefix, s, t, partial_sum));
    return sample_discrete(d, rng);
  }

  std::vector<double> action_probabilities(const FiniteMdp&,
                                           const Trajectory& prefix, int s,
                                           int t, double partial_sum) const {
    return action_distribution(params_, feature(prefix, s, t, partial_sum))
        .probs;
  }

 private:
  FeatureIndexer indexer_;
  PolicyParams params_;
};

// Rebuilds the row indexer recorded in the parameters' abstraction; handy
// when only a parameter checkpoint is at hand.
inline FinitePolicy finite_policy_from_params(const FiniteMdp& m,
                                              PolicyParams params) {
  FeatureIndexer indexer(m, params.abstraction);
  return FinitePolicy(std::move(indexer), std::move(params));
}

}  // namespace cptrl
