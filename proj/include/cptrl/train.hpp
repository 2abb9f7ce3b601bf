#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cptrl/cpt.hpp"
#include "cptrl/envs.hpp"
#include "cptrl/errors.hpp"
#include "cptrl/mdp.hpp"
#include "cptrl/oracle.hpp"
#include "cptrl/phi.hpp"
#include "cptrl/policy.hpp"
#include "cptrl/rng.hpp"

namespace cptrl {

// How the trajectory weight phi is obtained each iteration.
enum class PhiMethod { quantile, piecewise_affine, exact_oracle };

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  int batch_n = 1000;
  int iterations = 200;
  double step_size = 1e-2;  // use ~1e-3 for the Gaussian network policy
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Entropy bonus folded into the score, with multiplicative per-iteration
  // decay of the weight.
  double entropy_weight = 0.05;
  double entropy_decay = 0.999;
  PhiMethod phi_method = PhiMethod::quantile;
  // When set, each iteration pairs one scoring trajectory with a batch used
  // only to build the phi table. The default reuses the whole batch for both
  // roles, which has lower variance with the same limit.
  bool literal_single_scoring = false;
  // Number of leading iterations run against the plain-expectation valuation
  // before switching to the requested one (risk-neutral warm start).
  int pretrain_iterations = 0;
  // Per-iteration geometric growth of the bounded-logit cap for the
  // softmax_tanh kind; 1.0 freezes it.
  double tanh_alpha_growth = 1.003;
  std::uint64_t seed = 0;
  // Record a parameter snapshot every this many iterations (0: none).
  int snapshot_every = 0;

  void validate() const {
    if (batch_n < 2) throw ConfigError("train config: batch_n must be >= 2");
    if (iterations < 0) throw ConfigError("train config: negative iterations");
    if (!(step_size > 0.0)) throw ConfigError("train config: step size must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
        !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
      throw ConfigError("train config: bad adam constants");
    if (entropy_weight < 0.0)
      throw ConfigError("train config: negative entropy weight");
    if (!(entropy_decay > 0.0 && entropy_decay <= 1.0))
      throw ConfigError("train config: entropy decay must be in (0,1]");
    if (pretrain_iterations < 0)
      throw ConfigError("train config: negative pretrain iterations");
    if (!(tanh_alpha_growth >= 1.0))
      throw ConfigError("train config: tanh growth must be >= 1");
    if (snapshot_every < 0)
      throw ConfigError("train config: negative snapshot stride");
  }
};

struct TrainResult {
  std::vector<double> cpt_curve;   // per-iteration batch estimate, pre-update
  std::vector<double> grad_norms;  // per-iteration l2 norm of the step gradient
  std::vector<int> snapshot_iterations;
  std::vector<std::vector<double>> snapshots;
  PolicyParams final_params;
  long long trajectory_count = 0;
};

struct GradDiagnostics {
  double cpt_estimate = 0.0;
  double phi_min = 0.0;
  double phi_max = 0.0;
  long long trajectories = 0;
};

// ---------------------------------------------------------------------------
// Continuous-environment rollouts (Gaussian network policy).
// ---------------------------------------------------------------------------

struct ContinuousStep {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
};

struct ContinuousTrajectory {
  std::vector<ContinuousStep> steps;
  double return_value = 0.0;
};

inline ContinuousTrajectory sample_continuous_trajectory(
    const ContinuousEnv& env, const PolicyParams& p, Rng& rng) {
  ContinuousTrajectory traj;
  std::vector<double> state = env.reset(rng);
  for (int t = 0; t < env.horizon(); ++t) {
    Feature f;
    f.obs = state;
    ActionDist d = action_distribution(p, f);
    std::vector<double> action = sample_gaussian(d, rng);
    ContinuousEnv::StepOut out = env.step(state, action, rng);
    traj.steps.push_back({std::move(state), std::move(action), out.reward});
    traj.return_value += out.reward;
    if (out.done) break;
    state = std::move(out.next_state);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Batch gradient estimation.
// ---------------------------------------------------------------------------

namespace detail {

// Evaluates phi on each batch return with the requested method. The exact
// method needs the true return law, which only the finite-MDP path can
// supply; callers pass nullptr otherwise.
class PhiEvaluator {
 public:
  PhiEvaluator(PhiMethod method, const std::vector<double>& batch_returns,
               const CptSpec& spec, const DiscreteDist* exact_law)
      : method_(method), spec_(&spec) {
    switch (method) {
      case PhiMethod::quantile:
        quantile_.emplace(batch_returns, spec);
        break;
      case PhiMethod::piecewise_affine:
        piecewise_.emplace(batch_returns, spec);
        break;
      case PhiMethod::exact_oracle:
        if (exact_law == nullptr)
          throw UnsupportedError(
              "phi method exact_oracle: needs an enumerable finite environment");
        law_ = exact_law;
        break;
    }
  }

  double operator()(double v) {
    switch (method_) {
      case PhiMethod::quantile:
        return quantile_->phi(v).value();
      case PhiMethod::piecewise_affine:
        return piecewise_->phi(v).value();
      case PhiMethod::exact_oracle: {
        auto it = cache_.find(v);
        if (it != cache_.end()) return it->second;
        double out = phi_exact_discrete(v, *law_, *spec_).value();
        cache_.emplace(v, out);
        return out;
      }
    }
    return 0.0;  // unreachable
  }

 private:
  PhiMethod method_;
  const CptSpec* spec_;
  std::optional<QuantileTable> quantile_;
  std::optional<PiecewiseAffineTable> piecewise_;
  const DiscreteDist* law_ = nullptr;
  std::map<double, double> cache_;
};

// Adds phi * (score + entropy_weight * entropy-gradient) for one finite-MDP
// trajectory into grad.
inline void add_trajectory_terms(const FinitePolicy& pol, const Trajectory& traj,
                                 double phi_scale, double entropy_weight,
                                 std::vector<double>& grad) {
  Trajectory prefix;
  double partial = 0.0;
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const Step& st = traj.steps[t];
    Feature f = pol.feature(prefix, st.state, static_cast<int>(t), partial);
    add_score_gradient(pol.params(), f, st.action, phi_scale, grad);
    if (entropy_weight > 0.0)
      add_entropy_gradient(pol.params(), f, phi_scale * entropy_weight, grad);
    prefix.steps.push_back(st);
    partial += st.reward;
  }
}

inline void add_trajectory_terms(const PolicyParams& params,
                                 const ContinuousTrajectory& traj,
                                 double phi_scale, double entropy_weight,
                                 std::vector<double>& grad) {
  for (const ContinuousStep& st : traj.steps) {
    Feature f;
    f.obs = st.state;
    add_score_gradient(params, f, st.action, phi_scale, grad);
    if (entropy_weight > 0.0)
      add_entropy_gradient(params, f, phi_scale * entropy_weight, grad);
  }
}

template <class Traj, class SampleOne, class AddTerms>
std::vector<double> batch_gradient_core(
    std::size_t n_params, const CptSpec& spec, int batch_n, PhiMethod method,
    const DiscreteDist* exact_law, double entropy_weight,
    bool literal_single_scoring, SampleOne&& sample_one, AddTerms&& add_terms,
    GradDiagnostics* diag) {
  if (batch_n < 2) throw ArgumentError("gradient estimate: batch_n must be >= 2");

  // In the literal layout one extra trajectory is drawn up front and is the
  // only one that contributes score terms.
  std::optional<Traj> scoring;
  if (literal_single_scoring) scoring.emplace(sample_one());

  std::vector<Traj> batch;
  batch.reserve(batch_n);
  std::vector<double> returns(batch_n);
  for (int j = 0; j < batch_n; ++j) {
    batch.push_back(sample_one());
    returns[j] = batch.back().return_value;
  }

  PhiEvaluator phi(method, returns, spec, exact_law);
  std::vector<double> grad(n_params, 0.0);
  double phi_min = std::numeric_limits<double>::infinity();
  double phi_max = -std::numeric_limits<double>::infinity();
  if (literal_single_scoring) {
    double p = phi(scoring->return_value);
    phi_min = phi_max = p;
    add_terms(*scoring, p, entropy_weight, grad);
  } else {
    for (int j = 0; j < batch_n; ++j) {
      double p = phi(returns[j]);
      phi_min = std::min(phi_min, p);
      phi_max = std::max(phi_max, p);
      add_terms(batch[j], p / batch_n, entropy_weight, grad);
    }
  }

  if (diag != nullptr) {
    diag->cpt_estimate = exact_law != nullptr
                             ? cpt_value_exact(*exact_law, spec)
                             : cpt_value_empirical(returns, spec);
    diag->phi_min = phi_min;
    diag->phi_max = phi_max;
    diag->trajectories = batch_n + (literal_single_scoring ? 1 : 0);
  }
  return grad;
}

}  // namespace detail

inline std::vector<double> estimate_policy_gradient(
    const FiniteMdp& m, const FinitePolicy& pol, const CptSpec& spec,
    int batch_n, PhiMethod method, Rng& rng, GradDiagnostics* diag = nullptr,
    double entropy_weight = 0.0, bool literal_single_scoring = false) {
  std::optional<DiscreteDist> law;
  if (method == PhiMethod::exact_oracle)
    law.emplace(enumerate_return_distribution(m, pol));
  return detail::batch_gradient_core<Trajectory>(
      pol.params().theta.size(), spec, batch_n, method,
      law ? &*law : nullptr, entropy_weight, literal_single_scoring,
      [&] { return sample_trajectory(m, pol, rng); },
      [&](const Trajectory& traj, double scale, double ew,
          std::vector<double>& g) {
        detail::add_trajectory_terms(pol, traj, scale, ew, g);
      },
      diag);
}

inline std::vector<double> estimate_policy_gradient(
    const ContinuousEnv& env, const PolicyParams& params, const CptSpec& spec,
    int batch_n, PhiMethod method, Rng& rng, GradDiagnostics* diag = nullptr,
    double entropy_weight = 0.0, bool literal_single_scoring = false) {
  return detail::batch_gradient_core<ContinuousTrajectory>(
      params.theta.size(), spec, batch_n, method, nullptr, entropy_weight,
      literal_single_scoring,
      [&] { return sample_continuous_trajectory(env, params, rng); },
      [&](const ContinuousTrajectory& traj, double scale, double ew,
          std::vector<double>& g) {
        detail::add_trajectory_terms(params, traj, scale, ew, g);
      },
      diag);
}

// ---------------------------------------------------------------------------
// Optimizers and the shared ascent loop.
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  long long t = 0;

  explicit AdamState(std::size_t d) : m(d, 0.0), v(d, 0.0) {}
};

namespace detail {

inline void ascend(PolicyParams& params, const std::vector<double>& grad,
                   const TrainConfig& cfg, AdamState& adam) {
  std::vector<double>& th = params.theta;
  if (cfg.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < th.size(); ++i)
      th[i] += cfg.step_size * grad[i];
  } else {
    ++adam.t;
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, adam.t);
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, adam.t);
    for (std::size_t i = 0; i < th.size(); ++i) {
      adam.m[i] = cfg.adam_beta1 * adam.m[i] + (1.0 - cfg.adam_beta1) * grad[i];
      adam.v[i] =
          cfg.adam_beta2 * adam.v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
      th[i] += cfg.step_size * (adam.m[i] / c1) /
               (std::sqrt(adam.v[i] / c2) + cfg.adam_eps);
    }
  }
  params.clamp_parameters();
}

inline double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// One ascent loop shared by the finite and continuous paths. EstimateAt is
// (iteration k, spec, diagnostics&) -> gradient vector.
template <class EstimateAt>
TrainResult train_core(PolicyParams& params, const CptSpec& spec,
                       const TrainConfig& cfg, EstimateAt&& estimate_at) {
  cfg.validate();
  TrainResult res;
  AdamState adam(params.theta.size());
  double entropy_weight = cfg.entropy_weight;
  const CptSpec plain = CptSpec::expectation();

  for (int k = 0; k < cfg.iterations; ++k) {
    const CptSpec& active = k < cfg.pretrain_iterations ? plain : spec;
    GradDiagnostics diag;
    std::vector<double> grad = estimate_at(k, active, entropy_weight, diag);

    const double gnorm = l2_norm(grad);
    if (!std::isfinite(gnorm))
      throw TrainError("training: non-finite gradient", k);
    ascend(params, grad, cfg, adam);
    for (double th : params.theta)
      if (!std::isfinite(th))
        throw TrainError("training: parameter overflow", k);

    if (params.kind == PolicyKind::softmax_tanh)
      params.alpha_exploration *= cfg.tanh_alpha_growth;
    entropy_weight *= cfg.entropy_decay;

    res.cpt_curve.push_back(diag.cpt_estimate);
    res.grad_norms.push_back(gnorm);
    res.trajectory_count += diag.trajectories;
    if (cfg.snapshot_every > 0 && (k + 1) % cfg.snapshot_every == 0) {
      res.snapshot_iterations.push_back(k + 1);
      res.snapshots.push_back(params.theta);
    }
  }
  res.final_params = params;
  return res;
}

}  // namespace detail

// Trains the policy in place and reports the learning curve. Batches are
// drawn from an RNG stream derived from (seed, iteration), so a run is
// reproducible from the config alone.
inline TrainResult train(const FiniteMdp& m, FinitePolicy& pol,
                         const CptSpec& spec, const TrainConfig& cfg) {
  return detail::train_core(
      pol.params(), spec, cfg,
      [&](int k, const CptSpec& active, double entropy_weight,
          GradDiagnostics& diag) {
        Rng rng = Rng::stream({cfg.seed, 0x9C7u, static_cast<std::uint64_t>(k)});
        return estimate_policy_gradient(m, pol, active, cfg.batch_n,
                                        cfg.phi_method, rng, &diag,
                                        entropy_weight,
                                        cfg.literal_single_scoring);
      });
}

inline TrainResult train(const ContinuousEnv& env, PolicyParams& params,
                         const CptSpec& spec, const TrainConfig& cfg) {
  if (cfg.phi_method == PhiMethod::exact_oracle)
    throw UnsupportedError(
        "train: exact_oracle phi needs an enumerable finite environment");
  return detail::train_core(
      params, spec, cfg,
      [&](int k, const CptSpec& active, double entropy_weight,
          GradDiagnostics& diag) {
        Rng rng = Rng::stream({cfg.seed, 0x9C7u, static_cast<std::uint64_t>(k)});
        return estimate_policy_gradient(env, params, active, cfg.batch_n,
                                        cfg.phi_method, rng, &diag,
                                        entropy_weight,
                                        cfg.literal_single_scoring);
      });
}

// ---------------------------------------------------------------------------
// Evaluation: empirical valuation plus a return histogram.
// ---------------------------------------------------------------------------

// Linear-interpolation sample quantile at level q in [0, 1].
inline double sample_quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw ArgumentError("quantile: no samples");
  if (!(q >= 0.0 && q <= 1.0))
    throw ArgumentError("quantile: level must be in [0, 1]");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= xs.size()) return xs.back();
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[lo + 1] - xs[lo]);
}

inline double sample_median(std::vector<double> xs) {
  return sample_quantile(std::move(xs), 0.5);
}

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  long long count = 0;
};

inline std::vector<HistogramBin> make_histogram(const std::vector<double>& xs,
                                                int n_bins = 30) {
  if (xs.empty()) throw ArgumentError("histogram: no samples");
  if (n_bins < 1) throw ArgumentError("histogram: need at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
  const double lo = *lo_it, hi = *hi_it;
  if (lo == hi)
    return {{lo, hi, static_cast<long long>(xs.size())}};
  std::vector<HistogramBin> bins(n_bins);
  const double width = (hi - lo) / n_bins;
  for (int b = 0; b < n_bins; ++b) {
    bins[b].lo = lo + b * width;
    bins[b].hi = b + 1 == n_bins ? hi : lo + (b + 1) * width;
  }
  for (double x : xs) {
    int b = std::min(n_bins - 1, static_cast<int>((x - lo) / width));
    ++bins[b].count;
  }
  return bins;
}

struct EvalResult {
  double cpt_estimate = 0.0;
  std::vector<double> returns;
  std::vector<HistogramBin> histogram;
};

template <class Pol>
EvalResult evaluate(const FiniteMdp& m, const Pol& pol, const CptSpec& spec,
                    int n_episodes, Rng& rng, int n_bins = 30) {
  if (n_episodes < 1) throw ArgumentError("evaluate: need at least one episode");
  EvalResult out;
  out.returns.reserve(n_episodes);
  for (int i = 0; i < n_episodes; ++i)
    out.returns.push_back(sample_trajectory(m, pol, rng).return_value);
  out.cpt_estimate = cpt_value_empirical(out.returns, spec);
  out.histogram = make_histogram(out.returns, n_bins);
  return out;
}

inline EvalResult evaluate(const ContinuousEnv& env, const PolicyParams& params,
                           const CptSpec& spec, int n_episodes, Rng& rng,
                           int n_bins = 30) {
  if (n_episodes < 1) throw ArgumentError("evaluate: need at least one episode");
  EvalResult out;
  out.returns.reserve(n_episodes);
  for (int i = 0; i < n_episodes; ++i)
    out.returns.push_back(
        sample_continuous_trajectory(env, params, rng).return_value);
  out.cpt_estimate = cpt_value_empirical(out.returns, spec);
  out.histogram = make_histogram(out.returns, n_bins);
  return out;
}

}  // namespace cptrl
