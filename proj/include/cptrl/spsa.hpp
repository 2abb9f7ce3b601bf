#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cptrl/cpt.hpp"
#include "cptrl/envs.hpp"
#include "cptrl/errors.hpp"
#include "cptrl/mdp.hpp"
#include "cptrl/policy.hpp"
#include "cptrl/rng.hpp"
#include "cptrl/train.hpp"

namespace cptrl {

struct SpsaConfig {
  int batch_n = 1000;        // rollouts per valuation measurement
  int iterations = 100;
  double step_initial = 0.1;     // a_k = step_initial / (k+1)^step_exponent
  double step_exponent = 0.602;
  double delta_initial = 0.05;   // d_k = delta_initial / (k+1)^delta_exponent
  double delta_exponent = 0.101;
  std::uint64_t seed = 0;
  int snapshot_every = 0;

  void validate() const {
    if (batch_n < 2) throw ConfigError("spsa config: batch_n must be >= 2");
    if (iterations < 0) throw ConfigError("spsa config: negative iterations");
    if (!(step_initial > 0.0) || !(delta_initial > 0.0))
      throw ConfigError("spsa config: step and perturbation must be > 0");
    if (!(step_exponent > 0.0 && step_exponent <= 1.0) ||
        !(delta_exponent > 0.0 && delta_exponent <= 1.0))
      throw ConfigError("spsa config: exponents must be in (0,1]");
    if (snapshot_every < 0)
      throw ConfigError("spsa config: negative snapshot stride");
  }
};

// Simultaneous-perturbation estimate against an arbitrary deterministic
// objective: one Rademacher direction, two objective calls.
template <class Objective>
std::vector<double> spsa_gradient_objective(const std::vector<double>& theta,
                                            double delta, Rng& rng,
                                            Objective&& objective) {
  if (!(delta > 0.0)) throw ArgumentError("spsa: perturbation must be > 0");
  if (theta.empty()) throw ArgumentError("spsa: empty parameter vector");
  std::vector<int> dir(theta.size());
  for (int& d : dir) d = rng.rademacher();
  std::vector<double> up = theta, dn = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    up[i] += delta * dir[i];
    dn[i] -= delta * dir[i];
  }
  const double c_up = objective(up);
  const double c_dn = objective(dn);
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i)
    g[i] = (c_up - c_dn) / (2.0 * delta * dir[i]);
  return g;
}

namespace detail {

struct SpsaMeasurement {
  std::vector<double> grad;
  double c_up = 0.0;
  double c_dn = 0.0;
};

// Rollout-based measurement. The two perturbed evaluations reuse one derived
// RNG stream (common random numbers), so trajectory noise largely cancels in
// the difference while the estimator stays unbiased.
template <class EmpiricalAt>
SpsaMeasurement spsa_measure(const std::vector<double>& theta, double delta,
                             Rng& rng, EmpiricalAt&& empirical_at) {
  if (!(delta > 0.0)) throw ArgumentError("spsa: perturbation must be > 0");
  if (theta.empty()) throw ArgumentError("spsa: empty parameter vector");
  std::vector<int> dir(theta.size());
  for (int& d : dir) d = rng.rademacher();
  const std::uint64_t crn_seed = rng.bits();
  std::vector<double> up = theta, dn = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    up[i] += delta * dir[i];
    dn[i] -= delta * dir[i];
  }
  SpsaMeasurement out;
  {
    Rng eval = Rng::stream({crn_seed, 0xC21u});
    out.c_up = empirical_at(up, eval);
  }
  {
    Rng eval = Rng::stream({crn_seed, 0xC21u});
    out.c_dn = empirical_at(dn, eval);
  }
  out.grad.resize(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i)
    out.grad[i] = (out.c_up - out.c_dn) / (2.0 * delta * dir[i]);
  return out;
}

inline double empirical_cpt_at(const FiniteMdp& m, const FinitePolicy& proto,
                               const std::vector<double>& theta,
                               const CptSpec& spec, int batch_n, Rng& rng) {
  FinitePolicy pol = proto;
  pol.params().theta = theta;
  pol.params().clamp_parameters();
  std::vector<double> returns(batch_n);
  for (int j = 0; j < batch_n; ++j)
    returns[j] = sample_trajectory(m, pol, rng).return_value;
  return cpt_value_empirical(std::move(returns), spec);
}

inline double empirical_cpt_at(const ContinuousEnv& env,
                               const PolicyParams& proto,
                               const std::vector<double>& theta,
                               const CptSpec& spec, int batch_n, Rng& rng) {
  PolicyParams params = proto;
  params.theta = theta;
  params.clamp_parameters();
  std::vector<double> returns(batch_n);
  for (int j = 0; j < batch_n; ++j)
    returns[j] = sample_continuous_trajectory(env, params, rng).return_value;
  return cpt_value_empirical(std::move(returns), spec);
}

template <class Measure>
TrainResult train_spsa_core(PolicyParams& params, const SpsaConfig& cfg,
                            int batch_n, Measure&& measure) {
  cfg.validate();
  TrainResult res;
  for (int k = 0; k < cfg.iterations; ++k) {
    const double a_k = cfg.step_initial / std::pow(k + 1.0, cfg.step_exponent);
    const double d_k = cfg.delta_initial / std::pow(k + 1.0, cfg.delta_exponent);
    Rng rng = Rng::stream({cfg.seed, 0x5A5Au, static_cast<std::uint64_t>(k)});
    SpsaMeasurement meas = measure(params.theta, d_k, rng);

    const double gnorm = l2_norm(meas.grad);
    if (!std::isfinite(gnorm))
      throw TrainError("spsa training: non-finite gradient", k);
    for (std::size_t i = 0; i < params.theta.size(); ++i)
      params.theta[i] += a_k * meas.grad[i];
    params.clamp_parameters();
    for (double th : params.theta)
      if (!std::isfinite(th))
        throw TrainError("spsa training: parameter overflow", k);

    res.cpt_curve.push_back(0.5 * (meas.c_up + meas.c_dn));
    res.grad_norms.push_back(gnorm);
    res.trajectory_count += 2LL * batch_n;
    if (cfg.snapshot_every > 0 && (k + 1) % cfg.snapshot_every == 0) {
      res.snapshot_iterations.push_back(k + 1);
      res.snapshots.push_back(params.theta);
    }
  }
  res.final_params = params;
  return res;
}

}  // namespace detail

inline std::vector<double> spsa_gradient(const FiniteMdp& m,
                                         const FinitePolicy& pol,
                                         const CptSpec& spec, double delta,
                                         int batch_n, Rng& rng) {
  return detail::spsa_measure(pol.params().theta, delta, rng,
                              [&](const std::vector<double>& th, Rng& eval) {
                                return detail::empirical_cpt_at(
                                    m, pol, th, spec, batch_n, eval);
                              })
      .grad;
}

inline std::vector<double> spsa_gradient(const ContinuousEnv& env,
                                         const PolicyParams& params,
                                         const CptSpec& spec, double delta,
                                         int batch_n, Rng& rng) {
  return detail::spsa_measure(params.theta, delta, rng,
                              [&](const std::vector<double>& th, Rng& eval) {
                                return detail::empirical_cpt_at(
                                    env, params, th, spec, batch_n, eval);
                              })
      .grad;
}

inline TrainResult train_spsa(const FiniteMdp& m, FinitePolicy& pol,
                              const CptSpec& spec, const SpsaConfig& cfg) {
  return detail::train_spsa_core(
      pol.params(), cfg, cfg.batch_n,
      [&](const std::vector<double>& th, double delta, Rng& rng) {
        return detail::spsa_measure(
            th, delta, rng, [&](const std::vector<double>& t, Rng& eval) {
              return detail::empirical_cpt_at(m, pol, t, spec, cfg.batch_n,
                                              eval);
            });
      });
}

inline TrainResult train_spsa(const ContinuousEnv& env, PolicyParams& params,
                              const CptSpec& spec, const SpsaConfig& cfg) {
  return detail::train_spsa_core(
      params, cfg, cfg.batch_n,
      [&](const std::vector<double>& th, double delta, Rng& rng) {
        return detail::spsa_measure(
            th, delta, rng, [&](const std::vector<double>& t, Rng& eval) {
              return detail::empirical_cpt_at(env, params, t, spec,
                                              cfg.batch_n, eval);
            });
      });
}

}  // namespace cptrl
