#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "cptrl/envs.hpp"
#include "cptrl/oracle.hpp"
#include "cptrl/policy.hpp"
#include "cptrl/rng.hpp"
#include "cptrl/train.hpp"

using namespace cptrl;
using Catch::Approx;

namespace {

CptSpec rs_spec() {
  return {Utility::identity(), Weight::preset("w_rs"), Weight::preset("w_rs")};
}

FinitePolicy two_state_bernoulli(double p) {
  FinitePolicy pol(two_state_counterexample(), HistoryAbstraction::markov(),
                   PolicyKind::bernoulli_direct);
  pol.params().theta[0] = p;
  return pol;
}

// Plain score-function (REINFORCE) estimator on an explicit batch, written
// to mirror the production accumulation order step for step.
std::vector<double> reinforce_reference(const FiniteMdp& m,
                                        const FinitePolicy& pol, int batch_n,
                                        Rng& rng) {
  std::vector<Trajectory> batch;
  for (int j = 0; j < batch_n; ++j)
    batch.push_back(sample_trajectory(m, pol, rng));
  std::vector<double> grad(pol.params().theta.size(), 0.0);
  for (const Trajectory& traj : batch) {
    Trajectory prefix;
    double partial = 0.0;
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const Step& st = traj.steps[t];
      Feature f = pol.feature(prefix, st.state, static_cast<int>(t), partial);
      add_score_gradient(pol.params(), f, st.action,
                         traj.return_value / batch_n, grad);
      prefix.steps.push_back(st);
      partial += st.reward;
    }
  }
  return grad;
}

// Expectation of the sampled estimator, taken over every trajectory of the
// environment instead of a Monte-Carlo batch.
std::vector<double> enumerated_estimator_mean(const FiniteMdp& m,
                                              const FinitePolicy& pol,
                                              const CptSpec& spec) {
  DiscreteDist law = enumerate_return_distribution(m, pol);
  std::vector<double> grad(pol.params().theta.size(), 0.0);
  Trajectory prefix;
  long long leaves = 0;
  auto on_leaf = [&](const Trajectory& path, double sum, double prob) {
    const double phi = phi_exact_discrete(sum, law, spec).value();
    Trajectory partial;
    double partial_sum = 0.0;
    for (std::size_t t = 0; t < path.steps.size(); ++t) {
      const Step& st = path.steps[t];
      Feature f = pol.feature(partial, st.state, static_cast<int>(t), partial_sum);
      add_score_gradient(pol.params(), f, st.action, prob * phi, grad);
      partial.steps.push_back(st);
      partial_sum += st.reward;
    }
  };
  for (int s = 0; s < m.n_states; ++s) {
    if (m.initial_dist[s] <= 0.0) continue;
    detail::enumerate_paths(m, pol, prefix, s, 0, 0.0, m.initial_dist[s],
                            1000000, leaves, on_leaf);
  }
  return grad;
}

// One-step environment whose reward is infinite: any training iteration on it
// must abort with a diagnosable error instead of updating parameters.
struct BrokenEnv final : ContinuousEnv {
  int state_dim() const override { return 1; }
  int action_dim() const override { return 1; }
  int horizon() const override { return 1; }
  double r_max() const override { return 1.0; }
  std::vector<double> observation_scale() const override { return {1.0}; }
  std::vector<double> reset(Rng&) const override { return {0.0}; }
  StepOut step(const std::vector<double>&, const std::vector<double>&,
               Rng&) const override {
    return {{0.0}, std::numeric_limits<double>::infinity(), true};
  }
};

}  // namespace

TEST_CASE("identity valuation collapses to the plain score-function estimator") {
  FiniteMdp m = markov_test_env();
  CptSpec plain;
  FinitePolicy pol(m, HistoryAbstraction::markov(), PolicyKind::softmax_tabular);
  Rng init = Rng::stream({0x5EED, 1});
  for (double& th : pol.params().theta) th = init.uniform(-1.0, 1.0);

  Rng rng_a = Rng::stream({0xABCD, 7});
  Rng rng_b = Rng::stream({0xABCD, 7});
  GradDiagnostics diag;
  std::vector<double> est =
      estimate_policy_gradient(m, pol, plain, 500, PhiMethod::quantile, rng_a, &diag);
  std::vector<double> ref = reinforce_reference(m, pol, 500, rng_b);

  REQUIRE(est.size() == ref.size());
  for (std::size_t i = 0; i < est.size(); ++i) CHECK(est[i] == ref[i]);
  CHECK(diag.trajectories == 500);

  // The piecewise-affine table must collapse identically as well.
  Rng rng_c = Rng::stream({0xABCD, 7});
  std::vector<double> est_pw = estimate_policy_gradient(
      m, pol, plain, 500, PhiMethod::piecewise_affine, rng_c);
  for (std::size_t i = 0; i < est_pw.size(); ++i) CHECK(est_pw[i] == ref[i]);
}

TEST_CASE("enumerated estimator mean equals the exact gradient") {
  struct Case {
    FiniteMdp env;
    CptSpec spec;
  };
  std::vector<Case> cases;
  cases.push_back({two_state_counterexample(), rs_spec()});
  cases.push_back({markov_test_env(),
                   {Utility::kahneman_tversky(), Weight::kahneman_tversky(0.61),
                    Weight::kahneman_tversky(0.69)}});

  int id = 0;
  for (const Case& c : cases) {
    FinitePolicy pol(c.env, HistoryAbstraction::markov(),
                     PolicyKind::softmax_tabular);
    Rng init = Rng::stream({0x1111, static_cast<std::uint64_t>(id++)});
    for (double& th : pol.params().theta) th = init.uniform(-1.0, 1.0);

    std::vector<double> mean = enumerated_estimator_mean(c.env, pol, c.spec);
    std::vector<double> exact = exact_policy_gradient(c.env, pol, c.spec);
    REQUIRE(mean.size() == exact.size());
    for (std::size_t i = 0; i < mean.size(); ++i)
      CHECK(mean[i] == Approx(exact[i]).margin(1e-10));
  }
}

TEST_CASE("stochastic gradient estimate is unbiased within monte-carlo error") {
  FiniteMdp m = two_state_counterexample();
  CptSpec spec = rs_spec();
  FinitePolicy pol = two_state_bernoulli(0.4);

  const int reps = 30, batch = 10000;
  std::vector<double> estimates(reps);
  for (int r = 0; r < reps; ++r) {
    Rng rng = Rng::stream({0xB1A5, static_cast<std::uint64_t>(r)});
    GradDiagnostics diag;
    std::vector<double> g = estimate_policy_gradient(
        m, pol, spec, batch, PhiMethod::quantile, rng, &diag);
    estimates[r] = g[0];
    CHECK(diag.trajectories == batch);
    CHECK(diag.phi_min <= diag.phi_max);
    CHECK(diag.cpt_estimate == Approx(exact_cpt(m, pol, spec)).margin(0.05));
  }
  double mean = 0.0;
  for (double e : estimates) mean += e;
  mean /= reps;
  double var = 0.0;
  for (double e : estimates) var += (e - mean) * (e - mean);
  var /= reps - 1;
  const double se = std::sqrt(var / reps);
  const double target = -5.0 / 36.0;
  CHECK(std::abs(mean - target) <= 3.0 * se + 1e-12);
  CHECK(std::abs(mean - target) <= 0.05);
}

TEST_CASE("exact-gradient ascent climbs the valuation and is captured at the peak") {
  FiniteMdp m = two_state_counterexample();
  CptSpec spec = rs_spec();

  SECTION("kinked distortion: monotone away from the kink, trapped near it") {
    FinitePolicy pol = two_state_bernoulli(0.5);
    const double alpha = 0.01;
    double prev_value = exact_cpt(m, pol, spec);
    double prev_p = 0.5;
    for (int k = 0; k < 400; ++k) {
      std::vector<double> g = exact_policy_gradient(m, pol, spec);
      pol.params().theta[0] += alpha * g[0];
      pol.params().clamp_parameters();
      const double p = pol.params().theta[0];
      const double value = exact_cpt(m, pol, spec);
      const bool same_side = (prev_p - 0.2) * (p - 0.2) > 0.0;
      if (same_side) CHECK(value >= prev_value - 1e-13);
      if (k >= 250) CHECK(std::abs(p - 0.2) <= 0.011);
      prev_value = value;
      prev_p = p;
    }
  }

  SECTION("smooth distortion: monotone throughout") {
    CptSpec smooth{Utility::identity(), Weight::kahneman_tversky(0.61),
                   Weight::kahneman_tversky(0.61)};
    FinitePolicy pol = two_state_bernoulli(0.5);
    double prev_value = exact_cpt(m, pol, smooth);
    for (int k = 0; k < 200; ++k) {
      std::vector<double> g = exact_policy_gradient(m, pol, smooth);
      pol.params().theta[0] += 0.005 * g[0];
      pol.params().clamp_parameters();
      const double value = exact_cpt(m, pol, smooth);
      CHECK(value >= prev_value - 1e-13);
      prev_value = value;
    }
  }
}

TEST_CASE("training the bandit finds the distorted optimum") {
  FiniteMdp m = two_state_counterexample();
  CptSpec spec = rs_spec();

  TrainConfig cfg;
  cfg.batch_n = 300;
  cfg.iterations = 150;
  cfg.step_size = 0.02;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.entropy_weight = 0.0;
  cfg.phi_method = PhiMethod::quantile;
  cfg.seed = 7;
  cfg.snapshot_every = 50;

  FinitePolicy pol = two_state_bernoulli(0.5);
  TrainResult res = train(m, pol, spec, cfg);
  CHECK(std::abs(pol.params().theta[0] - 0.2) <= 0.1);
  CHECK(res.cpt_curve.size() == 150);
  CHECK(res.grad_norms.size() == 150);
  CHECK(res.trajectory_count == 150LL * 300);
  REQUIRE(res.snapshot_iterations.size() == 3);
  CHECK(res.snapshot_iterations[0] == 50);
  CHECK(res.snapshot_iterations[2] == 150);
  CHECK(res.snapshots[0].size() == pol.params().theta.size());
  CHECK(res.final_params.theta[0] == pol.params().theta[0]);
  // Late curve values sit near the optimum value, early ones near the start.
  CHECK(res.cpt_curve.back() == Approx(43.0 / 36.0).margin(0.08));

  SECTION("adam variant") {
    TrainConfig acfg = cfg;
    acfg.optimizer = OptimizerKind::adam;
    acfg.step_size = 0.01;
    FinitePolicy apol = two_state_bernoulli(0.5);
    train(m, apol, spec, acfg);
    CHECK(std::abs(apol.params().theta[0] - 0.2) <= 0.1);
  }

  SECTION("literal single-scoring layout books one extra trajectory") {
    TrainConfig lcfg = cfg;
    lcfg.literal_single_scoring = true;
    lcfg.iterations = 40;
    FinitePolicy lpol = two_state_bernoulli(0.5);
    TrainResult lres = train(m, lpol, spec, lcfg);
    CHECK(lres.trajectory_count == 40LL * 301);
    CHECK(std::isfinite(lpol.params().theta[0]));
  }

  SECTION("risk-neutral warm start pursues the plain expectation instead") {
    TrainConfig pcfg = cfg;
    pcfg.pretrain_iterations = cfg.iterations;  // never switches over
    FinitePolicy ppol = two_state_bernoulli(0.5);
    train(m, ppol, spec, pcfg);
    // The safe arm maximizes expected return, so p heads to the clamp floor.
    CHECK(ppol.params().theta[0] <= 0.1);
  }
}

TEST_CASE("bounded-logit exploration cap grows on schedule") {
  FiniteMdp m = two_state_counterexample();
  TrainConfig cfg;
  cfg.batch_n = 50;
  cfg.iterations = 10;
  cfg.entropy_weight = 0.0;
  cfg.seed = 3;
  FinitePolicy pol(m, HistoryAbstraction::markov(), PolicyKind::softmax_tanh);
  TrainResult res = train(m, pol, rs_spec(), cfg);
  CHECK(pol.params().alpha_exploration == Approx(std::pow(1.003, 10)).margin(1e-12));
  CHECK(res.cpt_curve.size() == 10);
}

TEST_CASE("entropy bonus enters the gradient as a weighted score term") {
  FiniteMdp m = markov_test_env();
  CptSpec spec = rs_spec();
  FinitePolicy pol(m, HistoryAbstraction::markov(), PolicyKind::softmax_tabular);
  Rng init = Rng::stream({0xE27, 99});
  for (double& th : pol.params().theta) th = init.uniform(-1.0, 1.0);

  const double weight = 0.37;
  Rng rng_a = Rng::stream({0xE27, 0});
  std::vector<double> with_entropy = estimate_policy_gradient(
      m, pol, spec, 200, PhiMethod::quantile, rng_a, nullptr, weight);

  // Reference: replay the same batch and add phi * weight * dH by hand.
  Rng rng_b = Rng::stream({0xE27, 0});
  std::vector<Trajectory> batch;
  std::vector<double> returns;
  for (int j = 0; j < 200; ++j) {
    batch.push_back(sample_trajectory(m, pol, rng_b));
    returns.push_back(batch.back().return_value);
  }
  QuantileTable table(returns, spec);
  std::vector<double> ref(pol.params().theta.size(), 0.0);
  for (const Trajectory& traj : batch) {
    const double phi = table.phi(traj.return_value).value();
    Trajectory prefix;
    double partial = 0.0;
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const Step& st = traj.steps[t];
      Feature f = pol.feature(prefix, st.state, static_cast<int>(t), partial);
      add_score_gradient(pol.params(), f, st.action, phi / 200, ref);
      add_entropy_gradient(pol.params(), f, phi / 200 * weight, ref);
      prefix.steps.push_back(st);
      partial += st.reward;
    }
  }
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(with_entropy[i] == Approx(ref[i]).margin(1e-15));

  // And it changes the answer relative to the unregularized estimator.
  Rng rng_c = Rng::stream({0xE27, 0});
  std::vector<double> without = estimate_policy_gradient(
      m, pol, spec, 200, PhiMethod::quantile, rng_c);
  double diff = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i)
    diff += std::abs(with_entropy[i] - without[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("training reaches the risk-neutral optimum on the reward grid") {
  FiniteMdp m = utility_grid_env();
  CptSpec plain;
  EutSolution sol = solve_eut_dp(m, Utility::identity());

  TrainConfig cfg;
  cfg.batch_n = 400;
  cfg.iterations = 300;
  cfg.step_size = 0.05;
  cfg.optimizer = OptimizerKind::adam;
  cfg.entropy_weight = 0.02;
  cfg.entropy_decay = 0.99;
  cfg.phi_method = PhiMethod::quantile;
  cfg.seed = 11;

  FinitePolicy pol(m, HistoryAbstraction::markov(), PolicyKind::softmax_tabular);
  train(m, pol, plain, cfg);

  // Exact expected return of the trained policy via the augmented graph.
  double value = evaluate_policy_exact(
      sol.unwound, [&](int, const UnwoundMdp::Node& node) {
        Trajectory empty;
        Feature f = pol.feature(empty, node.state, node.t, node.sigma);
        return action_distribution(pol.params(), f).probs;
      });
  CHECK(value >= 0.95 * sol.value);
  CHECK(value <= sol.value + 1e-9);
}

TEST_CASE("training aborts with a diagnostic on non-finite signals") {
  BrokenEnv env;
  Rng init = Rng::stream({0xBAD, 0});
  PolicyParams params = PolicyParams::mlp(1, 1, {1.0}, init, {4});
  TrainConfig cfg;
  cfg.batch_n = 10;
  cfg.iterations = 5;
  cfg.step_size = 1e-3;
  cfg.entropy_weight = 0.0;
  try {
    train(env, params, CptSpec::expectation(), cfg);
    FAIL("expected a training abort");
  } catch (const TrainError& e) {
    CHECK(e.iteration == 0);
  }
}

TEST_CASE("train configuration is validated") {
  FiniteMdp m = two_state_counterexample();
  FinitePolicy pol = two_state_bernoulli(0.5);
  TrainConfig cfg;
  cfg.batch_n = 1;
  CHECK_THROWS_AS(train(m, pol, rs_spec(), cfg), ConfigError);
  cfg.batch_n = 100;
  cfg.step_size = 0.0;
  CHECK_THROWS_AS(train(m, pol, rs_spec(), cfg), ConfigError);
  cfg.step_size = 0.01;
  cfg.entropy_decay = 0.0;
  CHECK_THROWS_AS(train(m, pol, rs_spec(), cfg), ConfigError);
  cfg.entropy_decay = 0.999;
  cfg.tanh_alpha_growth = 0.9;
  CHECK_THROWS_AS(train(m, pol, rs_spec(), cfg), ConfigError);

  Rng rng = Rng::stream({1, 2});
  CHECK_THROWS_AS(estimate_policy_gradient(m, pol, rs_spec(), 1,
                                           PhiMethod::quantile, rng),
                  ArgumentError);
}

TEST_CASE("evaluation reports the empirical valuation and histogram") {
  FiniteMdp m = two_state_counterexample();
  CptSpec spec = rs_spec();

  SECTION("deterministic policy: point-mass histogram") {
    TabularProbPolicy safe(m, HistoryAbstraction::markov());
    safe.set_row(0, {1.0, 0.0});
    Rng rng = Rng::stream({0xE7A1, 0});
    EvalResult res = evaluate(m, safe, spec, 500, rng);
    REQUIRE(res.histogram.size() == 1);
    CHECK(res.histogram[0].lo == 1.0);
    CHECK(res.histogram[0].hi == 1.0);
    CHECK(res.histogram[0].count == 500);
    CHECK(res.cpt_estimate == Approx(1.0).margin(1e-12));
  }

  SECTION("always-risky policy: half the mass at the top return") {
    TabularProbPolicy risky(m, HistoryAbstraction::markov());
    risky.set_row(0, {0.0, 1.0});
    Rng rng = Rng::stream({0xE7A1, 1});
    EvalResult res = evaluate(m, risky, spec, 100000, rng, 2);
    REQUIRE(res.histogram.size() == 2);
    const double top_frac =
        static_cast<double>(res.histogram[1].count) / 100000.0;
    CHECK(top_frac == Approx(0.5).margin(0.01));
    CHECK(res.cpt_estimate == Approx(13.0 / 12.0).margin(0.02));
    long long total = res.histogram[0].count + res.histogram[1].count;
    CHECK(total == 100000);
  }

  SECTION("continuous rollouts fill the histogram") {
    ElectricityEnv env = electricity_env(default_price_series());
    Rng init = Rng::stream({0xE7A1, 2});
    PolicyParams params =
        PolicyParams::mlp(env.state_dim(), env.action_dim(),
                          env.observation_scale(), init, {8});
    Rng rng = Rng::stream({0xE7A1, 3});
    EvalResult res = evaluate(env, params, CptSpec::expectation(), 200, rng);
    CHECK(res.returns.size() == 200);
    long long total = 0;
    for (const HistogramBin& b : res.histogram) total += b.count;
    CHECK(total == 200);
  }
}

TEST_CASE("histogram edges and degenerate inputs") {
  CHECK_THROWS_AS(make_histogram({}, 4), ArgumentError);
  CHECK_THROWS_AS(make_histogram({1.0}, 0), ArgumentError);

  std::vector<HistogramBin> bins = make_histogram({0.0, 1.0, 2.0, 4.0}, 4);
  REQUIRE(bins.size() == 4);
  CHECK(bins[0].lo == 0.0);
  CHECK(bins[3].hi == 4.0);
  long long total = 0;
  for (const auto& b : bins) total += b.count;
  CHECK(total == 4);
  CHECK(bins[3].count == 1);  // the maximum lands in the last bin
}
