#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cptrl/csv.hpp"
#include "cptrl/envs.hpp"
#include "cptrl/errors.hpp"
#include "cptrl/oracle.hpp"
#include "cptrl/serialize.hpp"
#include "cptrl/spsa.hpp"
#include "cptrl/train.hpp"

// Experiment runner: a JSON config names one experiment; running it writes
// result.json plus CSV files into the output directory. Seeds run in
// parallel worker threads; all files are written by the coordinating thread
// afterwards, and every output is a deterministic function of (config,
// seeds) alone, independent of the thread count.

namespace cptrl {

enum class ExperimentKind {
  train_pg,
  train_spsa,
  compare_pg_spsa,
  oracle_verify,
  batch_bias_study,
  markov_vs_nonmarkov,
  electricity_eval,
};

inline const char* experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::train_pg: return "train_pg";
    case ExperimentKind::train_spsa: return "train_spsa";
    case ExperimentKind::compare_pg_spsa: return "compare_pg_spsa";
    case ExperimentKind::oracle_verify: return "oracle_verify";
    case ExperimentKind::batch_bias_study: return "batch_bias_study";
    case ExperimentKind::markov_vs_nonmarkov: return "markov_vs_nonmarkov";
    case ExperimentKind::electricity_eval: return "electricity_eval";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_name(const std::string& s,
                                                const std::string& ctx) {
  if (s == "train_pg") return ExperimentKind::train_pg;
  if (s == "train_spsa") return ExperimentKind::train_spsa;
  if (s == "compare_pg_spsa") return ExperimentKind::compare_pg_spsa;
  if (s == "oracle_verify") return ExperimentKind::oracle_verify;
  if (s == "batch_bias_study") return ExperimentKind::batch_bias_study;
  if (s == "markov_vs_nonmarkov") return ExperimentKind::markov_vs_nonmarkov;
  if (s == "electricity_eval") return ExperimentKind::electricity_eval;
  throw ConfigError(ctx + ": unknown experiment '" + s + "'");
}

// ---------------------------------------------------------------------------
// Environment selection
// ---------------------------------------------------------------------------

struct EnvSpec {
  std::string name = "two_state";
  int size = 3;           // scaling_grid / traffic_grid side length
  std::string price_csv;  // electricity only; empty = synthetic default
};

struct BuiltEnv {
  std::optional<FiniteMdp> finite;
  std::optional<ElectricityEnv> electric;
  bool is_finite() const { return finite.has_value(); }
};

inline BuiltEnv make_env(const EnvSpec& e) {
  BuiltEnv out;
  try {
    if (e.name == "two_state")
      out.finite = two_state_counterexample();
    else if (e.name == "exp_counterexample")
      out.finite = exp_counterexample();
    else if (e.name == "markov_test")
      out.finite = markov_test_env();
    else if (e.name == "utility_grid")
      out.finite = utility_grid_env();
    else if (e.name == "scaling_grid")
      out.finite = scaling_grid_env(e.size);
    else if (e.name == "traffic_grid")
      out.finite = traffic_grid_env(e.size);
    else if (e.name == "electricity")
      out.electric = electricity_env(
          e.price_csv.empty() ? default_price_series() : ingest_prices(e.price_csv));
    else
      throw ConfigError("environment: unknown name '" + e.name + "'");
  } catch (const ArgumentError& err) {
    throw ConfigError("environment '" + e.name + "': " + err.what());
  } catch (const ValidationError& err) {
    throw ConfigError("environment '" + e.name + "': " + err.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy selection
// ---------------------------------------------------------------------------

struct PolicySpec {
  PolicyKind kind = PolicyKind::softmax_tabular;
  HistoryAbstraction abstraction = HistoryAbstraction::markov();
  double alpha_exploration = 1.0;       // softmax_tanh bound
  std::vector<int> hidden = {32, 32};   // gaussian_mlp layers
  double log_std_init = -0.6931471805599453;  // log(1/2)
  std::uint64_t init_seed = 1;          // gaussian_mlp weight draw
};

inline PolicyParams make_policy(const PolicySpec& ps, const BuiltEnv& env) {
  if (env.is_finite()) {
    if (ps.kind == PolicyKind::gaussian_mlp)
      throw ConfigError("policy: gaussian_mlp needs a continuous environment");
    FeatureIndexer idx(*env.finite, ps.abstraction);
    PolicyParams p = PolicyParams::table(ps.abstraction, ps.kind, idx.n_rows(),
                                         env.finite->n_actions);
    p.alpha_exploration = ps.alpha_exploration;
    return p;
  }
  if (ps.kind != PolicyKind::gaussian_mlp)
    throw ConfigError("policy: continuous environments need the gaussian_mlp kind");
  Rng init = Rng::stream({0x11D5ULL, ps.init_seed});
  return PolicyParams::mlp(env.electric->state_dim(), env.electric->action_dim(),
                           env.electric->observation_scale(), init, ps.hidden,
                           ps.log_std_init);
}

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  int schema_version = 1;
  ExperimentKind kind = ExperimentKind::train_pg;
  EnvSpec env;
  CptSpec spec;  // valuation under optimization (electricity_eval fixes its own)
  PolicySpec policy;
  TrainConfig train;
  SpsaConfig spsa;
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds = {0};

  // batch_bias_study
  std::vector<int> batch_sizes = {10, 100, 1000, 10000};
  int runs_per_batch = 20;
  // oracle_verify; 0 picks a per-environment default
  int grid_resolution = 0;
  // rollouts for final-policy evaluation
  int eval_episodes = 10000;

  void validate() const {
    if (schema_version != 1)
      throw ConfigError("config: unsupported schema_version " +
                        std::to_string(schema_version));
    if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    if (eval_episodes < 1)
      throw ConfigError("config: eval_episodes must be >= 1");
    train.validate();
    spsa.validate();
    switch (kind) {
      case ExperimentKind::compare_pg_spsa:
        if (train.batch_n % 2 != 0)
          throw ConfigError(
              "compare_pg_spsa: train.batch_n must be even (half goes to each "
              "perturbed measurement)");
        if (train.literal_single_scoring)
          throw ConfigError(
              "compare_pg_spsa: literal_single_scoring breaks the shared budget "
              "axis; disable it");
        break;
      case ExperimentKind::batch_bias_study:
        if (env.name != "two_state")
          throw ConfigError("batch_bias_study: environment must be two_state");
        if (batch_sizes.size() < 2)
          throw ConfigError("batch_bias_study: need at least 2 batch sizes");
        for (int b : batch_sizes)
          if (b < 2) throw ConfigError("batch_bias_study: batch sizes must be >= 2");
        if (runs_per_batch < 20)
          throw ConfigError("batch_bias_study: need at least 20 runs per batch size");
        break;
      case ExperimentKind::oracle_verify:
        if (env.name != "two_state" && env.name != "exp_counterexample" &&
            env.name != "markov_test")
          throw ConfigError(
              "oracle_verify: environment must be one of two_state, "
              "exp_counterexample, markov_test");
        if (grid_resolution != 0 && grid_resolution < 2)
          throw ConfigError("oracle_verify: grid_resolution must be >= 2");
        break;
      case ExperimentKind::markov_vs_nonmarkov:
        if (env.name != "markov_test")
          throw ConfigError("markov_vs_nonmarkov: environment must be markov_test");
        break;
      case ExperimentKind::electricity_eval:
        if (env.name != "electricity")
          throw ConfigError("electricity_eval: environment must be electricity");
        break;
      default:
        break;
    }
  }
};

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

inline json env_spec_to_json(const EnvSpec& e) {
  json j;
  j["name"] = e.name;
  j["size"] = e.size;
  if (!e.price_csv.empty()) j["price_csv"] = e.price_csv;
  return j;
}

inline EnvSpec env_spec_from_json(const json& j, const std::string& ctx = "environment") {
  EnvSpec e;
  if (j.is_string()) {
    e.name = j.get<std::string>();
    return e;
  }
  detail_json::check_keys(j, {"name", "size", "price_csv"}, ctx);
  e.name = detail_json::field<std::string>(j, "name", ctx);
  e.size = detail_json::field_or<int>(j, "size", e.size, ctx);
  e.price_csv = detail_json::field_or<std::string>(j, "price_csv", "", ctx);
  return e;
}

inline json policy_spec_to_json(const PolicySpec& p) {
  json j;
  j["kind"] = policy_kind_name(p.kind);
  j["abstraction"] = abstraction_to_json(p.abstraction);
  j["alpha_exploration"] = p.alpha_exploration;
  j["hidden"] = p.hidden;
  j["log_std_init"] = p.log_std_init;
  j["init_seed"] = p.init_seed;
  return j;
}

inline PolicySpec policy_spec_from_json(const json& j, const std::string& ctx = "policy") {
  detail_json::check_keys(
      j, {"kind", "abstraction", "alpha_exploration", "hidden", "log_std_init", "init_seed"},
      ctx);
  PolicySpec p;
  std::string kind = detail_json::field_or<std::string>(j, "kind", "softmax_tabular", ctx);
  if (kind == "softmax_tabular")
    p.kind = PolicyKind::softmax_tabular;
  else if (kind == "softmax_tanh")
    p.kind = PolicyKind::softmax_tanh;
  else if (kind == "bernoulli_direct")
    p.kind = PolicyKind::bernoulli_direct;
  else if (kind == "gaussian_mlp")
    p.kind = PolicyKind::gaussian_mlp;
  else
    throw ConfigError(ctx + ": unknown kind '" + kind + "'");
  if (j.contains("abstraction"))
    p.abstraction = abstraction_from_json(j["abstraction"], ctx + ".abstraction");
  p.alpha_exploration =
      detail_json::field_or<double>(j, "alpha_exploration", p.alpha_exploration, ctx);
  p.hidden = detail_json::field_or<std::vector<int>>(j, "hidden", p.hidden, ctx);
  p.log_std_init =
      detail_json::field_or<double>(j, "log_std_init", p.log_std_init, ctx);
  p.init_seed = detail_json::field_or<std::uint64_t>(j, "init_seed", p.init_seed, ctx);
  return p;
}

inline json experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["experiment"] = experiment_kind_name(c.kind);
  j["environment"] = env_spec_to_json(c.env);
  j["spec"] = cpt_spec_to_json(c.spec);
  j["policy"] = policy_spec_to_json(c.policy);
  j["train"] = train_config_to_json(c.train);
  j["spsa"] = spsa_config_to_json(c.spsa);
  j["output_dir"] = c.output_dir;
  j["seeds"] = c.seeds;
  j["batch_sizes"] = c.batch_sizes;
  j["runs_per_batch"] = c.runs_per_batch;
  j["grid_resolution"] = c.grid_resolution;
  j["eval_episodes"] = c.eval_episodes;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
  const std::string ctx = "config";
  detail_json::check_keys(j,
                          {"schema_version", "experiment", "environment", "spec",
                           "policy", "train", "spsa", "output_dir", "seeds",
                           "batch_sizes", "runs_per_batch", "grid_resolution",
                           "eval_episodes"},
                          ctx);
  ExperimentConfig c;
  c.schema_version = detail_json::field_or<int>(j, "schema_version", 1, ctx);
  c.kind = experiment_kind_from_name(
      detail_json::field<std::string>(j, "experiment", ctx), ctx + ".experiment");
  if (j.contains("environment"))
    c.env = env_spec_from_json(j["environment"], ctx + ".environment");
  if (j.contains("spec")) c.spec = cpt_spec_from_json(j["spec"], ctx + ".spec");
  if (j.contains("policy"))
    c.policy = policy_spec_from_json(j["policy"], ctx + ".policy");
  if (j.contains("train")) c.train = train_config_from_json(j["train"], ctx + ".train");
  if (j.contains("spsa")) c.spsa = spsa_config_from_json(j["spsa"], ctx + ".spsa");
  c.output_dir = detail_json::field_or<std::string>(j, "output_dir", c.output_dir, ctx);
  c.seeds = detail_json::field_or<std::vector<std::uint64_t>>(j, "seeds", c.seeds, ctx);
  c.batch_sizes =
      detail_json::field_or<std::vector<int>>(j, "batch_sizes", c.batch_sizes, ctx);
  c.runs_per_batch =
      detail_json::field_or<int>(j, "runs_per_batch", c.runs_per_batch, ctx);
  c.grid_resolution =
      detail_json::field_or<int>(j, "grid_resolution", c.grid_resolution, ctx);
  c.eval_episodes =
      detail_json::field_or<int>(j, "eval_episodes", c.eval_episodes, ctx);
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError("config '" + path + "' line " + std::to_string(line) + ": " +
                      e.what());
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Parallel seed execution
// ---------------------------------------------------------------------------

namespace detail_exp {

template <class Body>
void parallel_for(int n, int n_threads, Body&& body) {
  n_threads = std::max(1, std::min(n_threads, n));
  if (n_threads == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  std::vector<std::thread> workers;
  workers.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t)
    workers.emplace_back([&] {
      while (true) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!err) err = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  for (std::thread& w : workers) w.join();
  if (err) std::rethrow_exception(err);
}

inline std::string timestamp_utc() {
  std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IngestError("failed while writing '" + path + "'");
}

// Element-wise median curve across same-length runs; iter/budget columns come
// from the first run (identical across seeds by construction).
inline std::vector<CurvePoint> median_curve(const std::vector<TrainResult>& runs) {
  std::vector<CurvePoint> base = curve_points(runs.front());
  std::vector<double> col(runs.size());
  for (std::size_t k = 0; k < base.size(); ++k) {
    for (std::size_t r = 0; r < runs.size(); ++r) col[r] = runs[r].cpt_curve[k];
    base[k].cpt_estimate = sample_median(col);
    for (std::size_t r = 0; r < runs.size(); ++r) col[r] = runs[r].grad_norms[k];
    base[k].grad_norm = sample_median(col);
  }
  return base;
}

// Index of the run whose score is closest to the median score (ties toward
// the earlier seed); used to pick a representative run for histograms.
inline std::size_t median_representative(const std::vector<double>& scores) {
  double med = sample_median(scores);
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double d = std::abs(scores[i] - med);
    if (d < best_dist - 1e-15) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

}  // namespace detail_exp

// ---------------------------------------------------------------------------
// Runners (one per experiment kind)
// ---------------------------------------------------------------------------

struct RunOutput {
  json result;                     // written to <out>/result.json
  std::vector<std::string> files;  // all other files written (relative names)
};

namespace detail_exp {

struct SeedTrainOutcome {
  TrainResult result;
  EvalResult eval;
};

// Trains one fresh policy per seed, evaluates the final parameters on a
// fixed evaluation stream, and fills per-seed JSON.
inline std::vector<SeedTrainOutcome> run_training_set(
    const ExperimentConfig& cfg, const BuiltEnv& env, const CptSpec& spec,
    bool use_spsa, int n_threads, std::uint64_t eval_salt) {
  std::vector<SeedTrainOutcome> out(cfg.seeds.size());
  parallel_for(static_cast<int>(cfg.seeds.size()), n_threads, [&](int i) {
    const std::uint64_t seed = cfg.seeds[i];
    PolicyParams pol = make_policy(cfg.policy, env);
    TrainResult res;
    if (env.is_finite()) {
      FinitePolicy fp = finite_policy_from_params(*env.finite, std::move(pol));
      if (use_spsa) {
        SpsaConfig sc = cfg.spsa;
        sc.seed = seed;
        res = train_spsa(*env.finite, fp, spec, sc);
      } else {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        res = train(*env.finite, fp, spec, tc);
      }
    } else if (use_spsa) {
      SpsaConfig sc = cfg.spsa;
      sc.seed = seed;
      res = train_spsa(*env.electric, pol, spec, sc);
    } else {
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      res = train(*env.electric, pol, spec, tc);
    }
    Rng eval_rng = Rng::stream({eval_salt, seed});
    EvalResult ev =
        env.is_finite()
            ? evaluate(*env.finite,
                       finite_policy_from_params(*env.finite, res.final_params),
                       spec, cfg.eval_episodes, eval_rng)
            : evaluate(*env.electric, res.final_params, spec, cfg.eval_episodes,
                       eval_rng);
    out[i] = {std::move(res), std::move(ev)};
  });
  return out;
}

inline json per_seed_summary(const ExperimentConfig& cfg,
                             const std::vector<SeedTrainOutcome>& outcomes) {
  json arr = json::array();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    json row;
    row["seed"] = cfg.seeds[i];
    row["final_train_estimate"] = outcomes[i].result.cpt_curve.empty()
                                      ? 0.0
                                      : outcomes[i].result.cpt_curve.back();
    row["final_eval_cpt"] = outcomes[i].eval.cpt_estimate;
    row["trajectories"] = outcomes[i].result.trajectory_count;
    arr.push_back(std::move(row));
  }
  return arr;
}

inline RunOutput run_train_kind(const ExperimentConfig& cfg, const BuiltEnv& env,
                                bool use_spsa, int n_threads,
                                const std::filesystem::path& out_dir) {
  auto outcomes = run_training_set(cfg, env, cfg.spec, use_spsa, n_threads,
                                   use_spsa ? 0xE7A2ULL : 0xE7A1ULL);
  std::vector<TrainResult> results;
  std::vector<double> finals;
  for (auto& o : outcomes) {
    results.push_back(o.result);
    finals.push_back(o.eval.cpt_estimate);
  }

  RunOutput out;
  out.result["per_seed"] = per_seed_summary(cfg, outcomes);
  out.result["median_final_eval_cpt"] = sample_median(finals);
  out.result["eval_episodes"] = cfg.eval_episodes;

  write_curve_csv((out_dir / "curve.csv").string(), median_curve(results));
  out.files.push_back("curve.csv");
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    std::string name = "curve_seed" + std::to_string(cfg.seeds[i]) + ".csv";
    write_curve_csv((out_dir / name).string(), curve_points(results[i]));
    out.files.push_back(name);
    std::string pname = "policy_seed" + std::to_string(cfg.seeds[i]) + ".json";
    write_text_file((out_dir / pname).string(),
                    policy_params_to_json(results[i].final_params).dump(2) + "\n");
    out.files.push_back(pname);
  }
  std::size_t rep = median_representative(finals);
  out.result["histogram_seed"] = cfg.seeds[rep];
  write_histogram_csv((out_dir / "histogram.csv").string(),
                      outcomes[rep].eval.histogram);
  out.files.push_back("histogram.csv");
  return out;
}

inline RunOutput run_compare(const ExperimentConfig& cfg, const BuiltEnv& env,
                             int n_threads, const std::filesystem::path& out_dir) {
  // Same trajectory budget per iteration on both sides: the gradient batch
  // equals the two half-size perturbed measurements.
  ExperimentConfig spsa_cfg = cfg;
  spsa_cfg.spsa.batch_n = cfg.train.batch_n / 2;
  spsa_cfg.spsa.iterations = cfg.train.iterations;

  auto pg = run_training_set(cfg, env, cfg.spec, false, n_threads, 0xE7A1ULL);
  auto sp = run_training_set(spsa_cfg, env, cfg.spec, true, n_threads, 0xE7A1ULL);

  std::vector<TrainResult> pg_results, sp_results;
  std::vector<double> pg_finals, sp_finals;
  for (auto& o : pg) {
    pg_results.push_back(o.result);
    pg_finals.push_back(o.eval.cpt_estimate);
  }
  for (auto& o : sp) {
    sp_results.push_back(o.result);
    sp_finals.push_back(o.eval.cpt_estimate);
  }

  RunOutput out;
  out.result["pg"] = json{{"per_seed", per_seed_summary(cfg, pg)},
                          {"median_final_eval_cpt", sample_median(pg_finals)}};
  out.result["spsa"] = json{{"per_seed", per_seed_summary(spsa_cfg, sp)},
                            {"median_final_eval_cpt", sample_median(sp_finals)}};
  out.result["median_gap_pg_minus_spsa"] =
      sample_median(pg_finals) - sample_median(sp_finals);
  out.result["budget_per_iteration"] = cfg.train.batch_n;
  out.result["iterations"] = cfg.train.iterations;
  out.result["eval_episodes"] = cfg.eval_episodes;

  write_curve_csv((out_dir / "pg_curve.csv").string(), median_curve(pg_results));
  write_curve_csv((out_dir / "spsa_curve.csv").string(), median_curve(sp_results));
  out.files = {"pg_curve.csv", "spsa_curve.csv"};
  return out;
}

inline json grid_best_to_json(const GridSearchResult& g) {
  json j;
  j["best_params"] = g.best_params;
  j["best_value"] = g.best_value;
  return j;
}

inline RunOutput run_oracle_verify(const ExperimentConfig& cfg, const BuiltEnv& env,
                                   const std::filesystem::path& out_dir) {
  const FiniteMdp& m = *env.finite;
  RunOutput out;
  if (cfg.env.name == "two_state") {
    int res = cfg.grid_resolution > 0 ? cfg.grid_resolution : 101;
    GridSearchResult g = grid_search_policy(m, cfg.spec, two_state_policy_grid(res));
    out.result["p_star"] = g.best_params[0];
    out.result["cpt_star"] = g.best_value;
    auto value_at = [&](double p) {
      return exact_cpt(m, two_state_policy_grid(2).make_policy({p}), cfg.spec);
    };
    out.result["cpt_at_p0"] = value_at(0.0);
    out.result["cpt_at_p1"] = value_at(1.0);
    out.result["grid_resolution"] = res;
    write_grid_csv((out_dir / "grid.csv").string(), g);
    out.files = {"grid.csv"};
    return out;
  }
  if (cfg.env.name == "exp_counterexample") {
    int res = cfg.grid_resolution > 0 ? cfg.grid_resolution : 51;
    GridSearchResult markov =
        grid_search_policy(m, cfg.spec, exp_markov_policy_grid(res));
    GridSearchResult full =
        grid_search_policy(m, cfg.spec, exp_full_policy_grid(res));
    out.result["markov_slice"] = grid_best_to_json(markov);
    out.result["full"] = grid_best_to_json(full);
    out.result["full_minus_markov"] = full.best_value - markov.best_value;
    out.result["grid_resolution"] = res;
    write_grid_csv((out_dir / "grid_markov.csv").string(), markov);
    write_grid_csv((out_dir / "grid_full.csv").string(), full);
    out.files = {"grid_markov.csv", "grid_full.csv"};
    return out;
  }
  // markov_test: Markovian and sum-augmented family plus the exact DP value.
  int res = cfg.grid_resolution > 0 ? cfg.grid_resolution : 51;
  GridSearchResult markov =
      grid_search_policy(m, cfg.spec, markov_test_markov_policy_grid(res));
  GridSearchResult full =
      grid_search_policy(m, cfg.spec, markov_test_full_policy_grid(res));
  out.result["markov"] = grid_best_to_json(markov);
  out.result["sum_augmented"] = grid_best_to_json(full);
  out.result["gap"] = full.best_value - markov.best_value;
  if (cfg.spec.identity_weights()) {
    EutSolution dp = solve_eut_dp(m, cfg.spec.utility);
    out.result["dp_value"] = dp.value;
  }
  out.result["grid_resolution"] = res;
  write_grid_csv((out_dir / "grid_markov.csv").string(), markov);
  write_grid_csv((out_dir / "grid_full.csv").string(), full);
  out.files = {"grid_markov.csv", "grid_full.csv"};
  return out;
}

inline RunOutput run_batch_bias(const ExperimentConfig& cfg, const BuiltEnv& env,
                                int n_threads, const std::filesystem::path& out_dir) {
  const FiniteMdp& m = *env.finite;
  // The study is defined on the scalar-probability parameterization: one
  // direct Bernoulli knob for the risky arm.
  const int n_batches = static_cast<int>(cfg.batch_sizes.size());
  const int runs = cfg.runs_per_batch;
  std::vector<double> learned(static_cast<std::size_t>(n_batches) * runs, 0.0);
  parallel_for(n_batches * runs, n_threads, [&](int job) {
    const int bi = job / runs;
    const int r = job % runs;
    TrainConfig tc = cfg.train;
    tc.batch_n = cfg.batch_sizes[bi];
    tc.seed = (static_cast<std::uint64_t>(cfg.batch_sizes[bi]) << 20) ^
              static_cast<std::uint64_t>(r);
    FinitePolicy pol(m, HistoryAbstraction::stationary(),
                     PolicyKind::bernoulli_direct);
    TrainResult res = train(m, pol, cfg.spec, tc);
    learned[job] = res.final_params.theta[0];
  });

  const double p_opt = 0.2;
  std::vector<BatchBiasRow> rows;
  json jrows = json::array();
  int below = 0;
  std::vector<double> log_b, log_err;
  for (int bi = 0; bi < n_batches; ++bi) {
    std::vector<double> ps(learned.begin() + static_cast<std::ptrdiff_t>(bi) * runs,
                           learned.begin() + static_cast<std::ptrdiff_t>(bi + 1) * runs);
    BatchBiasRow row;
    row.batch = cfg.batch_sizes[bi];
    row.median_p = sample_median(ps);
    row.q25 = sample_quantile(ps, 0.25);
    row.q75 = sample_quantile(ps, 0.75);
    rows.push_back(row);
    if (row.median_p < p_opt) ++below;
    log_b.push_back(std::log10(static_cast<double>(row.batch)));
    log_err.push_back(std::log10(std::max(std::abs(row.median_p - p_opt), 1e-12)));
    json jr;
    jr["batch"] = row.batch;
    jr["median_p"] = row.median_p;
    jr["q25"] = row.q25;
    jr["q75"] = row.q75;
    jrows.push_back(std::move(jr));
  }
  // Least-squares slope of log10|median - p*| against log10(batch).
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n_batches; ++i) {
    mx += log_b[i];
    my += log_err[i];
  }
  mx /= n_batches;
  my /= n_batches;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n_batches; ++i) {
    sxx += (log_b[i] - mx) * (log_b[i] - mx);
    sxy += (log_b[i] - mx) * (log_err[i] - my);
  }

  RunOutput out;
  out.result["optimal_p"] = p_opt;
  out.result["runs_per_batch"] = runs;
  out.result["rows"] = std::move(jrows);
  out.result["loglog_slope"] = sxy / sxx;
  out.result["medians_below_optimum"] = below;
  write_batch_bias_csv((out_dir / "batch_bias.csv").string(), rows);
  out.files = {"batch_bias.csv"};
  return out;
}

inline RunOutput run_markov_vs_nonmarkov(const ExperimentConfig& cfg,
                                         const BuiltEnv& env, int n_threads,
                                         const std::filesystem::path& out_dir) {
  const FiniteMdp& m = *env.finite;
  // Two history abstractions, same policy kind and budget: plain Markovian
  // rows against rows keyed additionally on the sign of the running sum.
  ExperimentConfig markov_cfg = cfg;
  markov_cfg.policy.abstraction = HistoryAbstraction::markov();
  ExperimentConfig sum_cfg = cfg;
  sum_cfg.policy.abstraction = HistoryAbstraction::sum_augmented({0.0});

  auto markov = run_training_set(markov_cfg, env, cfg.spec, false, n_threads, 0xE7A1ULL);
  auto sum = run_training_set(sum_cfg, env, cfg.spec, false, n_threads, 0xE7A1ULL);

  auto exact_values = [&](const std::vector<SeedTrainOutcome>& outs) {
    std::vector<double> vals;
    for (const auto& o : outs)
      vals.push_back(exact_cpt(
          m, finite_policy_from_params(m, o.result.final_params), cfg.spec));
    return vals;
  };
  std::vector<double> markov_exact = exact_values(markov);
  std::vector<double> sum_exact = exact_values(sum);
  std::vector<double> gaps;
  json per_seed = json::array();
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    gaps.push_back(sum_exact[i] - markov_exact[i]);
    json row;
    row["seed"] = cfg.seeds[i];
    row["markov_exact_cpt"] = markov_exact[i];
    row["sum_augmented_exact_cpt"] = sum_exact[i];
    row["gap"] = gaps.back();
    per_seed.push_back(std::move(row));
  }

  std::vector<TrainResult> markov_results, sum_results;
  for (auto& o : markov) markov_results.push_back(o.result);
  for (auto& o : sum) sum_results.push_back(o.result);

  RunOutput out;
  out.result["per_seed"] = std::move(per_seed);
  out.result["median_markov_exact_cpt"] = sample_median(markov_exact);
  out.result["median_sum_augmented_exact_cpt"] = sample_median(sum_exact);
  out.result["median_gap"] = sample_median(gaps);
  write_curve_csv((out_dir / "curve_markov.csv").string(),
                  median_curve(markov_results));
  write_curve_csv((out_dir / "curve_sum_augmented.csv").string(),
                  median_curve(sum_results));
  out.files = {"curve_markov.csv", "curve_sum_augmented.csv"};
  return out;
}

struct RiskProfile {
  const char* name;
  CptSpec spec;
};

// The three built-in attitudes. On the loss side the roles flip: inflating
// rare loss tails is averse, deflating them is seeking, so each profile pairs
// the gain-side preset with its opposite preset on losses.
inline std::vector<RiskProfile> electricity_profiles() {
  CptSpec averse;
  averse.w_plus = Weight::preset("w_sra");
  averse.w_minus = Weight::preset("w_srs");
  CptSpec seeking;
  seeking.w_plus = Weight::preset("w_srs");
  seeking.w_minus = Weight::preset("w_sra");
  return {{"risk_neutral", CptSpec::expectation()},
          {"risk_averse", averse},
          {"risk_seeking", seeking}};
}

inline RunOutput run_electricity_eval(const ExperimentConfig& cfg,
                                      const BuiltEnv& env, int n_threads,
                                      const std::filesystem::path& out_dir) {
  const std::vector<RiskProfile> profiles = electricity_profiles();
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  const int n_jobs = n_seeds * static_cast<int>(profiles.size());
  std::vector<SeedTrainOutcome> outcomes(n_jobs);
  parallel_for(n_jobs, n_threads, [&](int job) {
    const int pi = job / n_seeds;
    const int si = job % n_seeds;
    PolicyParams pol = make_policy(cfg.policy, env);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seeds[si];
    TrainResult res = train(*env.electric, pol, profiles[pi].spec, tc);
    Rng eval_rng = Rng::stream({0xE7EC7ULL, static_cast<std::uint64_t>(pi),
                                cfg.seeds[si]});
    EvalResult ev = evaluate(*env.electric, res.final_params, profiles[pi].spec,
                             cfg.eval_episodes, eval_rng);
    outcomes[job] = {std::move(res), std::move(ev)};
  });

  RunOutput out;
  json jprofiles;
  for (std::size_t pi = 0; pi < profiles.size(); ++pi) {
    json per_seed = json::array();
    std::vector<double> means, q05s, q95s;
    std::vector<double> pooled;
    for (int si = 0; si < n_seeds; ++si) {
      const EvalResult& ev = outcomes[pi * n_seeds + si].eval;
      double mean = 0.0;
      for (double r : ev.returns) mean += r;
      mean /= static_cast<double>(ev.returns.size());
      double q05 = sample_quantile(ev.returns, 0.05);
      double q95 = sample_quantile(ev.returns, 0.95);
      means.push_back(mean);
      q05s.push_back(q05);
      q95s.push_back(q95);
      pooled.insert(pooled.end(), ev.returns.begin(), ev.returns.end());
      json row;
      row["seed"] = cfg.seeds[si];
      row["mean_return"] = mean;
      row["q05"] = q05;
      row["q95"] = q95;
      row["eval_cpt"] = ev.cpt_estimate;
      per_seed.push_back(std::move(row));
    }
    json jp;
    jp["spec"] = cpt_spec_to_json(profiles[pi].spec);
    jp["per_seed"] = std::move(per_seed);
    jp["median_mean_return"] = sample_median(means);
    jp["median_q05"] = sample_median(q05s);
    jp["median_q95"] = sample_median(q95s);
    jprofiles[profiles[pi].name] = std::move(jp);
    std::string hname = std::string("histogram_") + profiles[pi].name + ".csv";
    write_histogram_csv((out_dir / hname).string(), make_histogram(pooled));
    out.files.push_back(hname);
  }
  out.result["profiles"] = std::move(jprofiles);
  out.result["eval_episodes"] = cfg.eval_episodes;
  return out;
}

}  // namespace detail_exp

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline RunOutput run_experiment(const ExperimentConfig& cfg, int n_threads = 1) {
  cfg.validate();
  BuiltEnv env = make_env(cfg.env);
  std::filesystem::path out_dir(cfg.output_dir);
  std::filesystem::create_directories(out_dir);

  RunOutput body;
  switch (cfg.kind) {
    case ExperimentKind::train_pg:
      body = detail_exp::run_train_kind(cfg, env, false, n_threads, out_dir);
      break;
    case ExperimentKind::train_spsa:
      body = detail_exp::run_train_kind(cfg, env, true, n_threads, out_dir);
      break;
    case ExperimentKind::compare_pg_spsa:
      body = detail_exp::run_compare(cfg, env, n_threads, out_dir);
      break;
    case ExperimentKind::oracle_verify:
      body = detail_exp::run_oracle_verify(cfg, env, out_dir);
      break;
    case ExperimentKind::batch_bias_study:
      body = detail_exp::run_batch_bias(cfg, env, n_threads, out_dir);
      break;
    case ExperimentKind::markov_vs_nonmarkov:
      body = detail_exp::run_markov_vs_nonmarkov(cfg, env, n_threads, out_dir);
      break;
    case ExperimentKind::electricity_eval:
      body = detail_exp::run_electricity_eval(cfg, env, n_threads, out_dir);
      break;
  }

  json result;
  result["schema_version"] = 1;
  result["experiment"] = experiment_kind_name(cfg.kind);
  result["environment"] = cfg.env.name;
  result["timestamp"] = detail_exp::timestamp_utc();
  result["seeds"] = cfg.seeds;
  for (auto& [key, value] : body.result.items()) result[key] = value;
  std::sort(body.files.begin(), body.files.end());
  result["files"] = body.files;

  detail_exp::write_text_file((out_dir / "result.json").string(),
                              result.dump(2) + "\n");
  body.result = std::move(result);
  return body;
}

}  // namespace cptrl
