// Command-line experiment runner.
//   cptrl run <config.json> [--out DIR] [--seeds 0..19] [--threads N]
//   cptrl validate <config.json>
// Exit codes: 0 success, 2 configuration/ingestion problem, 3 runtime abort
// (non-finite training state or a resource cap).

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "cptrl/experiment.hpp"

namespace {

// "0..19", "0,2,5", or a mix of both ("0..3,10").
std::vector<std::uint64_t> parse_seed_list(const std::string& arg) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= arg.size()) {
    std::size_t comma = arg.find(',', pos);
    std::string token =
        arg.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    pos = comma == std::string::npos ? arg.size() + 1 : comma + 1;
    if (token.empty())
      throw cptrl::ConfigError("--seeds: empty entry in '" + arg + "'");
    auto parse_one = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        unsigned long long v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return static_cast<std::uint64_t>(v);
      } catch (const std::exception&) {
        throw cptrl::ConfigError("--seeds: bad number '" + s + "'");
      }
    };
    std::size_t dots = token.find("..");
    if (dots == std::string::npos) {
      seeds.push_back(parse_one(token));
      continue;
    }
    std::uint64_t lo = parse_one(token.substr(0, dots));
    std::uint64_t hi = parse_one(token.substr(dots + 2));
    if (hi < lo)
      throw cptrl::ConfigError("--seeds: empty range '" + token + "'");
    if (hi - lo > 100000)
      throw cptrl::ConfigError("--seeds: range '" + token + "' is unreasonably large");
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw cptrl::ConfigError("--seeds: no seeds given");
  return seeds;
}

int resolve_threads(int cli_threads) {
  if (cli_threads > 0) return cli_threads;
  if (const char* env = std::getenv("CPTRL_THREADS")) {
    try {
      int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    throw cptrl::ConfigError(std::string("CPTRL_THREADS: bad value '") + env + "'");
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prospect-theoretic reinforcement-learning experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string seeds_arg;
  int threads = 0;

  CLI::App* run = app.add_subcommand("run", "Run the experiment in a JSON config");
  run->add_option("config", config_path, "experiment config file")->required();
  run->add_option("--out", out_dir, "override the config's output directory");
  run->add_option("--seeds", seeds_arg, "seed list, e.g. 0..19 or 0,2,5");
  run->add_option("--threads", threads,
                  "worker threads (default: CPTRL_THREADS, then hardware)");

  CLI::App* validate =
      app.add_subcommand("validate", "Check a config file without running it");
  validate->add_option("config", config_path, "experiment config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    cptrl::ExperimentConfig cfg = cptrl::load_experiment_config(config_path);
    if (validate->parsed()) {
      // Dry-build the environment and policy so incompatibilities (bad price
      // file, mlp on a finite MDP, ...) surface here rather than mid-run.
      cptrl::BuiltEnv env = cptrl::make_env(cfg.env);
      if (cfg.kind != cptrl::ExperimentKind::oracle_verify &&
          cfg.kind != cptrl::ExperimentKind::batch_bias_study)
        cptrl::make_policy(cfg.policy, env);
      std::cout << config_path << ": ok ("
                << cptrl::experiment_kind_name(cfg.kind) << " on " << cfg.env.name
                << ", " << cfg.seeds.size() << " seed"
                << (cfg.seeds.size() == 1 ? "" : "s") << ")\n";
      return 0;
    }
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (!seeds_arg.empty()) cfg.seeds = parse_seed_list(seeds_arg);
    cfg.validate();
    int n_threads = resolve_threads(threads);
    cptrl::run_experiment(cfg, n_threads);
    std::cout << "wrote "
              << (std::filesystem::path(cfg.output_dir) / "result.json").string()
              << "\n";
    return 0;
  } catch (const cptrl::TrainError& e) {
    std::cerr << "training aborted at iteration " << e.iteration << ": " << e.what()
              << "\n";
    return 3;
  } catch (const cptrl::ResourceError& e) {
    std::cerr << "resource limit: " << e.what() << "\n";
    return 3;
  } catch (const cptrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cptrl::IngestError& e) {
    std::cerr << "ingestion error: " << e.what() << "\n";
    return 2;
  } catch (const cptrl::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
