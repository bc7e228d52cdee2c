#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dluce/dluce.hpp"

namespace dluce::cli {

inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kRuntime = 2;

// Input problems found before any computation starts.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline SufficientStatistics load_statistics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open statistics file '" + path + "'");
  try {
    return read_statistics(is);
  } catch (const ParseError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file '" + path + "'");
  try {
    return parse_config(is);
  } catch (const ParseError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

inline nlohmann::json to_json(std::span<const double> v) { return nlohmann::json(std::vector<double>(v.begin(), v.end())); }

struct Args {
  std::string config;
  std::string out_dir;
  std::string stats_file;
  double alpha = 1.0;
  bool laplace = false;
  std::size_t particles = 2048;
  std::uint64_t seed = 0;
  std::size_t k = 10;
  double epsilon = 0.05;
  double delta = 0.1;
  std::string theta_kind = "dense";
};

inline int cmd_run(const Args& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_config(a.config);
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  if (cfg.out_dir.empty()) throw UsageError("no output directory: set out_dir in the config or pass --out-dir");
  const ExperimentResult res = run_experiment(cfg);
  out << "policy,checkpoint,mean_cum_regret,std_cum_regret,mean_unique_presentations\n";
  for (const auto& row : res.summary)
    out << to_string(row.policy) << ',' << row.checkpoint << ',' << row.mean_cum_regret << ',' << row.std_cum_regret
        << ',' << row.mean_unique_presentations << '\n';
  err << "wrote results to " << cfg.out_dir << '\n';
  return kOk;
}

inline int cmd_estimate(const Args& a, std::ostream& out) {
  const SufficientStatistics stats = load_statistics(a.stats_file);
  const Hyperparams hyper = Hyperparams::symmetric(stats.num_options(), a.alpha);
  nlohmann::json j;
  if (a.laplace) {
    const LaplaceResult lr = laplace_approximation(make_potential_terms(stats, hyper));
    j["theta"] = to_json(lr.mode.values());
    j["log_normalizer"] = lr.log_normalizer;
  } else {
    j["theta"] = to_json(map_estimate(stats, hyper).values());
  }
  out << j.dump() << '\n';
  return kOk;
}

inline int cmd_posterior_mean(const Args& a, std::ostream& out) {
  const SufficientStatistics stats = load_statistics(a.stats_file);
  const Hyperparams hyper = Hyperparams::symmetric(stats.num_options(), a.alpha);
  SmcOptions opts;
  opts.particles = a.particles;
  opts.seed = a.seed;
  const ParticleSet ps = replay_posterior(stats, hyper, opts);
  nlohmann::json j;
  j["mean"] = ps.posterior_mean();
  j["ess"] = ps.effective_sample_size();
  j["resamples"] = ps.resample_count();
  out << j.dump() << '\n';
  return kOk;
}

inline int cmd_gen_mergerank(const Args& a, std::ostream& out) {
  FixtureKind kind;
  try {
    kind = parse_fixture_kind(a.theta_kind);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const PreferenceVector theta = make_fixture_theta(kind, a.k, a.seed);
  SufficientStatistics stats(a.k);
  for (const auto& rec : merge_rank_generate(theta, a.epsilon, a.delta, a.seed)) stats.record(rec);
  write_statistics(out, stats);
  return kOk;
}

// Entry point shared by the executable and the tests.
inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dirichlet-Luce choice model: inference and bandit simulation", "dluce"};
  app.footer(config_schema());
  app.require_subcommand(1);
  Args a;

  auto* run = app.add_subcommand("run", "run a simulation experiment described by a config file");
  run->add_option("config", a.config, "config file")->required();
  run->add_option("--out-dir", a.out_dir, "override out_dir from the config");

  auto* est = app.add_subcommand("estimate", "MAP estimate (and Laplace log-normalizer) from a statistics file");
  est->add_option("stats", a.stats_file, "statistics file")->required();
  est->add_option("--alpha", a.alpha, "symmetric prior pseudo-count")->check(CLI::PositiveNumber);
  est->add_flag("--laplace", a.laplace, "also print the Laplace log-normalizer");

  auto* pm = app.add_subcommand("posterior-mean", "SMC posterior mean from a statistics file");
  pm->add_option("stats", a.stats_file, "statistics file")->required();
  pm->add_option("--alpha", a.alpha, "symmetric prior pseudo-count")->check(CLI::PositiveNumber);
  pm->add_option("--particles", a.particles, "particle count")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 24));
  pm->add_option("--seed", a.seed, "random seed");

  auto* gen = app.add_subcommand("gen-mergerank", "generate Merge-Rank pairwise records in statistics format");
  gen->add_option("--K", a.k, "number of options")->check(CLI::Range(std::size_t{2}, std::size_t{100000}));
  gen->add_option("--epsilon", a.epsilon, "accuracy margin")->check(CLI::Range(1e-6, 0.5));
  gen->add_option("--delta", a.delta, "failure probability")->check(CLI::Range(1e-12, 0.999999));
  gen->add_option("--seed", a.seed, "random seed");
  gen->add_option("--theta-kind", a.theta_kind, "sparse | dense");

  std::vector<std::string> args(argv.rbegin(), argv.rend());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nrun with --help for usage\n";
    return kUsage;
  }

  try {
    if (*run) return cmd_run(a, out, err);
    if (*est) return cmd_estimate(a, out);
    if (*pm) return cmd_posterior_mean(a, out);
    if (*gen) return cmd_gen_mergerank(a, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace dluce::cli
