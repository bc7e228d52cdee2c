#pragma once

// Simulated choosers, the Merge-Rank comparison generator, preference
// fixtures and the regret experiment runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dluce/bandit.hpp"
#include "dluce/core.hpp"
#include "dluce/random.hpp"
#include "dluce/smc.hpp"

namespace dluce {

enum class EnvironmentKind { transitive, cyclic };

class Environment {
 public:
  // Plackett-Luce chooser: p(k | C) = theta*_k / sum_{j in C} theta*_j.
  static Environment transitive(PreferenceVector theta_star) {
    Environment env(EnvironmentKind::transitive, PreferenceMatrix::from_theta(theta_star));
    env.theta_star_ = std::move(theta_star);
    return env;
  }

  // Pairwise chooser driven by a preference table; pairs only.
  static Environment cyclic(PreferenceMatrix p) {
    if (!p.condorcet_winner()) throw ContractViolation("cyclic environment requires a Condorcet winner");
    return Environment(EnvironmentKind::cyclic, std::move(p));
  }

  // Four options: option 0 beats every other with probability 0.6, the
  // remaining three form the cycle 1 > 2 > 3 > 1 at 0.9.
  static PreferenceMatrix cyclic_four_matrix() {
    return PreferenceMatrix({{0.5, 0.6, 0.6, 0.6},
                             {0.4, 0.5, 0.9, 0.1},
                             {0.4, 0.1, 0.5, 0.9},
                             {0.4, 0.9, 0.1, 0.5}});
  }

  EnvironmentKind kind() const { return kind_; }
  std::size_t num_options() const { return pref_.size(); }
  const PreferenceMatrix& preference_matrix() const { return pref_; }
  const std::optional<PreferenceVector>& theta_star() const { return theta_star_; }
  Option condorcet_winner() const { return *pref_.condorcet_winner(); }

 private:
  Environment(EnvironmentKind kind, PreferenceMatrix p) : kind_(kind), pref_(std::move(p)) {}

  EnvironmentKind kind_;
  PreferenceMatrix pref_;
  std::optional<PreferenceVector> theta_star_;
};

inline Option simulate_choice(const Environment& env, const Presentation& c, Rng& rng) {
  c.validate(env.num_options());
  if (c.size() == 1) return c.options().front();
  if (env.kind() == EnvironmentKind::cyclic) {
    if (c.size() != 2) throw ContractViolation("cyclic environments accept only pairs");
    const Option i = c.options()[0], j = c.options()[1];
    return uniform01(rng) < env.preference_matrix()(i, j) ? i : j;
  }
  const PreferenceVector& theta = *env.theta_star();
  const double total = detail::column_sum(c, theta.values());
  double u = uniform01(rng) * total;
  for (Option k : c) {
    if (u < theta[k]) return k;
    u -= theta[k];
  }
  return c.options().back();
}

inline Option simulate_choice(const Environment& env, const Presentation& c, std::uint64_t seed) {
  Rng rng(seed);
  return simulate_choice(env, c, rng);
}

// ---------------------------------------------------------------------------
// Merge-Rank: merge sort with noisy comparisons. Each comparison of (i, j)
// queries the pair until the Hoeffding interval
//   p_hat +- sqrt(log(2/delta') / (2m)),   delta' = delta / (K log2 K)
// excludes 1/2, or until m_max = ceil(log(2/delta') / (2 eps^2)) queries, at
// which point the pair is an eps-draw resolved by empirical majority.
// ---------------------------------------------------------------------------

struct MergeRankResult {
  std::vector<ChoiceRecord> records;
  std::vector<Option> ranking;  // most preferred first
  std::size_t distinct_pairs = 0;
};

inline MergeRankResult merge_rank(const PreferenceMatrix& p, double epsilon, double delta, std::uint64_t seed) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw ContractViolation("epsilon must lie in (0, 0.5)");
  if (!(delta > 0.0 && delta < 1.0)) throw ContractViolation("delta must lie in (0, 1)");
  const std::size_t k = p.size();
  const double kk = static_cast<double>(k);
  const double delta_pair = delta / std::max(1.0, kk * std::log2(kk));
  const double log_term = std::log(2.0 / delta_pair);
  const auto m_max = static_cast<std::uint64_t>(std::ceil(log_term / (2.0 * epsilon * epsilon)));

  Rng rng(seed);
  MergeRankResult out;
  std::set<std::pair<Option, Option>> pairs;

  // True when i is ranked ahead of j.
  auto compare = [&](Option i, Option j) {
    pairs.insert({std::min(i, j), std::max(i, j)});
    const Presentation c{i, j};
    std::uint64_t wins = 0;
    for (std::uint64_t m = 1; m <= m_max; ++m) {
      const bool i_wins = uniform01(rng) < p(i, j);
      wins += i_wins ? 1 : 0;
      out.records.emplace_back(c, i_wins ? i : j);
      const double p_hat = static_cast<double>(wins) / static_cast<double>(m);
      const double h = std::sqrt(log_term / (2.0 * static_cast<double>(m)));
      if (p_hat - h > 0.5) return true;
      if (p_hat + h < 0.5) return false;
    }
    const double p_hat = static_cast<double>(wins) / static_cast<double>(m_max);
    if (p_hat != 0.5) return p_hat > 0.5;
    return uniform01(rng) < 0.5;
  };

  std::vector<Option> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  std::vector<Option> buffer(k);
  std::function<void(std::size_t, std::size_t)> sort = [&](std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    sort(lo, mid);
    sort(mid, hi);
    std::size_t a = lo, b = mid, o = lo;
    while (a < mid && b < hi) buffer[o++] = compare(order[b], order[a]) ? order[b++] : order[a++];
    while (a < mid) buffer[o++] = order[a++];
    while (b < hi) buffer[o++] = order[b++];
    std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(lo), buffer.begin() + static_cast<std::ptrdiff_t>(hi),
              order.begin() + static_cast<std::ptrdiff_t>(lo));
  };
  sort(0, k);
  out.ranking = std::move(order);
  out.distinct_pairs = pairs.size();
  return out;
}

inline MergeRankResult merge_rank(const PreferenceVector& theta_star, double epsilon, double delta, std::uint64_t seed) {
  return merge_rank(PreferenceMatrix::from_theta(theta_star), epsilon, delta, seed);
}

inline std::vector<ChoiceRecord> merge_rank_generate(const PreferenceVector& theta_star, double epsilon, double delta,
                                                     std::uint64_t seed) {
  return merge_rank(theta_star, epsilon, delta, seed).records;
}

// ---------------------------------------------------------------------------
// Preference fixtures.
//   sparse: 80% of the mass on the top ceil(K/10) options with geometric
//           decay (ratio 0.5), the remaining 20% spread uniformly.
//   dense:  Dirichlet(5, ..., 5) draw.
// Both are returned sorted descending. The sparse shape ignores the seed.
// ---------------------------------------------------------------------------

enum class FixtureKind { sparse, dense };

inline FixtureKind parse_fixture_kind(const std::string& s) {
  if (s == "sparse") return FixtureKind::sparse;
  if (s == "dense") return FixtureKind::dense;
  throw ContractViolation("unknown theta kind '" + s + "' (expected sparse or dense)");
}

inline PreferenceVector make_fixture_theta(FixtureKind kind, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ContractViolation("fixtures need K >= 2");
  std::vector<double> theta(k);
  if (kind == FixtureKind::sparse) {
    const std::size_t head = (k + 9) / 10;
    const double head_mass = head == k ? 1.0 : 0.8;
    double norm = 0.0;
    for (std::size_t i = 0; i < head; ++i) norm += std::pow(0.5, static_cast<double>(i));
    for (std::size_t i = 0; i < head; ++i) theta[i] = head_mass * std::pow(0.5, static_cast<double>(i)) / norm;
    for (std::size_t i = head; i < k; ++i) theta[i] = (1.0 - head_mass) / static_cast<double>(k - head);
  } else {
    Rng rng(seed);
    const std::vector<double> alpha(k, 5.0);
    sample_dirichlet(rng, alpha, theta);
    std::sort(theta.begin(), theta.end(), std::greater<>());
  }
  return PreferenceVector::normalized(std::move(theta));
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

enum class RegretKind { automatic, top_n, weak_dueling };

struct ExperimentConfig {
  std::size_t K = 10;
  std::size_t L = 2;
  std::size_t T = 1000;
  std::size_t runs = 1;
  std::vector<PolicyKind> policies{PolicyKind::dirichlet_luce_ts};
  EnvironmentKind env = EnvironmentKind::transitive;
  FixtureKind theta_kind = FixtureKind::sparse;
  std::size_t particles = 2048;
  std::uint64_t seed = 0;
  std::string out_dir;
  RegretKind regret = RegretKind::automatic;
  std::size_t top_n = 2;

  // Weak dueling regret for pairs (and always for cyclic choosers),
  // top-n regret otherwise.
  RegretKind resolved_regret() const {
    if (regret != RegretKind::automatic) return regret;
    return (env == EnvironmentKind::cyclic || L == 2) ? RegretKind::weak_dueling : RegretKind::top_n;
  }

  void validate() const {
    if (K < 2) throw ContractViolation("K must be >= 2");
    if (L < 2 || L > K) throw ContractViolation("L must satisfy 2 <= L <= K");
    if (runs < 1) throw ContractViolation("runs must be >= 1");
    if (particles < 2) throw ContractViolation("particles must be >= 2");
    if (policies.empty()) throw ContractViolation("at least one policy is required");
    if (env == EnvironmentKind::cyclic) {
      if (L != 2) throw ContractViolation("cyclic environments require L = 2");
      if (K != 4) throw ContractViolation("the cyclic environment has K = 4 options");
      if (regret == RegretKind::top_n) throw ContractViolation("top-n regret is undefined for cyclic environments");
    }
    for (PolicyKind p : policies)
      if (p == PolicyKind::dts && L != 2) throw ContractViolation("dts requires L = 2");
    if (resolved_regret() == RegretKind::top_n && (top_n < 1 || top_n > L))
      throw ContractViolation("top_n must satisfy 1 <= top_n <= L");
    if (resolved_regret() == RegretKind::weak_dueling && L != 2)
      throw ContractViolation("weak dueling regret requires L = 2");
  }
};

inline const char* config_schema() {
  return "Experiment config: one 'key = value' per line, '#' starts a comment.\n"
         "  K          number of options (>= 2)                      [required]\n"
         "  L          presentation size (2 <= L <= K)               [required]\n"
         "  T          rounds per run (>= 0)                          [required]\n"
         "  runs       independent runs per policy                    [default 1]\n"
         "  policy     comma-separated list of dirichlet_luce_ts, dirichlet_multinomial_ts,\n"
         "             dts, uniform_random                             [required]\n"
         "  env        transitive | cyclic (cyclic: K = 4, L = 2)     [required]\n"
         "  theta_kind sparse | dense (transitive preference shape)   [default sparse]\n"
         "  particles  SMC particle count                             [default 2048]\n"
         "  seed       master seed; run r uses seed xor r             [default 0]\n"
         "  out_dir    output directory                               [required by the CLI]\n"
         "  regret     auto | top_n | weak_dueling                    [default auto]\n"
         "  top_n      positions scored by top_n regret               [default 2]\n";
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t config_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ParseError("config key '" + key + "' expects a nonnegative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "' is out of range");
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(detail::concat("line ", lineno, ": expected 'key = value'"));
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ParseError(detail::concat("line ", lineno, ": duplicate key '", key, "'"));
    try {
      if (key == "K") cfg.K = detail::config_uint(key, value);
      else if (key == "L") cfg.L = detail::config_uint(key, value);
      else if (key == "T") cfg.T = detail::config_uint(key, value);
      else if (key == "runs") cfg.runs = detail::config_uint(key, value);
      else if (key == "particles") cfg.particles = detail::config_uint(key, value);
      else if (key == "seed") cfg.seed = detail::config_uint(key, value);
      else if (key == "top_n") cfg.top_n = detail::config_uint(key, value);
      else if (key == "out_dir") cfg.out_dir = value;
      else if (key == "theta_kind") cfg.theta_kind = parse_fixture_kind(value);
      else if (key == "env") {
        if (value == "transitive") cfg.env = EnvironmentKind::transitive;
        else if (value == "cyclic") cfg.env = EnvironmentKind::cyclic;
        else throw ParseError("env must be transitive or cyclic, got '" + value + "'");
      } else if (key == "regret") {
        if (value == "auto") cfg.regret = RegretKind::automatic;
        else if (value == "top_n") cfg.regret = RegretKind::top_n;
        else if (value == "weak_dueling") cfg.regret = RegretKind::weak_dueling;
        else throw ParseError("regret must be auto, top_n or weak_dueling, got '" + value + "'");
      } else if (key == "policy") {
        cfg.policies.clear();
        std::istringstream ps(value);
        for (std::string name; std::getline(ps, name, ',');) {
          name = detail::trim(name);
          if (!name.empty()) cfg.policies.push_back(parse_policy_kind(name));
        }
      } else {
        throw ParseError("unknown config key '" + key + "'");
      }
    } catch (const ContractViolation& e) {
      throw ParseError(detail::concat("line ", lineno, ": ", e.what()));
    } catch (const ParseError& e) {
      throw ParseError(detail::concat("line ", lineno, ": ", e.what()));
    }
  }
  for (const char* req : {"K", "L", "T", "policy", "env"})
    if (!seen.count(req)) throw ParseError(std::string("missing required config key '") + req + "'");
  try {
    cfg.validate();
  } catch (const ContractViolation& e) {
    throw ParseError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

struct RunResult {
  RegretTrace trace;
  std::vector<std::size_t> unique_presentations;  // at each checkpoint
  SmcLog smc_log;
};

struct SummaryRow {
  PolicyKind policy;
  std::size_t checkpoint;
  double mean_cum_regret;
  double std_cum_regret;
  double mean_unique_presentations;
};

struct ExperimentResult {
  ExperimentConfig config;
  Environment environment;
  std::vector<std::size_t> checkpoints;
  std::map<PolicyKind, std::vector<RunResult>> runs;
  std::vector<SummaryRow> summary;

  const SummaryRow& row(PolicyKind p, std::size_t checkpoint) const {
    for (const auto& r : summary)
      if (r.policy == p && r.checkpoint == checkpoint) return r;
    throw ContractViolation("no summary row for this policy/checkpoint");
  }
};

inline std::vector<std::size_t> checkpoints_for(std::size_t t) {
  std::vector<std::size_t> cps{t / 10, t / 2, t};
  cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
  return cps;
}

inline Environment make_environment(const ExperimentConfig& cfg) {
  if (cfg.env == EnvironmentKind::cyclic) return Environment::cyclic(Environment::cyclic_four_matrix());
  return Environment::transitive(make_fixture_theta(cfg.theta_kind, cfg.K, cfg.seed));
}

// One run of one policy. Streams: policy draws, chooser draws and particle
// initialization are derived from run_seed independently.
inline RunResult run_single(const ExperimentConfig& cfg, const Environment& env, PolicyKind kind,
                            std::uint64_t run_seed, const std::vector<std::size_t>& checkpoints) {
  PolicyConfig pc;
  pc.particles = cfg.particles;
  Policy policy(kind, cfg.K, cfg.L, mix_seed(run_seed, 2), pc);
  Rng policy_rng(mix_seed(run_seed, 3));
  Rng env_rng(mix_seed(run_seed, 4));
  SufficientStatistics seen(cfg.K);
  const RegretKind regret = cfg.resolved_regret();

  RunResult out;
  out.trace.instantaneous.reserve(cfg.T);
  out.trace.cumulative.reserve(cfg.T);
  std::size_t next_cp = 0;
  auto mark = [&](std::size_t t) {
    while (next_cp < checkpoints.size() && checkpoints[next_cp] == t) {
      out.unique_presentations.push_back(count_unique_presentations(seen));
      ++next_cp;
    }
  };
  mark(0);
  for (std::size_t t = 1; t <= cfg.T; ++t) {
    const std::vector<Option> ranking = policy.present_ranked(policy_rng);
    Presentation c(ranking);
    const Option k = simulate_choice(env, c, env_rng);
    const ChoiceRecord rec(c, k);
    policy.update(rec);
    seen.record(rec);
    out.trace.push(regret == RegretKind::weak_dueling ? weak_dueling_regret(c, env.preference_matrix())
                                                      : regret_top_n(ranking, *env.theta_star(), cfg.top_n));
    mark(t);
  }
  if (const auto* dl = policy.dirichlet_luce_state()) out.smc_log = dl->log;
  return out;
}

inline void write_outputs(const ExperimentResult& res) {
  namespace fs = std::filesystem;
  const fs::path root(res.config.out_dir);
  fs::create_directories(root);
  auto open = [](const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot open " + p.string() + " for writing");
    os.precision(12);
    return os;
  };
  for (const auto& [kind, runs] : res.runs) {
    const fs::path dir = root / to_string(kind);
    fs::create_directories(dir);
    for (std::size_t r = 0; r < runs.size(); ++r) {
      auto os = open(dir / ("run_" + std::to_string(r) + ".csv"));
      runs[r].trace.write_csv(os);
      if (kind == PolicyKind::dirichlet_luce_ts) {
        auto es = open(dir / ("ess_" + std::to_string(r) + ".csv"));
        runs[r].smc_log.write_csv(es);
      }
    }
  }
  auto os = open(root / "summary.csv");
  os << "policy,checkpoint,mean_cum_regret,std_cum_regret,mean_unique_presentations\n";
  for (const auto& row : res.summary)
    os << to_string(row.policy) << ',' << row.checkpoint << ',' << row.mean_cum_regret << ',' << row.std_cum_regret
       << ',' << row.mean_unique_presentations << '\n';
  if (const auto& th = res.environment.theta_star()) {
    auto ts = open(root / "theta_star.csv");
    ts << "option,theta\n";
    for (std::size_t i = 0; i < th->size(); ++i) ts << i << ',' << (*th)[i] << '\n';
  }
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult res{cfg, make_environment(cfg), checkpoints_for(cfg.T), {}, {}};
  for (PolicyKind kind : cfg.policies) {
    if (res.runs.count(kind)) continue;
    auto& runs = res.runs[kind];
    for (std::size_t r = 0; r < cfg.runs; ++r)
      runs.push_back(run_single(cfg, res.environment, kind, cfg.seed ^ static_cast<std::uint64_t>(r), res.checkpoints));
    for (std::size_t c = 0; c < res.checkpoints.size(); ++c) {
      const std::size_t cp = res.checkpoints[c];
      double mean = 0.0, mean_u = 0.0;
      for (const auto& run : runs) {
        mean += run.trace.at(cp);
        mean_u += static_cast<double>(run.unique_presentations[c]);
      }
      const double n = static_cast<double>(runs.size());
      mean /= n;
      mean_u /= n;
      double var = 0.0;
      for (const auto& run : runs) var += (run.trace.at(cp) - mean) * (run.trace.at(cp) - mean);
      res.summary.push_back({kind, cp, mean, std::sqrt(var / n), mean_u});
    }
  }
  if (!cfg.out_dir.empty()) write_outputs(res);
  return res;
}

}  // namespace dluce
