#pragma once

// Presentation policies and regret metrics.
//
// dirichlet_luce_ts        Thompson sampling from the SMC posterior; presents
//                          the top-L options of a sampled preference vector.
// dirichlet_multinomial_ts Same, but the posterior is Dirichlet(alpha + y) and
//                          ignores which options were presented.
// dts                      Double Thompson Sampling for dueling bandits (L=2).
// uniform_random           Uniform L-subset every round.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "dluce/core.hpp"
#include "dluce/random.hpp"
#include "dluce/smc.hpp"

namespace dluce {

enum class PolicyKind { dirichlet_luce_ts, dirichlet_multinomial_ts, dts, uniform_random };

inline std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::dirichlet_luce_ts: return "dirichlet_luce_ts";
    case PolicyKind::dirichlet_multinomial_ts: return "dirichlet_multinomial_ts";
    case PolicyKind::dts: return "dts";
    case PolicyKind::uniform_random: return "uniform_random";
  }
  return "unknown";
}

inline PolicyKind parse_policy_kind(const std::string& name) {
  for (PolicyKind k : {PolicyKind::dirichlet_luce_ts, PolicyKind::dirichlet_multinomial_ts, PolicyKind::dts,
                       PolicyKind::uniform_random})
    if (to_string(k) == name) return k;
  throw ContractViolation("unknown policy '" + name + "'");
}

// Pairwise preference table: P(i, j) = probability that i is chosen from {i, j}.
class PreferenceMatrix {
 public:
  explicit PreferenceMatrix(std::vector<std::vector<double>> p) : p_(std::move(p)) {
    const std::size_t k = p_.size();
    if (k < 2) throw ContractViolation("preference matrix needs at least 2 options");
    for (std::size_t i = 0; i < k; ++i) {
      if (p_[i].size() != k) throw ContractViolation("preference matrix must be square");
      if (std::abs(p_[i][i] - 0.5) > 1e-12) throw ContractViolation("preference matrix diagonal must be 0.5");
      for (std::size_t j = 0; j < k; ++j) {
        if (!(p_[i][j] >= 0.0 && p_[i][j] <= 1.0)) throw ContractViolation("preference entries must lie in [0, 1]");
        if (std::abs(p_[i][j] + p_[j][i] - 1.0) > 1e-12)
          throw ContractViolation("preference matrix must satisfy P(i,j) + P(j,i) = 1");
      }
    }
    for (std::size_t i = 0; i < k && !winner_; ++i) {
      bool beats_all = true;
      for (std::size_t j = 0; j < k && beats_all; ++j)
        if (j != i && !(p_[i][j] > 0.5)) beats_all = false;
      if (beats_all) winner_ = i;
    }
  }

  // Induced by a preference vector: P(i, j) = theta_i / (theta_i + theta_j).
  static PreferenceMatrix from_theta(const PreferenceVector& theta) {
    const std::size_t k = theta.size();
    std::vector<std::vector<double>> p(k, std::vector<double>(k, 0.5));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (i != j) p[i][j] = theta[i] / (theta[i] + theta[j]);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) p[j][i] = 1.0 - p[i][j];
    return PreferenceMatrix(std::move(p));
  }

  std::size_t size() const { return p_.size(); }
  double operator()(std::size_t i, std::size_t j) const { return p_[i][j]; }
  std::optional<Option> condorcet_winner() const { return winner_; }

 private:
  std::vector<std::vector<double>> p_;
  std::optional<Option> winner_;
};

// Regret of the first n entries of a ranking against the best n-subset.
inline double regret_top_n(const std::vector<Option>& ranking, const PreferenceVector& theta_star, std::size_t n) {
  if (n < 1 || n > ranking.size())
    throw ContractViolation(detail::concat("n=", n, " out of range for a ranking of length ", ranking.size()));
  if (n > theta_star.size()) throw ContractViolation("n exceeds the number of options");
  std::vector<double> sorted = theta_star.vector();
  std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n), sorted.end(),
                    std::greater<>());
  double best = 0.0, got = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranking[i] >= theta_star.size()) throw ContractViolation("ranking refers to an unknown option");
    best += sorted[i];
    got += theta_star[ranking[i]];
  }
  return std::max(0.0, best - got);
}

// Weak regret: gap of the Condorcet winner to the better of the pair.
inline double weak_dueling_regret(const Presentation& pair, const PreferenceMatrix& p) {
  if (pair.size() != 2) throw ContractViolation("weak dueling regret needs a pair");
  pair.validate(p.size());
  const auto winner = p.condorcet_winner();
  if (!winner) throw ContractViolation("preference matrix has no Condorcet winner");
  double r = std::numeric_limits<double>::infinity();
  for (Option a : pair) r = std::min(r, p(*winner, a) - 0.5);
  return r;
}

inline std::size_t count_unique_presentations(const SufficientStatistics& stats) {
  std::size_t n = 0;
  for (const auto& [c, cell] : stats.table())
    if (cell.total > 0) ++n;
  return n;
}

struct RegretTrace {
  std::vector<double> instantaneous;
  std::vector<double> cumulative;

  std::size_t rounds() const { return instantaneous.size(); }
  double total() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
  // Cumulative regret after t rounds (t = 0 gives 0).
  double at(std::size_t t) const { return t == 0 ? 0.0 : cumulative.at(t - 1); }

  void push(double r) {
    instantaneous.push_back(r);
    cumulative.push_back(total() + r);
  }

  void write_csv(std::ostream& os) const {
    os << "t,instantaneous,cumulative\n";
    for (std::size_t t = 0; t < instantaneous.size(); ++t)
      os << t + 1 << ',' << instantaneous[t] << ',' << cumulative[t] << '\n';
  }
};

struct PolicyConfig {
  double alpha = 1.0;               // prior pseudo-count per option
  std::size_t particles = 2048;
  double ess_threshold_frac = 0.5;
  std::size_t move_sweeps = 1;
  double dts_alpha = 0.51;          // DTS confidence-bound exploration
};

class Policy {
 public:
  struct DirichletLuce {
    SufficientStatistics stats;
    Hyperparams hyper;
    ParticleSet particles;
    SmcLog log;
  };
  struct DirichletMultinomial {
    std::vector<double> alpha;
    std::vector<Count> y;
  };
  struct DoubleThompson {
    std::vector<std::vector<double>> wins;  // wins[i][j]: times i beat j
    std::uint64_t t = 0;
  };
  struct UniformRandom {};
  using State = std::variant<DirichletLuce, DirichletMultinomial, DoubleThompson, UniformRandom>;

  Policy(PolicyKind kind, std::size_t k, std::size_t l, std::uint64_t seed, const PolicyConfig& cfg = {})
      : kind_(kind), k_(k), l_(l), cfg_(cfg), state_(make_state(kind, k, seed, cfg)) {
    check_sizes();
  }

  // Dirichlet-Luce policy around an existing posterior approximation.
  static Policy dirichlet_luce(ParticleSet particles, SufficientStatistics stats, Hyperparams hyper, std::size_t l,
                               const PolicyConfig& cfg = {}) {
    const std::size_t k = hyper.num_options();
    if (particles.num_options() != k || stats.num_options() != k)
      throw ContractViolation("particles, statistics and hyperparameters must agree on K");
    return Policy(PolicyKind::dirichlet_luce_ts, k, l, cfg,
                  DirichletLuce{std::move(stats), std::move(hyper), std::move(particles), {}});
  }

  PolicyKind kind() const { return kind_; }
  std::size_t num_options() const { return k_; }
  std::size_t presentation_size() const { return l_; }
  const State& state() const { return state_; }

  const DirichletLuce* dirichlet_luce_state() const { return std::get_if<DirichletLuce>(&state_); }
  const DoubleThompson* dts_state() const { return std::get_if<DoubleThompson>(&state_); }
  const DirichletMultinomial* dirichlet_multinomial_state() const {
    return std::get_if<DirichletMultinomial>(&state_);
  }

  // The L presented options in the order implied by the policy's draw.
  std::vector<Option> present_ranked(Rng& rng) const {
    return std::visit([&](const auto& s) { return rank(s, rng); }, state_);
  }

  Presentation present(Rng& rng) const { return Presentation(present_ranked(rng)); }

  Presentation present(std::uint64_t seed) const {
    Rng rng(seed);
    return present(rng);
  }

  void update(const ChoiceRecord& rec) {
    if (rec.presentation.size() != l_)
      throw ContractViolation(detail::concat("presentation has ", rec.presentation.size(), " options, policy uses L=", l_));
    rec.presentation.validate(k_);
    std::visit([&](auto& s) { observe(s, rec); }, state_);
  }

  // Introduces a never-presented option with prior pseudo-count alpha_new.
  void add_option(double alpha_new = 1.0) {
    std::visit([&](auto& s) { extend(s, alpha_new); }, state_);
    ++k_;
  }

 private:
  Policy(PolicyKind kind, std::size_t k, std::size_t l, const PolicyConfig& cfg, State state)
      : kind_(kind), k_(k), l_(l), cfg_(cfg), state_(std::move(state)) {
    check_sizes();
  }

  void check_sizes() const {
    if (l_ < 2 || l_ > k_) throw ContractViolation(detail::concat("need 2 <= L <= K, got L=", l_, ", K=", k_));
    if (kind_ == PolicyKind::dts && l_ != 2) throw UnsupportedError("dts supports only L = 2");
  }

  static State make_state(PolicyKind kind, std::size_t k, std::uint64_t seed, const PolicyConfig& cfg) {
    switch (kind) {
      case PolicyKind::dirichlet_luce_ts: {
        Hyperparams hyper = Hyperparams::symmetric(k, cfg.alpha);
        ParticleSet ps(cfg.particles, k, seed);
        if (cfg.alpha != 1.0) ps.reweight_by_prior(hyper);
        return DirichletLuce{SufficientStatistics(k), std::move(hyper), std::move(ps), {}};
      }
      case PolicyKind::dirichlet_multinomial_ts:
        return DirichletMultinomial{std::vector<double>(k, cfg.alpha), std::vector<Count>(k, 0)};
      case PolicyKind::dts:
        return DoubleThompson{std::vector<std::vector<double>>(k, std::vector<double>(k, 0.0)), 0};
      case PolicyKind::uniform_random:
        return UniformRandom{};
    }
    throw ContractViolation("unknown policy kind");
  }

  std::vector<Option> rank(const DirichletLuce& s, Rng& rng) const {
    const std::size_t i = s.particles.sample_index(rng);
    return top_n_random_ties(s.particles.particle(i), l_, rng);
  }

  std::vector<Option> rank(const DirichletMultinomial& s, Rng& rng) const {
    std::vector<double> a(k_);
    for (std::size_t i = 0; i < k_; ++i) a[i] = s.alpha[i] + static_cast<double>(s.y[i]);
    std::vector<double> theta(k_);
    sample_dirichlet(rng, a, theta);
    return top_n_random_ties(theta, l_, rng);
  }

  std::vector<Option> rank(const UniformRandom&, Rng& rng) const {
    std::vector<Option> all(k_);
    std::iota(all.begin(), all.end(), Option{0});
    for (std::size_t i = 0; i < l_; ++i) {
      const auto j = std::uniform_int_distribution<std::size_t>(i, k_ - 1)(rng);
      std::swap(all[i], all[j]);
    }
    all.resize(l_);
    return all;
  }

  // Double Thompson Sampling: the first arm is a Thompson-sampled Copeland
  // winner among arms whose optimistic Copeland score is maximal; the second
  // arm maximizes a fresh posterior sample of beating the first, among arms
  // not confidently beaten by it. The second arm is restricted to differ from
  // the first so that presentations always hold two distinct options.
  std::vector<Option> rank(const DoubleThompson& s, Rng& rng) const {
    const std::size_t k = k_;
    const double log_t = std::log(static_cast<double>(s.t + 1));
    auto bounds = [&](std::size_t i, std::size_t j, double sign) {
      if (i == j) return 0.5;
      const double n = s.wins[i][j] + s.wins[j][i];
      if (n == 0.0) return sign > 0 ? 1.0 : 0.0;
      return std::clamp(s.wins[i][j] / n + sign * std::sqrt(cfg_.dts_alpha * log_t / n), 0.0, 1.0);
    };

    std::vector<std::size_t> copeland(k, 0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (i != j && bounds(i, j, +1.0) > 0.5) ++copeland[i];
    const std::size_t best = *std::max_element(copeland.begin(), copeland.end());

    std::vector<std::vector<double>> sample(k, std::vector<double>(k, 0.5));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) {
        sample[i][j] = sample_beta(rng, s.wins[i][j] + 1.0, s.wins[j][i] + 1.0);
        sample[j][i] = 1.0 - sample[i][j];
      }
    std::vector<double> score(k, -1.0);
    for (std::size_t i = 0; i < k; ++i) {
      if (copeland[i] != best) continue;
      double wins = 0.0;
      for (std::size_t j = 0; j < k; ++j)
        if (j != i && sample[i][j] > 0.5) wins += 1.0;
      score[i] = wins;
    }
    const Option first = top_n_random_ties(score, 1, rng).front();

    std::vector<double> second(k, -1.0);
    bool any = false;
    for (std::size_t i = 0; i < k; ++i) {
      if (i == first || bounds(i, first, -1.0) > 0.5) continue;
      second[i] = sample_beta(rng, s.wins[i][first] + 1.0, s.wins[first][i] + 1.0);
      any = true;
    }
    if (!any)
      for (std::size_t i = 0; i < k; ++i)
        if (i != first) second[i] = sample_beta(rng, s.wins[i][first] + 1.0, s.wins[first][i] + 1.0);
    second[first] = -2.0;
    const Option other = top_n_random_ties(second, 1, rng).front();
    return {first, other};
  }

  void observe(DirichletLuce& s, const ChoiceRecord& rec) {
    s.stats.record(rec);
    const auto r = smc_step_in_place(s.particles, rec, s.stats, s.hyper, cfg_.ess_threshold_frac, cfg_.move_sweeps);
    s.log.entries.push_back({s.stats.total(), r.ess, r.resampled});
  }

  void observe(DirichletMultinomial& s, const ChoiceRecord& rec) { ++s.y[rec.chosen]; }

  void observe(DoubleThompson& s, const ChoiceRecord& rec) {
    for (Option o : rec.presentation)
      if (o != rec.chosen) s.wins[rec.chosen][o] += 1.0;
    ++s.t;
  }

  void observe(UniformRandom&, const ChoiceRecord&) {}

  // The new coordinate is independent of the others under the posterior
  // (the option was never presented), so it is drawn from its prior Beta and
  // the existing particles are rescaled. Exact when the prior puts all
  // presentation mass on the full set.
  void extend(DirichletLuce& s, double alpha_new) {
    const double rest = s.hyper.alpha_sum();
    s.stats = s.stats.extended(k_ + 1);
    s.hyper = s.hyper.extended(alpha_new);
    s.particles.add_option(alpha_new, rest);
  }

  void extend(DirichletMultinomial& s, double alpha_new) {
    s.alpha.push_back(alpha_new);
    s.y.push_back(0);
  }

  void extend(DoubleThompson& s, double) {
    for (auto& row : s.wins) row.push_back(0.0);
    s.wins.emplace_back(k_ + 1, 0.0);
  }

  void extend(UniformRandom&, double) {}

  PolicyKind kind_;
  std::size_t k_;
  std::size_t l_;
  PolicyConfig cfg_;
  State state_;
};

}  // namespace dluce
