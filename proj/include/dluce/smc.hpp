#pragma once

// Resample-move sequential Monte Carlo over the preference simplex.
//
// Particles start from the flat Dirichlet and are reweighted by the restricted
// choice probability of every new observation. When the effective sample size
// falls below a fraction of N the set is resampled multinomially and moved by
// a Metropolis-within-Gibbs kernel that targets the current posterior.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "dluce/core.hpp"
#include "dluce/random.hpp"

namespace dluce {

class DegenerateWeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Posterior potential laid out for fast single-coordinate updates: each
// option knows which columns contain it.
class PosteriorKernel {
 public:
  explicit PosteriorKernel(PotentialTerms terms) : terms_(std::move(terms)) {
    const std::size_t k = terms_.num_options();
    incidence_.resize(k);
    member_.assign(terms_.columns.size() * k, 0);
    for (std::size_t c = 0; c < terms_.columns.size(); ++c)
      for (Option o : terms_.columns[c]) {
        incidence_.at(o).push_back(c);
        member_[c * k + o] = 1;
      }
  }

  PosteriorKernel(const SufficientStatistics& stats, const Hyperparams& hyper)
      : PosteriorKernel(make_potential_terms(stats, hyper)) {}

  std::size_t num_options() const { return terms_.num_options(); }
  const PotentialTerms& terms() const { return terms_; }

  double log_potential(std::span<const double> theta) const { return detail::log_potential(terms_, theta); }

  void column_sums(std::span<const double> theta, std::vector<double>& sums) const {
    sums.resize(terms_.columns.size());
    for (std::size_t c = 0; c < sums.size(); ++c) sums[c] = detail::column_sum(terms_.columns[c], theta);
  }

  // Change in phi when theta_j -> theta_j + delta and theta_r -> theta_r - delta.
  double delta_log_potential(std::span<const double> theta, std::span<const double> sums, Option j, Option r,
                             double delta) const {
    double d = (terms_.a[j] - 1.0) * (detail::safe_log(theta[j] + delta) - detail::safe_log(theta[j])) +
               (terms_.a[r] - 1.0) * (detail::safe_log(theta[r] - delta) - detail::safe_log(theta[r]));
    for (std::size_t c : incidence_[j])
      if (!has(c, r)) d -= terms_.b[c] * std::log1p(delta / sums[c]);
    for (std::size_t c : incidence_[r])
      if (!has(c, j)) d -= terms_.b[c] * std::log1p(-delta / sums[c]);
    return d;
  }

  void apply_delta(std::span<double> sums, Option j, Option r, double delta) const {
    for (std::size_t c : incidence_[j])
      if (!has(c, r)) sums[c] += delta;
    for (std::size_t c : incidence_[r])
      if (!has(c, j)) sums[c] -= delta;
  }

 private:
  bool has(std::size_t c, Option o) const { return member_[c * terms_.num_options() + o] != 0; }

  PotentialTerms terms_;
  std::vector<std::vector<std::size_t>> incidence_;
  std::vector<unsigned char> member_;  // column x option
};

struct MoveStats {
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  double acceptance_rate() const {
    return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
  }
};

// Weighted particle approximation of the posterior. Weights are kept in log
// space; particle i occupies theta[i*K, (i+1)*K).
class ParticleSet {
 public:
  // N particles drawn i.i.d. from the flat Dirichlet, unit weights.
  ParticleSet(std::size_t n, std::size_t k, std::uint64_t seed) : n_(n), k_(k), rng_(seed) {
    if (n < 2) throw ContractViolation("a particle set needs at least 2 particles");
    if (k < 2) throw ContractViolation("a particle set needs at least 2 options");
    theta_.resize(n * k);
    log_w_.assign(n, 0.0);
    const std::vector<double> ones(k, 1.0);
    for (std::size_t i = 0; i < n; ++i) sample_dirichlet(rng_, ones, particle_mut(i));
  }

  // Explicit particles with linear (nonnegative) weights.
  ParticleSet(const std::vector<PreferenceVector>& particles, const std::vector<double>& weights,
              std::uint64_t seed)
      : n_(particles.size()), k_(particles.empty() ? 0 : particles.front().size()), rng_(seed) {
    if (n_ < 2) throw ContractViolation("a particle set needs at least 2 particles");
    if (weights.size() != n_) throw ContractViolation("one weight per particle is required");
    theta_.reserve(n_ * k_);
    for (const auto& p : particles) {
      if (p.size() != k_) throw ContractViolation("particles must share one dimension");
      theta_.insert(theta_.end(), p.vector().begin(), p.vector().end());
    }
    log_w_.resize(n_);
    bool any = false;
    for (std::size_t i = 0; i < n_; ++i) {
      if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) throw ContractViolation("weights must be >= 0");
      log_w_[i] = weights[i] > 0.0 ? std::log(weights[i]) : -std::numeric_limits<double>::infinity();
      any = any || weights[i] > 0.0;
    }
    if (!any) throw ContractViolation("at least one weight must be positive");
  }

  std::size_t size() const { return n_; }
  std::size_t num_options() const { return k_; }
  std::span<const double> particle(std::size_t i) const { return {theta_.data() + i * k_, k_}; }
  PreferenceVector preference(std::size_t i) const {
    auto p = particle(i);
    return PreferenceVector(std::vector<double>(p.begin(), p.end()));
  }
  std::span<const double> log_weights() const { return log_w_; }
  double weight(std::size_t i) const { return std::exp(log_w_[i]); }
  std::uint64_t resample_count() const { return resamples_; }
  Rng& rng() { return rng_; }

  // Normalized weights w_i / sum w (max-shifted).
  std::vector<double> normalized_weights() const {
    const double m = max_log_weight();
    std::vector<double> w(n_);
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) s += (w[i] = std::exp(log_w_[i] - m));
    for (double& x : w) x /= s;
    return w;
  }

  // Multiplies each weight by the particle's restricted choice probability.
  void reweight(const ChoiceRecord& rec) {
    rec.presentation.validate(k_);
    for (std::size_t i = 0; i < n_; ++i) {
      auto th = particle(i);
      log_w_[i] += detail::safe_log(th[rec.chosen]) - detail::safe_log(detail::column_sum(rec.presentation, th));
    }
  }

  // Importance correction from the flat initial law to a prior exp(phi_0).
  void reweight_by_prior(const Hyperparams& hyper) {
    PosteriorKernel prior(SufficientStatistics(k_), hyper);
    for (std::size_t i = 0; i < n_; ++i) log_w_[i] += prior.log_potential(particle(i));
  }

  double effective_sample_size() const {
    const double m = max_log_weight();
    double s = 0.0, s2 = 0.0;
    for (double lw : log_w_) {
      const double w = std::exp(lw - m);
      s += w;
      s2 += w * w;
    }
    return s * s / s2;
  }

  void resample() {
    const std::vector<double> w = normalized_weights();
    std::vector<double> cdf(n_);
    std::partial_sum(w.begin(), w.end(), cdf.begin());
    std::vector<double> next(theta_.size());
    for (std::size_t i = 0; i < n_; ++i) {
      const double u = uniform01(rng_) * cdf.back();
      auto src = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      src = std::min(src, n_ - 1);
      while (w[src] == 0.0 && src > 0) --src;  // never pick a zero-weight particle
      std::copy_n(theta_.begin() + static_cast<std::ptrdiff_t>(src * k_), k_,
                  next.begin() + static_cast<std::ptrdiff_t>(i * k_));
    }
    theta_.swap(next);
    std::fill(log_w_.begin(), log_w_.end(), 0.0);
    ++resamples_;
  }

  // Metropolis-within-Gibbs sweeps targeting exp(phi). Per sweep one
  // coordinate r is drawn to play the implicit (dependent) role; every other
  // coordinate j gets a uniform proposal on its feasible interval
  // (0, theta_j + theta_r), with theta_r absorbing the difference.
  MoveStats move(const PosteriorKernel& kernel, std::size_t sweeps) {
    if (kernel.num_options() != k_) throw ContractViolation("kernel dimension does not match particles");
    MoveStats stats;
    std::vector<double> sums;
    for (std::size_t i = 0; i < n_; ++i) {
      auto th = particle_mut(i);
      kernel.column_sums(th, sums);
      for (std::size_t s = 0; s < sweeps; ++s) {
        const auto r = static_cast<Option>(std::uniform_int_distribution<std::size_t>(0, k_ - 1)(rng_));
        for (Option j = 0; j < k_; ++j) {
          if (j == r) continue;
          const double upper = th[j] + th[r];
          const double width = upper - 2.0 * kThetaFloor;
          const double u_prop = uniform01(rng_);
          const double u_acc = uniform01(rng_);
          if (!(width > 0.0)) continue;
          const double proposal = kThetaFloor + u_prop * width;
          const double delta = proposal - th[j];
          ++stats.proposed;
          const double log_ratio = kernel.delta_log_potential(th, sums, j, r, delta);
          if (std::log(u_acc) < log_ratio) {
            kernel.apply_delta(sums, j, r, delta);
            th[j] = proposal;
            th[r] = upper - proposal;
            ++stats.accepted;
          }
        }
      }
    }
    return stats;
  }

  std::vector<double> posterior_mean() const {
    const std::vector<double> w = normalized_weights();
    std::vector<double> mean(k_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      auto th = particle(i);
      for (std::size_t k = 0; k < k_; ++k) mean[k] += w[i] * th[k];
    }
    return mean;
  }

  // Index drawn with probability proportional to weight.
  std::size_t sample_index(Rng& rng) const {
    const std::vector<double> w = normalized_weights();
    double u = uniform01(rng);
    for (std::size_t i = 0; i < n_; ++i) {
      if (u < w[i]) return i;
      u -= w[i];
    }
    for (std::size_t i = n_; i-- > 0;)
      if (w[i] > 0.0) return i;
    return n_ - 1;
  }

  // Appends one coordinate: theta_new ~ Beta(alpha_new, rest) and the old
  // coordinates are scaled by (1 - theta_new). Weights are untouched.
  void add_option(double alpha_new, double alpha_rest) {
    std::vector<double> next;
    next.reserve(n_ * (k_ + 1));
    for (std::size_t i = 0; i < n_; ++i) {
      const double t = sample_beta(rng_, alpha_new, alpha_rest);
      auto th = particle(i);
      for (double x : th) next.push_back(std::max(x * (1.0 - t), kThetaFloor));
      next.push_back(t);
    }
    theta_.swap(next);
    ++k_;
  }

 private:
  std::span<double> particle_mut(std::size_t i) { return {theta_.data() + i * k_, k_}; }

  double max_log_weight() const {
    const double m = *std::max_element(log_w_.begin(), log_w_.end());
    if (!std::isfinite(m)) throw DegenerateWeightsError("all particle weights are zero");
    return m;
  }

  std::size_t n_;
  std::size_t k_;
  std::vector<double> theta_;
  std::vector<double> log_w_;
  Rng rng_;
  std::uint64_t resamples_ = 0;
};

// ESS / resampling trace, one entry per observation.
struct SmcLog {
  struct Entry {
    std::uint64_t t;
    double ess;
    bool resampled;
  };
  std::vector<Entry> entries;

  void write_csv(std::ostream& os) const {
    os << "t,ess,resampled\n";
    for (const auto& e : entries) os << e.t << ',' << e.ess << ',' << (e.resampled ? 1 : 0) << '\n';
  }
};

inline ParticleSet init_particles(std::size_t n, std::size_t k, std::uint64_t seed) {
  return ParticleSet(n, k, seed);
}

inline ParticleSet reweight(ParticleSet ps, const ChoiceRecord& rec) {
  ps.reweight(rec);
  return ps;
}

inline double effective_sample_size(const ParticleSet& ps) { return ps.effective_sample_size(); }

inline ParticleSet resample_multinomial(ParticleSet ps) {
  ps.resample();
  return ps;
}

inline ParticleSet move_metropolis_within_gibbs(ParticleSet ps, const SufficientStatistics& stats,
                                                const Hyperparams& hyper, std::size_t sweeps) {
  if (sweeps < 1) throw ContractViolation("sweeps must be >= 1");
  ps.move(PosteriorKernel(stats, hyper), sweeps);
  return ps;
}

struct SmcStepResult {
  double ess = 0.0;
  bool resampled = false;
};

// One observation: reweight, then resample + move if ESS < frac * N.
// stats must already include rec.
inline SmcStepResult smc_step_in_place(ParticleSet& ps, const ChoiceRecord& rec, const SufficientStatistics& stats,
                                       const Hyperparams& hyper, double ess_threshold_frac = 0.5,
                                       std::size_t sweeps = 1) {
  if (!(ess_threshold_frac > 0.0 && ess_threshold_frac < 1.0))
    throw ContractViolation("ess threshold fraction must lie in (0, 1)");
  ps.reweight(rec);
  SmcStepResult out{ps.effective_sample_size(), false};
  if (out.ess < ess_threshold_frac * static_cast<double>(ps.size())) {
    ps.resample();
    ps.move(PosteriorKernel(stats, hyper), sweeps);
    out.resampled = true;
  }
  return out;
}

inline ParticleSet smc_step(ParticleSet ps, const ChoiceRecord& rec, const SufficientStatistics& stats,
                            const Hyperparams& hyper, double ess_threshold_frac = 0.5) {
  smc_step_in_place(ps, rec, stats, hyper, ess_threshold_frac);
  return ps;
}

inline PreferenceVector sample_preference(const ParticleSet& ps, std::uint64_t seed) {
  Rng rng(seed);
  return ps.preference(ps.sample_index(rng));
}

struct SmcOptions {
  std::size_t particles = 2048;
  double ess_threshold_frac = 0.5;
  std::size_t move_sweeps = 1;
  // Extra move sweeps after the last observation.
  std::size_t final_sweeps = 0;
  bool shuffle = true;
  std::uint64_t seed = 0;
};

// Runs the sampler over every record in stats (shuffled when requested).
inline ParticleSet replay_posterior(const SufficientStatistics& stats, const Hyperparams& hyper,
                                    const SmcOptions& opts = {}, SmcLog* log = nullptr) {
  const std::size_t k = hyper.num_options();
  ParticleSet ps(opts.particles, k, mix_seed(opts.seed, 1));
  ps.reweight_by_prior(hyper);
  std::vector<ChoiceRecord> records = stats.records();
  if (opts.shuffle) {
    Rng order(mix_seed(opts.seed, 2));
    std::shuffle(records.begin(), records.end(), order);
  }
  SufficientStatistics seen(k);
  for (const auto& rec : records) {
    seen.record(rec);
    const auto r = smc_step_in_place(ps, rec, seen, hyper, opts.ess_threshold_frac, opts.move_sweeps);
    if (log) log->entries.push_back({seen.total(), r.ess, r.resampled});
  }
  if (opts.final_sweeps > 0) ps.move(PosteriorKernel(stats, hyper), opts.final_sweeps);
  return ps;
}

}  // namespace dluce
