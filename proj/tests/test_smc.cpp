#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <sstream>

#include "dluce/estimate.hpp"
#include "dluce/smc.hpp"
#include "oracles.hpp"

using namespace dluce;
using namespace dluce::testing;

namespace {

std::vector<double> coordinate(const ParticleSet& ps, std::size_t j) {
  std::vector<double> out(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) out[i] = ps.particle(i)[j];
  return out;
}

ParticleSet from_points(const std::vector<std::vector<double>>& pts, std::uint64_t seed) {
  std::vector<PreferenceVector> ps;
  for (const auto& p : pts) ps.emplace_back(p);
  return ParticleSet(ps, std::vector<double>(pts.size(), 1.0), seed);
}

}  // namespace

TEST(InitParticles, FlatDirichletMoments) {
  const auto ps = init_particles(10000, 3, 1);
  const double sd = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 4.0);  // Beta(1,2) variance = 2/36
  for (std::size_t j = 0; j < 3; ++j) {
    const auto xs = coordinate(ps, j);
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / 10000.0;
    EXPECT_NEAR(mean, 1.0 / 3.0, 3.0 * sd / 100.0);
  }
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps.log_weights()[i], 0.0);
}

TEST(InitParticles, Deterministic) {
  const auto a = init_particles(100, 4, 9), b = init_particles(100, 4, 9);
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a.particle(i)[j], b.particle(i)[j]);
}

TEST(InitParticles, Bounds) {
  EXPECT_NO_THROW(init_particles(2, 3, 0));
  EXPECT_THROW(init_particles(1, 3, 0), ContractViolation);
  EXPECT_THROW(init_particles(10, 1, 0), ContractViolation);
}

TEST(Reweight, Examples) {
  auto ps = from_points({{0.5, 0.3, 0.2}, {0.2, 0.2, 0.6}}, 0);
  ps = reweight(ps, ChoiceRecord(Presentation({0, 1}), 0));
  EXPECT_NEAR(ps.weight(0), 0.625, 1e-15);
  EXPECT_NEAR(ps.weight(1), 0.5, 1e-15);
  const auto before = std::vector<double>(ps.log_weights().begin(), ps.log_weights().end());
  ps = reweight(ps, ChoiceRecord(Presentation({2}), 2));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(ps.log_weights()[i], before[i]);
}

TEST(Reweight, DrawsAndCycleSameWeightsAnyOrder) {
  const auto base = init_particles(200, 3, 5);
  Rng rng(6);
  std::vector<ParticleSet> finals;
  for (int trial = 0; trial < 4; ++trial) {
    auto recs = trial % 2 ? cycle_dataset() : draws_dataset();
    std::shuffle(recs.begin(), recs.end(), rng);
    ParticleSet ps = base;
    for (const auto& r : recs) ps.reweight(r);
    finals.push_back(ps);
  }
  for (std::size_t t = 1; t < finals.size(); ++t)
    for (std::size_t i = 0; i < base.size(); ++i)
      EXPECT_NEAR(finals[t].log_weights()[i], finals[0].log_weights()[i],
                  1e-12 * std::max(1.0, std::abs(finals[0].log_weights()[i])));
}

TEST(Ess, Examples) {
  std::vector<PreferenceVector> pts(100, PreferenceVector::uniform(3));
  EXPECT_NEAR(ParticleSet(pts, std::vector<double>(100, 1.0), 0).effective_sample_size(), 100.0, 1e-9);
  std::vector<double> w(100, 0.0);
  w[7] = 1.0;
  EXPECT_NEAR(ParticleSet(pts, w, 0).effective_sample_size(), 1.0, 1e-12);
  std::vector<PreferenceVector> three(3, PreferenceVector::uniform(2));
  EXPECT_NEAR(ParticleSet(three, {2.0, 1.0, 1.0}, 0).effective_sample_size(), 16.0 / 6.0, 1e-12);
}

TEST(Ess, AllZeroWeightsRejected) {
  std::vector<PreferenceVector> pts(3, PreferenceVector::uniform(2));
  EXPECT_THROW(ParticleSet(pts, {0.0, 0.0, 0.0}, 0), ContractViolation);
}

TEST(Resample, SingleWeightGivesCopies) {
  auto ps = init_particles(50, 3, 2);
  std::vector<PreferenceVector> pts;
  for (std::size_t i = 0; i < 50; ++i) pts.push_back(ps.preference(i));
  std::vector<double> w(50, 0.0);
  w[13] = 3.0;
  ParticleSet q(pts, w, 4);
  q = resample_multinomial(q);
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(q.particle(i)[j], pts[13][j]);
    EXPECT_EQ(q.log_weights()[i], 0.0);
  }
  EXPECT_EQ(q.resample_count(), 1u);
}

TEST(Resample, UniformMultiplicityChiSquare) {
  const std::size_t n = 20;
  std::vector<PreferenceVector> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(PreferenceVector::normalized({1.0 + i, 1.0}));
  ParticleSet ps(pts, std::vector<double>(n, 1.0), 8);
  std::vector<double> counts(n, 0.0);
  for (int rep = 0; rep < 1000; ++rep) {
    ParticleSet q = ps;
    q.resample();
    for (std::size_t i = 0; i < n; ++i) {
      const double x = q.particle(i)[0] / q.particle(i)[1];
      counts[static_cast<std::size_t>(std::lround(x - 1.0))] += 1.0;
    }
    ps = ParticleSet(pts, std::vector<double>(n, 1.0), 100 + rep);
  }
  EXPECT_GT(chi_square_pvalue(counts, std::vector<double>(n, 1000.0)), 0.01);
}

TEST(Resample, Unbiased) {
  auto base = init_particles(200, 3, 12);
  base.reweight(ChoiceRecord(Presentation({0, 1}), 0));
  base.reweight(ChoiceRecord(Presentation({0, 2}), 0));
  const auto target = base.posterior_mean();
  std::vector<double> avg(3, 0.0);
  double sq = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    ParticleSet q = base;
    q.rng().seed(rep);
    q.resample();
    const auto m = q.posterior_mean();
    for (std::size_t j = 0; j < 3; ++j) avg[j] += m[j] / 1000.0;
    sq += (m[0] - target[0]) * (m[0] - target[0]);
  }
  const double se = std::sqrt(sq / 1000.0) / std::sqrt(1000.0);
  EXPECT_NEAR(avg[0], target[0], 4.0 * se);
}

TEST(Move, FlatPosteriorStaysUniform) {
  ParticleSet ps = init_particles(100000, 4, 21);
  const MoveStats ms = ps.move(PosteriorKernel(SufficientStatistics(4), Hyperparams::symmetric(4, 1.0)), 1);
  EXPECT_EQ(ms.acceptance_rate(), 1.0);
  for (std::size_t j = 0; j < 4; ++j)
    EXPECT_LT(ks_statistic(coordinate(ps, j), [](double x) { return beta_cdf(1, 3, x); }), ks_critical_001(100000));
}

TEST(Move, UnexploredOptionMarginalFromBiasedStart) {
  std::vector<std::vector<double>> pts(10000, {0.45, 0.45, 0.1});
  ParticleSet ps = from_points(pts, 3);
  const auto s = unexplored_option_stats();
  ps = move_metropolis_within_gibbs(ps, s, Hyperparams::symmetric(3, 1.0), 60);
  EXPECT_LT(ks_statistic(coordinate(ps, 2), [](double x) { return beta_cdf(1, 2, x); }), ks_critical_001(10000));
}

TEST(Move, PreservesExactTarget) {
  Rng rng(31);
  const std::size_t n = 20000;
  std::vector<std::vector<double>> pts, ref;
  for (std::size_t i = 0; i < n; ++i) {
    pts.push_back(exact_unexplored_posterior_draw(rng));
    ref.push_back(exact_unexplored_posterior_draw(rng));
  }
  ParticleSet ps = from_points(pts, 32);
  ps = move_metropolis_within_gibbs(ps, unexplored_option_stats(), Hyperparams::symmetric(3, 1.0), 10);
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = ref[i][j];
    EXPECT_LT(ks_two_sample(coordinate(ps, j), r), ks_two_sample_critical_001(n, n)) << "coordinate " << j;
  }
}

TEST(Move, SweepsMustBePositive) {
  EXPECT_THROW(move_metropolis_within_gibbs(init_particles(4, 3, 0), SufficientStatistics(3),
                                            Hyperparams::symmetric(3, 1.0), 0),
               ContractViolation);
}

TEST(SmcStep, ForcedChoiceNoResample) {
  ParticleSet ps = init_particles(500, 3, 1);
  SufficientStatistics s(3);
  const ChoiceRecord rec(Presentation({1}), 1);
  s.record(rec);
  const auto r = smc_step_in_place(ps, rec, s, Hyperparams::symmetric(3, 1.0));
  EXPECT_FALSE(r.resampled);
  EXPECT_NEAR(r.ess, 500.0, 1e-9);
  EXPECT_EQ(ps.resample_count(), 0u);
}

TEST(SmcStep, AdversarialWeightsResampleOnce) {
  std::vector<PreferenceVector> pts;
  pts.push_back(PreferenceVector({0.98, 0.01, 0.01}));
  for (int i = 0; i < 99; ++i) pts.push_back(PreferenceVector({0.01, 0.98, 0.01}));
  ParticleSet ps(pts, std::vector<double>(100, 1.0), 2);
  SufficientStatistics s(3);
  const ChoiceRecord rec(Presentation({0, 1}), 0);
  s.record(rec);
  const auto r = smc_step_in_place(ps, rec, s, Hyperparams::symmetric(3, 1.0));
  EXPECT_TRUE(r.resampled);
  EXPECT_LT(r.ess, 50.0);
  EXPECT_EQ(ps.resample_count(), 1u);
}

TEST(SmcStep, ThresholdValidated) {
  ParticleSet ps = init_particles(10, 3, 1);
  const ChoiceRecord rec(Presentation({0, 1}), 0);
  EXPECT_THROW(smc_step_in_place(ps, rec, SufficientStatistics(3), Hyperparams::symmetric(3, 1.0), 1.0),
               ContractViolation);
}

TEST(SmcStep, UnexploredOptionMeanMatchesQuadrature) {
  const auto s = unexplored_option_stats();
  const auto h = Hyperparams::symmetric(3, 1.0);
  SmcOptions o;
  o.particles = 10000;
  o.seed = 3;
  const auto m = replay_posterior(s, h, o).posterior_mean();
  const auto q = quadrature_posterior_mean(s, h, 400);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(m[j], q[j], 0.02);
}

TEST(SmcStep, MomentAgreementRandomDatasets) {
  Rng rng(44);
  for (int trial = 0; trial < 5; ++trial) {
    const auto s = random_statistics(rng, 3, 5 + rng() % 26, random_preference(rng, 3));
    const auto h = Hyperparams::symmetric(3, 1.0);
    SmcOptions o;
    o.particles = 10000;
    o.seed = static_cast<std::uint64_t>(trial);
    const auto m = replay_posterior(s, h, o).posterior_mean();
    const auto q = quadrature_posterior_mean(s, h, 400);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(m[j], q[j], 0.02) << "trial " << trial;
  }
}

TEST(SamplePreference, SingleNonzeroWeight) {
  std::vector<PreferenceVector> pts{PreferenceVector({0.2, 0.8}), PreferenceVector({0.7, 0.3}),
                                    PreferenceVector({0.5, 0.5})};
  ParticleSet ps(pts, {0.0, 1.0, 0.0}, 0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) EXPECT_EQ(sample_preference(ps, seed)[0], 0.7);
}

TEST(SamplePreference, UniformFrequencies) {
  const std::size_t n = 10;
  std::vector<PreferenceVector> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(PreferenceVector::normalized({1.0 + i, 1.0}));
  ParticleSet ps(pts, std::vector<double>(n, 1.0), 0);
  std::vector<double> counts(n, 0.0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto p = sample_preference(ps, seed);
    counts[static_cast<std::size_t>(std::lround(p[0] / p[1] - 1.0))] += 1.0;
    double sum = p[0] + p[1];
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
  EXPECT_GT(chi_square_pvalue(counts, std::vector<double>(n, 1000.0)), 0.01);
}

TEST(Reweight, CostIndependentOfHistory) {
  // Same reweight after a short and a long history.
  Rng rng(3);
  const auto truth = random_preference(rng, 30);
  const auto small = random_statistics(rng, 30, 5, truth);
  const auto large = random_statistics(rng, 30, 20000, truth);
  ParticleSet a = init_particles(2048, 30, 5);
  ParticleSet b = init_particles(2048, 30, 5);
  for (const auto& r : small.records()) a.reweight(r);
  for (const auto& r : large.records()) b.reweight(r);
  const ChoiceRecord rec(Presentation({1, 4, 9, 16, 25}), 9);
  auto time_it = [&](ParticleSet ps) {
    double best = 1e9;
    for (int rep = 0; rep < 20; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      ps.reweight(rec);
      const auto t1 = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  };
  const double ta = time_it(a), tb = time_it(b);
  EXPECT_LT(tb, 3.0 * ta + 1e-4);
}

TEST(AddOption, NewCoordinateFollowsPriorBeta) {
  ParticleSet ps = init_particles(10000, 5, 17);
  ps.add_option(1.0, 5.0);
  EXPECT_EQ(ps.num_options(), 6u);
  EXPECT_LT(ks_statistic(coordinate(ps, 5), [](double x) { return beta_cdf(1, 5, x); }), ks_critical_001(10000));
  for (std::size_t j = 0; j < 6; ++j)
    EXPECT_LT(ks_statistic(coordinate(ps, j), [](double x) { return beta_cdf(1, 5, x); }), ks_critical_001(10000));
}

TEST(SmcLog, CsvFormat) {
  SmcLog log;
  replay_posterior(unexplored_option_stats(), Hyperparams::symmetric(3, 1.0), {}, &log);
  EXPECT_EQ(log.entries.size(), 15u);
  std::ostringstream os;
  log.write_csv(os);
  EXPECT_EQ(os.str().substr(0, 16), "t,ess,resampled\n");
}
