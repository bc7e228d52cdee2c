#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "dluce/bandit.hpp"
#include "dluce/sim.hpp"
#include "oracles.hpp"

using namespace dluce;
using namespace dluce::testing;

namespace {

const PolicyKind kAllKinds[] = {PolicyKind::dirichlet_luce_ts, PolicyKind::dirichlet_multinomial_ts, PolicyKind::dts,
                                PolicyKind::uniform_random};

PolicyConfig small_config() {
  PolicyConfig c;
  c.particles = 256;
  return c;
}

}  // namespace

TEST(PolicyKind, NamesRoundTrip) {
  for (PolicyKind k : kAllKinds) EXPECT_EQ(parse_policy_kind(to_string(k)), k);
  EXPECT_THROW(parse_policy_kind("toprank"), ContractViolation);
}

TEST(Present, FullSetWhenLEqualsK) {
  for (PolicyKind kind : {PolicyKind::dirichlet_luce_ts, PolicyKind::dirichlet_multinomial_ts,
                          PolicyKind::uniform_random}) {
    const Policy p(kind, 3, 3, 1, small_config());
    for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(p.present(seed), Presentation::full(3));
  }
  // dts is pairwise only, so its full set is the K = L = 2 case.
  const Policy d(PolicyKind::dts, 2, 2, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(d.present(seed), Presentation::full(2));
}

TEST(Present, SingleParticleTopL) {
  const PreferenceVector th({0.1, 0.5, 0.4});
  ParticleSet ps(std::vector<PreferenceVector>{th, th}, {1.0, 1.0}, 0);
  const Policy p = Policy::dirichlet_luce(ps, SufficientStatistics(3), Hyperparams::symmetric(3, 1.0), 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(p.present(seed), Presentation({1, 2}));
}

TEST(Present, UniformRandomPairsChiSquare) {
  const Policy p(PolicyKind::uniform_random, 5, 2, 0);
  std::map<Presentation, double> counts;
  Rng rng(3);
  for (int t = 0; t < 10000; ++t) counts[p.present(rng)] += 1.0;
  ASSERT_EQ(counts.size(), 10u);
  std::vector<double> obs;
  for (const auto& [c, n] : counts) obs.push_back(n);
  EXPECT_GT(chi_square_pvalue(obs, std::vector<double>(10, 1000.0)), 0.01);
}

TEST(Present, DtsRequiresPairs) {
  EXPECT_THROW(Policy(PolicyKind::dts, 5, 3, 0), UnsupportedError);
  EXPECT_THROW(Policy(PolicyKind::uniform_random, 5, 6, 0), ContractViolation);
  EXPECT_THROW(Policy(PolicyKind::uniform_random, 5, 1, 0), ContractViolation);
}

TEST(Present, PairsAreDistinct) {
  for (PolicyKind kind : kAllKinds) {
    const Policy p(kind, 6, 2, 4, small_config());
    Rng rng(5);
    for (int t = 0; t < 200; ++t) EXPECT_EQ(p.present(rng).size(), 2u);
  }
}

TEST(Update, DirichletLuce) {
  Policy p(PolicyKind::dirichlet_luce_ts, 4, 2, 1, small_config());
  p.update(ChoiceRecord(Presentation({0, 3}), 3));
  const auto* s = p.dirichlet_luce_state();
  ASSERT_NE(s, nullptr);
  EXPECT_EQ(s->stats.total(), 1u);
  EXPECT_TRUE(std::isfinite(s->particles.effective_sample_size()));
  EXPECT_EQ(s->log.entries.size(), 1u);
}

TEST(Update, DtsWinCount) {
  Policy p(PolicyKind::dts, 4, 2, 1);
  p.update(ChoiceRecord(Presentation({1, 2}), 2));
  const auto& w = p.dts_state()->wins;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(w[i][j], (i == 2 && j == 1) ? 1.0 : 0.0);
}

TEST(Update, DirichletMultinomialIgnoresPresentation) {
  Policy a(PolicyKind::dirichlet_multinomial_ts, 4, 2, 1), b(PolicyKind::dirichlet_multinomial_ts, 4, 2, 1);
  a.update(ChoiceRecord(Presentation({0, 1}), 1));
  b.update(ChoiceRecord(Presentation({1, 3}), 1));
  EXPECT_EQ(a.dirichlet_multinomial_state()->y, b.dirichlet_multinomial_state()->y);
}

TEST(Update, SizeMismatchRejected) {
  for (PolicyKind kind : kAllKinds) {
    Policy p(kind, 4, 2, 1, small_config());
    EXPECT_THROW(p.update(ChoiceRecord(Presentation({0, 1, 2}), 1)), ContractViolation);
  }
}

TEST(RegretTopN, Examples) {
  const PreferenceVector th({0.5, 0.3, 0.2});
  EXPECT_NEAR(regret_top_n({0, 1, 2}, th, 2), 0.0, 1e-15);
  EXPECT_NEAR(regret_top_n({2, 1, 0}, th, 2), 0.3, 1e-15);
  EXPECT_NEAR(regret_top_n({2, 1, 0}, th, 3), 0.0, 1e-15);
  EXPECT_THROW(regret_top_n({2, 1}, th, 3), ContractViolation);
  EXPECT_THROW(regret_top_n({2, 1}, th, 0), ContractViolation);
}

TEST(RegretTopN, PermutationEquivariant) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 3 + trial % 8;
    const auto th = random_preference(rng, k);
    std::vector<Option> perm(k), ranking(k);
    std::iota(perm.begin(), perm.end(), Option{0});
    std::iota(ranking.begin(), ranking.end(), Option{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::shuffle(ranking.begin(), ranking.end(), rng);
    std::vector<double> relabeled(k);
    for (std::size_t i = 0; i < k; ++i) relabeled[perm[i]] = th[i];
    std::vector<Option> r2(k);
    for (std::size_t i = 0; i < k; ++i) r2[i] = perm[ranking[i]];
    const std::size_t n = 1 + rng() % k;
    EXPECT_NEAR(regret_top_n(ranking, th, n), regret_top_n(r2, PreferenceVector(relabeled), n), 1e-12);
  }
}

TEST(WeakDuelingRegret, Examples) {
  const auto cyc = Environment::cyclic_four_matrix();
  EXPECT_EQ(cyc.condorcet_winner(), std::optional<Option>(0));
  EXPECT_EQ(weak_dueling_regret(Presentation({0, 2}), cyc), 0.0);
  EXPECT_NEAR(weak_dueling_regret(Presentation({1, 2}), cyc), 0.1, 1e-12);
  const PreferenceVector th({0.2, 0.5, 0.3});
  const auto p = PreferenceMatrix::from_theta(th);
  EXPECT_EQ(p.condorcet_winner(), std::optional<Option>(1));
  EXPECT_NEAR(weak_dueling_regret(Presentation({0, 2}), p), 0.5 / 0.8 - 0.5, 1e-12);
  EXPECT_THROW(weak_dueling_regret(Presentation({0, 1, 2}), p), ContractViolation);
}

TEST(PreferenceMatrix, Validation) {
  EXPECT_THROW(PreferenceMatrix({{0.5, 0.6}, {0.5, 0.5}}), ContractViolation);
  EXPECT_THROW(PreferenceMatrix({{0.4, 0.6}, {0.4, 0.5}}), ContractViolation);
  const PreferenceMatrix rock({{0.5, 0.9, 0.1}, {0.1, 0.5, 0.9}, {0.9, 0.1, 0.5}});
  EXPECT_FALSE(rock.condorcet_winner().has_value());
  EXPECT_THROW(Environment::cyclic(rock), ContractViolation);
}

TEST(CountUnique, Examples) {
  EXPECT_EQ(count_unique_presentations(SufficientStatistics(3)), 0u);
  EXPECT_EQ(count_unique_presentations(unexplored_option_stats()), 1u);
  SufficientStatistics s(4);
  s.record(ChoiceRecord(Presentation({0, 1}), 0));
  s.record(ChoiceRecord(Presentation({0, 2}), 0));
  s.record(ChoiceRecord(Presentation({2, 3}), 3));
  EXPECT_EQ(count_unique_presentations(s), 3u);
}

TEST(RegretTrace, CumulativeAndCsv) {
  RegretTrace tr;
  for (double r : {0.1, 0.0, 0.3}) tr.push(r);
  EXPECT_NEAR(tr.at(3), 0.4, 1e-15);
  EXPECT_EQ(tr.at(0), 0.0);
  for (std::size_t t = 1; t < tr.rounds(); ++t) EXPECT_GE(tr.cumulative[t], tr.cumulative[t - 1]);
  std::ostringstream os;
  tr.write_csv(os);
  EXPECT_EQ(os.str(), "t,instantaneous,cumulative\n1,0.1,0.1\n2,0,0.1\n3,0.3,0.4\n");
}

TEST(Coverage, ThompsonPresentsEveryOption) {
  const auto env = Environment::transitive(make_fixture_theta(FixtureKind::sparse, 10, 0));
  Policy p(PolicyKind::dirichlet_luce_ts, 10, 2, 3);
  Rng rng(4);
  std::set<Option> seen;
  for (int t = 0; t < 5000; ++t) {
    const Presentation c = p.present(rng);
    seen.insert(c.begin(), c.end());
    p.update(ChoiceRecord(c, simulate_choice(env, c, rng)));
  }
  EXPECT_EQ(seen.size(), 10u);
}

TEST(ColdStart, NewOptionMarginalIsPrior) {
  const auto env = Environment::transitive(make_fixture_theta(FixtureKind::dense, 6, 2));
  PolicyConfig cfg;
  cfg.particles = 5000;
  Policy p(PolicyKind::dirichlet_luce_ts, 6, 2, 5, cfg);
  Rng rng(6);
  for (int t = 0; t < 300; ++t) {
    const Presentation c = p.present(rng);
    p.update(ChoiceRecord(c, simulate_choice(env, c, rng)));
  }
  p.add_option(1.0);
  EXPECT_EQ(p.num_options(), 7u);
  const auto& ps = p.dirichlet_luce_state()->particles;
  // Effective sample: resampled particles may repeat, but the new coordinate is drawn per particle.
  std::vector<double> xs(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) xs[i] = ps.particle(i)[6];
  EXPECT_LT(ks_statistic(xs, [](double x) { return beta_cdf(1, 6, x); }), ks_critical_001(static_cast<double>(xs.size())));
}

TEST(DoubleThompson, DeterministicMatrixConverges) {
  // Strict order 3 > 1 > 0 > 4 > 2 with certain outcomes.
  const std::vector<Option> order{3, 1, 0, 4, 2};
  std::vector<std::vector<double>> m(5, std::vector<double>(5, 0.5));
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) {
      m[order[a]][order[b]] = 1.0;
      m[order[b]][order[a]] = 0.0;
    }
  const auto env = Environment::cyclic(PreferenceMatrix(m));
  Policy p(PolicyKind::dts, 5, 2, 7);
  Rng rng(8);
  std::size_t last_regret = 0;
  for (std::size_t t = 1; t <= 3000; ++t) {
    const Presentation c = p.present(rng);
    if (weak_dueling_regret(c, env.preference_matrix()) > 0) last_regret = t;
    p.update(ChoiceRecord(c, simulate_choice(env, c, rng)));
  }
  EXPECT_LT(last_regret, 2000u);
}

TEST(AddOption, AllPolicies) {
  for (PolicyKind kind : kAllKinds) {
    Policy p(kind, 4, 2, 1, small_config());
    p.update(ChoiceRecord(Presentation({0, 1}), 0));
    p.add_option(1.0);
    EXPECT_EQ(p.num_options(), 5u);
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
      const Presentation c = p.present(rng);
      c.validate(5);
      p.update(ChoiceRecord(c, c.options().front()));
    }
  }
}
