// Thompson sampling over a small catalogue: shows which sets get presented
// as the posterior sharpens.
#include <cstdio>

#include "dluce/dluce.hpp"

int main() {
  using namespace dluce;
  const std::size_t k = 6, l = 3, rounds = 600;
  const PreferenceVector theta_star({0.35, 0.25, 0.15, 0.1, 0.1, 0.05});
  const Environment env = Environment::transitive(theta_star);

  Policy policy(PolicyKind::dirichlet_luce_ts, k, l, 11);
  Rng rng(12);
  double cum = 0.0;
  for (std::size_t t = 1; t <= rounds; ++t) {
    const auto ranking = policy.present_ranked(rng);
    const Presentation c(ranking);
    const Option chosen = simulate_choice(env, c, rng);
    policy.update(ChoiceRecord(c, chosen));
    cum += regret_top_n(ranking, theta_star, 2);
    if (t % 100 == 0)
      std::printf("t=%4zu  presented {%s}  chose %zu  cumulative top-2 regret %.3f\n", t, c.to_string().c_str(),
                  chosen, cum);
  }

  const auto* s = policy.dirichlet_luce_state();
  const auto mean = s->particles.posterior_mean();
  std::printf("\noption  theta*  posterior mean\n");
  for (std::size_t i = 0; i < k; ++i) std::printf("%6zu  %6.3f  %6.3f\n", i, theta_star[i], mean[i]);
  std::printf("distinct presentations: %zu of %zu rounds\n", count_unique_presentations(s->stats), rounds);

  policy.add_option(1.0);
  std::printf("\nadded option %zu with no history\n", k);
  std::size_t shown = 0;
  for (int t = 0; t < 200; ++t)
    if (policy.present(rng).contains(k)) ++shown;
  std::printf("new option appears in %zu of the next 200 presentations\n", shown);
  return 0;
}
