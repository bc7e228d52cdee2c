// Option 2 has never been shown. Compare what the Dirichlet-Luce posterior
// and a Dirichlet over raw win counts believe about it.
#include <cstdio>
#include <vector>

#include "dluce/dluce.hpp"

int main() {
  using namespace dluce;
  SufficientStatistics stats(3);
  stats.record(ChoiceRecord(Presentation({0, 1}), 0), 10);
  stats.record(ChoiceRecord(Presentation({0, 1}), 1), 5);
  const Hyperparams hyper = Hyperparams::symmetric(3, 1.0);

  SmcOptions opts;
  opts.particles = 10000;
  opts.final_sweeps = 5;
  opts.seed = 1;
  const ParticleSet ps = replay_posterior(stats, hyper, opts);
  const std::vector<double> mean = ps.posterior_mean();
  const std::vector<double> quad = quadrature_posterior_mean(stats, hyper, 400);

  std::vector<double> dm(3);
  for (std::size_t k = 0; k < 3; ++k) dm[k] = (hyper.alpha(k) + stats.y(k)) / (hyper.alpha_sum() + stats.total());

  std::printf("%-10s %10s %10s %10s\n", "option", "smc", "quadrature", "dir-mult");
  for (std::size_t k = 0; k < 3; ++k) std::printf("%-10zu %10.4f %10.4f %10.4f\n", k, mean[k], quad[k], dm[k]);
  std::printf("prior mean of theta_2 is 1/3; only the Dirichlet-Luce posterior keeps it\n");

  std::printf("\nposterior density of theta_2 (Beta(1,2) density is 2(1-t))\n");
  for (double t : {0.1, 0.3, 0.5, 0.7, 0.9})
    std::printf("t=%.1f  quadrature %.4f  beta %.4f\n", t, quadrature_marginal_density(stats, hyper, 2, t, 400),
                2.0 * (1.0 - t));

  std::printf("\nP(choose 0 from {0,1}) = %.4f (exact 11/17 = %.4f)\n",
              predictive_choice_prob(stats, hyper, Presentation({0, 1}), 0, PredictiveMethod::quadrature),
              11.0 / 17.0);
  return 0;
}
