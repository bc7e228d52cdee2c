#pragma once

// Sampling helpers shared by the sampler, the policies and the simulator.
// Every routine takes the generator explicitly; results are reproducible for
// a fixed seed on a given standard library.

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dluce/core.hpp"

namespace dluce {

using Rng = std::mt19937_64;

// SplitMix64 finalizer, used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double sample_gamma(Rng& rng, double shape) {
  return std::gamma_distribution<double>(shape, 1.0)(rng);
}

inline double sample_beta(Rng& rng, double a, double b) {
  const double x = sample_gamma(rng, a);
  const double y = sample_gamma(rng, b);
  const double s = x + y;
  if (!(s > 0.0)) return a / (a + b);
  return std::clamp(x / s, kThetaFloor, 1.0 - kThetaFloor);
}

// Dirichlet draw written into out; entries floored at kThetaFloor.
inline void sample_dirichlet(Rng& rng, std::span<const double> alpha, std::span<double> out) {
  double sum = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    out[i] = sample_gamma(rng, alpha[i]);
    sum += out[i];
  }
  if (!(sum > 0.0)) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return;
  }
  double renorm = 0.0;
  for (double& x : out) {
    x = std::max(x / sum, kThetaFloor);
    renorm += x;
  }
  for (double& x : out) x /= renorm;
}

inline PreferenceVector sample_dirichlet(Rng& rng, std::span<const double> alpha) {
  std::vector<double> out(alpha.size());
  sample_dirichlet(rng, alpha, out);
  return PreferenceVector(std::move(out));
}

// Indices of the n largest values, largest first. Ties are broken uniformly
// at random by a per-call random key.
inline std::vector<Option> top_n_random_ties(std::span<const double> values, std::size_t n, Rng& rng) {
  std::vector<std::pair<double, std::uint64_t>> keys(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) keys[i] = {values[i], rng()};
  std::vector<Option> idx(values.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  n = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                    [&](Option a, Option b) {
                      if (keys[a].first != keys[b].first) return keys[a].first > keys[b].first;
                      return keys[a].second < keys[b].second;
                    });
  idx.resize(n);
  return idx;
}

}  // namespace dluce
