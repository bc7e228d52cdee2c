#pragma once

// Point estimation and normalizing-constant approximations for the
// Dirichlet-Luce posterior:
//   * MAP by damped Newton in softmax (log-ratio) coordinates,
//   * Laplace approximation of log int exp(phi),
//   * brute-force simplex quadrature for K <= 4 (test oracle),
//   * posterior predictive choice probabilities.
//
// Normalizer convention: integrals are taken over the coordinate patch
// (theta_0, ..., theta_{K-2}) with theta_{K-1} = 1 - sum of the others, i.e.
// with area element d theta_0 ... d theta_{K-2}. The flat 2-simplex therefore
// has measure 1/2 and int theta^(a-1) = B(a).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dluce/core.hpp"
#include "dluce/smc.hpp"

namespace dluce {

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, PreferenceVector best, double grad_norm)
      : std::runtime_error(what), best_(std::move(best)), grad_norm_(grad_norm) {}
  const PreferenceVector& best() const { return best_; }
  double grad_norm() const { return grad_norm_; }

 private:
  PreferenceVector best_;
  double grad_norm_;
};

// Raised when the mode is not a strict interior maximum.
class DegenerateModeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MapOptions {
  int max_iters = 200;
  double grad_tol = 1e-6;
  double step_init = 1.0;
  double backtrack_factor = 0.5;

  void validate() const {
    if (max_iters < 1) throw ContractViolation("max_iters must be >= 1");
    if (!(grad_tol > 0.0)) throw ContractViolation("grad_tol must be positive");
    if (!(step_init > 0.0)) throw ContractViolation("step_init must be positive");
    if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
      throw ContractViolation("backtrack_factor must lie in (0, 1)");
  }
};

namespace detail {

inline std::vector<double> softmax_last_zero(const Eigen::VectorXd& eta) {
  const auto d = eta.size();
  std::vector<double> theta(static_cast<std::size_t>(d) + 1);
  double m = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) m = std::max(m, eta[j]);
  double s = std::exp(-m);
  theta.back() = s;
  for (Eigen::Index j = 0; j < d; ++j) s += (theta[static_cast<std::size_t>(j)] = std::exp(eta[j] - m));
  for (double& x : theta) x = std::max(x / s, kThetaFloor);
  return theta;
}

inline double projected_grad_norm(const Eigen::VectorXd& g) {
  return (g.array() - g.mean()).abs().maxCoeff();
}

}  // namespace detail

// Maximizer of phi over the simplex.
//
// The search runs in eta in R^(K-1) with theta = softmax(eta, 0). Each
// iteration takes a Newton step on -phi(eta), damped with lambda*I until the
// system is positive definite, followed by Armijo backtracking. Convergence
// is declared when the ambient gradient projected onto the simplex tangent
// space has sup-norm <= grad_tol.
inline PreferenceVector map_estimate(const PotentialTerms& terms, const MapOptions& opts = {}) {
  opts.validate();
  const std::size_t k = terms.num_options();
  for (std::size_t i = 0; i < k; ++i)
    if (terms.a[i] < 1.0)
      throw ContractViolation(detail::concat("alpha_k + y_k must be >= 1 for an interior mode (option ", i,
                                             " has ", terms.a[i], ")"));
  if (k == 1) return PreferenceVector({1.0});

  const auto d = static_cast<Eigen::Index>(k - 1);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(d);
  std::vector<double> theta = detail::softmax_last_zero(eta);
  double phi = detail::log_potential(terms, theta);
  double lambda = 0.0;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const Eigen::VectorXd g = detail::grad_log_potential(terms, theta);
    if (detail::projected_grad_norm(g) <= opts.grad_tol) return PreferenceVector(theta);

    const Eigen::MatrixXd h = detail::hessian_log_potential(terms, theta);
    const Eigen::Map<const Eigen::VectorXd> th(theta.data(), static_cast<Eigen::Index>(k));
    const double gbar = th.dot(g);

    // Chain rule through the softmax: J = d theta / d eta (K x K-1).
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(k), d);
    for (Eigen::Index i = 0; i < jac.rows(); ++i)
      for (Eigen::Index j = 0; j < d; ++j) jac(i, j) = th[i] * ((i == j ? 1.0 : 0.0) - th[j]);
    Eigen::VectorXd grad_eta(d);
    for (Eigen::Index j = 0; j < d; ++j) grad_eta[j] = th[j] * (g[j] - gbar);
    Eigen::MatrixXd hess_eta = jac.transpose() * h * jac;
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index l = 0; l < d; ++l)
        hess_eta(j, l) += (j == l ? th[j] * (g[j] - gbar) : 0.0) - th[j] * th[l] * (g[j] + g[l] - 2.0 * gbar);

    const Eigen::MatrixXd neg = -hess_eta;
    const double scale = std::max(1.0, neg.diagonal().cwiseAbs().maxCoeff());
    bool stepped = false;
    for (int attempt = 0; attempt < 60 && !stepped; ++attempt) {
      Eigen::LLT<Eigen::MatrixXd> llt(neg + lambda * scale * Eigen::MatrixXd::Identity(d, d));
      if (llt.info() != Eigen::Success) {
        lambda = std::max(1e-10, lambda * 10.0);
        continue;
      }
      const Eigen::VectorXd dir = llt.solve(grad_eta);
      const double slope = grad_eta.dot(dir);
      double step = opts.step_init;
      while (step > 1e-14) {
        const Eigen::VectorXd cand_eta = eta + step * dir;
        std::vector<double> cand = detail::softmax_last_zero(cand_eta);
        const double cand_phi = detail::log_potential(terms, cand);
        if (std::isfinite(cand_phi) && cand_phi >= phi + 1e-4 * step * slope) {
          eta = cand_eta;
          theta = std::move(cand);
          phi = cand_phi;
          stepped = true;
          break;
        }
        step *= opts.backtrack_factor;
      }
      if (stepped) {
        lambda = step == opts.step_init ? lambda * 0.1 : lambda;
        if (lambda < 1e-12) lambda = 0.0;
      } else {
        lambda = std::max(1e-10, lambda * 10.0);
      }
    }
    if (!stepped) break;
  }
  const Eigen::VectorXd g = detail::grad_log_potential(terms, theta);
  const double gn = detail::projected_grad_norm(g);
  if (gn <= opts.grad_tol) return PreferenceVector(theta);
  throw ConvergenceError(detail::concat("MAP did not converge (projected gradient ", gn, ")"),
                         PreferenceVector(theta), gn);
}

inline PreferenceVector map_estimate(const SufficientStatistics& stats, const Hyperparams& hyper,
                                     const MapOptions& opts = {}) {
  return map_estimate(make_potential_terms(stats, hyper), opts);
}

// Hessian of phi in the coordinate patch that drops the last coordinate:
// H~_jl = H_jl - H_jK - H_Kl + H_KK.
inline Eigen::MatrixXd tangent_hessian(const Eigen::MatrixXd& h) {
  const Eigen::Index d = h.rows() - 1;
  Eigen::MatrixXd out(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index l = 0; l < d; ++l) out(j, l) = h(j, l) - h(j, d) - h(d, l) + h(d, d);
  return out;
}

struct LaplaceResult {
  double log_normalizer;
  PreferenceVector mode;
  double log_det;  // log det(-H~)
};

// log int exp(phi) ~= phi(mode) + (K-1)/2 log(2 pi) - 1/2 log det(-H~).
inline LaplaceResult laplace_approximation(const PotentialTerms& terms, const MapOptions& opts = {}) {
  PreferenceVector mode = map_estimate(terms, opts);
  const std::size_t k = terms.num_options();
  const double phi = detail::log_potential(terms, mode.values());
  if (k == 1) return {phi, mode, 0.0};
  const Eigen::MatrixXd neg = -tangent_hessian(detail::hessian_log_potential(terms, mode.values()));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(neg);
  const auto& ev = eig.eigenvalues();
  if (eig.info() != Eigen::Success || !(ev.minCoeff() > 1e-9 * std::max(1.0, ev.maxCoeff())))
    throw DegenerateModeError(detail::concat("negative Hessian at the mode is not positive definite (eigenvalues ",
                                             ev.minCoeff(), " .. ", ev.maxCoeff(), ")"));
  const double log_det = ev.array().log().sum();
  const double d = static_cast<double>(k - 1);
  return {phi + 0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det, std::move(mode), log_det};
}

inline double laplace_log_normalizer(const SufficientStatistics& stats, const Hyperparams& hyper,
                                     const MapOptions& opts = {}) {
  return laplace_approximation(make_potential_terms(stats, hyper), opts).log_normalizer;
}

// ---------------------------------------------------------------------------
// Simplex quadrature.
//
// The patch {x >= 0, sum x <= 1} in R^d is mapped by partial sums
// s_i = x_1 + ... + x_i onto {0 <= s_1 <= ... <= s_d <= 1} (unit Jacobian).
// That region is an exact union of the Kuhn simplices of the n^d cube grid,
// n^d cells of volume 1 / (n^d d!) each, and every cell is evaluated at its
// centroid. The centroid rule is second order: error O(n^-2) for smooth
// integrands, and no node lies on the boundary so exponents below one are
// fine. Cells are visited in a fixed order, so sums are deterministic.
// ---------------------------------------------------------------------------

namespace detail {

// Calls visit(point) for every cell centroid; point has d+1 entries summing
// to one. Returns the (common) cell volume.
template <typename Visit>
double for_each_simplex_cell(std::size_t d, std::size_t n, Visit&& visit) {
  std::vector<double> point(d + 1);
  if (d == 0) {
    point[0] = 1.0;
    visit(std::span<const double>(point));
    return 1.0;
  }
  double fact = 1.0;
  for (std::size_t i = 2; i <= d; ++i) fact *= static_cast<double>(i);
  const double nn = static_cast<double>(n);
  const double volume = 1.0 / (std::pow(nn, static_cast<double>(d)) * fact);

  std::vector<std::size_t> m(d, 0);
  std::vector<std::size_t> perm(d);
  std::vector<double> s(d);
  const double denom = static_cast<double>(d + 1);
  while (true) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      // perm[r] is the coordinate with the (r+1)-th largest local offset.
      // Require f_i <= f_j whenever i < j share a grid index.
      bool ok = true;
      for (std::size_t r = 0; r + 1 < d && ok; ++r)
        for (std::size_t q = r + 1; q < d && ok; ++q)
          if (m[perm[r]] == m[perm[q]] && perm[r] < perm[q]) ok = false;
      if (!ok) continue;
      for (std::size_t r = 0; r < d; ++r)
        s[perm[r]] = (static_cast<double>(m[perm[r]]) + static_cast<double>(d - r) / denom) / nn;
      point[0] = s[0];
      for (std::size_t i = 1; i < d; ++i) point[i] = s[i] - s[i - 1];
      point[d] = 1.0 - s[d - 1];
      visit(std::span<const double>(point));
    } while (std::next_permutation(perm.begin(), perm.end()));

    // Next nondecreasing index vector m_0 <= ... <= m_{d-1} < n.
    std::size_t i = d;
    while (i > 0 && m[i - 1] == n - 1) --i;
    if (i == 0) break;
    ++m[i - 1];
    for (std::size_t j = i; j < d; ++j) m[j] = m[i - 1];
  }
  return volume;
}

// Streaming accumulator for sum_i exp(v_i) * f_i with running max shift.
struct ExpAccumulator {
  double shift = -std::numeric_limits<double>::infinity();
  double mass = 0.0;
  std::vector<double> moments;

  explicit ExpAccumulator(std::size_t n_moments = 0) : moments(n_moments, 0.0) {}

  template <typename F>
  void add(double v, F&& values) {
    if (v == -std::numeric_limits<double>::infinity()) return;
    if (v > shift) {
      const double r = std::exp(shift - v);
      mass *= r;
      for (double& x : moments) x *= r;
      shift = v;
    }
    const double w = std::exp(v - shift);
    mass += w;
    for (std::size_t i = 0; i < moments.size(); ++i) moments[i] += w * values(i);
  }

  double log_mass() const { return shift + std::log(mass); }
};

inline void check_quadrature_args(std::size_t k, std::size_t grid_n) {
  if (k > 4) throw UnsupportedError(detail::concat("quadrature supports K <= 4, got K=", k));
  if (grid_n < 50) throw ContractViolation("grid_n must be >= 50");
}

inline double quadrature_log_integral(const PotentialTerms& terms, std::size_t grid_n) {
  ExpAccumulator acc;
  const double vol = for_each_simplex_cell(terms.num_options() - 1, grid_n, [&](std::span<const double> th) {
    acc.add(log_potential(terms, th), [](std::size_t) { return 0.0; });
  });
  return acc.log_mass() + std::log(vol);
}

// Posterior expectations of the given functionals of theta.
inline std::vector<double> quadrature_expectations(
    const PotentialTerms& terms, std::size_t grid_n,
    const std::vector<std::function<double(std::span<const double>)>>& fs) {
  ExpAccumulator acc(fs.size());
  for_each_simplex_cell(terms.num_options() - 1, grid_n, [&](std::span<const double> th) {
    acc.add(log_potential(terms, th), [&](std::size_t i) { return fs[i](th); });
  });
  std::vector<double> out(fs.size());
  for (std::size_t i = 0; i < fs.size(); ++i) out[i] = acc.moments[i] / acc.mass;
  return out;
}

}  // namespace detail

// log int exp(phi) by centroid quadrature; K <= 4, grid_n >= 50.
inline double exact_log_normalizer_small(const SufficientStatistics& stats, const Hyperparams& hyper,
                                         std::size_t grid_n) {
  detail::check_quadrature_args(hyper.num_options(), grid_n);
  return detail::quadrature_log_integral(make_potential_terms(stats, hyper), grid_n);
}

inline std::vector<double> quadrature_posterior_mean(const SufficientStatistics& stats, const Hyperparams& hyper,
                                                     std::size_t grid_n) {
  const std::size_t k = hyper.num_options();
  detail::check_quadrature_args(k, grid_n);
  std::vector<std::function<double(std::span<const double>)>> fs;
  for (std::size_t i = 0; i < k; ++i) fs.emplace_back([i](std::span<const double> th) { return th[i]; });
  return detail::quadrature_expectations(make_potential_terms(stats, hyper), grid_n, fs);
}

// Posterior marginal density of theta_option at t in (0, 1), by slicing the
// simplex at theta_option = t:
//   p(t) = (1-t)^(K-2) int exp(phi(t, (1-t) u)) du / Z.
inline double quadrature_marginal_density(const SufficientStatistics& stats, const Hyperparams& hyper,
                                          Option option, double t, std::size_t grid_n) {
  const std::size_t k = hyper.num_options();
  detail::check_quadrature_args(k, grid_n);
  if (option >= k) throw ContractViolation("option out of range");
  if (!(t > 0.0 && t < 1.0)) throw ContractViolation("marginal density is evaluated on (0, 1)");
  if (k < 2) throw UnsupportedError("marginal density needs K >= 2");
  const PotentialTerms terms = make_potential_terms(stats, hyper);
  const double log_z = detail::quadrature_log_integral(terms, grid_n);
  std::vector<double> theta(k);
  detail::ExpAccumulator acc;
  const double vol = detail::for_each_simplex_cell(k - 2, grid_n, [&](std::span<const double> u) {
    for (std::size_t i = 0, j = 0; i < k; ++i) theta[i] = i == option ? t : (1.0 - t) * u[j++];
    acc.add(detail::log_potential(terms, theta), [](std::size_t) { return 0.0; });
  });
  const double log_slice = acc.log_mass() + std::log(vol) + static_cast<double>(k - 2) * std::log1p(-t);
  return std::exp(log_slice - log_z);
}

// ---------------------------------------------------------------------------
// Carlson R arguments. R(a, Z, b) = 1/B(a) int prod theta^(a-1) prod_C
// (z_C . theta)^(-b_C) d theta, with sum a = sum b.
// ---------------------------------------------------------------------------

class RFunctionQuery {
 public:
  RFunctionQuery(std::vector<double> a, std::vector<Presentation> columns, std::vector<double> b)
      : a_(std::move(a)), columns_(std::move(columns)), b_(std::move(b)) {
    if (a_.empty()) throw ContractViolation("R query needs at least one option");
    if (columns_.size() != b_.size()) throw ContractViolation("one exponent per column is required");
    for (double x : a_)
      if (!(x > 0.0)) throw ContractViolation("R query option exponents must be positive");
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      columns_[c].validate(a_.size());
      if (!(b_[c] >= 0.0)) throw ContractViolation("R query column exponents must be >= 0");
    }
    const double sa = std::accumulate(a_.begin(), a_.end(), 0.0);
    const double sb = std::accumulate(b_.begin(), b_.end(), 0.0);
    if (std::abs(sa - sb) > 1e-9 * std::max(1.0, sa))
      throw ContractViolation(detail::concat("R query requires sum a == sum b (", sa, " vs ", sb, ")"));
  }

  static RFunctionQuery from(const SufficientStatistics& stats, const Hyperparams& hyper) {
    PotentialTerms t = make_potential_terms(stats, hyper);
    return RFunctionQuery(std::move(t.a), std::move(t.columns), std::move(t.b));
  }

  const std::vector<double>& a() const { return a_; }
  const std::vector<Presentation>& columns() const { return columns_; }
  const std::vector<double>& b() const { return b_; }

  // Columns with zero exponent contribute a factor of one and are removed.
  RFunctionQuery without_zero_columns() const {
    std::vector<Presentation> cols;
    std::vector<double> b;
    for (std::size_t c = 0; c < columns_.size(); ++c)
      if (b_[c] != 0.0) {
        cols.push_back(columns_[c]);
        b.push_back(b_[c]);
      }
    return RFunctionQuery(a_, std::move(cols), std::move(b));
  }

  // R(a, Z, b) = R(b, Z^T, a): columns become options and vice versa.
  RFunctionQuery transposed() const {
    const RFunctionQuery q = without_zero_columns();
    std::vector<std::vector<Option>> members(a_.size());
    for (std::size_t c = 0; c < q.columns_.size(); ++c)
      for (Option k : q.columns_[c]) members[k].push_back(c);
    std::vector<Presentation> cols;
    std::vector<double> exps;
    for (std::size_t k = 0; k < a_.size(); ++k) {
      if (members[k].empty())
        throw UnsupportedError(detail::concat("option ", k, " lies in no column; transpose is undefined"));
      cols.emplace_back(std::move(members[k]));
      exps.push_back(a_[k]);
    }
    return RFunctionQuery(q.b_, std::move(cols), std::move(exps));
  }

  PotentialTerms terms() const {
    const RFunctionQuery q = without_zero_columns();
    return PotentialTerms{q.a_, q.columns_, q.b_};
  }

  double log_beta() const {
    double s = 0.0, lg = 0.0;
    for (double x : a_) {
      s += x;
      lg += std::lgamma(x);
    }
    return lg - std::lgamma(s);
  }

  // log R by simplex quadrature; needs at most 4 options.
  double log_r_quadrature(std::size_t grid_n) const {
    detail::check_quadrature_args(a_.size(), grid_n);
    return detail::quadrature_log_integral(terms(), grid_n) - log_beta();
  }

 private:
  std::vector<double> a_;
  std::vector<Presentation> columns_;
  std::vector<double> b_;
};

// ---------------------------------------------------------------------------
// Posterior predictive choice probability E[theta_k / sum_{j in C} theta_j].
// ---------------------------------------------------------------------------

enum class PredictiveMethod { laplace, smc, quadrature };

struct PredictiveOptions {
  std::size_t grid_n = 400;
  MapOptions map;
  SmcOptions smc;
};

inline double predictive_choice_prob(const SufficientStatistics& stats, const Hyperparams& hyper,
                                     const Presentation& c, Option k, PredictiveMethod method,
                                     const PredictiveOptions& opts = {}) {
  c.validate(hyper.num_options());
  if (!c.contains(k))
    throw ContractViolation(detail::concat("option ", k, " is not in presentation {", c.to_string(), "}"));
  auto ratio = [c, k](std::span<const double> th) { return th[k] / detail::column_sum(c, th); };
  switch (method) {
    case PredictiveMethod::quadrature: {
      detail::check_quadrature_args(hyper.num_options(), opts.grid_n);
      return detail::quadrature_expectations(make_potential_terms(stats, hyper), opts.grid_n, {ratio})[0];
    }
    case PredictiveMethod::laplace: {
      // Adding the record (C, k) multiplies exp(phi) by exactly the ratio.
      SufficientStatistics with = stats;
      with.record(ChoiceRecord(c, k));
      return std::exp(laplace_log_normalizer(with, hyper, opts.map) - laplace_log_normalizer(stats, hyper, opts.map));
    }
    case PredictiveMethod::smc: {
      const ParticleSet ps = replay_posterior(stats, hyper, opts.smc);
      const std::vector<double> w = ps.normalized_weights();
      double e = 0.0;
      for (std::size_t i = 0; i < ps.size(); ++i) e += w[i] * ratio(ps.particle(i));
      return e;
    }
  }
  throw UnsupportedError("unknown predictive method");
}

}  // namespace dluce
