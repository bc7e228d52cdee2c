#pragma once

// Dirichlet-Luce choice model: domain types, sufficient statistics and the
// log densities (likelihood, posterior potential) with exact derivatives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dluce {

using Option = std::size_t;
using Count = std::uint64_t;

// Smallest value any preference coordinate is allowed to take inside a log.
inline constexpr double kThetaFloor = 1e-12;

class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double safe_log(double x) { return std::log(std::max(x, kThetaFloor)); }

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail

// A set of options shown together. Stored sorted ascending so that equal sets
// compare and hash equal regardless of construction order.
class Presentation {
 public:
  Presentation() = default;

  explicit Presentation(std::vector<Option> options) : options_(std::move(options)) {
    std::sort(options_.begin(), options_.end());
    if (options_.empty()) throw ContractViolation("presentation must contain at least one option");
    if (std::adjacent_find(options_.begin(), options_.end()) != options_.end())
      throw ContractViolation("presentation contains duplicate options");
  }

  Presentation(std::initializer_list<Option> options)
      : Presentation(std::vector<Option>(options)) {}

  // The full set [K].
  static Presentation full(std::size_t k) {
    std::vector<Option> all(k);
    std::iota(all.begin(), all.end(), Option{0});
    return Presentation(std::move(all));
  }

  std::size_t size() const { return options_.size(); }
  bool empty() const { return options_.empty(); }
  bool contains(Option k) const { return std::binary_search(options_.begin(), options_.end(), k); }
  Option max_option() const { return options_.back(); }
  const std::vector<Option>& options() const { return options_; }
  auto begin() const { return options_.begin(); }
  auto end() const { return options_.end(); }

  // Throws unless every option index is below k.
  void validate(std::size_t k) const {
    if (options_.empty()) throw ContractViolation("presentation must contain at least one option");
    if (options_.back() >= k)
      throw ContractViolation(detail::concat("option ", options_.back(), " out of range for K=", k));
  }

  auto operator<=>(const Presentation&) const = default;
  bool operator==(const Presentation&) const = default;

  std::string to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < options_.size(); ++i) os << (i ? "," : "") << options_[i];
    return os.str();
  }

 private:
  std::vector<Option> options_;
};

struct PresentationHash {
  std::size_t operator()(const Presentation& c) const noexcept {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (Option k : c) h = (h ^ std::hash<Option>{}(k)) * 0x100000001b3ULL;
    return h;
  }
};

struct ChoiceRecord {
  Presentation presentation;
  Option chosen = 0;

  ChoiceRecord() = default;
  ChoiceRecord(Presentation c, Option k) : presentation(std::move(c)), chosen(k) {
    if (!presentation.contains(chosen))
      throw ContractViolation(
          detail::concat("chosen option ", chosen, " is not in presentation {", presentation.to_string(), "}"));
  }

  bool operator==(const ChoiceRecord&) const = default;
};

// Point on the open (K-1)-simplex.
class PreferenceVector {
 public:
  explicit PreferenceVector(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw ContractViolation("preference vector must be non-empty");
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p > 0.0) || !std::isfinite(p))
        throw ContractViolation("preference entries must be finite and strictly positive");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ContractViolation(detail::concat("preference vector sums to ", sum, ", expected 1"));
  }

  static PreferenceVector uniform(std::size_t k) {
    return PreferenceVector(std::vector<double>(k, 1.0 / static_cast<double>(k)));
  }

  // Normalizes positive weights onto the simplex, flooring at kThetaFloor.
  static PreferenceVector normalized(std::vector<double> w) {
    double sum = 0.0;
    for (double& x : w) {
      x = std::max(x, 0.0);
      sum += x;
    }
    if (!(sum > 0.0)) throw ContractViolation("cannot normalize a zero vector");
    for (double& x : w) x = std::max(x / sum, kThetaFloor);
    sum = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= sum;
    return PreferenceVector(std::move(w));
  }

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const { return probs_; }
  const std::vector<double>& vector() const { return probs_; }

 private:
  std::vector<double> probs_;
};

// Joint presentation/choice table nu(C, k). The marginals mu(C) and y(k) are
// maintained alongside and can only change through record().
class SufficientStatistics {
 public:
  struct Cell {
    Count total = 0;                 // mu(C)
    std::map<Option, Count> wins;    // nu(C, k), k in C
  };
  using Table = std::map<Presentation, Cell>;

  explicit SufficientStatistics(std::size_t k = 0) : k_(k), y_(k, 0) {}

  std::size_t num_options() const { return k_; }
  Count total() const { return total_; }
  const std::vector<Count>& y() const { return y_; }
  Count y(Option k) const { return y_.at(k); }
  const Table& table() const { return table_; }
  std::size_t unique_presentations() const { return table_.size(); }

  Count mu(const Presentation& c) const {
    auto it = table_.find(c);
    return it == table_.end() ? 0 : it->second.total;
  }

  Count nu(const Presentation& c, Option k) const {
    auto it = table_.find(c);
    if (it == table_.end()) return 0;
    auto jt = it->second.wins.find(k);
    return jt == it->second.wins.end() ? 0 : jt->second;
  }

  void record(const ChoiceRecord& rec, Count n = 1) {
    rec.presentation.validate(k_);
    if (!rec.presentation.contains(rec.chosen))
      throw ContractViolation("chosen option is not in the presentation");
    if (n == 0) return;
    Cell& cell = table_[rec.presentation];
    cell.total += n;
    cell.wins[rec.chosen] += n;
    y_[rec.chosen] += n;
    total_ += n;
  }

  // Same history over a larger option set; new options were never presented.
  SufficientStatistics extended(std::size_t new_k) const {
    if (new_k < k_) throw ContractViolation("cannot shrink the option set");
    SufficientStatistics out = *this;
    out.k_ = new_k;
    out.y_.resize(new_k, 0);
    return out;
  }

  // Expands the table into individual records (ordered by presentation, then option).
  std::vector<ChoiceRecord> records() const {
    std::vector<ChoiceRecord> out;
    out.reserve(total_);
    for (const auto& [c, cell] : table_)
      for (const auto& [k, n] : cell.wins)
        for (Count i = 0; i < n; ++i) out.emplace_back(c, k);
    return out;
  }

  bool operator==(const SufficientStatistics&) const = default;

 private:
  std::size_t k_ = 0;
  Table table_;
  std::vector<Count> y_;
  Count total_ = 0;
};

inline SufficientStatistics record_choice(SufficientStatistics stats, const ChoiceRecord& rec) {
  stats.record(rec);
  return stats;
}

// Prior pseudo-counts: alpha per option, beta per presentation.
class Hyperparams {
 public:
  // Dirichlet(alpha) prior: all presentation mass on the full set.
  explicit Hyperparams(std::vector<double> alpha) : alpha_(std::move(alpha)) {
    check_alpha();
    beta_[Presentation::full(alpha_.size())] = alpha_sum();
  }

  Hyperparams(std::vector<double> alpha, std::map<Presentation, double> beta)
      : alpha_(std::move(alpha)), beta_(std::move(beta)) {
    check_alpha();
    double bsum = 0.0;
    for (const auto& [c, b] : beta_) {
      c.validate(alpha_.size());
      if (!(b >= 0.0) || !std::isfinite(b)) throw ContractViolation("beta entries must be nonnegative");
      bsum += b;
    }
    const double asum = alpha_sum();
    if (std::abs(bsum - asum) > 1e-9 * std::max(1.0, std::abs(asum)))
      throw ContractViolation(detail::concat("sum of beta (", bsum, ") must equal sum of alpha (", asum, ")"));
  }

  static Hyperparams symmetric(std::size_t k, double a) { return Hyperparams(std::vector<double>(k, a)); }

  std::size_t num_options() const { return alpha_.size(); }
  const std::vector<double>& alpha() const { return alpha_; }
  double alpha(Option k) const { return alpha_.at(k); }
  const std::map<Presentation, double>& beta() const { return beta_; }
  double alpha_sum() const { return std::accumulate(alpha_.begin(), alpha_.end(), 0.0); }

  // Adds one option with prior weight alpha_new. The full-set column moves to
  // the enlarged full set and absorbs alpha_new, other columns are kept.
  Hyperparams extended(double alpha_new) const {
    const std::size_t k = alpha_.size();
    std::vector<double> alpha = alpha_;
    alpha.push_back(alpha_new);
    std::map<Presentation, double> beta = beta_;
    double carried = 0.0;
    if (auto it = beta.find(Presentation::full(k)); it != beta.end()) {
      carried = it->second;
      beta.erase(it);
    }
    beta[Presentation::full(k + 1)] += carried + alpha_new;
    return Hyperparams(std::move(alpha), std::move(beta));
  }

 private:
  void check_alpha() const {
    if (alpha_.empty()) throw ContractViolation("alpha must be non-empty");
    for (double a : alpha_)
      if (!(a > 0.0) || !std::isfinite(a)) throw ContractViolation("alpha entries must be positive");
  }

  std::vector<double> alpha_;
  std::map<Presentation, double> beta_;
};

// Exponents of the posterior kernel
//   prod_k theta_k^(a_k - 1) * prod_C (sum_{j in C} theta_j)^(-b_C)
// with a = alpha + y and b = beta + mu. Zero-exponent columns are dropped.
struct PotentialTerms {
  std::vector<double> a;
  std::vector<Presentation> columns;
  std::vector<double> b;

  std::size_t num_options() const { return a.size(); }
};

inline PotentialTerms make_potential_terms(const SufficientStatistics& stats, const Hyperparams& hyper) {
  if (stats.num_options() != hyper.num_options())
    throw ContractViolation(detail::concat("statistics have K=", stats.num_options(),
                                           " but hyperparameters have K=", hyper.num_options()));
  PotentialTerms t;
  const std::size_t k = hyper.num_options();
  t.a.resize(k);
  for (std::size_t i = 0; i < k; ++i) t.a[i] = hyper.alpha(i) + static_cast<double>(stats.y(i));

  // Merge the two ordered maps so the column order is canonical.
  auto bi = hyper.beta().begin();
  auto si = stats.table().begin();
  const auto be = hyper.beta().end();
  const auto se = stats.table().end();
  auto push = [&](const Presentation& c, double b) {
    if (b > 0.0) {
      t.columns.push_back(c);
      t.b.push_back(b);
    }
  };
  while (bi != be || si != se) {
    if (si == se || (bi != be && bi->first < si->first)) {
      push(bi->first, bi->second);
      ++bi;
    } else if (bi == be || si->first < bi->first) {
      push(si->first, static_cast<double>(si->second.total));
      ++si;
    } else {
      push(si->first, bi->second + static_cast<double>(si->second.total));
      ++bi;
      ++si;
    }
  }
  return t;
}

namespace detail {

inline double column_sum(const Presentation& c, std::span<const double> theta) {
  double s = 0.0;
  for (Option k : c) s += theta[k];
  return s;
}

inline double log_potential(const PotentialTerms& t, std::span<const double> theta) {
  double v = 0.0;
  for (std::size_t k = 0; k < t.a.size(); ++k) v += (t.a[k] - 1.0) * safe_log(theta[k]);
  for (std::size_t c = 0; c < t.columns.size(); ++c) v -= t.b[c] * safe_log(column_sum(t.columns[c], theta));
  return v;
}

inline Eigen::VectorXd grad_log_potential(const PotentialTerms& t, std::span<const double> theta) {
  const auto k = static_cast<Eigen::Index>(t.a.size());
  Eigen::VectorXd g(k);
  for (Eigen::Index i = 0; i < k; ++i) g[i] = (t.a[i] - 1.0) / std::max(theta[i], kThetaFloor);
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    const double r = t.b[c] / std::max(column_sum(t.columns[c], theta), kThetaFloor);
    for (Option j : t.columns[c]) g[static_cast<Eigen::Index>(j)] -= r;
  }
  return g;
}

inline Eigen::MatrixXd hessian_log_potential(const PotentialTerms& t, std::span<const double> theta) {
  const auto k = static_cast<Eigen::Index>(t.a.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double th = std::max(theta[i], kThetaFloor);
    h(i, i) = -(t.a[i] - 1.0) / (th * th);
  }
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    const double s = std::max(column_sum(t.columns[c], theta), kThetaFloor);
    const double r = t.b[c] / (s * s);
    const auto& opts = t.columns[c].options();
    for (std::size_t p = 0; p < opts.size(); ++p) {
      const auto i = static_cast<Eigen::Index>(opts[p]);
      h(i, i) += r;
      for (std::size_t q = p + 1; q < opts.size(); ++q) {
        const auto j = static_cast<Eigen::Index>(opts[q]);
        h(i, j) += r;
        h(j, i) += r;
      }
    }
  }
  return h;
}

inline void check_dims(const PreferenceVector& theta, std::size_t k) {
  if (theta.size() != k)
    throw ContractViolation(detail::concat("preference vector has ", theta.size(), " entries, expected ", k));
}

}  // namespace detail

// log p(k | C, theta) = log theta_k - log sum_{j in C} theta_j
inline double log_choice_prob(const PreferenceVector& theta, const Presentation& c, Option k) {
  c.validate(theta.size());
  if (!c.contains(k))
    throw ContractViolation(detail::concat("option ", k, " is not in presentation {", c.to_string(), "}"));
  return detail::safe_log(theta[k]) - detail::safe_log(detail::column_sum(c, theta.values()));
}

// Restricted-multinomial log likelihood; depends on the data only via (y, mu).
inline double log_likelihood(const SufficientStatistics& stats, const PreferenceVector& theta) {
  detail::check_dims(theta, stats.num_options());
  double v = 0.0;
  for (std::size_t k = 0; k < theta.size(); ++k)
    if (stats.y(k) > 0) v += static_cast<double>(stats.y(k)) * detail::safe_log(theta[k]);
  for (const auto& [c, cell] : stats.table())
    v -= static_cast<double>(cell.total) * detail::safe_log(detail::column_sum(c, theta.values()));
  return v;
}

// Unnormalized log posterior density phi(theta).
inline double log_posterior_potential(const PreferenceVector& theta, const SufficientStatistics& stats,
                                      const Hyperparams& hyper) {
  detail::check_dims(theta, hyper.num_options());
  return detail::log_potential(make_potential_terms(stats, hyper), theta.values());
}

// Gradient and Hessian of phi in ambient coordinates (no simplex constraint).
inline Eigen::VectorXd grad_log_posterior(const PreferenceVector& theta, const SufficientStatistics& stats,
                                          const Hyperparams& hyper) {
  detail::check_dims(theta, hyper.num_options());
  return detail::grad_log_potential(make_potential_terms(stats, hyper), theta.values());
}

inline Eigen::MatrixXd hessian_log_posterior(const PreferenceVector& theta, const SufficientStatistics& stats,
                                             const Hyperparams& hyper) {
  detail::check_dims(theta, hyper.num_options());
  return detail::hessian_log_potential(make_potential_terms(stats, hyper), theta.values());
}

// Text format:
//   K=<int>
//   c=<sorted comma-separated indices> k=<index> n=<count>
inline void write_statistics(std::ostream& os, const SufficientStatistics& stats) {
  os << "K=" << stats.num_options() << '\n';
  for (const auto& [c, cell] : stats.table())
    for (const auto& [k, n] : cell.wins) os << "c=" << c.to_string() << " k=" << k << " n=" << n << '\n';
}

inline std::string to_text(const SufficientStatistics& stats) {
  std::ostringstream os;
  write_statistics(os, stats);
  return os.str();
}

namespace detail {

inline std::uint64_t parse_uint(const std::string& s, std::size_t line) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw ParseError(concat("line ", line, ": expected a nonnegative integer, got '", s, "'"));
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ParseError(concat("line ", line, ": integer out of range '", s, "'"));
  }
}

inline std::string field(const std::string& token, const std::string& key, std::size_t line) {
  if (token.rfind(key + "=", 0) != 0)
    throw ParseError(concat("line ", line, ": expected '", key, "=...', got '", token, "'"));
  return token.substr(key.size() + 1);
}

}  // namespace detail

inline SufficientStatistics read_statistics(std::istream& is) {
  std::string text;
  std::size_t lineno = 0;
  std::optional<SufficientStatistics> stats;
  while (std::getline(is, text)) {
    ++lineno;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(text);
    std::vector<std::string> tokens;
    for (std::string tok; ls >> tok;) tokens.push_back(tok);
    if (!stats) {
      if (tokens.size() != 1) throw ParseError(detail::concat("line ", lineno, ": expected header 'K=<int>'"));
      const auto k = detail::parse_uint(detail::field(tokens[0], "K", lineno), lineno);
      if (k == 0) throw ParseError("K must be positive");
      stats.emplace(static_cast<std::size_t>(k));
      continue;
    }
    if (tokens.size() != 3) throw ParseError(detail::concat("line ", lineno, ": expected 'c=... k=... n=...'"));
    const std::string cs = detail::field(tokens[0], "c", lineno);
    std::vector<Option> opts;
    std::istringstream css(cs);
    for (std::string part; std::getline(css, part, ',');) opts.push_back(detail::parse_uint(part, lineno));
    if (!std::is_sorted(opts.begin(), opts.end()))
      throw ParseError(detail::concat("line ", lineno, ": presentation indices must be sorted ascending"));
    const auto k = detail::parse_uint(detail::field(tokens[1], "k", lineno), lineno);
    const auto n = detail::parse_uint(detail::field(tokens[2], "n", lineno), lineno);
    try {
      stats->record(ChoiceRecord(Presentation(std::move(opts)), k), n);
    } catch (const ContractViolation& e) {
      throw ParseError(detail::concat("line ", lineno, ": ", e.what()));
    }
  }
  if (!stats) throw ParseError("missing 'K=<int>' header");
  return *stats;
}

inline SufficientStatistics statistics_from_text(const std::string& text) {
  std::istringstream is(text);
  return read_statistics(is);
}

}  // namespace dluce
