#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>

namespace b3it {

/// Output tokens are compared by their exact text, never by provider ids.
using Token = std::string;

/// Token -> count table of observed outputs for one prompt.
///
/// Zero-count tokens are never stored, so the key set is the empirical
/// support. A default-constructed distribution is empty (total 0) and is
/// only meant to be filled through add(); the statistics below require a
/// nonempty distribution.
class EmpiricalDistribution {
 public:
  using CountMap = std::map<Token, std::uint64_t, std::less<>>;

  EmpiricalDistribution() = default;

  template <typename Range>
  static EmpiricalDistribution from_samples(const Range& tokens) {
    EmpiricalDistribution dist;
    for (const auto& t : tokens) dist.add(Token(t));
    return dist;
  }

  /// Throws std::invalid_argument when any count is zero.
  static EmpiricalDistribution from_counts(const CountMap& counts);

  void add(const Token& token, std::uint64_t count = 1);

  std::uint64_t count(std::string_view token) const;
  double frequency(std::string_view token) const;
  std::uint64_t total() const { return total_; }
  std::size_t support_size() const { return counts_.size(); }
  bool empty() const { return total_ == 0; }
  bool contains(std::string_view token) const { return counts_.find(token) != counts_.end(); }

  std::set<Token> support() const;
  const CountMap& counts() const { return counts_; }

  friend bool operator==(const EmpiricalDistribution&, const EmpiricalDistribution&) = default;

 private:
  CountMap counts_;
  std::uint64_t total_ = 0;
};

/// Half the L1 distance between the two frequency vectors. Raw frequencies,
/// no smoothing; the totals may differ.
double tv_distance(const EmpiricalDistribution& p, const EmpiricalDistribution& q);

/// True iff some token is observed in one sample and not the other.
bool support_mismatch(const EmpiricalDistribution& reference, const EmpiricalDistribution& detection);

/// Mean of per-prompt TV distances. Throws on an empty list.
double aggregate_statistic(std::span<const double> per_prompt_tv);

struct ErrorBoundInputs {
  std::uint64_t k = 1;  // common support size under H0
  std::uint64_t k1 = 1;
  std::uint64_t k2 = 1;
  std::uint64_t intersection_size = 0;
  std::uint64_t n1 = 1;
  std::uint64_t n2 = 1;
};

/// Type-I bound of the support-mismatch test when both supports are the
/// same k-set: min(1, k(1-1/k)^n1 + k(1-1/k)^n2).
double type1_bound(std::uint64_t k, std::uint64_t n1, std::uint64_t n2);
double type1_bound(const ErrorBoundInputs& inputs);

/// Type-II bound (p1^n1 * p2^n2 with p_i = |I|/k_i) of the support-mismatch test.
double type2_bound(const ErrorBoundInputs& inputs);

/// 2^-(n+1): no test can do better on Type-I + Type-II in the two-token
/// collapse scenario with n samples on each side.
double risk_lower_bound(std::uint64_t n);

/// Tie-aware Mann-Whitney estimate of the ROC AUC (ties count 1/2).
double roc_auc(std::span<const double> positive_scores, std::span<const double> negative_scores);

}  // namespace b3it
