#include "b3it/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace b3it {

EmpiricalDistribution EmpiricalDistribution::from_counts(const CountMap& counts) {
  EmpiricalDistribution dist;
  for (const auto& [token, c] : counts) {
    if (c == 0) throw std::invalid_argument("zero count for token '" + token + "'");
    dist.add(token, c);
  }
  return dist;
}

void EmpiricalDistribution::add(const Token& token, std::uint64_t count) {
  if (count == 0) return;
  counts_[token] += count;
  total_ += count;
}

std::uint64_t EmpiricalDistribution::count(std::string_view token) const {
  auto it = counts_.find(token);
  return it == counts_.end() ? 0 : it->second;
}

double EmpiricalDistribution::frequency(std::string_view token) const {
  if (total_ == 0) return 0.0;
  return static_cast<double>(count(token)) / static_cast<double>(total_);
}

std::set<Token> EmpiricalDistribution::support() const {
  std::set<Token> keys;
  for (const auto& [token, c] : counts_) keys.insert(token);
  return keys;
}

namespace {

void require_nonempty(const EmpiricalDistribution& d, const char* what) {
  if (d.empty()) throw std::invalid_argument(std::string(what) + ": empty distribution");
}

}  // namespace

double tv_distance(const EmpiricalDistribution& p, const EmpiricalDistribution& q) {
  require_nonempty(p, "tv_distance");
  require_nonempty(q, "tv_distance");
  const double np = static_cast<double>(p.total());
  const double nq = static_cast<double>(q.total());

  // Merge walk over the two sorted maps.
  double l1 = 0.0;
  auto a = p.counts().begin();
  auto b = q.counts().begin();
  while (a != p.counts().end() || b != q.counts().end()) {
    if (b == q.counts().end() || (a != p.counts().end() && a->first < b->first)) {
      l1 += a->second / np;
      ++a;
    } else if (a == p.counts().end() || b->first < a->first) {
      l1 += b->second / nq;
      ++b;
    } else {
      l1 += std::abs(a->second / np - b->second / nq);
      ++a;
      ++b;
    }
  }
  return std::clamp(0.5 * l1, 0.0, 1.0);
}

bool support_mismatch(const EmpiricalDistribution& reference, const EmpiricalDistribution& detection) {
  require_nonempty(reference, "support_mismatch");
  require_nonempty(detection, "support_mismatch");
  if (reference.support_size() != detection.support_size()) return true;
  auto a = reference.counts().begin();
  auto b = detection.counts().begin();
  for (; a != reference.counts().end(); ++a, ++b) {
    if (a->first != b->first) return true;
  }
  return false;
}

double aggregate_statistic(std::span<const double> per_prompt_tv) {
  if (per_prompt_tv.empty()) throw std::invalid_argument("aggregate_statistic: no per-prompt values");
  const double sum = std::accumulate(per_prompt_tv.begin(), per_prompt_tv.end(), 0.0);
  return sum / static_cast<double>(per_prompt_tv.size());
}

double type1_bound(std::uint64_t k, std::uint64_t n1, std::uint64_t n2) {
  if (k == 0) throw std::invalid_argument("type1_bound: k must be >= 1");
  const double kd = static_cast<double>(k);
  const double miss = 1.0 - 1.0 / kd;
  const double bound = kd * std::pow(miss, static_cast<double>(n1)) +
                       kd * std::pow(miss, static_cast<double>(n2));
  return std::min(1.0, bound);
}

double type1_bound(const ErrorBoundInputs& inputs) {
  return type1_bound(inputs.k, inputs.n1, inputs.n2);
}

double type2_bound(const ErrorBoundInputs& in) {
  if (in.k1 == 0 || in.k2 == 0) throw std::invalid_argument("type2_bound: support sizes must be >= 1");
  if (in.intersection_size > std::min(in.k1, in.k2)) {
    throw std::invalid_argument("type2_bound: intersection larger than a support");
  }
  const double inter = static_cast<double>(in.intersection_size);
  const double p1 = inter / static_cast<double>(in.k1);
  const double p2 = inter / static_cast<double>(in.k2);
  return std::pow(p1, static_cast<double>(in.n1)) * std::pow(p2, static_cast<double>(in.n2));
}

double risk_lower_bound(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("risk_lower_bound: n must be >= 1");
  return std::ldexp(1.0, -static_cast<int>(std::min<std::uint64_t>(n + 1, 2000)));
}

double roc_auc(std::span<const double> positive_scores, std::span<const double> negative_scores) {
  if (positive_scores.empty() || negative_scores.empty()) {
    throw std::invalid_argument("roc_auc: both score lists must be nonempty");
  }
  // (score, is_positive), ranked with ties sharing their average rank.
  std::vector<std::pair<double, bool>> all;
  all.reserve(positive_scores.size() + negative_scores.size());
  for (double s : positive_scores) all.emplace_back(s, true);
  for (double s : negative_scores) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });

  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::size_t positives = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      positives += all[j].second ? 1 : 0;
      ++j;
    }
    // ranks i+1 .. j (1-based), average (i+1+j)/2
    positive_rank_sum += static_cast<double>(positives) * 0.5 * static_cast<double>(i + 1 + j);
    i = j;
  }
  const double np = static_cast<double>(positive_scores.size());
  const double nn = static_cast<double>(negative_scores.size());
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

}  // namespace b3it
