#pragma once

// Independent reference computations used to check the library. None of
// these call into the code paths they are used to verify.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace b3it::oracle {

/// Monte-Carlo rate at which the support-mismatch event occurs when the
/// reference draws n1 tokens uniformly from `s1` and the detection draws n2
/// uniformly from `s2`. Tokens are small ints, supports tracked as bitmasks.
inline double mismatch_rate(const std::vector<int>& s1, const std::vector<int>& s2, int n1, int n2,
                            std::uint64_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick1(0, s1.size() - 1);
  std::uniform_int_distribution<std::size_t> pick2(0, s2.size() - 1);
  std::uint64_t hits = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    std::uint64_t m1 = 0, m2 = 0;
    for (int i = 0; i < n1; ++i) m1 |= std::uint64_t{1} << s1[pick1(rng)];
    for (int i = 0; i < n2; ++i) m2 |= std::uint64_t{1} << s2[pick2(rng)];
    hits += (m1 != m2) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(trials);
}

/// Standard error of a Bernoulli frequency estimate.
inline double standard_error(double p, std::uint64_t trials) {
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(trials));
}

/// O(n*m) pairwise Mann-Whitney AUC.
inline double pairwise_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(pos.size() * neg.size());
}

/// Naive softmax written out element by element.
inline Eigen::VectorXd plain_softmax(const Eigen::VectorXd& z, double tau) {
  double top = z(0);
  for (Eigen::Index i = 1; i < z.size(); ++i) top = std::max(top, z(i));
  Eigen::VectorXd e(z.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    e(i) = std::exp((z(i) - top) / tau);
    sum += e(i);
  }
  return e / sum;
}

/// Central differences of theta -> softmax(z + J theta / ...)_{1:d-1}
/// at theta = 0; result is (d-1) x q.
inline Eigen::MatrixXd reduced_softmax_fd_jacobian(const Eigen::VectorXd& z, const Eigen::MatrixXd& jz, double tau,
                                                   double h = 1e-6) {
  const Eigen::Index d = z.size();
  Eigen::MatrixXd out(d - 1, jz.cols());
  for (Eigen::Index c = 0; c < jz.cols(); ++c) {
    const Eigen::VectorXd plus = plain_softmax(z + h * jz.col(c), tau);
    const Eigen::VectorXd minus = plain_softmax(z - h * jz.col(c), tau);
    out.col(c) = (plus - minus).head(d - 1) / (2.0 * h);
  }
  return out;
}

struct DiscoveryTally {
  std::uint64_t samples = 0;
  std::uint64_t found = 0;
};

/// Discrete-event simulation of the stop-at-m discovery rule on a stream of
/// candidates: a fraction f_B are fair coins over `tie_size` tokens, the
/// rest always answer the same token.
inline DiscoveryTally simulate_discovery_stream(double border_fraction, int m, std::uint64_t candidates,
                                                std::uint64_t seed, int tie_size = 2) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution is_border(border_fraction);
  std::uniform_int_distribution<int> token(0, tie_size - 1);
  DiscoveryTally tally;
  for (std::uint64_t c = 0; c < candidates; ++c) {
    if (!is_border(rng)) {
      tally.samples += static_cast<std::uint64_t>(m);
      continue;
    }
    const int first = token(rng);
    int taken = 1;
    bool differs = false;
    while (taken < m && !differs) {
      differs = token(rng) != first;
      ++taken;
    }
    tally.samples += static_cast<std::uint64_t>(taken);
    tally.found += differs ? 1 : 0;
  }
  return tally;
}

}  // namespace b3it::oracle
