#include "b3it/budget.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace b3it::budget {

namespace {

void check_m(int m) {
  if (m < 2) throw std::invalid_argument("stopping limit m must be >= 2, got " + std::to_string(m));
}

void check_fraction(double f) {
  if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("border fraction must lie in [0, 1]");
}

}  // namespace

void BudgetModel::validate() const {
  if (!(border_fraction > 0.0 && border_fraction <= 1.0)) {
    throw std::invalid_argument("BudgetModel: border fraction must lie in (0, 1]");
  }
  check_m(max_samples_limit);
}

double expected_samples(int m, double f) {
  check_m(m);
  check_fraction(f);
  return (1.0 - f) * m + f * (3.0 - std::ldexp(1.0, -(m - 2)));
}

double success_probability(int m, double f) {
  check_m(m);
  check_fraction(f);
  return f * (1.0 - std::ldexp(1.0, -(m - 1)));
}

double cost_per_bi(int m, double f) {
  if (!(f > 0.0)) throw std::invalid_argument("cost_per_bi: no border inputs can be found when f_B = 0");
  return expected_samples(m, f) / success_probability(m, f);
}

int optimal_m(double f, int max_samples_limit) {
  if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("optimal_m: border fraction must lie in (0, 1]");
  check_m(max_samples_limit);
  int best = 2;
  double best_cost = cost_per_bi(2, f);
  for (int m = 3; m <= max_samples_limit; ++m) {
    const double c = cost_per_bi(m, f);
    if (c < best_cost) {
      best = m;
      best_cost = c;
    }
  }
  return best;
}

std::vector<BudgetRow> budget_table(const BudgetModel& model) {
  model.validate();
  std::vector<BudgetRow> rows;
  for (int m = 2; m <= model.max_samples_limit; ++m) {
    rows.push_back({m, expected_samples(m, model.border_fraction),
                    success_probability(m, model.border_fraction), cost_per_bi(m, model.border_fraction)});
  }
  return rows;
}

}  // namespace b3it::budget
