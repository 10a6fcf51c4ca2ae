#pragma once

#include <vector>

namespace b3it::budget {

/// Discovery cost model for a stop-at-m rule: a candidate is sampled until
/// two outputs differ or m samples are taken. A fraction f_B of candidates
/// are fair two-token border inputs, the rest always return the same token.
/// The closed forms are exact for that fair two-token case only.
struct BudgetModel {
  double border_fraction = 0.5;  // f_B in (0, 1]
  int max_samples_limit = 6;     // largest m considered, >= 2

  void validate() const;
};

/// E[S_m] = (1 - f_B) m + f_B (3 - 2^-(m-2)). Throws for m < 2.
double expected_samples(int m, double border_fraction);

/// P(success | m) = f_B (1 - 2^-(m-1)).
double success_probability(int m, double border_fraction);

/// L(m) = E[S_m] / P(success | m), expected requests per confirmed border
/// input. Throws when f_B = 0.
double cost_per_bi(int m, double border_fraction);

/// argmin over m in [2, m_max] of L(m); ties go to the smaller m.
int optimal_m(double border_fraction, int max_samples_limit);
inline int optimal_m(const BudgetModel& model) {
  model.validate();
  return optimal_m(model.border_fraction, model.max_samples_limit);
}

struct BudgetRow {
  int m;
  double expected_samples;
  double success_probability;
  double cost_per_bi;
};

/// One row per m in [2, m_max].
std::vector<BudgetRow> budget_table(const BudgetModel& model);

}  // namespace b3it::budget
