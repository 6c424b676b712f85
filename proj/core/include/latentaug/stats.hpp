#pragma once

#include <vector>

namespace latentaug {

// Rank-based comparison of methods measured on the same subjects.
// `results[method][subject]`; all rows must have equal length.

struct FriedmanResult {
  double statistic = 0.0;
  double p_value = 1.0;
  // Average rank per method; ranks are assigned ascending on the raw
  // scores (mid-ranks on ties), so their meaning depends on the metric's
  // direction. The statistic and p-value are direction-free.
  std::vector<double> avg_ranks;
  int n_methods = 0;
  int n_subjects = 0;
};

FriedmanResult friedman(const std::vector<std::vector<double>>& results);

struct NemenyiResult {
  // sign[i][j]: +1 when method i ranks significantly better than j, -1 the
  // other way, 0 inside the critical difference.
  std::vector<std::vector<int>> sign;
  // Per-method sum of +1 per win and -1 per loss.
  std::vector<int> score;
  double critical_difference = 0.0;
  double q_value = 0.0;
  std::vector<double> avg_ranks;  // goodness ranks, larger = better
};

// Post-hoc pairwise test; requires a Friedman rejection at alpha first and
// throws otherwise. `lower_is_better` states the metric direction so wins
// point the right way. alpha must be 0.05 or 0.10 (tabulated critical
// values) and 2..10 methods are supported.
NemenyiResult nemenyi(const std::vector<std::vector<double>>& results, double alpha,
                      bool lower_is_better);

// Regularized lower incomplete gamma P(a, x), the chi-square CDF building
// block. Exposed for tests.
double gamma_p(double a, double x);

// Upper tail of the chi-square distribution with k degrees of freedom.
double chi_square_sf(double x, int dof);

// Mid-rank assignment (1-based), averaging ranks across ties.
std::vector<double> mid_ranks(const std::vector<double>& values);

}  // namespace latentaug
