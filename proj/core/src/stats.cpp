#include "latentaug/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latentaug/error.hpp"

namespace latentaug {
namespace {

// Series expansion of P(a,x), valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for Q(a,x) = 1 - P(a,x), valid for x >= a + 1.
double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Critical values for the studentized-range-based pairwise comparison,
// already divided by sqrt(2): CD = q * sqrt(k(k+1)/(6n)). Index by number
// of methods k, starting at k = 2.
constexpr int kQTableMin = 2;
constexpr int kQTableMax = 10;
constexpr double kQ05[] = {1.959964, 2.343701, 2.569032, 2.727774, 2.849705,
                           2.948320, 3.030879, 3.101730, 3.163684};
constexpr double kQ10[] = {1.644854, 2.052293, 2.291341, 2.459516, 2.588521,
                           2.692732, 2.779884, 2.854606, 2.919889};

void validate_matrix(const std::vector<std::vector<double>>& results) {
  check(results.size() >= 2, "rank test: need at least 2 methods, got ", results.size());
  size_t n = results[0].size();
  check(n >= 2, "rank test: need at least 2 subjects, got ", n);
  for (const auto& row : results) {
    check(row.size() == n, "rank test: ragged results matrix (", row.size(), " vs ", n, ")");
    for (double v : row) check(std::isfinite(v), "rank test: non-finite score");
  }
}

// Per-subject mid-ranks for all methods; results[method][subject].
std::vector<std::vector<double>> rank_by_subject(const std::vector<std::vector<double>>& results) {
  size_t k = results.size();
  size_t n = results[0].size();
  std::vector<std::vector<double>> ranks(k, std::vector<double>(n));
  std::vector<double> column(k);
  for (size_t j = 0; j < n; ++j) {
    for (size_t i = 0; i < k; ++i) column[i] = results[i][j];
    std::vector<double> r = mid_ranks(column);
    for (size_t i = 0; i < k; ++i) ranks[i][j] = r[i];
  }
  return ranks;
}

}  // namespace

double gamma_p(double a, double x) {
  check(a > 0.0 && x >= 0.0, "gamma_p: domain error (a=", a, ", x=", x, ")");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_cf(a, x);
}

double chi_square_sf(double x, int dof) {
  check(dof >= 1, "chi_square_sf: dof must be >= 1");
  if (x <= 0.0) return 1.0;
  if (x < dof + 1.0) return 1.0 - gamma_p_series(dof / 2.0, x / 2.0);
  return gamma_q_cf(dof / 2.0, x / 2.0);
}

std::vector<double> mid_ranks(const std::vector<double>& values) {
  size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    double shared = 0.5 * static_cast<double>(i + j) + 1.0;  // average of 1-based positions
    for (size_t t = i; t <= j; ++t) ranks[order[t]] = shared;
    i = j + 1;
  }
  return ranks;
}

FriedmanResult friedman(const std::vector<std::vector<double>>& results) {
  validate_matrix(results);
  auto ranks = rank_by_subject(results);
  int k = static_cast<int>(results.size());
  int n = static_cast<int>(results[0].size());

  FriedmanResult out;
  out.n_methods = k;
  out.n_subjects = n;
  out.avg_ranks.resize(static_cast<size_t>(k));

  // Tie-corrected statistic: T = (k-1) * sum_j (S_j - n(k+1)/2)^2 / (A - C)
  // with A the sum of squared ranks and C = nk(k+1)^2/4. Reduces to the
  // classic formula when no ties are present.
  double a_sum = 0.0;
  double numer = 0.0;
  double c = static_cast<double>(n) * k * (k + 1.0) * (k + 1.0) / 4.0;
  for (int i = 0; i < k; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      s += ranks[static_cast<size_t>(i)][static_cast<size_t>(j)];
      a_sum += ranks[static_cast<size_t>(i)][static_cast<size_t>(j)] *
               ranks[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
    out.avg_ranks[static_cast<size_t>(i)] = s / n;
    double d = s - n * (k + 1.0) / 2.0;
    numer += d * d;
  }
  double denom = a_sum - c;
  if (denom <= 0.0) {  // every subject ranked all methods identically
    out.statistic = 0.0;
    out.p_value = 1.0;
    return out;
  }
  out.statistic = (k - 1.0) * numer / denom;
  out.p_value = chi_square_sf(out.statistic, k - 1);
  return out;
}

NemenyiResult nemenyi(const std::vector<std::vector<double>>& results, double alpha,
                      bool lower_is_better) {
  validate_matrix(results);
  int k = static_cast<int>(results.size());
  int n = static_cast<int>(results[0].size());
  check(k >= kQTableMin && k <= kQTableMax, "nemenyi: critical values tabulated for 2..10 methods, got ",
        k);

  const double* table;
  if (alpha == 0.05) {
    table = kQ05;
  } else if (alpha == 0.10) {
    table = kQ10;
  } else {
    fail("nemenyi: alpha must be 0.05 or 0.10, got ", alpha);
  }

  FriedmanResult fr = friedman(results);
  check(fr.p_value < alpha, "nemenyi: Friedman test did not reject (p=", fr.p_value,
        " >= alpha=", alpha, ")");

  // Rank goodness: flip scores when smaller raw values are better so a
  // larger average rank always means a better method.
  std::vector<std::vector<double>> goodness = results;
  if (lower_is_better) {
    for (auto& row : goodness)
      for (double& v : row) v = -v;
  }
  auto ranks = rank_by_subject(goodness);

  NemenyiResult out;
  out.avg_ranks.resize(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += ranks[static_cast<size_t>(i)][static_cast<size_t>(j)];
    out.avg_ranks[static_cast<size_t>(i)] = s / n;
  }

  out.q_value = table[k - kQTableMin];
  out.critical_difference = out.q_value * std::sqrt(k * (k + 1.0) / (6.0 * n));
  out.sign.assign(static_cast<size_t>(k), std::vector<int>(static_cast<size_t>(k), 0));
  out.score.assign(static_cast<size_t>(k), 0);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (i == j) continue;
      double d = out.avg_ranks[static_cast<size_t>(i)] - out.avg_ranks[static_cast<size_t>(j)];
      int s = 0;
      if (d > out.critical_difference) s = 1;
      if (d < -out.critical_difference) s = -1;
      out.sign[static_cast<size_t>(i)][static_cast<size_t>(j)] = s;
      out.score[static_cast<size_t>(i)] += s;
    }
  }
  return out;
}

}  // namespace latentaug
