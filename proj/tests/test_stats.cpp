#include "latentaug/stats.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "latentaug/error.hpp"
#include "latentaug/rng.hpp"

using namespace latentaug;

namespace {

// Classic (tie-free) Friedman statistic, written out independently of the
// library's tie-corrected form. Valid as an oracle only on tie-free data.
double classic_friedman_statistic(const std::vector<std::vector<double>>& results) {
  int k = static_cast<int>(results.size());
  int n = static_cast<int>(results[0].size());
  std::vector<double> rank_sum(k, 0.0);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < k; ++i) {
      double r = 1.0;
      for (int m = 0; m < k; ++m)
        if (results[m][j] < results[i][j]) r += 1.0;
      rank_sum[i] += r;
    }
  }
  double s = 0.0;
  for (int i = 0; i < k; ++i) {
    double avg = rank_sum[i] / n;
    s += (avg - (k + 1.0) / 2.0) * (avg - (k + 1.0) / 2.0);
  }
  return 12.0 * n / (k * (k + 1.0)) * s;
}

std::vector<std::vector<double>> random_matrix(int k, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> m(k, std::vector<double>(n));
  for (auto& row : m)
    for (double& v : row) v = rng.normal();
  return m;
}

}  // namespace

TEST(MidRanks, TiesShareAveragedRank) {
  std::vector<double> r = mid_ranks({3.0, 1.0, 4.0, 1.0, 5.0});
  ASSERT_EQ(r.size(), 5u);
  EXPECT_DOUBLE_EQ(r[0], 3.0);
  EXPECT_DOUBLE_EQ(r[1], 1.5);
  EXPECT_DOUBLE_EQ(r[2], 4.0);
  EXPECT_DOUBLE_EQ(r[3], 1.5);
  EXPECT_DOUBLE_EQ(r[4], 5.0);
}

TEST(MidRanks, AllEqualValuesGetMidRank) {
  std::vector<double> r = mid_ranks({2.0, 2.0, 2.0});
  for (double v : r) EXPECT_DOUBLE_EQ(v, 2.0);
}

TEST(IncompleteGamma, MatchesClosedForms) {
  // P(1, x) = 1 - exp(-x)
  for (double x : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0})
    EXPECT_NEAR(gamma_p(1.0, x), 1.0 - std::exp(-x), 1e-12);
  // P(1/2, x) = erf(sqrt(x))
  for (double x : {0.01, 0.25, 1.0, 4.0, 9.0})
    EXPECT_NEAR(gamma_p(0.5, x), std::erf(std::sqrt(x)), 1e-12);
  EXPECT_DOUBLE_EQ(gamma_p(3.0, 0.0), 0.0);
}

TEST(ChiSquare, SurvivalFunctionKnownValues) {
  // dof = 2 has the closed form exp(-x/2).
  for (double x : {0.5, 1.0, 3.0, 8.0})
    EXPECT_NEAR(chi_square_sf(x, 2), std::exp(-x / 2.0), 1e-12);
  // Standard critical value: P(chi2_1 > 3.841459) = 0.05.
  EXPECT_NEAR(chi_square_sf(3.841459, 1), 0.05, 1e-5);
  EXPECT_DOUBLE_EQ(chi_square_sf(0.0, 3), 1.0);
  EXPECT_DOUBLE_EQ(chi_square_sf(-1.0, 3), 1.0);
  for (int dof = 1; dof <= 9; ++dof) {
    EXPECT_GT(chi_square_sf(1.0, dof), chi_square_sf(2.0, dof));
  }
}

TEST(Friedman, MatchesClassicFormulaWithoutTies) {
  auto m = random_matrix(4, 15, 977);
  FriedmanResult fr = friedman(m);
  EXPECT_NEAR(fr.statistic, classic_friedman_statistic(m), 1e-10);
  EXPECT_EQ(fr.n_methods, 4);
  EXPECT_EQ(fr.n_subjects, 15);
}

TEST(Friedman, FixedMatrixHandComputed) {
  // Three methods over four subjects; per-subject ranks written out below.
  std::vector<std::vector<double>> m = {
      {1.0, 2.0, 3.0, 2.0},   // ranks 1 1 2 1
      {2.0, 3.0, 2.0, 4.0},   // ranks 2 2 1 2
      {3.0, 4.0, 5.0, 6.0}};  // ranks 3 3 3 3
  // Rank sums: 5, 7, 12. Classic statistic:
  // 12*4/(3*4) * ((5/4-2)^2+(7/4-2)^2+(12/4-2)^2) = 4*(0.5625+0.0625+1) = 6.5
  FriedmanResult fr = friedman(m);
  EXPECT_NEAR(fr.statistic, 6.5, 1e-12);
  EXPECT_NEAR(fr.avg_ranks[0], 1.25, 1e-12);
  EXPECT_NEAR(fr.avg_ranks[1], 1.75, 1e-12);
  EXPECT_NEAR(fr.avg_ranks[2], 3.00, 1e-12);
  EXPECT_NEAR(fr.p_value, chi_square_sf(6.5, 2), 1e-12);
}

TEST(Friedman, IdenticalMethodsGiveZeroStatistic) {
  std::vector<std::vector<double>> m(3, std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0});
  FriedmanResult fr = friedman(m);
  EXPECT_DOUBLE_EQ(fr.statistic, 0.0);
  EXPECT_DOUBLE_EQ(fr.p_value, 1.0);
}

TEST(Friedman, TiesWithinSubjectUseMidRanks) {
  // One subject with a two-way tie; mid-ranks keep the per-subject rank sum
  // at k(k+1)/2 so avg ranks still sum to k(k+1)/2.
  std::vector<std::vector<double>> m = {{1.0, 5.0}, {1.0, 6.0}, {2.0, 7.0}};
  FriedmanResult fr = friedman(m);
  double total = fr.avg_ranks[0] + fr.avg_ranks[1] + fr.avg_ranks[2];
  EXPECT_NEAR(total, 6.0, 1e-12);
  EXPECT_NEAR(fr.avg_ranks[0], (1.5 + 1.0) / 2.0, 1e-12);
  EXPECT_NEAR(fr.avg_ranks[1], (1.5 + 2.0) / 2.0, 1e-12);
  EXPECT_TRUE(std::isfinite(fr.statistic));
  EXPECT_GE(fr.p_value, 0.0);
  EXPECT_LE(fr.p_value, 1.0);
}

TEST(Friedman, PValueMatchesPermutationOracle) {
  // Mild separation so the p-value lands mid-range where both estimates are
  // informative. The permutation null shuffles scores within each subject.
  Rng rng(4242);
  int k = 3, n = 12;
  std::vector<std::vector<double>> m(k, std::vector<double>(n));
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < k; ++i) m[i][j] = 0.35 * i + rng.normal();

  FriedmanResult fr = friedman(m);

  int exceed = 0;
  const int trials = 20000;
  std::vector<double> column(k);
  auto shuffled = m;
  for (int t = 0; t < trials; ++t) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < k; ++i) column[i] = m[i][j];
      rng.shuffle(column);
      for (int i = 0; i < k; ++i) shuffled[i][j] = column[i];
    }
    if (friedman(shuffled).statistic >= fr.statistic - 1e-12) ++exceed;
  }
  double p_perm = static_cast<double>(exceed) / trials;
  EXPECT_GT(fr.p_value, 0.005);
  EXPECT_LT(fr.p_value, 0.6);
  EXPECT_NEAR(fr.p_value, p_perm, 0.05);
}

TEST(Friedman, DominantMethodRejects) {
  Rng rng(11);
  int k = 4, n = 20;
  std::vector<std::vector<double>> m(k, std::vector<double>(n));
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < k; ++i) m[i][j] = rng.normal();
    m[0][j] += 3.0;
  }
  FriedmanResult fr = friedman(m);
  EXPECT_LT(fr.p_value, 0.05);
}

TEST(Friedman, RejectsBadInput) {
  EXPECT_THROW(friedman({{1.0, 2.0}}), Error);
  EXPECT_THROW(friedman({{1.0}, {2.0}}), Error);
  EXPECT_THROW(friedman({{1.0, 2.0}, {1.0, 2.0, 3.0}}), Error);
  EXPECT_THROW(friedman({{1.0, std::nan("")}, {1.0, 2.0}}), Error);
}

TEST(Nemenyi, CriticalDifferenceKnownValue) {
  // Four methods over twenty subjects at alpha 0.05:
  // CD = 2.569032 * sqrt(4*5 / (6*20)) = 1.04880...
  Rng rng(7);
  int k = 4, n = 20;
  std::vector<std::vector<double>> m(k, std::vector<double>(n));
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < k; ++i) m[i][j] = rng.normal() + 2.0 * i;
  }
  NemenyiResult nr = nemenyi(m, 0.05, false);
  EXPECT_NEAR(nr.q_value, 2.569032, 1e-9);
  EXPECT_NEAR(nr.critical_difference, 1.048800, 1e-4);
}

TEST(Nemenyi, SignsFollowMetricDirection) {
  // Method 0 strictly dominates on every subject (largest values).
  int k = 3, n = 15;
  Rng rng(99);
  std::vector<std::vector<double>> m(k, std::vector<double>(n));
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < k; ++i) m[i][j] = -4.0 * i + 0.1 * rng.normal();

  NemenyiResult hi = nemenyi(m, 0.05, false);
  EXPECT_EQ(hi.sign[0][2], 1);
  EXPECT_EQ(hi.sign[2][0], -1);
  EXPECT_GT(hi.score[0], hi.score[2]);
  EXPECT_NEAR(hi.avg_ranks[0], 3.0, 1e-12);

  // Lower-is-better flips who wins.
  NemenyiResult lo = nemenyi(m, 0.05, true);
  EXPECT_EQ(lo.sign[0][2], -1);
  EXPECT_EQ(lo.sign[2][0], 1);
  EXPECT_NEAR(lo.avg_ranks[2], 3.0, 1e-12);
}

TEST(Nemenyi, RequiresFriedmanRejection) {
  auto m = random_matrix(3, 10, 55);  // no effect, expect p well above 0.05
  FriedmanResult fr = friedman(m);
  ASSERT_GE(fr.p_value, 0.05) << "statistical fluke; pick another seed";
  EXPECT_THROW(nemenyi(m, 0.05, false), Error);
}

TEST(Nemenyi, RejectsUnsupportedParameters) {
  Rng rng(3);
  std::vector<std::vector<double>> m(3, std::vector<double>(30));
  for (int j = 0; j < 30; ++j)
    for (int i = 0; i < 3; ++i) m[i][j] = 2.0 * i + 0.1 * rng.normal();
  EXPECT_THROW(nemenyi(m, 0.01, false), Error);

  std::vector<std::vector<double>> wide(11, std::vector<double>(30));
  for (int j = 0; j < 30; ++j)
    for (int i = 0; i < 11; ++i) wide[static_cast<size_t>(i)][static_cast<size_t>(j)] = i;
  EXPECT_THROW(nemenyi(wide, 0.05, false), Error);
}
