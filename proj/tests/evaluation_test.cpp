#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "bustime/evaluation.hpp"

using namespace bustime;

namespace {

PredictionRecord rec(double T, double T_hat, double dist = 0.0, std::string method = "A", std::string ride = "r") {
  PredictionRecord r;
  r.method = std::move(method);
  r.route_id = "R";
  r.bus_id = "b";
  r.ride_id = std::move(ride);
  r.prediction_distance = dist;
  r.T = T;
  r.T_hat = T_hat;
  return r;
}

/// Two-sided p by listing every sign assignment.
double enumerate_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> mag;
  std::vector<bool> pos;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) {
      mag.push_back(std::abs(a[i] - b[i]));
      pos.push_back(a[i] > b[i]);
    }
  const auto r = average_ranks(mag);
  double w = 0;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (pos[i]) w += r[i];
  const std::size_t n = r.size();
  double le = 0, ge = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += r[i];
    le += s <= w + 1e-9;
    ge += s >= w - 1e-9;
  }
  return std::min(1.0, 2 * std::min(le, ge) / static_cast<double>(std::size_t{1} << n));
}

}  // namespace

TEST(Mare, HandCase) {
  const std::vector<PredictionRecord> r{rec(10, 11), rec(20, 18), rec(5, 5.5)};
  EXPECT_DOUBLE_EQ(mare(r), 0.1);
}

TEST(Mare, PerfectPredictionIsZero) {
  const std::vector<PredictionRecord> r{rec(3, 3), rec(7, 7)};
  EXPECT_EQ(mare(r), 0.0);
}

TEST(Mare, RejectsEmptyAndNonPositive) {
  EXPECT_THROW(mare(std::vector<PredictionRecord>{}), EvaluationError);
  EXPECT_THROW(mare(std::vector<PredictionRecord>{rec(0, 1)}), EvaluationError);
}

TEST(Mare, ScaleInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(0.5, 30);
  std::vector<PredictionRecord> r, s;
  for (int i = 0; i < 200; ++i) {
    const double T = U(rng), Th = U(rng);
    r.push_back(rec(T, Th));
    s.push_back(rec(T * 3.7, Th * 3.7));
  }
  EXPECT_NEAR(mare(r), mare(s), 1e-12);
}

TEST(Scoreable, DropsNonPositiveObservations) {
  const std::vector<PredictionRecord> r{rec(1, 1), rec(0, 1), rec(-2, 1), rec(4, 3)};
  std::size_t bad = 0;
  EXPECT_EQ(scoreable(r, &bad).size(), 2u);
  EXPECT_EQ(bad, 2u);
}

TEST(Bins, HalfOpenKilometres) {
  EXPECT_EQ(distance_bin(0), 0u);
  EXPECT_EQ(distance_bin(999), 0u);
  EXPECT_EQ(distance_bin(1000), 1u);
  EXPECT_EQ(distance_bin(2999.999), 2u);
}

TEST(Bins, PartitionMatchesBruteForce) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0, 8000);
  std::vector<PredictionRecord> r;
  for (int i = 0; i < 100; ++i) r.push_back(rec(10, 10 + i % 7, U(rng)));
  const auto bins = bin_by_distance(r);
  std::size_t total = 0;
  for (std::size_t b = 0; b < 8; ++b) {
    std::vector<double> want;
    for (const auto& x : r)
      if (x.prediction_distance >= 1000.0 * b && x.prediction_distance < 1000.0 * (b + 1))
        want.push_back(x.abs_error());
    total += want.size();
    if (want.empty()) {
      EXPECT_FALSE(bins.count(b));
      continue;
    }
    auto got = bins.at(b);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    EXPECT_EQ(got, want);
  }
  std::size_t in_bins = 0;
  for (const auto& [b, v] : bins) in_bins += v.size();
  EXPECT_EQ(total, r.size());
  EXPECT_EQ(in_bins, r.size());
}

TEST(Percentile, NearestRank) {
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(percentile95(v), 95.0);
  EXPECT_EQ(percentile95({4.2}), 4.2);
  EXPECT_EQ(percentile({1, 2, 3, 4}, 0.5), 2.0);
  EXPECT_THROW(percentile95({}), EvaluationError);
}

TEST(Percentile, MatchesSortAndIndex) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> N(0, 1);
  for (int n : {1, 2, 19, 20, 21, 137}) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = N(rng);
    auto s = v;
    std::sort(s.begin(), s.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * n));
    EXPECT_EQ(percentile95(v), s[rank - 1]) << n;
  }
}

TEST(Wilcoxon, IdenticalSamplesGiveOne) {
  const std::vector<double> a{1, 2, 3, 4};
  EXPECT_EQ(wilcoxon_paired(a, a), 1.0);
}

TEST(Wilcoxon, SixPositiveDifferences) {
  const std::vector<double> a{2, 4, 6, 8, 10, 12}, b{1, 2, 3, 4, 5, 6};
  EXPECT_DOUBLE_EQ(wilcoxon_paired(a, b), 0.03125);
}

TEST(Wilcoxon, ExactMatchesEnumeration) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> N(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 4 + trial % 9;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = std::round(4 * N(rng)) / 2;  // coarse values produce ties and zeros
      b[i] = std::round(4 * N(rng) + 1) / 2;
    }
    EXPECT_NEAR(wilcoxon_paired(a, b), enumerate_p(a, b), 1e-12) << trial;
  }
}

TEST(Wilcoxon, IsSymmetric) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N(0, 1);
  for (std::size_t n : {5u, 18u, 40u, 300u}) {
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = N(rng);
      b[i] = N(rng) + 0.2;
    }
    EXPECT_DOUBLE_EQ(wilcoxon_paired(a, b), wilcoxon_paired(b, a)) << n;
  }
}

TEST(Wilcoxon, NormalApproximationCloseToExactAtFifteen) {
  std::mt19937_64 rng(50);
  std::normal_distribution<double> N(0, 1);
  std::vector<double> a(50), b(50);
  for (std::size_t i = 0; i < 50; ++i) {
    a[i] = N(rng) + 0.3;
    b[i] = N(rng);
  }
  const std::vector<double> sa(a.begin(), a.begin() + 15), sb(b.begin(), b.begin() + 15);
  const auto s = signed_ranks(sa, sb);
  ASSERT_EQ(s.ranks.size(), 15u);
  EXPECT_NEAR(wilcoxon_normal(s), wilcoxon_exact(s), 0.02);
  const double p50 = wilcoxon_paired(a, b);
  EXPECT_GT(p50, 0.0);
  EXPECT_LE(p50, 1.0);
}

TEST(Wilcoxon, LargeSampleShiftIsSignificant) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> N(0, 1);
  std::vector<double> a(400), b(400);
  for (std::size_t i = 0; i < 400; ++i) {
    a[i] = N(rng) + 0.5;
    b[i] = N(rng);
  }
  EXPECT_LT(wilcoxon_paired(a, b), 1e-6);
}

TEST(Wilcoxon, UnequalLengthsRejected) {
  const std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(wilcoxon_paired(a, b), EvaluationError);
}

TEST(BenjaminiHochberg, HandCase) {
  const auto adj = bh_adjust(std::vector<double>{0.01, 0.02, 0.03});
  for (double v : adj) EXPECT_DOUBLE_EQ(v, 0.03);
}

TEST(BenjaminiHochberg, SingleAndEqual) {
  EXPECT_EQ(bh_adjust(std::vector<double>{0.2})[0], 0.2);
  for (double v : bh_adjust(std::vector<double>{0.04, 0.04, 0.04, 0.04})) EXPECT_DOUBLE_EQ(v, 0.04);
}

TEST(BenjaminiHochberg, KeepsInputOrder) {
  const auto adj = bh_adjust(std::vector<double>{0.04, 0.01, 0.5});
  EXPECT_DOUBLE_EQ(adj[1], 0.03);
  EXPECT_DOUBLE_EQ(adj[0], 0.06);
  EXPECT_DOUBLE_EQ(adj[2], 0.5);
}

TEST(BenjaminiHochberg, Properties) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(1 + trial * 3);
    for (auto& x : p) x = std::pow(U(rng), 3);
    std::sort(p.begin(), p.end());
    const auto adj = bh_adjust(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GE(adj[i], p[i]);
      EXPECT_LE(adj[i], 1.0);
      if (i) {
        EXPECT_GE(adj[i], adj[i - 1]);
      }
    }
  }
}

TEST(BenjaminiHochberg, RejectsOutOfRange) {
  EXPECT_THROW(bh_adjust(std::vector<double>{0.5, 1.2}), EvaluationError);
  EXPECT_THROW(bh_adjust(std::vector<double>{-0.1}), EvaluationError);
}

TEST(EvaluateRecords, IdenticalMethodsGiveUnitPValues) {
  std::vector<PredictionRecord> r;
  for (int i = 0; i < 60; ++i) {
    const double T = 2 + i % 11, Th = T * (1 + 0.03 * (i % 5 - 2));
    r.push_back(rec(T, Th, 300.0 * i, "A", "r" + std::to_string(i)));
    r.push_back(rec(T, Th, 300.0 * i, "B", "r" + std::to_string(i)));
  }
  const auto rep = evaluate_records(r, {"A", "B"});
  ASSERT_EQ(rep.methods.size(), 2u);
  EXPECT_EQ(rep.methods[0].mare, rep.methods[1].mare);
  ASSERT_FALSE(rep.comparisons.empty());
  for (const auto& c : rep.comparisons) {
    EXPECT_EQ(c.p_raw, 1.0);
    EXPECT_EQ(c.p_adj, 1.0);
  }
}

TEST(EvaluateRecords, OnlyRecordsSharedByAllMethodsAreScored) {
  std::vector<PredictionRecord> r{rec(10, 11, 100, "A", "x"), rec(10, 12, 100, "B", "x"), rec(10, 10, 200, "A", "y")};
  const auto rep = evaluate_records(r, {"A", "B"});
  EXPECT_EQ(rep.dropped_unpaired, 1u);
  ASSERT_EQ(rep.methods.size(), 2u);
  EXPECT_EQ(rep.methods[0].n, 1u);
  EXPECT_DOUBLE_EQ(rep.methods[0].mare, 0.1);
  EXPECT_DOUBLE_EQ(rep.methods[1].mare, 0.2);
}

TEST(EvaluateRecords, OneAdjustmentFamilyAcrossScopes) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N(0, 1);
  std::vector<PredictionRecord> r;
  for (int i = 0; i < 300; ++i) {
    const double T = 5 + (i % 40) * 0.5, d = 80.0 * (i % 40);
    const std::string ride = "r" + std::to_string(i);
    r.push_back(rec(T, T + N(rng), d, "A", ride));
    r.push_back(rec(T, T + 0.5 + N(rng), d, "B", ride));
    r.push_back(rec(T, T + 1.5 * N(rng), d, "C", ride));
  }
  const auto rep = evaluate_records(r, {"A", "B", "C"});
  std::vector<double> raw;
  for (const auto& c : rep.comparisons) raw.push_back(c.p_raw);
  const auto adj = bh_adjust(raw);
  std::size_t overall = 0;
  for (std::size_t i = 0; i < adj.size(); ++i) {
    EXPECT_EQ(rep.comparisons[i].p_adj, adj[i]);
    overall += rep.comparisons[i].scope == "overall";
  }
  EXPECT_EQ(overall, 3u);
  EXPECT_EQ(rep.comparisons.size(), 3u * (1 + 4));
}
