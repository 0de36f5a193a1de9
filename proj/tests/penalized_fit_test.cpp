#include "bustime/penalized_fit.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

namespace bustime {
namespace {

using oracle::Fixture;

TEST(SolvePenalized, ZeroPenaltyIsOls) {
  auto fx = oracle::random_fixture(120, 9, 1, 42);
  const std::vector<double> lam{0.0};
  const Eigen::VectorXd beta = solve_penalized(fx.design, fx.penalties, lam);
  const Eigen::VectorXd ols = fx.design.X.colPivHouseholderQr().solve(fx.design.y);
  EXPECT_LT((beta - ols).norm(), 1e-8 * ols.norm());
}

TEST(SolvePenalized, LinearTruthGivesZeroKnotCoefficients) {
  auto basis = make_basis(BasisKind::truncated_linear, {2, 4, 6, 8}, 0, 10);
  DesignMatrix d;
  d.X.resize(50, 6);
  d.y.resize(50);
  for (int i = 0; i < 50; ++i) {
    const double x = 0.2 * i;
    const auto r = basis.row(x);
    for (int j = 0; j < 6; ++j) d.X(i, j) = r[static_cast<std::size_t>(j)];
    d.y[i] = 3.0 - 0.5 * x;
  }
  for (double l : {1e-3, 1.0, 1e3}) {
    const std::vector<double> lam{l};
    const auto beta = solve_penalized(d, {penalty_for(6)}, lam);
    EXPECT_NEAR(beta[0], 3.0, 1e-8);
    EXPECT_NEAR(beta[1], -0.5, 1e-8);
    for (int j = 2; j < 6; ++j) EXPECT_NEAR(beta[j], 0.0, 1e-8);
    EXPECT_LT((d.y - d.X * beta).norm(), 1e-8);
  }
}

TEST(SolvePenalized, NoisySineMatchesDenseOracle) {
  auto fx = oracle::noisy_sine(200, 12, 17);
  const std::vector<double> lam{1.0};
  PenalizedProblem prob(fx.design, fx.penalties);
  const auto ev = prob.evaluate(lam);
  const auto ref = oracle::dense_fit(fx.design, fx.penalties, lam);
  EXPECT_LT((ev.beta - ref.beta).norm(), 1e-8 * ref.beta.norm());
  EXPECT_NEAR(ev.edf, ref.edf, 1e-8 * ref.edf);
  EXPECT_NEAR(ev.rss, ref.rss, 1e-8 * ref.rss);
  EXPECT_NEAR(gcv_score(fx.design, fx.penalties, lam),
              200.0 * ref.rss / ((200.0 - ref.edf) * (200.0 - ref.edf)), 1e-8 * ref.gcv);
}

TEST(SolvePenalized, RankDeficientFallsBackToRidge) {
  auto fx = oracle::random_fixture(40, 5, 1, 3);
  fx.design.X.col(4) = fx.design.X.col(1) + fx.design.X.col(2);
  const std::vector<double> lam{0.0};
  PenalizedProblem prob(fx.design, fx.penalties);
  const auto ev = prob.evaluate(lam);
  EXPECT_TRUE(ev.diagnostics.ridge_applied);
  EXPECT_LT(ev.diagnostics.rcond, 1e-12);
  // Approaches the minimum-norm least-squares solution.
  const Eigen::VectorXd mn = fx.design.X.completeOrthogonalDecomposition().solve(fx.design.y);
  EXPECT_LT((ev.beta - mn).norm(), 1e-4 * mn.norm());
  EXPECT_THROW(prob.evaluate(std::vector<double>{-1.0}), FitError);
}

TEST(SolvePenalized, RejectsNonFinite) {
  auto fx = oracle::random_fixture(20, 4, 1, 1);
  fx.design.y[3] = std::nan("");
  EXPECT_THROW(PenalizedProblem(fx.design, fx.penalties), FitError);
}

TEST(HatTrace, Limits) {
  auto fx = oracle::noisy_sine(200, 12, 5);
  EXPECT_NEAR(hat_trace(fx.design, fx.penalties, std::vector<double>{0.0}), 12.0, 1e-9);
  EXPECT_NEAR(hat_trace(fx.design, fx.penalties, std::vector<double>{1e12}), 2.0, 0.01);
  const auto ref = oracle::dense_fit(fx.design, fx.penalties, std::vector<double>{1.0});
  EXPECT_NEAR(hat_trace(fx.design, fx.penalties, std::vector<double>{1.0}), ref.edf, 1e-8 * ref.edf);
}

Fixture square_fixture(int n) {
  std::mt19937_64 rng(static_cast<unsigned>(n));
  std::normal_distribution<double> N;
  Fixture fx;
  fx.design.X = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return N(rng); });
  fx.design.y = Eigen::VectorXd::NullaryExpr(n, [&] { return N(rng); });
  fx.penalties.push_back(penalty_for(static_cast<std::size_t>(n)));
  return fx;
}

TEST(GcvScore, InterpolationIsInfinite) {
  auto fx = square_fixture(6);
  EXPECT_TRUE(std::isinf(gcv_score(fx.design, fx.penalties, std::vector<double>{0.0})));
}

TEST(GcvScore, ScalesWithResponseSquared) {
  auto fx = oracle::noisy_sine(150, 10, 4);
  const std::vector<double> lam{0.3};
  const double g = gcv_score(fx.design, fx.penalties, lam);
  fx.design.y *= 3.0;
  EXPECT_NEAR(gcv_score(fx.design, fx.penalties, lam), 9.0 * g, 1e-9 * g);
}

TEST(OptimizeLambdas, SingletonGrid) {
  auto fx = oracle::noisy_sine(100, 8, 2);
  auto fit = optimize_lambdas(fx.design, fx.penalties, {{0.5}});
  EXPECT_EQ(fit.lambdas, std::vector<double>{0.5});
  EXPECT_GE(fit.edf, 2.0);
  EXPECT_LE(fit.edf, 8.0);
  EXPECT_GE(fit.sigma2_eps, 0.0);
}

TEST(OptimizeLambdas, TwoLambdaGridMatchesBruteForce) {
  for (unsigned seed = 0; seed < 3; ++seed) {
    auto fx = oracle::random_fixture(150, 14, 2, 100 + seed);
    const auto grid = log_grid(1e-4, 1e4, 7);
    const auto fit = optimize_lambdas(fx.design, fx.penalties, {grid, grid});
    const auto ref = oracle::brute_force_grid(fx.design, fx.penalties, grid, grid);
    EXPECT_EQ(fit.lambdas, ref) << "seed " << seed;
  }
}

TEST(OptimizeLambdas, ThreadedSearchIsIdentical) {
  auto fx = oracle::random_fixture(150, 14, 2, 77);
  const auto grid = log_grid(1e-4, 1e4, 7);
  const auto a = optimize_lambdas(fx.design, fx.penalties, {grid, grid}, {1});
  const auto b = optimize_lambdas(fx.design, fx.penalties, {grid, grid}, {4});
  EXPECT_EQ(a.lambdas, b.lambdas);
  EXPECT_EQ(a.beta, b.beta);
}

TEST(OptimizeLambdas, AllInfiniteIsAnError) {
  auto fx = square_fixture(5);
  EXPECT_THROW(optimize_lambdas(fx.design, fx.penalties, {{0.0}}), FitError);
}

TEST(PredictLinear, Cases) {
  auto fx = oracle::noisy_sine(80, 6, 12);
  auto fit = optimize_lambdas(fx.design, fx.penalties, {log_grid(1e-3, 1e3, 5)});
  std::vector<double> origin(6, 0.0);
  origin[0] = 1.0;
  EXPECT_EQ(predict_linear(fit, origin), fit.beta[0]);
  const Eigen::VectorXd fitted = fx.design.X * fit.beta;
  for (int i : {0, 17, 79}) {
    std::vector<double> row(6, 0.0);
    for (int j = 0; j < 6; ++j) row[static_cast<std::size_t>(j)] = fx.design.X(i, j);
    EXPECT_NEAR(predict_linear(fit, row), fitted[i], 1e-12);
    double s = 0.0;
    for (int j = 0; j < 6; ++j) s += fit.beta[j] * row[static_cast<std::size_t>(j)];
    EXPECT_NEAR(predict_linear(fit, row), s, 1e-12);
  }
  EXPECT_THROW(predict_linear(fit, std::vector<double>(5, 0.0)), FitError);
}

TEST(PenalizedProperties, MonotoneShrinkageAndEdf) {
  auto fx = oracle::noisy_sine(200, 12, 21);
  PenalizedProblem prob(fx.design, fx.penalties);
  double prev_rss = -1.0, prev_pen = INFINITY, prev_edf = INFINITY;
  const auto D = fx.penalties[0].D;
  for (double l : log_grid(1e-5, 1e6, 23)) {
    const auto ev = prob.evaluate(std::vector<double>{l});
    const double pen = ev.beta.dot(D * ev.beta);
    EXPECT_GE(ev.rss, prev_rss - 1e-9 * std::abs(prev_rss));
    EXPECT_LE(pen, prev_pen * (1 + 1e-9));
    EXPECT_LT(ev.edf, prev_edf);
    prev_rss = ev.rss;
    prev_pen = pen;
    prev_edf = ev.edf;
  }
}

TEST(PenalizedProperties, ResidualsOrthogonalToNullSpaceColumns) {
  auto fx = oracle::noisy_sine(200, 12, 22);
  PenalizedProblem prob(fx.design, fx.penalties);
  for (double l : {1e-2, 1.0, 1e2}) {
    const auto ev = prob.evaluate(std::vector<double>{l});
    const Eigen::VectorXd r = fx.design.y - fx.design.X * ev.beta;
    EXPECT_NEAR(r.dot(fx.design.X.col(0)), 0.0, 1e-8 * fx.design.y.norm());
    EXPECT_NEAR(r.dot(fx.design.X.col(1)), 0.0, 1e-8 * fx.design.y.norm() * fx.design.X.col(1).norm());
  }
}

TEST(PenalizedProperties, WeightsMatchDuplicatedRows) {
  auto fx = oracle::noisy_sine(60, 8, 23);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N(0.0, 0.2);
  DesignMatrix dup = fx.design, avg = fx.design;
  dup.X.conservativeResize(120, 8);
  dup.y.conservativeResize(120);
  avg.weights = Eigen::VectorXd::Ones(60);
  for (int i = 0; i < 60; ++i) {
    const double e = N(rng);
    dup.X.row(60 + i) = fx.design.X.row(i);
    dup.y[i] = fx.design.y[i] + e;
    dup.y[60 + i] = fx.design.y[i] - 0.5 * e;
    avg.y[i] = 0.5 * (dup.y[i] + dup.y[60 + i]);
    avg.weights[i] = 2.0;
  }
  const std::vector<double> lam{0.7};
  const auto a = solve_penalized(dup, fx.penalties, lam);
  const auto b = solve_penalized(avg, fx.penalties, lam);
  EXPECT_LT((a - b).norm(), 1e-10 * a.norm());
}

}  // namespace
}  // namespace bustime
