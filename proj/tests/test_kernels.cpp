#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "nkrr/kernels.hpp"
#include "test_util.hpp"

using namespace nkrr;
using nkrr::testing::cosine_series;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST(Bernoulli, PolynomialsMatchPrintedForms) {
  // B2(x) = x^2 - x + 1/6
  const auto b2 = bernoulli_polynomial(2);
  ASSERT_EQ(b2.size(), 3u);
  EXPECT_NEAR(b2[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(b2[1], -1.0, 1e-15);
  EXPECT_NEAR(b2[2], 1.0, 1e-15);
  // B6(x) = x^6 - 3x^5 + 5/2 x^4 - 1/2 x^2 + 1/42
  const auto b6 = bernoulli_polynomial(6);
  const double expect[] = {1.0 / 42.0, 0.0, -0.5, 0.0, 2.5, -3.0, 1.0};
  ASSERT_EQ(b6.size(), 7u);
  for (int i = 0; i <= 6; ++i) EXPECT_NEAR(b6[i], expect[i], 1e-14) << "coefficient " << i;
}

TEST(Bernoulli, SymmetryAboutOneHalf) {
  // B_m(1 - x) = (-1)^m B_m(x)
  for (int m : {2, 4, 6, 8, 16}) {
    const auto b = bernoulli_polynomial(m);
    for (double x : {0.1, 0.27, 0.4}) EXPECT_NEAR(evaluate_polynomial(b, 1.0 - x), evaluate_polynomial(b, x), 1e-9);
  }
}

TEST(PeriodicPoly, ValueAtZeroIsTwoZeta2) {
  EXPECT_NEAR(periodic_poly_kernel(0.3, 0.3, 1), kPi * kPi / 3.0, 1e-12);
  EXPECT_NEAR(periodic_poly_kernel(0.3, 0.3, 1), 3.289868, 1e-6);
}

TEST(PeriodicPoly, ValueAtHalfIsMinusTwoEta2) {
  EXPECT_NEAR(periodic_poly_kernel(0.0, 0.5, 1), -kPi * kPi / 6.0, 1e-12);
  EXPECT_NEAR(periodic_poly_kernel(0.0, 0.5, 1), -1.644934, 1e-6);
}

TEST(PeriodicPoly, MatchesSeriesAtPointThree) {
  // frac(0.2 - 0.9) = 0.3
  const double series = cosine_series(0.3, 1'000'000, [](long i) { return 1.0L / (static_cast<long double>(i) * i); });
  EXPECT_NEAR(periodic_poly_kernel(0.2, 0.9, 1), series, 1e-9);
}

TEST(PeriodicPoly, UnsupportedBetaIsConfigError) {
  EXPECT_THROW(periodic_poly_kernel(0.1, 0.2, 5), ConfigError);
  EXPECT_THROW(periodic_poly_kernel(0.1, 0.2, 0), ConfigError);
  EXPECT_THROW(gram(Eigen::MatrixXd::Zero(2, 1), PeriodicPolynomial{7}), ConfigError);
}

TEST(PeriodicPoly, DependsOnlyOnFractionalDifference) {
  for (int beta : kSupportedBeta) {
    EXPECT_NEAR(periodic_poly_kernel(0.1, 0.7, beta), periodic_poly_kernel(0.4, 1.0, beta), 1e-12);
    EXPECT_NEAR(periodic_poly_kernel(0.1, 0.7, beta), periodic_poly_kernel(0.7, 0.1, beta), 1e-12);
    EXPECT_NEAR(periodic_poly_kernel(0.25, 0.25, beta), periodic_poly_kernel(0.9, 0.9, beta), 1e-12);
  }
}

// 100 random (x, y, beta) triples against the defining series with 1e6
// terms. For beta = 1 the dropped tail is bounded by sum_{i > M} 2/i^2 < 2/M,
// which is larger than 1e-8; the tolerance adds that bound.
TEST(PeriodicPoly, AgreesWithTruncatedSeries) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kSupportedBeta.size()) - 1);
  const long m = 1'000'000;
  for (int trial = 0; trial < 100; ++trial) {
    const double x = u(rng), y = u(rng);
    const int beta = kSupportedBeta[static_cast<std::size_t>(pick(rng))];
    const double series = cosine_series(frac(x - y), m, [beta](long i) {
      return std::pow(static_cast<long double>(i), -2.0L * beta);
    });
    const double scale = periodic_poly_kernel(0.0, 0.0, beta);
    const double tail = beta == 1 ? 2.0 / static_cast<double>(m) : 0.0;
    EXPECT_NEAR(periodic_poly_kernel(x, y, beta), series, 1e-8 * scale + tail) << "beta=" << beta << " x=" << x << " y=" << y;
  }
}

TEST(PeriodicExp, ClosedFormValues) {
  const double e = std::exp(1.0);
  EXPECT_NEAR(periodic_exp_kernel(0.37, 0.37, 1.0), 2.0 / (e - 1.0), 1e-14);
  EXPECT_NEAR(periodic_exp_kernel(0.37, 0.37, 1.0), 1.163953, 1e-6);
  EXPECT_NEAR(periodic_exp_kernel(0.0, 0.5, 1.0), -2.0 / (e + 1.0), 1e-14);
  EXPECT_NEAR(periodic_exp_kernel(0.0, 0.5, 1.0), -0.537883, 1e-6);
}

TEST(PeriodicExp, MatchesSeries) {
  const double series = cosine_series(frac(0.1 - 0.35), 200, [](long i) { return std::exp(-2.0L * i); });
  EXPECT_NEAR(periodic_exp_kernel(0.1, 0.35, 2.0), series, 1e-12);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0), r(0.2, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double x = u(rng), y = u(rng), rho = r(rng);
    const double s = cosine_series(frac(x - y), 200, [rho](long i) { return std::exp(-static_cast<long double>(rho) * i); });
    EXPECT_NEAR(periodic_exp_kernel(x, y, rho), s, 1e-8 * periodic_exp_kernel(0, 0, rho));
  }
}

TEST(PeriodicExp, RejectsNonPositiveRho) { EXPECT_THROW(periodic_exp_kernel(0, 0, 0.0), ConfigError); }

TEST(Gaussian, Values) {
  Eigen::RowVectorXd v(3);
  v << 0.3, -1.2, 4.0;
  EXPECT_EQ(gaussian_kernel(v, v, 0.7), 1.0);
  const double h = 1.3;
  Eigen::RowVectorXd a(1), b(1);
  a << 0.0;
  b << h * std::sqrt(2.0);
  EXPECT_NEAR(gaussian_kernel(a, b, h), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(gaussian_kernel(a, b, h), 0.367879, 1e-6);

  Eigen::RowVectorXd x = Eigen::RowVectorXd::Random(5), y = Eigen::RowVectorXd::Random(5);
  double d2 = 0;
  for (int i = 0; i < 5; ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
  EXPECT_NEAR(gaussian_kernel(x, y, 0.9), std::exp(-d2 / (2 * 0.81)), 1e-15);
  EXPECT_GT(gaussian_kernel(x, y, 0.9), 0.0);
}

TEST(Gaussian, DimensionMismatch) {
  EXPECT_THROW(gaussian_kernel(Eigen::RowVectorXd::Zero(2), Eigen::RowVectorXd::Zero(3), 1.0), ArgumentError);
  EXPECT_THROW(evaluate(PeriodicPolynomial{1}, Eigen::RowVectorXd::Zero(2), Eigen::RowVectorXd::Zero(2)), ArgumentError);
}

TEST(Gram, SinglePoint) {
  Eigen::MatrixXd x(1, 1);
  x << 0.4;
  const auto k = gram(x, PeriodicPolynomial{2});
  ASSERT_EQ(k.size(), 1);
  EXPECT_DOUBLE_EQ(k.entries(0, 0), periodic_poly_kernel(0.4, 0.4, 2));
  EXPECT_DOUBLE_EQ(k.diag[0], k.entries(0, 0));
}

TEST(Gram, UniformGridIsCirculant) {
  const Index n = 24;
  Eigen::MatrixXd x(n, 1);
  for (Index i = 0; i < n; ++i) x(i, 0) = static_cast<double>(i) / n;
  for (const KernelSpec& spec : {KernelSpec{PeriodicPolynomial{1}}, KernelSpec{PeriodicPolynomial{4}},
                                 KernelSpec{PeriodicExponential{0.5}}}) {
    const auto k = gram(x, spec);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        EXPECT_NEAR(k.entries(i, j), k.entries(0, ((j - i) % n + n) % n), 1e-12 * k.entries(0, 0));
  }
}

TEST(Gram, SymmetricAndPsd) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Index n : {1, 7, 64, 256, 512}) {
    Eigen::MatrixXd x(n, 1);
    for (Index i = 0; i < n; ++i) x(i, 0) = u(rng);
    Eigen::MatrixXd g = Eigen::MatrixXd::NullaryExpr(n, 3, [&]() { return u(rng); });
    for (const KernelSpec& spec : {KernelSpec{PeriodicPolynomial{1}}, KernelSpec{PeriodicPolynomial{3}},
                                   KernelSpec{PeriodicExponential{1.0}}, KernelSpec{Gaussian{0.5}}}) {
      const auto k = gram(std::holds_alternative<Gaussian>(spec) ? g : x, spec);
      EXPECT_EQ((k.entries - k.entries.transpose()).cwiseAbs().maxCoeff(), 0.0);
      EXPECT_TRUE(k.diag.isApprox(k.entries.diagonal()));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k.entries, Eigen::EigenvaluesOnly);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8 * es.eigenvalues().maxCoeff()) << describe(spec) << " n=" << n;
    }
  }
}

TEST(Gram, PeriodicDiagonalIsConstant) {
  Eigen::MatrixXd x = (Eigen::MatrixXd::Random(30, 1).array() + 1.0) / 2.0;
  const auto k = gram(x, PeriodicPolynomial{2});
  EXPECT_NEAR(k.diag.maxCoeff() - k.diag.minCoeff(), 0.0, 1e-14);
  EXPECT_NEAR(k.trace() / 30.0, periodic_poly_kernel(0, 0, 2), 1e-13);
}

TEST(MedianBandwidth, DeterministicAndPositive) {
  Eigen::MatrixXd x = nkrr::testing::gaussian_matrix(800, 3, 11);
  const double a = median_bandwidth(x, 5), b = median_bandwidth(x, 5);
  EXPECT_EQ(a, b);
  EXPECT_GT(a, 0.5);
  EXPECT_LT(a, 5.0);
  EXPECT_EQ(median_bandwidth(Eigen::MatrixXd::Zero(4, 2), 1), 1.0);
}
