#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "nkrr/regression.hpp"
#include "nkrr/spectral.hpp"
#include "nkrr/synthetic.hpp"
#include "test_util.hpp"

using namespace nkrr;
using nkrr::testing::gaussian_matrix;
using nkrr::testing::random_psd;

namespace {

// L (L + n lambda I)^{-1} through a dense inverse.
Eigen::MatrixXd smoother(const Eigen::MatrixXd& l, double lambda) {
  const Index n = l.rows();
  Eigen::MatrixXd a = l + static_cast<double>(n) * lambda * Eigen::MatrixXd::Identity(n, n);
  return l * a.inverse();
}

Eigen::MatrixXd unit_grid(Index n) {
  Eigen::MatrixXd x(n, 1);
  for (Index i = 0; i < n; ++i) x(i, 0) = static_cast<double>(i) / n;
  return x;
}

double max_abs(const Eigen::VectorXd& v) { return v.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(KrrExact, IdentityKernel) {
  const Index n = 8;
  const double lambda = 0.25;
  const Eigen::VectorXd y = gaussian_matrix(n, 1, 1).col(0);
  const auto r = krr_exact(KernelMatrix(Eigen::MatrixXd::Identity(n, n)), y, lambda);
  // zhat = y / (1 + n lambda) = y / 3
  EXPECT_LT(max_abs(r.zhat - y / 3.0), 1e-14);
}

TEST(KrrExact, LargeLambdaShrinksToZero) {
  const Eigen::MatrixXd k = random_psd(20, 20, 2);
  const Eigen::VectorXd y = gaussian_matrix(20, 1, 3).col(0);
  const auto r = krr_exact(KernelMatrix(k), y, 1e8);
  EXPECT_LT(r.zhat.norm(), 1e-5 * y.norm());
}

TEST(KrrExact, MatchesDenseInverse) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Eigen::MatrixXd k = random_psd(30, 10 + s * 10, s);
    const Eigen::VectorXd y = gaussian_matrix(30, 1, s + 10).col(0);
    for (double lambda : {1e-3, 0.1, 10.0}) {
      const auto r = krr_exact(KernelMatrix(k), y, lambda);
      const Eigen::VectorXd oracle = smoother(k, lambda) * y;
      EXPECT_LT(max_abs(r.zhat - oracle), 1e-9 * std::max(1.0, max_abs(oracle)));
    }
  }
}

TEST(KrrExact, RejectsBadInput) {
  const KernelMatrix k(Eigen::MatrixXd::Identity(3, 3));
  EXPECT_THROW(krr_exact(k, Eigen::VectorXd::Ones(3), 0.0), ArgumentError);
  EXPECT_THROW(krr_exact(k, Eigen::VectorXd::Ones(4), 1.0), ArgumentError);
}

TEST(KrrLowrank, FullRankMatchesExact) {
  const Eigen::MatrixXd k = random_psd(25, 40, 4);
  const KernelMatrix km(k);
  const Eigen::VectorXd y = gaussian_matrix(25, 1, 5).col(0);
  const auto f = pivoted_ichol(km, PivotStop{25, std::nullopt});
  for (double lambda : {1e-4, 1e-2, 1.0}) {
    const auto a = krr_lowrank(f, y, lambda), b = krr_exact(km, y, lambda);
    EXPECT_LT(max_abs(a.zhat - b.zhat), 1e-8 * max_abs(b.zhat));
  }
}

TEST(KrrLowrank, RankOneScalarFormula) {
  // phi = v: zhat = v (v.y) / (|v|^2 + n lambda)
  Eigen::MatrixXd k(4, 4);
  Eigen::VectorXd v(4);
  v << 1, 2, -1, 0.5;
  k = v * v.transpose() + Eigen::MatrixXd::Identity(4, 4);
  const auto f = nystrom(KernelMatrix(k), make_selection({1}, 4));
  Eigen::VectorXd y(4);
  y << 0.3, -1, 2, 0.7;
  const double lambda = 0.1;
  const Eigen::VectorXd u = f.phi.col(0);
  const Eigen::VectorXd expect = u * (u.dot(y) / (u.squaredNorm() + 4 * lambda));
  EXPECT_LT(max_abs(krr_lowrank(f, y, lambda).zhat - expect), 1e-14);
}

TEST(KrrLowrank, SmootherIdentity) {
  const KernelMatrix k = gram(unit_grid(60), PeriodicPolynomial{1});
  const Eigen::VectorXd y = gaussian_matrix(60, 1, 6).col(0);
  for (Index p : {3, 10, 30}) {
    for (const auto& f : {nystrom(k, sample_columns(60, p, 1)), pivoted_ichol(k, PivotStop{p, std::nullopt})}) {
      for (double lambda : {1e-5, 1e-3, 1e-1}) {
        const Eigen::VectorXd oracle = smoother(f.approximation(), lambda) * y;
        EXPECT_LT(max_abs(krr_lowrank(f, y, lambda).zhat - oracle), 1e-8 * std::max(1.0, max_abs(oracle)));
      }
    }
  }
}

TEST(KrrLowrank, HighSmoothnessTinyLambdaStaysFinite) {
  const Index n = 64;
  const auto prob = grid_problem(n, {polynomial_decay(8), polynomial_decay(16)}, 1.0);
  const auto f = pivoted_ichol(prob.k, PivotStop{n, std::nullopt});
  const auto r = krr_lowrank(f, prob.z, 1e-14);
  EXPECT_TRUE(r.zhat.allFinite());
  EXPECT_LT((r.zhat - prob.z).norm(), 1e-3 * prob.z.norm());
}

TEST(Newton, SquareLossMatchesClosedForm) {
  const KernelMatrix k = gram(unit_grid(50), PeriodicPolynomial{2});
  const Eigen::VectorXd y = gaussian_matrix(50, 1, 7).col(0);
  const auto f = pivoted_ichol(k, PivotStop{12, std::nullopt});
  for (double lambda : {1e-6, 1e-3, 1.0}) {
    NewtonReport rep;
    const auto fit = newton_solve(f, y, lambda, Loss::square, &rep);
    const auto closed = krr_lowrank(f, y, lambda);
    EXPECT_LT(max_abs(fit.coef - closed.fit.coef), 1e-8 * std::max(1.0, max_abs(closed.fit.coef)));
    // Quadratic objective: one Newton step lands on the optimum.
    EXPECT_LE(rep.iterations, 2);
  }
}

TEST(Newton, LogisticShrinksWithLambda) {
  const Index n = 80;
  const Eigen::MatrixXd x = unit_grid(n);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) y[i] = std::sin(2 * std::numbers::pi * x(i, 0)) > 0 ? 1.0 : -1.0;
  const auto f = pivoted_ichol(gram(x, PeriodicPolynomial{1}), PivotStop{20, std::nullopt});
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    NewtonReport rep;
    const auto fit = newton_solve(f, y, lambda, Loss::logistic, &rep);
    EXPECT_LT(rep.gradient_norm, 1e-8);
    EXPECT_LT(fit.coef.norm(), prev);
    prev = fit.coef.norm();
  }
}

TEST(Newton, LogisticSeparableToyClassifiesCorrectly) {
  Eigen::MatrixXd phi(4, 1);
  phi << -2, -1, 1, 2;
  LowRankFactor f;
  f.phi = phi;
  f.selection = make_selection({3}, 4);
  f.whitener = Eigen::MatrixXd::Identity(1, 1);
  Eigen::VectorXd y(4);
  y << -1, -1, 1, 1;
  const auto fit = newton_solve(f, y, 1e-3, Loss::logistic);
  EXPECT_GT(fit.coef[0], 0.0);
  EXPECT_TRUE(((phi * fit.coef).array() * y.array() > 0).all());
  EXPECT_THROW(newton_solve(f, Eigen::VectorXd::Ones(4) * 0.5, 1e-3, Loss::logistic), ArgumentError);
}

TEST(Predict, ExactReproducesTrainingFit) {
  const Eigen::MatrixXd x = unit_grid(30);
  const KernelSpec spec = PeriodicExponential{1.0};
  const Eigen::VectorXd y = gaussian_matrix(30, 1, 9).col(0);
  const auto r = krr_exact(gram(x, spec), y, 1e-3);
  EXPECT_LT(max_abs(predict(r.fit, x, {&x, spec}) - r.zhat), 1e-12);
}

TEST(Predict, LowRankReproducesTrainingFit) {
  const Eigen::MatrixXd x = unit_grid(40);
  const KernelSpec spec = PeriodicPolynomial{2};
  const KernelMatrix k = gram(x, spec);
  const Eigen::VectorXd y = gaussian_matrix(40, 1, 11).col(0);
  for (const auto& f : {nystrom(k, sample_columns(40, 7, 2)), pivoted_ichol(k, PivotStop{7, std::nullopt})}) {
    const auto r = krr_lowrank(f, y, 1e-3);
    EXPECT_LT(max_abs(predict(r.fit, x, {&x, spec}) - r.zhat), 1e-9);
  }
}

TEST(Predict, FullRankLowRankMatchesExactOffGrid) {
  const Eigen::MatrixXd x = unit_grid(20);
  const KernelSpec spec = PeriodicPolynomial{1};
  const KernelMatrix k = gram(x, spec);
  const Eigen::VectorXd y = gaussian_matrix(20, 1, 12).col(0);
  Eigen::MatrixXd t(3, 1);
  t << 0.013, 0.5071, 0.9;
  const auto a = krr_exact(k, y, 1e-2);
  const auto b = krr_lowrank(pivoted_ichol(k, PivotStop{20, std::nullopt}), y, 1e-2);
  EXPECT_LT(max_abs(predict(a.fit, t, {&x, spec}) - predict(b.fit, t, {&x, spec})), 1e-8);
}

TEST(FitCsv, RoundTrip) {
  const KernelMatrix k = gram(unit_grid(16), PeriodicPolynomial{1});
  const Eigen::VectorXd y = gaussian_matrix(16, 1, 13).col(0);
  const auto r = krr_lowrank(pivoted_ichol(k, PivotStop{5, std::nullopt}), y, 0.01);
  std::stringstream ss;
  write_fit_csv(ss, r.fit, {"note=x"});
  std::vector<Index> cols;
  const auto back = read_fit_csv(ss, &cols);
  EXPECT_EQ(back.mode, FitMode::lowrank);
  EXPECT_EQ(back.lambda, 0.01);
  EXPECT_EQ(back.coef, r.fit.coef);
  EXPECT_EQ(cols, r.fit.factor->selection.indices);
}
