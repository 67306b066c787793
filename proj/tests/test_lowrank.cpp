#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "nkrr/lowrank.hpp"
#include "nkrr/synthetic.hpp"
#include "test_util.hpp"

using namespace nkrr;
using nkrr::testing::random_psd;

namespace {

// K(V,I) K(I,I)^+ K(I,V) computed directly, with a pseudo-inverse from a
// complete orthogonal decomposition (independent of the factor path).
Eigen::MatrixXd direct_nystrom(const Eigen::MatrixXd& k, const std::vector<Index>& idx) {
  const auto p = static_cast<Index>(idx.size());
  Eigen::MatrixXd c(k.rows(), p), w(p, p);
  for (Index j = 0; j < p; ++j) {
    c.col(j) = k.col(idx[j]);
    for (Index i = 0; i < p; ++i) w(i, j) = k(idx[i], idx[j]);
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(w);
  cod.setThreshold(1e-12);
  return c * cod.pseudoInverse() * c.transpose();
}

double rel_fro(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

KernelMatrix grid_kernel(Index n, int beta) {
  Eigen::MatrixXd x(n, 1);
  for (Index i = 0; i < n; ++i) x(i, 0) = static_cast<double>(i) / n;
  return gram(x, PeriodicPolynomial{beta});
}

}  // namespace

TEST(SampleColumns, FullSampleIsPermutation) {
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    auto s = sample_columns(5, 5, seed);
    std::set<Index> got(s.indices.begin(), s.indices.end());
    EXPECT_EQ(got, (std::set<Index>{0, 1, 2, 3, 4}));
  }
}

TEST(SampleColumns, Deterministic) {
  EXPECT_EQ(sample_columns(100, 17, 5).indices, sample_columns(100, 17, 5).indices);
  EXPECT_NE(sample_columns(100, 17, 5).indices, sample_columns(100, 17, 6).indices);
}

TEST(SampleColumns, NestedPrefixes) {
  const auto a = sample_columns(50, 10, 3), b = sample_columns(50, 30, 3);
  EXPECT_TRUE(std::equal(a.indices.begin(), a.indices.end(), b.indices.begin()));
}

TEST(SampleColumns, DistinctAndInRange) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = sample_columns(40, 25, seed);
    EXPECT_NO_THROW(s.validate());
  }
}

TEST(SampleColumns, InvalidSizes) {
  EXPECT_THROW(sample_columns(5, 6, 1), ArgumentError);
  EXPECT_THROW(sample_columns(5, 0, 1), ArgumentError);
}

// 1e5 single-column draws over 1000 indices: chi-square statistic within
// 4 standard deviations of its mean (df = 999, sd = sqrt(2 df)).
TEST(SampleColumns, UniformSingleDraws) {
  const Index n = 1000;
  const int draws = 100000;
  std::vector<int> count(n, 0);
  for (int d = 0; d < draws; ++d) ++count[static_cast<std::size_t>(sample_columns(n, 1, derive_seed(77, d)).indices[0])];
  const double expect = static_cast<double>(draws) / n;
  double chi2 = 0;
  for (int c : count) chi2 += (c - expect) * (c - expect) / expect;
  const double df = n - 1;
  EXPECT_LT(std::abs(chi2 - df), 4.0 * std::sqrt(2.0 * df));
}

TEST(Nystrom, AllColumnsReproducesK) {
  const Eigen::MatrixXd k = random_psd(12, 20, 1);
  const auto f = nystrom(KernelMatrix(k), make_selection({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, 12));
  EXPECT_LT(rel_fro(f.approximation(), k), 1e-10);
}

TEST(Nystrom, TwoByTwoExample) {
  Eigen::MatrixXd k(2, 2);
  k << 2, 1, 1, 2;
  const auto f = nystrom(KernelMatrix(k), make_selection({0}, 2));
  Eigen::MatrixXd l(2, 2);
  l << 2, 1, 1, 0.5;
  EXPECT_LT((f.approximation() - l).cwiseAbs().maxCoeff(), 1e-14);
  Eigen::MatrixXd r(2, 2);
  r << 0, 0, 0, 1.5;
  EXPECT_LT((k - f.approximation() - r).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Nystrom, RankOneIsExact) {
  Eigen::VectorXd v(6);
  v << 1, -2, 0.5, 3, 0, 1.5;
  const Eigen::MatrixXd k = v * v.transpose();
  for (Index i : {0, 1, 3, 5}) {
    const auto f = nystrom(KernelMatrix(k), make_selection({i}, 6));
    EXPECT_LT(rel_fro(f.approximation(), k), 1e-12);
  }
  // Rank-deficient K(I,I) (two columns of a rank-one matrix).
  const auto f = nystrom(KernelMatrix(k), make_selection({0, 3}, 6));
  EXPECT_LT(rel_fro(f.approximation(), k), 1e-12);
}

TEST(Nystrom, MatchesDirectFormula) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Index n = 10 + static_cast<Index>(s) * 2;
    const Eigen::MatrixXd k = random_psd(n, n / 2 + 3, s);
    const auto sel = sample_columns(n, n / 3 + 1, s);
    const auto f = nystrom(KernelMatrix(k), sel);
    EXPECT_LT(rel_fro(f.approximation(), direct_nystrom(k, sel.indices)), 1e-8);
  }
}

TEST(Nystrom, ColumnReproductionAndApproximationFromBelow) {
  const KernelMatrix k = grid_kernel(80, 1);
  for (Index p : {1, 5, 20, 80}) {
    const auto sel = sample_columns(80, p, 4);
    const auto f = nystrom(k, sel);
    const Eigen::MatrixXd l = f.approximation();
    const double kmax = k.entries.cwiseAbs().maxCoeff();
    for (Index j : sel.indices) EXPECT_LT((l.col(j) - k.entries.col(j)).cwiseAbs().maxCoeff(), 1e-8 * kmax);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k.entries - l, Eigen::EigenvaluesOnly), ek(k.entries, Eigen::EigenvaluesOnly);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8 * ek.eigenvalues().maxCoeff());
  }
}

TEST(Nystrom, TraceErrorMonotoneInNestedSelections) {
  const KernelMatrix k = grid_kernel(64, 2);
  double prev = k.trace();
  for (Index p = 1; p <= 64; p += 3) {
    const double r = trace_residual(k, nystrom(k, sample_columns(64, p, 8)));
    EXPECT_LE(r, prev + 1e-8 * k.trace());
    prev = r;
  }
}

TEST(Nystrom, DeterministicBitIdentical) {
  const KernelMatrix k = grid_kernel(50, 1);
  const auto a = nystrom(k, sample_columns(50, 12, 3)), b = nystrom(k, sample_columns(50, 12, 3));
  EXPECT_EQ((a.phi - b.phi).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PivotedCholesky, FullRankComplete) {
  const Eigen::MatrixXd k = random_psd(15, 30, 2);
  const KernelMatrix km(k);
  const auto f = pivoted_ichol(km, PivotStop{15, std::nullopt});
  EXPECT_LT(rel_fro(f.approximation(), k), 1e-10);
  EXPECT_LE(f.trace_residual_trail[f.rank() - 1], 1e-8 * km.trace());
}

TEST(PivotedCholesky, FirstPivotIsArgmaxDiagonalAndInterpolates) {
  Eigen::MatrixXd k = random_psd(10, 10, 5);
  const KernelMatrix km(k);
  Index arg;
  km.diag.maxCoeff(&arg);
  PivotedCholesky<DenseColumns> chol(DenseColumns{&km}, km.diag);
  ASSERT_TRUE(chol.step());
  EXPECT_EQ(chol.pivots()[0], arg);
  const auto f = chol.factor();
  EXPECT_NEAR(f.approximation()(arg, arg), k(arg, arg), 1e-12 * k(arg, arg));
}

TEST(PivotedCholesky, TiesGoToSmallestIndex) {
  const KernelMatrix k = grid_kernel(16, 1);  // constant diagonal
  const auto f = pivoted_ichol(k, PivotStop{1, std::nullopt});
  EXPECT_EQ(f.selection.indices[0], 0);
}

TEST(PivotedCholesky, EqualsNystromOnOwnPivots) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Index n = 30;
    const Eigen::MatrixXd k = random_psd(n, 12 + static_cast<Index>(s), s + 100);
    const KernelMatrix km(k);
    for (Index p : {1, 4, 9}) {
      const auto f = pivoted_ichol(km, PivotStop{p, std::nullopt});
      EXPECT_LT(rel_fro(f.approximation(), nystrom(km, f.selection).approximation()), 1e-8);
      EXPECT_LT(rel_fro(f.approximation(), direct_nystrom(k, f.selection.indices)), 1e-8);
    }
  }
}

TEST(PivotedCholesky, TrailIsExactAndNonIncreasing) {
  const KernelMatrix k = grid_kernel(128, 1);
  const auto f = pivoted_ichol(k, PivotStop{60, std::nullopt});
  for (Index r = 0; r < f.rank(); ++r) {
    if (r > 0) EXPECT_LE(f.trace_residual_trail[r], f.trace_residual_trail[r - 1]);
    EXPECT_GE(f.trace_residual_trail[r], 0.0);
    // independently recompute tr(K - L_r) from the factor prefix
    const Eigen::MatrixXd phi = f.phi.leftCols(r + 1);
    const double direct = (k.entries - phi * phi.transpose()).trace();
    EXPECT_NEAR(f.trace_residual_trail[r], direct, 1e-9 * k.trace());
  }
}

TEST(PivotedCholesky, TraceToleranceStop) {
  const KernelMatrix k = grid_kernel(100, 1);
  const double tol = 0.01 * k.trace();
  const auto f = pivoted_ichol(k, PivotStop{std::nullopt, tol});
  EXPECT_LE(f.trace_residual_trail[f.rank() - 1], tol);
  EXPECT_GT(f.trace_residual_trail[f.rank() - 2], tol);
}

TEST(PivotedCholesky, LowRankInputStopsWhenExhausted) {
  const Eigen::MatrixXd k = random_psd(20, 3, 9);
  const auto f = pivoted_ichol(KernelMatrix(k), PivotStop{20, std::nullopt});
  EXPECT_EQ(f.rank(), 3);
  EXPECT_LT(rel_fro(f.approximation(), k), 1e-10);
}

TEST(PivotedCholesky, NonPsdInputBreaksDown) {
  Eigen::MatrixXd k(2, 2);
  k << 1, 2, 2, 1;  // eigenvalues 3, -1
  EXPECT_THROW(pivoted_ichol(KernelMatrix(k), PivotStop{2, std::nullopt}), NumericalError);
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(2, 2);
  d(1, 1) = -1;
  EXPECT_THROW(pivoted_ichol(KernelMatrix(d), PivotStop{2, std::nullopt}), NumericalError);
}

TEST(PivotedCholesky, NonFiniteInputIsNumericalFailure) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Identity(3, 3);
  k(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(pivoted_ichol(KernelMatrix(k), PivotStop{2, std::nullopt}), NumericalError);
  k(1, 1) = 1.0;
  k(2, 0) = k(0, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(pivoted_ichol(KernelMatrix(k), PivotStop{2, std::nullopt}), NumericalError);
}

TEST(PivotedCholesky, OracleNeverNeedsDenseMatrix) {
  Eigen::MatrixXd x(200, 1);
  for (Index i = 0; i < 200; ++i) x(i, 0) = (i * 37 % 200) / 200.0;
  int calls = 0;
  auto oracle = [&](Index j) {
    ++calls;
    return kernel_vector(x, PeriodicPolynomial{2}, x.row(j));
  };
  Eigen::VectorXd diag = Eigen::VectorXd::Constant(200, periodic_poly_kernel(0, 0, 2));
  const auto f = pivoted_ichol(oracle, diag, PivotStop{15, std::nullopt});
  EXPECT_EQ(calls, 15);
  const auto g = pivoted_ichol(gram(x, PeriodicPolynomial{2}), PivotStop{15, std::nullopt});
  EXPECT_EQ(f.selection.indices, g.selection.indices);
  EXPECT_LT((f.phi - g.phi).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FeatureMap, InnerProductsReproduceL) {
  Eigen::MatrixXd x(40, 1);
  for (Index i = 0; i < 40; ++i) x(i, 0) = std::fmod(0.618 * i, 1.0);
  const KernelSpec spec = PeriodicPolynomial{1};
  const KernelMatrix k = gram(x, spec);
  for (const auto& f : {nystrom(k, sample_columns(40, 9, 2)), pivoted_ichol(k, PivotStop{9, std::nullopt})}) {
    const Eigen::MatrixXd feats = feature_matrix(x, spec, f, x);
    EXPECT_LT((feats * feats.transpose() - f.approximation()).cwiseAbs().maxCoeff(), 1e-8 * k.max_diag());
    for (Index i : f.selection.indices) EXPECT_NEAR(feats.row(i).squaredNorm(), k.diag[i], 1e-8 * k.diag[i]);
  }
}

TEST(FeatureMap, SingleColumnIsScaledKernel) {
  Eigen::MatrixXd x(10, 1);
  for (Index i = 0; i < 10; ++i) x(i, 0) = i / 10.0;
  const KernelSpec spec = PeriodicExponential{0.8};
  const auto f = nystrom(gram(x, spec), make_selection({3}, 10));
  Eigen::RowVectorXd t(1);
  t << 0.123;
  const Eigen::VectorXd phi = feature_map(x, spec, f, t);
  ASSERT_EQ(phi.size(), 1);
  EXPECT_NEAR(phi[0], periodic_exp_kernel(0.3, 0.123, 0.8) / std::sqrt(periodic_exp_kernel(0, 0, 0.8)), 1e-12);
}

TEST(ApproxError, ExactFactorHasZeroError) {
  const Eigen::MatrixXd k = random_psd(10, 20, 4);
  const KernelMatrix km(k);
  const auto f = nystrom(km, sample_columns(10, 10, 1));
  for (auto norm : {MatrixNorm::trace, MatrixNorm::operator_norm, MatrixNorm::frobenius})
    EXPECT_LT(approx_error(km, f, norm), 1e-9 * k.norm());
}

TEST(ApproxError, TraceNormMatchesPivotTrailAndDominatesOperatorNorm) {
  const KernelMatrix k = grid_kernel(64, 1);
  for (Index p : {2, 8, 20}) {
    const auto f = pivoted_ichol(k, PivotStop{p, std::nullopt});
    const double tr = approx_error(k, f, MatrixNorm::trace);
    EXPECT_NEAR(tr, f.trace_residual_trail[p - 1], 1e-8 * k.trace());
    EXPECT_LE(approx_error(k, f, MatrixNorm::operator_norm), tr + 1e-12);
    const auto g = nystrom(k, sample_columns(64, p, 3));
    EXPECT_LE(approx_error(k, g, MatrixNorm::operator_norm), approx_error(k, g, MatrixNorm::trace) + 1e-12);
  }
}

TEST(Serialization, CsvRoundTrip) {
  const KernelMatrix k = grid_kernel(20, 2);
  const auto f = pivoted_ichol(k, PivotStop{5, std::nullopt});
  std::stringstream ss;
  write_factor_csv(ss, f);
  const auto g = read_factor_csv(ss);
  EXPECT_EQ(g.selection.indices, f.selection.indices);
  EXPECT_EQ(g.selection.method, SelectionMethod::greedy_pivoted);
  EXPECT_EQ((g.phi - f.phi).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Serialization, BinaryRoundTrip) {
  const KernelMatrix k = grid_kernel(20, 2);
  const auto f = nystrom(k, sample_columns(20, 6, 3));
  std::stringstream ss;
  write_factor_binary(ss, f);
  EXPECT_EQ(ss.str().size(), 8u + 16u + 6u * 8u + 20u * 6u * 8u);
  const auto g = read_factor_binary(ss);
  EXPECT_EQ(g.selection.indices, f.selection.indices);
  EXPECT_EQ((g.phi - f.phi).cwiseAbs().maxCoeff(), 0.0);
  std::stringstream bad("NOTMAGIC");
  EXPECT_THROW(read_factor_binary(bad), DataError);
}
