#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "nkrr/errors.hpp"
#include "nkrr/rng.hpp"

namespace nkrr {

using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Bernoulli polynomials
// ---------------------------------------------------------------------------

/// Degrees for which the periodic polynomial kernel has a closed form here.
inline constexpr std::array<int, 5> kSupportedBeta = {1, 2, 3, 4, 8};

namespace detail {

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Bernoulli numbers B_0..B_max from sum_{k<=m} C(m+1,k) B_k = 0.
inline std::vector<long double> bernoulli_numbers(int max_index) {
  std::vector<long double> b(max_index + 1, 0.0L);
  b[0] = 1.0L;
  for (int m = 1; m <= max_index; ++m) {
    long double acc = 0.0L;
    for (int k = 0; k < m; ++k) acc += static_cast<long double>(binomial(m + 1, k)) * b[k];
    b[m] = -acc / static_cast<long double>(m + 1);
  }
  return b;
}

}  // namespace detail

/// Coefficients (constant term first) of the Bernoulli polynomial B_degree.
inline std::vector<double> bernoulli_polynomial(int degree) {
  auto numbers = detail::bernoulli_numbers(degree);
  std::vector<double> coeffs(degree + 1);
  // B_n(x) = sum_k C(n,k) B_k x^{n-k}
  for (int k = 0; k <= degree; ++k)
    coeffs[degree - k] = static_cast<double>(detail::binomial(degree, k) * numbers[k]);
  return coeffs;
}

inline double evaluate_polynomial(const std::vector<double>& coeffs, double x) {
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
  return acc;
}

namespace detail {

struct PeriodicPolyTable {
  // Per supported beta: coefficients of (-1)^{beta+1} (2 pi)^{2 beta} B_{2 beta} / (2 beta)!
  std::array<std::vector<double>, 9> scaled;

  PeriodicPolyTable() {
    for (int beta : kSupportedBeta) {
      auto c = bernoulli_polynomial(2 * beta);
      double factorial = 1.0;
      for (int i = 2; i <= 2 * beta; ++i) factorial *= i;
      const double sign = (beta % 2 == 1) ? 1.0 : -1.0;
      const double scale = sign * std::pow(2.0 * std::numbers::pi, 2 * beta) / factorial;
      for (auto& v : c) v *= scale;
      scaled[beta] = std::move(c);
    }
  }
};

inline const PeriodicPolyTable& periodic_poly_table() {
  static const PeriodicPolyTable table;
  return table;
}

inline bool beta_supported(int beta) {
  return std::find(kSupportedBeta.begin(), kSupportedBeta.end(), beta) != kSupportedBeta.end();
}

}  // namespace detail

/// Fractional part in [0, 1), also for negative arguments.
inline double frac(double v) {
  double f = v - std::floor(v);
  return f >= 1.0 ? 0.0 : f;
}

// ---------------------------------------------------------------------------
// Kernel functions
// ---------------------------------------------------------------------------

/// k(x,y) = amplitude * sum_{i>=1} 2 i^{-2 beta} cos(2 i pi (x - y)), evaluated
/// through the Bernoulli polynomial B_{2 beta}.
inline double periodic_poly_kernel(double x, double y, int beta, double amplitude = 1.0) {
  if (!detail::beta_supported(beta))
    throw ConfigError("periodic polynomial kernel: unsupported beta " + std::to_string(beta) +
                      " (supported: 1, 2, 3, 4, 8)");
  return amplitude * evaluate_polynomial(detail::periodic_poly_table().scaled[beta], frac(x - y));
}

/// k(x,y) = amplitude * sum_{i>=1} 2 e^{-rho i} cos(2 i pi (x - y)).
inline double periodic_exp_kernel(double x, double y, double rho, double amplitude = 1.0) {
  if (!(rho > 0.0)) throw ConfigError("periodic exponential kernel: rho must be > 0");
  const double c = std::cos(2.0 * std::numbers::pi * frac(x - y));
  // Multiply through by e^{-2 rho} so large rho does not overflow.
  const double q = std::exp(-rho);
  return amplitude * 2.0 * q * (c - q) / (1.0 - 2.0 * q * c + q * q);
}

inline double gaussian_kernel(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                              const Eigen::Ref<const Eigen::RowVectorXd>& y, double bandwidth) {
  if (x.size() != y.size()) throw ArgumentError("gaussian kernel: dimension mismatch");
  if (!(bandwidth > 0.0)) throw ConfigError("gaussian kernel: bandwidth must be > 0");
  return std::exp(-(x - y).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

// ---------------------------------------------------------------------------
// Kernel specification
// ---------------------------------------------------------------------------

struct PeriodicPolynomial {
  int beta = 1;
  double amplitude = 1.0;
};

struct PeriodicExponential {
  double rho = 1.0;
  double amplitude = 1.0;
};

struct Gaussian {
  double bandwidth = 1.0;
};

using KernelSpec = std::variant<PeriodicPolynomial, PeriodicExponential, Gaussian>;

inline void validate(const KernelSpec& spec) {
  std::visit(
      [](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, PeriodicPolynomial>) {
          if (!detail::beta_supported(k.beta))
            throw ConfigError("kernel: beta must be one of 1, 2, 3, 4, 8");
          if (!(k.amplitude > 0.0)) throw ConfigError("kernel: amplitude must be > 0");
        } else if constexpr (std::is_same_v<T, PeriodicExponential>) {
          if (!(k.rho > 0.0)) throw ConfigError("kernel: rho must be > 0");
          if (!(k.amplitude > 0.0)) throw ConfigError("kernel: amplitude must be > 0");
        } else {
          if (!(k.bandwidth > 0.0)) throw ConfigError("kernel: bandwidth must be > 0");
        }
      },
      spec);
}

inline bool is_periodic(const KernelSpec& spec) { return !std::holds_alternative<Gaussian>(spec); }

inline std::string describe(const KernelSpec& spec) {
  return std::visit(
      [](const auto& k) -> std::string {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, PeriodicPolynomial>)
          return "periodic-polynomial(beta=" + std::to_string(k.beta) + ")";
        else if constexpr (std::is_same_v<T, PeriodicExponential>)
          return "periodic-exponential(rho=" + std::to_string(k.rho) + ")";
        else
          return "gaussian(bandwidth=" + std::to_string(k.bandwidth) + ")";
      },
      spec);
}

/// Kernel value between two points (rows of a design matrix). Periodic
/// kernels require one-dimensional points.
inline double evaluate(const KernelSpec& spec, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                       const Eigen::Ref<const Eigen::RowVectorXd>& y) {
  return std::visit(
      [&](const auto& k) -> double {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          return gaussian_kernel(x, y, k.bandwidth);
        } else {
          if (x.size() != 1 || y.size() != 1)
            throw ArgumentError("periodic kernels are defined on [0,1]; points must be scalar");
          if constexpr (std::is_same_v<T, PeriodicPolynomial>)
            return periodic_poly_kernel(x[0], y[0], k.beta, k.amplitude);
          else
            return periodic_exp_kernel(x[0], y[0], k.rho, k.amplitude);
        }
      },
      spec);
}

// ---------------------------------------------------------------------------
// Gram matrices
// ---------------------------------------------------------------------------

/// Symmetric n x n kernel matrix with its diagonal cached.
struct KernelMatrix {
  Eigen::MatrixXd entries;
  Eigen::VectorXd diag;

  KernelMatrix() = default;
  explicit KernelMatrix(Eigen::MatrixXd k) : entries(std::move(k)), diag(entries.diagonal()) {
    if (entries.rows() != entries.cols()) throw ArgumentError("kernel matrix must be square");
  }

  Index size() const { return entries.rows(); }
  double trace() const { return diag.sum(); }
  /// R^2 = ||diag(K)||_inf
  double max_diag() const { return diag.size() ? diag.maxCoeff() : 0.0; }
};

/// Kernel values k(points_i, x) for all rows i.
inline Eigen::VectorXd kernel_vector(const Eigen::MatrixXd& points, const KernelSpec& spec,
                                     const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  Eigen::VectorXd out(points.rows());
  for (Index i = 0; i < points.rows(); ++i) out[i] = evaluate(spec, points.row(i), x);
  return out;
}

inline KernelMatrix gram(const Eigen::MatrixXd& points, const KernelSpec& spec) {
  validate(spec);
  const Index n = points.rows();
  if (n < 1) throw ArgumentError("gram: need at least one point");
  Eigen::MatrixXd k(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = j; i < n; ++i) {
      const double v = evaluate(spec, points.row(i), points.row(j));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return KernelMatrix(std::move(k));
}

/// Median pairwise Euclidean distance over a seeded subsample of at most
/// `subsample` rows. Falls back to 1 when all sampled points coincide.
inline double median_bandwidth(const Eigen::MatrixXd& points, std::uint64_t seed,
                               Index subsample = 500) {
  const Index n = points.rows();
  std::vector<Index> rows(n);
  std::iota(rows.begin(), rows.end(), Index{0});
  if (n > subsample) {
    Rng rng(seed);
    for (Index i = 0; i < subsample; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(rows[i], rows[pick(rng)]);
    }
    rows.resize(subsample);
  }
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b)
      dist.push_back((points.row(rows[a]) - points.row(rows[b])).norm());
  if (dist.empty()) return 1.0;
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  return *mid > 0.0 ? *mid : 1.0;
}

}  // namespace nkrr
