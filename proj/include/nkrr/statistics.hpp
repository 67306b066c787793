#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nkrr/errors.hpp"
#include "nkrr/kernels.hpp"
#include "nkrr/lowrank.hpp"
#include "nkrr/rng.hpp"
#include "nkrr/spectral.hpp"
#include "nkrr/synthetic.hpp"

namespace nkrr {

// ---------------------------------------------------------------------------
// Degrees of freedom
// ---------------------------------------------------------------------------

/// d_max = n ||diag(K (K + n lambda I)^{-1})||_inf, d_trace = tr K (K + n lambda I)^{-1},
/// d_ave = tr K^2 (K + n lambda I)^{-2}. Always d_max >= d_trace >= d_ave.
struct Dof {
  double d_max = 0.0;
  double d_trace = 0.0;
  double d_ave = 0.0;
};

/// Diagonal of K (K + n lambda I)^{-1}.
inline Eigen::VectorXd leverage_scores(const EigenSystem& es, double lambda) {
  const double nl = static_cast<double>(es.values.size()) * lambda;
  const Eigen::VectorXd h = es.values.array() / (es.values.array() + nl);
  return es.vectors.cwiseAbs2() * h;
}

inline Dof dof(const EigenSystem& es, double lambda) {
  if (!(lambda > 0.0)) throw ArgumentError("dof: lambda must be > 0");
  const Index n = es.values.size();
  SpectralForm s{es.values, Eigen::VectorXd::Zero(n), 0.0, n};
  const DofTraces t = dof_traces(s, lambda);
  return {static_cast<double>(n) * leverage_scores(es, lambda).maxCoeff(), t.d_trace, t.d_ave};
}

inline Dof dof(const KernelMatrix& k, double lambda) { return dof(eigensystem(k.entries), lambda); }

/// Degrees of freedom of a fixed-design problem. The Gram matrix of a grid
/// design is circulant, so all leverage scores are equal and d_max = d_trace.
inline Dof problem_dof(const FixedDesignProblem& p, double lambda) {
  if (p.exact_eigs) {
    const DofTraces t = dof_traces(SpectralForm{*p.exact_eigs, Eigen::VectorXd::Zero(p.n()), 0.0, p.n()}, lambda);
    return {t.d_trace, t.d_trace, t.d_ave};
  }
  return dof(p.k, lambda);
}

/// Closed-form bias and variance of the smoothed estimate M (M + n lambda I)^{-1} y
/// for C = sigma2 I, with M = K or a low-rank L.
inline ErrorTerms bias_variance(const Eigen::MatrixXd& m, const Eigen::VectorXd& z, double sigma2, double lambda) {
  if (m.rows() != z.size()) throw ArgumentError("bias_variance: size mismatch");
  return expected_error(spectral_form(m, z), sigma2, lambda);
}

inline ErrorTerms bias_variance(const LowRankFactor& f, const Eigen::VectorXd& z, double sigma2, double lambda) {
  return expected_error(spectral_form(f, z), sigma2, lambda);
}

struct DofReport {
  double d_max = 0.0;
  double d_trace = 0.0;
  double d_ave = 0.0;
  double bias = 0.0;
  double variance = 0.0;
  double lambda = 0.0;
  Index n = 0;
};

inline DofReport dof_report(const KernelMatrix& k, const Eigen::VectorXd& z, double sigma2, double lambda) {
  const EigenSystem es = eigensystem(k.entries);
  const Dof d = dof(es, lambda);
  const ErrorTerms e = expected_error(spectral_form(es, z), sigma2, lambda);
  return {d.d_max, d.d_trace, d.d_ave, e.bias, e.variance, lambda, k.size()};
}

// ---------------------------------------------------------------------------
// Rank bound and its Monte-Carlo check
// ---------------------------------------------------------------------------

enum class BoundStatus { ok, vacuous };

struct RankBound {
  BoundStatus status = BoundStatus::ok;
  double value = 0.0;  // (32 d / delta + 2) log(n R^2 / (delta lambda)) before rounding up
  Index rank = 0;      // ceil(value); may exceed n
};

/// Sufficient rank p >= (32 d/delta + 2) log(n R^2/(delta lambda)). Reports
/// BoundStatus::vacuous when n R^2 <= delta lambda.
inline RankBound theorem_rank_bound(double d_max, double delta, Index n, double r2, double lambda) {
  if (!(delta > 0.0 && delta < 1.0)) throw ArgumentError("theorem_rank_bound: delta must be in (0,1)");
  if (!(lambda > 0.0)) throw ArgumentError("theorem_rank_bound: lambda must be > 0");
  if (d_max < 0.0) throw ArgumentError("theorem_rank_bound: d must be >= 0");
  const double ratio = static_cast<double>(n) * r2 / (delta * lambda);
  if (!(ratio > 1.0)) return {BoundStatus::vacuous, 0.0, 0};
  const double value = (32.0 * d_max / delta + 2.0) * std::log(ratio);
  return {BoundStatus::ok, value, static_cast<Index>(std::ceil(value))};
}

struct TheoremCheck {
  double mean_ratio = 0.0;
  bool holds = false;
  double bound = 0.0;              // 1 + 4 delta
  double high_prob_threshold = 0.0;  // (1 - delta/2)^{-2}
  double exceed_fraction = 0.0;    // fraction of draws with ratio >= threshold
  double high_prob_bound = 0.0;    // min(1, n exp(-p / (32 d/delta + 2)))
  double d_max = 0.0;
  double error_full = 0.0;
  std::vector<double> ratios;
};

namespace detail {
inline double safe_ratio(double num, double den) {
  if (den > 0.0) return num / den;
  return num > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
}
}  // namespace detail

/// Expected in-sample error of L_I over `trials` uniform column draws,
/// relative to the error of K. Errors are exact fixed-design expectations.
inline TheoremCheck verify_theorem(const FixedDesignProblem& prob, double lambda, double delta, Index p, Index trials,
                                   std::uint64_t seed) {
  if (!(delta > 0.0 && delta < 1.0)) throw ArgumentError("verify_theorem: delta must be in (0,1)");
  if (p < 1 || p > prob.n()) throw ArgumentError("verify_theorem: need 1 <= p <= n");
  if (trials < 1) throw ArgumentError("verify_theorem: trials must be >= 1");
  TheoremCheck out;
  out.error_full = expected_error(full_spectral_form(prob), prob.sigma2, lambda).total();
  out.d_max = problem_dof(prob, lambda).d_max;
  out.bound = 1.0 + 4.0 * delta;
  out.high_prob_threshold = 1.0 / ((1.0 - delta / 2.0) * (1.0 - delta / 2.0));
  out.high_prob_bound =
      std::min(1.0, static_cast<double>(prob.n()) * std::exp(-static_cast<double>(p) / (32.0 * out.d_max / delta + 2.0)));
  Index exceed = 0;
  for (Index t = 0; t < trials; ++t) {
    double ratio = 1.0;  // I = V gives L = K exactly
    if (p < prob.n()) {
      const auto sel = sample_columns(prob.n(), p, derive_seed(seed, static_cast<std::uint64_t>(t)));
      const double e = expected_error(spectral_form(nystrom(prob.k, sel), prob.z), prob.sigma2, lambda).total();
      ratio = detail::safe_ratio(e, out.error_full);
    }
    out.ratios.push_back(ratio);
    if (ratio >= out.high_prob_threshold) ++exceed;
  }
  double sum = 0.0;
  for (double r : out.ratios) sum += r;
  out.mean_ratio = sum / static_cast<double>(trials);
  out.holds = out.mean_ratio <= out.bound;
  out.exceed_fraction = static_cast<double>(exceed) / static_cast<double>(trials);
  return out;
}

// ---------------------------------------------------------------------------
// Subsampled covariance tail
// ---------------------------------------------------------------------------

struct TailRow {
  double t = 0.0;
  double empirical_prob = 0.0;
  double std_error = 0.0;
  double bound = 0.0;
};

struct TailCheck {
  std::vector<TailRow> rows;
  double lambda_max = 0.0;  // lambda_max(Psi^T Psi / n)
  double r2 = 0.0;          // max squared row norm
  Index p = 0;
  Index trials = 0;
};

/// r exp(-p t^2/2 / (lambda_max (R^2 + t/3))), clipped to 1.
inline double lemma_tail_bound(Index r, Index p, double t, double lambda_max, double r2) {
  const double v = static_cast<double>(r) *
                   std::exp(-static_cast<double>(p) * t * t / 2.0 / (lambda_max * (r2 + t / 3.0)));
  return std::min(1.0, v);
}

/// Monte-Carlo estimate of P(lambda_max[Psi^T Psi/n - Psi_I^T Psi_I/p] > t)
/// over uniform p-subsets I, next to the analytic bound.
inline TailCheck verify_lemma_tail(const Eigen::MatrixXd& psi, Index p, const std::vector<double>& t_grid, Index trials,
                                   std::uint64_t seed) {
  const Index n = psi.rows(), r = psi.cols();
  if (p < 1 || p > n) throw ArgumentError("verify_lemma_tail: need 1 <= p <= n");
  if (trials < 1) throw ArgumentError("verify_lemma_tail: trials must be >= 1");
  TailCheck out;
  out.p = p;
  out.trials = trials;
  const Eigen::MatrixXd mean = psi.transpose() * psi / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mean, Eigen::EigenvaluesOnly);
  out.lambda_max = es.eigenvalues().maxCoeff();
  out.r2 = psi.rowwise().squaredNorm().maxCoeff();

  std::vector<double> deviation(static_cast<std::size_t>(trials));
  Eigen::MatrixXd sub(p, r);
  for (Index tr = 0; tr < trials; ++tr) {
    const auto idx = random_order(n, p, derive_seed(seed, static_cast<std::uint64_t>(tr)));
    for (Index i = 0; i < p; ++i) sub.row(i) = psi.row(idx[static_cast<std::size_t>(i)]);
    Eigen::MatrixXd delta = mean;
    delta.noalias() -= sub.transpose() * sub / static_cast<double>(p);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ed(delta, Eigen::EigenvaluesOnly);
    deviation[static_cast<std::size_t>(tr)] = ed.eigenvalues().maxCoeff();
  }
  for (double t : t_grid) {
    Index count = 0;
    for (double d : deviation)
      if (d > t) ++count;
    const double prob = static_cast<double>(count) / static_cast<double>(trials);
    out.rows.push_back({t, prob, std::sqrt(prob * (1.0 - prob) / static_cast<double>(trials)),
                        lemma_tail_bound(r, p, t, out.lambda_max, out.r2)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sufficient rank
// ---------------------------------------------------------------------------

enum class SamplingMethod { random, pivoted };

inline const char* to_string(SamplingMethod m) { return m == SamplingMethod::random ? "random" : "pivoted"; }

struct SufficientRank {
  Index p_star = 0;
  double error_full = 0.0;
  double error_at_p = 0.0;  // mean expected error with rank p_star
};

/// Expected error of rank-p approximations as a function of p: nested random
/// selections per trial, or prefixes of one greedy pivot order.
class RankErrorCurve {
 public:
  RankErrorCurve(const FixedDesignProblem& prob, double lambda, SamplingMethod method, Index trials, std::uint64_t seed)
      : prob_(prob), lambda_(lambda), method_(method), chol_(DenseColumns{&prob.k}, prob.k.diag) {
    if (!(lambda > 0.0)) throw ArgumentError("sufficient_rank: lambda must be > 0");
    if (trials < 1) throw ArgumentError("sufficient_rank: trials must be >= 1");
    full_ = expected_error(full_spectral_form(prob), prob.sigma2, lambda).total();
    if (method == SamplingMethod::random) {
      for (Index t = 0; t < trials; ++t)
        orders_.push_back(random_order(prob.n(), prob.n(), derive_seed(seed, static_cast<std::uint64_t>(t))));
    }
  }

  double full_error() const { return full_; }

  double at(Index p) {
    if (p >= prob_.n()) return full_;
    if (auto it = cache_.find(p); it != cache_.end()) return it->second;
    double value = 0.0;
    if (method_ == SamplingMethod::random) {
      for (const auto& order : orders_) {
        ColumnSelection sel{{order.begin(), order.begin() + p}, SelectionMethod::uniform_random, 0, prob_.n()};
        value += error_of(nystrom(prob_.k, sel));
      }
      value /= static_cast<double>(orders_.size());
    } else {
      while (chol_.rank() < p && chol_.step()) {
      }
      value = error_of(chol_.factor(p));
    }
    cache_.emplace(p, value);
    return value;
  }

 private:
  double error_of(const LowRankFactor& f) const {
    return expected_error(spectral_form(f, prob_.z), prob_.sigma2, lambda_).total();
  }

  const FixedDesignProblem& prob_;
  double lambda_;
  SamplingMethod method_;
  double full_ = 0.0;
  std::vector<std::vector<Index>> orders_;
  PivotedCholesky<DenseColumns> chol_;
  std::map<Index, double> cache_;
};

/// Smallest p whose (trial-averaged) expected error is within (1 + tol) of the
/// full-matrix error, located by doubling then bisection; capped at n.
inline SufficientRank sufficient_rank(const FixedDesignProblem& prob, double lambda, double tol, Index trials,
                                      SamplingMethod method, std::uint64_t seed) {
  if (!(tol > 0.0)) throw ArgumentError("sufficient_rank: tol must be > 0");
  RankErrorCurve curve(prob, lambda, method, method == SamplingMethod::pivoted ? 1 : trials, seed);
  const double target = (1.0 + tol) * curve.full_error();
  const Index n = prob.n();
  auto done = [&](Index p) { return curve.at(p) <= target; };
  Index p_star = n;
  if (done(1)) {
    p_star = 1;
  } else {
    Index lo = 1;  // fails
    for (;;) {
      const Index hi = std::min(2 * lo, n);
      if (done(hi)) {
        Index a = lo, b = hi;
        while (b - a > 1) {
          const Index mid = a + (b - a) / 2;
          (done(mid) ? b : a) = mid;
        }
        p_star = b;
        break;
      }
      if (hi == n) break;
      lo = hi;
    }
  }
  return {p_star, curve.full_error(), curve.at(p_star)};
}

// ---------------------------------------------------------------------------
// Regularization path
// ---------------------------------------------------------------------------

/// `points` log-spaced values over [lo, hi] * scale.
inline std::vector<double> log_grid(double lo, double hi, Index points) {
  if (points < 1 || !(lo > 0.0) || !(hi >= lo)) throw ArgumentError("log_grid: bad range");
  std::vector<double> g(static_cast<std::size_t>(points));
  if (points == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (Index i = 0; i < points; ++i)
    g[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

/// Default lambda grid: 40 log-spaced points over [1e-16, 1] * tr(K)/n.
inline std::vector<double> default_lambda_grid(double trace_over_n) {
  return log_grid(1e-16 * trace_over_n, trace_over_n, 40);
}

/// lambda* below this value counts as machine-precision saturation.
inline constexpr double kSaturationLambda = 1e-15;

struct LambdaSearch {
  double lambda_star = 0.0;
  double error_star = 0.0;
  Index grid_index = 0;     // argmin on the coarse grid
  bool at_grid_min = false;
  bool saturated = false;
};

/// Minimizes the closed-form bias + variance over the grid, then over a
/// 33-point log subdivision of the bracket around the coarse minimizer.
inline LambdaSearch optimal_lambda(const SpectralForm& s, double sigma2, const std::vector<double>& grid) {
  if (grid.empty()) throw ArgumentError("optimal_lambda: empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0)) throw ArgumentError("optimal_lambda: grid values must be > 0");
    if (i && !(grid[i] > grid[i - 1])) throw ArgumentError("optimal_lambda: grid must be increasing");
  }
  LambdaSearch out;
  out.error_star = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double e = expected_error(s, sigma2, grid[i]).total();
    if (e < out.error_star) {
      out.error_star = e;
      out.lambda_star = grid[i];
      out.grid_index = static_cast<Index>(i);
    }
  }
  const auto k = static_cast<std::size_t>(out.grid_index);
  const double lo = grid[k == 0 ? 0 : k - 1];
  const double hi = grid[std::min(k + 1, grid.size() - 1)];
  if (hi > lo) {
    for (double lam : log_grid(lo, hi, 33)) {
      const double e = expected_error(s, sigma2, lam).total();
      if (e < out.error_star) {
        out.error_star = e;
        out.lambda_star = lam;
      }
    }
  }
  out.at_grid_min = out.grid_index == 0;
  out.saturated = out.at_grid_min || out.lambda_star < kSaturationLambda;
  return out;
}

inline LambdaSearch optimal_lambda(const FixedDesignProblem& p, const std::vector<double>& grid) {
  return optimal_lambda(full_spectral_form(p), p.sigma2, grid);
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

struct RateFit {
  double exponent = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<std::pair<double, double>> inputs;
};

/// Least squares fit of log(value) = intercept + exponent * log(n).
inline RateFit fit_rate(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 4) throw ArgumentError("fit_rate: need at least 4 (n, value) pairs");
  for (const auto& [n, v] : pairs)
    if (!(n > 0.0) || !(v > 0.0)) throw ArgumentError("fit_rate: n and values must be positive");
  const auto m = static_cast<double>(pairs.size());
  double sx = 0, sy = 0;
  for (const auto& [n, v] : pairs) {
    sx += std::log(n);
    sy += std::log(v);
  }
  const double mx = sx / m, my = sy / m;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [n, v] : pairs) {
    const double dx = std::log(n) - mx, dy = std::log(v) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw ArgumentError("fit_rate: need at least two distinct n");
  RateFit out;
  out.exponent = sxy / sxx;
  out.intercept = my - out.exponent * mx;
  const double ss_res = std::max(0.0, syy - out.exponent * sxy);
  out.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  out.inputs = pairs;
  return out;
}

}  // namespace nkrr
