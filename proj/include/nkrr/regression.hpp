#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "nkrr/csv.hpp"
#include "nkrr/errors.hpp"
#include "nkrr/kernels.hpp"
#include "nkrr/lowrank.hpp"

namespace nkrr {

enum class Loss { square, logistic };
enum class FitMode { exact, lowrank };

inline const char* to_string(Loss l) { return l == Loss::square ? "square" : "logistic"; }
inline const char* to_string(FitMode m) { return m == FitMode::exact ? "exact" : "lowrank"; }

/// Exact mode: coef = alpha (length n), f(x) = sum_i alpha_i k(x, x_i).
/// Low-rank mode: coef = w (length p), f(x) = <w, phi(x)>.
struct RidgeFit {
  FitMode mode = FitMode::exact;
  Eigen::VectorXd coef;
  double lambda = 0.0;
  Loss loss = Loss::square;
  std::shared_ptr<const LowRankFactor> factor;  // low-rank mode only
};

struct FitResult {
  RidgeFit fit;
  Eigen::VectorXd zhat;
};

/// Solves a symmetric positive definite system. If the Cholesky factorization
/// fails (lambda near machine precision), falls back to an eigendecomposition
/// pseudo-solve that discards eigenvalues below eps * max.
inline Eigen::VectorXd spd_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    Eigen::VectorXd x = llt.solve(b);
    if (x.allFinite()) return x;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success) throw NumericalError("spd_solve: eigensolver failed");
  const Eigen::VectorXd& w = es.eigenvalues();
  const double wmax = w.cwiseAbs().maxCoeff();
  if (w.minCoeff() < -1e-8 * wmax) throw NumericalError("spd_solve: system matrix is not positive semidefinite");
  Eigen::VectorXd coords = es.eigenvectors().transpose() * b;
  const double cutoff = std::numeric_limits<double>::epsilon() * wmax;
  for (Index i = 0; i < w.size(); ++i) coords[i] = w[i] > cutoff ? coords[i] / w[i] : 0.0;
  return es.eigenvectors() * coords;
}

/// zhat = K (K + n lambda I)^{-1} y with alpha = (K + n lambda I)^{-1} y.
inline FitResult krr_exact(const KernelMatrix& k, const Eigen::VectorXd& y, double lambda) {
  if (!(lambda > 0.0)) throw ArgumentError("krr_exact: lambda must be > 0");
  if (y.size() != k.size()) throw ArgumentError("krr_exact: y has wrong length");
  const Index n = k.size();
  Eigen::MatrixXd a = k.entries;
  a.diagonal().array() += static_cast<double>(n) * lambda;
  FitResult r;
  r.fit.mode = FitMode::exact;
  r.fit.lambda = lambda;
  r.fit.coef = spd_solve(a, y);
  r.zhat = k.entries * r.fit.coef;
  return r;
}

/// Reduced primal: (phi^T phi + n lambda I) w = phi^T y, zhat = phi w.
/// Equals L (L + n lambda I)^{-1} y. Cost O(p^2 n + p^3).
inline FitResult krr_lowrank(std::shared_ptr<const LowRankFactor> f, const Eigen::VectorXd& y, double lambda) {
  if (!(lambda > 0.0)) throw ArgumentError("krr_lowrank: lambda must be > 0");
  if (!f || f->rank() < 1) throw ArgumentError("krr_lowrank: empty factor");
  if (y.size() != f->rows()) throw ArgumentError("krr_lowrank: y has wrong length");
  const double nl = static_cast<double>(f->rows()) * lambda;
  Eigen::MatrixXd m = f->phi.transpose() * f->phi;
  m.diagonal().array() += nl;
  FitResult r;
  r.fit.mode = FitMode::lowrank;
  r.fit.lambda = lambda;
  r.fit.coef = spd_solve(m, f->phi.transpose() * y);
  r.zhat = f->phi * r.fit.coef;
  r.fit.factor = std::move(f);
  return r;
}

inline FitResult krr_lowrank(const LowRankFactor& f, const Eigen::VectorXd& y, double lambda) {
  return krr_lowrank(std::make_shared<const LowRankFactor>(f), y, lambda);
}

// ---------------------------------------------------------------------------
// Newton solver on the reduced primal
// ---------------------------------------------------------------------------

/// J(w) = (1/n) sum_i loss(y_i, (phi w)_i) + (lambda/2) ||w||^2 with
/// square loss (y-u)^2/2 or logistic loss log(1 + exp(-y u)).
inline double reduced_objective(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double lambda, Loss loss,
                                const Eigen::VectorXd& w) {
  const Eigen::VectorXd u = phi * w;
  double acc = 0.0;
  for (Index i = 0; i < u.size(); ++i) {
    if (loss == Loss::square) {
      const double r = y[i] - u[i];
      acc += 0.5 * r * r;
    } else {
      const double m = -y[i] * u[i];
      acc += m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
    }
  }
  return acc / static_cast<double>(u.size()) + 0.5 * lambda * w.squaredNorm();
}

struct NewtonReport {
  int iterations = 0;
  double gradient_norm = 0.0;
  double objective = 0.0;
};

namespace detail {
inline double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}
}  // namespace detail

/// Damped Newton on the reduced primal with the exact Hessian
/// phi^T D phi / n + lambda I. Stops when ||grad|| <= 1e-10 max(1, ||phi^T y||/n).
inline RidgeFit newton_solve(std::shared_ptr<const LowRankFactor> f, const Eigen::VectorXd& y, double lambda, Loss loss,
                             NewtonReport* report = nullptr, int max_iterations = 100) {
  if (!(lambda > 0.0)) throw ArgumentError("newton_solve: lambda must be > 0");
  if (!f || f->rank() < 1) throw ArgumentError("newton_solve: empty factor");
  if (y.size() != f->rows()) throw ArgumentError("newton_solve: y has wrong length");
  if (loss == Loss::logistic) {
    for (Index i = 0; i < y.size(); ++i)
      if (y[i] != 1.0 && y[i] != -1.0) throw ArgumentError("newton_solve: logistic labels must be -1 or +1");
  }
  const Eigen::MatrixXd& phi = f->phi;
  const Index n = phi.rows(), p = phi.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double tol = 1e-10 * std::max(1.0, (phi.transpose() * y).norm() * inv_n);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  double obj = reduced_objective(phi, y, lambda, loss, w);
  int it = 0;
  double gnorm = 0.0;
  for (;; ++it) {
    const Eigen::VectorXd u = phi * w;
    Eigen::VectorXd g1(n), d(n);  // first and second derivatives of the loss in u
    for (Index i = 0; i < n; ++i) {
      if (loss == Loss::square) {
        g1[i] = u[i] - y[i];
        d[i] = 1.0;
      } else {
        const double s = detail::sigmoid(-y[i] * u[i]);
        g1[i] = -y[i] * s;
        d[i] = s * (1.0 - s);
      }
    }
    Eigen::VectorXd grad = inv_n * (phi.transpose() * g1) + lambda * w;
    gnorm = grad.norm();
    if (gnorm <= tol) break;
    if (it >= max_iterations)
      throw NumericalError("newton_solve: no convergence after " + std::to_string(max_iterations) +
                           " iterations (gradient norm " + std::to_string(gnorm) + ", tolerance " +
                           std::to_string(tol) + ")");
    Eigen::MatrixXd h = inv_n * (phi.transpose() * d.asDiagonal() * phi);
    h.diagonal().array() += lambda;
    const Eigen::VectorXd step = spd_solve(h, -grad);

    // Halving line search on the objective.
    double t = 1.0;
    Eigen::VectorXd candidate = w + step;
    double cand_obj = reduced_objective(phi, y, lambda, loss, candidate);
    while (cand_obj > obj && t > 1e-20) {
      t *= 0.5;
      candidate = w + t * step;
      cand_obj = reduced_objective(phi, y, lambda, loss, candidate);
    }
    if (cand_obj > obj) {
      // No decrease representable in floating point: accept only if already
      // at the optimum up to roundoff.
      if (gnorm <= 1e3 * tol) break;
      throw NumericalError("newton_solve: line search failed (gradient norm " + std::to_string(gnorm) + ")");
    }
    w = std::move(candidate);
    obj = cand_obj;
  }
  if (report) *report = {it, gnorm, obj};
  RidgeFit fit;
  fit.mode = FitMode::lowrank;
  fit.coef = std::move(w);
  fit.lambda = lambda;
  fit.loss = loss;
  fit.factor = std::move(f);
  return fit;
}

inline RidgeFit newton_solve(const LowRankFactor& f, const Eigen::VectorXd& y, double lambda, Loss loss,
                             NewtonReport* report = nullptr) {
  return newton_solve(std::make_shared<const LowRankFactor>(f), y, lambda, loss, report);
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Training design and kernel needed to evaluate a fit at new points.
struct PredictionContext {
  const Eigen::MatrixXd* train_points = nullptr;
  KernelSpec kernel;
};

inline Eigen::VectorXd predict(const RidgeFit& fit, const Eigen::MatrixXd& test_points, const PredictionContext& ctx) {
  if (!ctx.train_points) throw ArgumentError("predict: missing training points");
  const Eigen::MatrixXd& train = *ctx.train_points;
  if (test_points.cols() != train.cols()) throw ArgumentError("predict: dimension mismatch");
  Eigen::VectorXd out(test_points.rows());
  if (fit.mode == FitMode::exact) {
    if (fit.coef.size() != train.rows())
      throw ArgumentError("predict: exact fit does not match the training design");
    for (Index r = 0; r < test_points.rows(); ++r)
      out[r] = kernel_vector(train, ctx.kernel, test_points.row(r)).dot(fit.coef);
    return out;
  }
  if (!fit.factor || fit.factor->rows() != train.rows() || fit.coef.size() != fit.factor->selection.size())
    throw ArgumentError("predict: low-rank fit does not match the training design");
  for (Index r = 0; r < test_points.rows(); ++r)
    out[r] = feature_map(train, ctx.kernel, *fit.factor, test_points.row(r)).dot(fit.coef);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
//
//   # nkrr-fit
//   # mode=<exact|lowrank>
//   # lambda=<lambda>
//   # loss=<square|logistic>
//   i,coef[,column]
//
// The column field (low-rank only) is the training index of the i-th selected
// column.

inline void write_fit_csv(std::ostream& os, const RidgeFit& fit, const std::vector<std::string>& extra_comments = {}) {
  csv::Table t;
  t.comments = {"nkrr-fit", std::string("mode=") + to_string(fit.mode), "lambda=" + csv::format(fit.lambda),
                std::string("loss=") + to_string(fit.loss)};
  t.comments.insert(t.comments.end(), extra_comments.begin(), extra_comments.end());
  const bool lowrank = fit.mode == FitMode::lowrank && fit.factor;
  t.header = lowrank ? std::vector<std::string>{"i", "coef", "column"} : std::vector<std::string>{"i", "coef"};
  for (Index i = 0; i < fit.coef.size(); ++i) {
    if (lowrank)
      t.add_row(i, fit.coef[i], fit.factor->selection.indices[static_cast<std::size_t>(i)]);
    else
      t.add_row(i, fit.coef[i]);
  }
  csv::write(os, t);
}

/// Coefficients, lambda, loss and mode; a low-rank factor is not restored
/// (only its column indices, through `columns`).
inline RidgeFit read_fit_csv(std::istream& is, std::vector<Index>* columns = nullptr) {
  csv::Table t = csv::read(is);
  RidgeFit fit;
  for (const auto& c : t.comments) {
    auto eq = c.find('=');
    if (eq == std::string::npos) continue;
    auto key = c.substr(0, eq), val = c.substr(eq + 1);
    if (key == "mode") fit.mode = val == "lowrank" ? FitMode::lowrank : FitMode::exact;
    else if (key == "lambda") fit.lambda = csv::parse_double(val).value_or(0.0);
    else if (key == "loss") fit.loss = val == "logistic" ? Loss::logistic : Loss::square;
  }
  auto coef_col = t.column("coef");
  if (!coef_col) throw DataError(DataErrorCode::parse_failure, "fit csv: no coef column");
  auto index_col = t.column("column");
  fit.coef.resize(static_cast<Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    auto v = csv::parse_double(t.rows[i].at(*coef_col));
    if (!v) throw DataError(DataErrorCode::non_numeric, "fit csv: coef");
    fit.coef[static_cast<Index>(i)] = *v;
    if (columns && index_col) columns->push_back(csv::parse_int(t.rows[i].at(*index_col)).value_or(-1));
  }
  return fit;
}

}  // namespace nkrr
