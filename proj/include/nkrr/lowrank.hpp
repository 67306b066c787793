#pragma once

#include <algorithm>
#include <concepts>
#include <cstring>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nkrr/csv.hpp"
#include "nkrr/errors.hpp"
#include "nkrr/kernels.hpp"
#include "nkrr/rng.hpp"

namespace nkrr {

enum class SelectionMethod { uniform_random, greedy_pivoted, explicit_set };

inline const char* to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::uniform_random: return "uniform-random";
    case SelectionMethod::greedy_pivoted: return "greedy-pivoted";
    case SelectionMethod::explicit_set: return "explicit";
  }
  return "unknown";
}

/// Ordered set of distinct column indices I within {0, ..., n-1}.
struct ColumnSelection {
  std::vector<Index> indices;
  SelectionMethod method = SelectionMethod::explicit_set;
  std::uint64_t seed = 0;
  Index n = 0;

  Index size() const { return static_cast<Index>(indices.size()); }

  /// Throws ArgumentError unless the indices are distinct and within range.
  void validate() const {
    if (indices.empty()) throw ArgumentError("column selection is empty");
    if (size() > n) throw ArgumentError("column selection larger than n");
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (Index i : indices) {
      if (i < 0 || i >= n) throw ArgumentError("column index out of range");
      if (seen[static_cast<std::size_t>(i)]) throw ArgumentError("duplicate column index");
      seen[static_cast<std::size_t>(i)] = true;
    }
  }

  /// First `p` entries as a selection of the same method.
  ColumnSelection prefix(Index p) const {
    ColumnSelection out = *this;
    out.indices.resize(static_cast<std::size_t>(std::min(p, size())));
    return out;
  }
};

inline ColumnSelection make_selection(std::vector<Index> indices, Index n) {
  ColumnSelection s{std::move(indices), SelectionMethod::explicit_set, 0, n};
  s.validate();
  return s;
}

/// Random ordering of {0,...,n-1} by a partial Fisher-Yates shuffle. The
/// first p entries for a given seed do not depend on how many are requested,
/// so samples of increasing size from one seed are nested.
inline std::vector<Index> random_order(Index n, Index count, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
  }
  perm.resize(static_cast<std::size_t>(count));
  return perm;
}

/// p columns drawn uniformly without replacement.
inline ColumnSelection sample_columns(Index n, Index p, std::uint64_t seed) {
  if (p < 1 || p > n) throw ArgumentError("sample_columns: need 1 <= p <= n");
  return ColumnSelection{random_order(n, p, seed), SelectionMethod::uniform_random, seed, n};
}

/// n x p factor with phi * phi^T = L, plus what is needed to map new points.
struct LowRankFactor {
  Eigen::MatrixXd phi;
  ColumnSelection selection;
  /// p x p matrix W with feature(x) = W * k_I(x) and W^T W = K(I,I)^+.
  Eigen::MatrixXd whitener;
  /// tr(K - L_k) after k = 1..p pivots. Empty for non-pivoted factors.
  Eigen::VectorXd trace_residual_trail;

  Index rows() const { return phi.rows(); }
  Index rank() const { return phi.cols(); }
  Eigen::MatrixXd approximation() const { return phi * phi.transpose(); }
};

/// Anything returning column j of a kernel matrix as a vector.
template <typename O>
concept ColumnOracle = requires(const O& o, Index j) {
  { o(j) } -> std::convertible_to<Eigen::VectorXd>;
};

/// Columns of an assembled kernel matrix.
struct DenseColumns {
  const KernelMatrix* k;
  Eigen::VectorXd operator()(Index j) const { return k->entries.col(j); }
};

/// Columns computed on demand from the design and the kernel; K is never
/// materialized.
struct KernelColumns {
  const Eigen::MatrixXd* points;
  KernelSpec spec;
  Eigen::VectorXd operator()(Index j) const { return kernel_vector(*points, spec, points->row(j)); }
};

namespace detail {

/// Symmetric pseudo-inverse square root of a PSD block, with eigenvalues
/// below `rel_cutoff * max` treated as zero.
inline Eigen::MatrixXd pinv_sqrt(const Eigen::MatrixXd& block, double rel_cutoff) {
  Eigen::MatrixXd sym = 0.5 * (block + block.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of K(I,I) failed");
  const Eigen::VectorXd& w = es.eigenvalues();
  const double wmax = w.size() ? w.maxCoeff() : 0.0;
  Eigen::VectorXd inv_sqrt = Eigen::VectorXd::Zero(w.size());
  if (wmax > 0.0) {
    for (Index i = 0; i < w.size(); ++i)
      if (w[i] > rel_cutoff * wmax) inv_sqrt[i] = 1.0 / std::sqrt(w[i]);
  }
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Relative eigenvalue cutoff used for K(I,I)^+.
inline constexpr double kPinvCutoff = 1e-12;

/// Nystrom factor L = K(V,I) K(I,I)^+ K(I,V) from columns supplied by an oracle,
/// using phi = K(V,I) K(I,I)^{+1/2}. Cost O(p^2 n).
template <ColumnOracle Oracle>
LowRankFactor nystrom(const Oracle& columns, Index n, const ColumnSelection& selection) {
  selection.validate();
  if (selection.n != n) throw ArgumentError("nystrom: selection built for a different n");
  const Index p = selection.size();
  Eigen::MatrixXd c(n, p);
  for (Index j = 0; j < p; ++j) {
    Eigen::VectorXd col = columns(selection.indices[static_cast<std::size_t>(j)]);
    if (col.size() != n) throw ArgumentError("nystrom: oracle column has wrong length");
    c.col(j) = col;
  }
  Eigen::MatrixXd block(p, p);
  for (Index i = 0; i < p; ++i) block.row(i) = c.row(selection.indices[static_cast<std::size_t>(i)]);
  LowRankFactor f;
  f.whitener = detail::pinv_sqrt(block, kPinvCutoff);
  f.phi = c * f.whitener;
  f.selection = selection;
  return f;
}

inline LowRankFactor nystrom(const KernelMatrix& k, const ColumnSelection& selection) {
  return nystrom(DenseColumns{&k}, k.size(), selection);
}

// ---------------------------------------------------------------------------
// Pivoted incomplete Cholesky
// ---------------------------------------------------------------------------

/// Stopping rule for the pivoted factorization: whichever is hit first.
struct PivotStop {
  std::optional<Index> max_rank;
  std::optional<double> trace_tolerance;
};

/// Greedy pivoted incomplete Cholesky that can be extended step by step.
/// Pivot = argmax of the residual diagonal, smallest index on ties. The
/// residual diagonal is maintained exactly, so its sum is tr(K - L_k).
template <ColumnOracle Oracle>
class PivotedCholesky {
 public:
  /// Residual pivots at or below this fraction of max(diag) end the run: the
  /// matrix is numerically exhausted.
  static constexpr double kExhausted = 1e-13;
  /// Residual entries below -kBreakdown * max(diag) signal a non-PSD input.
  static constexpr double kBreakdown = 1e-10;

  PivotedCholesky(Oracle columns, Eigen::VectorXd diag)
      : columns_(std::move(columns)), residual_(std::move(diag)) {
    n_ = residual_.size();
    if (n_ < 1) throw ArgumentError("pivoted_ichol: empty diagonal");
    if (!residual_.allFinite()) throw NumericalError("pivoted_ichol: non-finite kernel diagonal");
    max_diag_ = residual_.maxCoeff();
    if (residual_.minCoeff() < -kBreakdown * std::max(max_diag_, 1.0))
      throw NumericalError("pivoted_ichol: negative diagonal entry");
    residual_ = residual_.cwiseMax(0.0);
    g_.resize(n_, std::min<Index>(n_, 16));
  }

  Index n() const { return n_; }
  Index rank() const { return static_cast<Index>(pivots_.size()); }
  double trace_residual() const { return residual_.sum(); }
  bool exhausted() const { return exhausted_; }
  const std::vector<Index>& pivots() const { return pivots_; }

  /// One pivot; returns false when no further progress is possible.
  bool step() {
    if (exhausted_ || rank() >= n_) return false;
    Index pivot = 0;
    double best = residual_[0];
    for (Index i = 1; i < n_; ++i) {
      if (residual_[i] > best) {
        best = residual_[i];
        pivot = i;
      }
    }
    if (!(best > kExhausted * max_diag_)) {
      exhausted_ = true;
      return false;
    }
    const Index k = rank();
    if (k >= g_.cols()) g_.conservativeResize(Eigen::NoChange, std::min<Index>(n_, 2 * g_.cols()));

    Eigen::VectorXd col = columns_(pivot);
    if (col.size() != n_) throw ArgumentError("pivoted_ichol: oracle column has wrong length");
    if (!col.allFinite()) throw NumericalError("pivoted_ichol: non-finite kernel column");
    if (k > 0) col.noalias() -= g_.leftCols(k) * g_.row(pivot).head(k).transpose();
    col /= std::sqrt(best);
    g_.col(k) = col;

    residual_ -= col.cwiseAbs2();
    residual_[pivot] = 0.0;
    if (residual_.minCoeff() < -kBreakdown * max_diag_)
      throw NumericalError("pivoted_ichol: numerical breakdown (residual diagonal " +
                           std::to_string(residual_.minCoeff()) + ")");
    residual_ = residual_.cwiseMax(0.0);
    pivots_.push_back(pivot);
    trail_.push_back(residual_.sum());
    return true;
  }

  void run(const PivotStop& stop) {
    const Index cap = std::min(stop.max_rank.value_or(n_), n_);
    while (rank() < cap) {
      if (stop.trace_tolerance && trace_residual() <= *stop.trace_tolerance) break;
      if (!step()) break;
    }
  }

  /// Factor made of the first `p` pivots (all of them by default).
  LowRankFactor factor(std::optional<Index> p = std::nullopt) const {
    const Index r = std::min(p.value_or(rank()), rank());
    LowRankFactor f;
    f.phi = g_.leftCols(r);
    f.selection.indices.assign(pivots_.begin(), pivots_.begin() + r);
    f.selection.method = SelectionMethod::greedy_pivoted;
    f.selection.n = n_;
    f.trace_residual_trail = Eigen::Map<const Eigen::VectorXd>(trail_.data(), r);
    // phi(P,:) is lower triangular in pivot order; its inverse maps k_P(x)
    // to the feature vector.
    Eigen::MatrixXd block(r, r);
    for (Index i = 0; i < r; ++i) block.row(i) = g_.row(pivots_[static_cast<std::size_t>(i)]).head(r);
    f.whitener = block.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(r, r));
    return f;
  }

 private:
  Oracle columns_;
  Eigen::VectorXd residual_;
  Eigen::MatrixXd g_;
  std::vector<Index> pivots_;
  std::vector<double> trail_;
  Index n_ = 0;
  double max_diag_ = 0.0;
  bool exhausted_ = false;
};

template <ColumnOracle Oracle>
LowRankFactor pivoted_ichol(Oracle columns, Eigen::VectorXd diag, const PivotStop& stop) {
  if (!diag.allFinite()) throw NumericalError("pivoted_ichol: non-finite kernel diagonal");
  if (!stop.max_rank && !stop.trace_tolerance)
    throw ArgumentError("pivoted_ichol: need a rank or a trace tolerance");
  if (stop.max_rank && *stop.max_rank < 1) throw ArgumentError("pivoted_ichol: rank must be >= 1");
  if (stop.max_rank && *stop.max_rank > diag.size()) throw ArgumentError("pivoted_ichol: rank exceeds n");
  if (stop.trace_tolerance && !(*stop.trace_tolerance > 0.0) && !stop.max_rank)
    throw ArgumentError("pivoted_ichol: trace tolerance must be > 0");
  PivotedCholesky<Oracle> chol(std::move(columns), std::move(diag));
  chol.run(stop);
  return chol.factor();
}

inline LowRankFactor pivoted_ichol(const KernelMatrix& k, const PivotStop& stop) {
  return pivoted_ichol(DenseColumns{&k}, k.diag, stop);
}

// ---------------------------------------------------------------------------
// Feature map and approximation error
// ---------------------------------------------------------------------------

/// phi(x) = W (k(x_i, x))_{i in I}.
inline Eigen::VectorXd feature_map(const Eigen::MatrixXd& train_points, const KernelSpec& spec,
                                   const LowRankFactor& f, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const Index p = f.selection.size();
  if (f.whitener.rows() != p || f.whitener.cols() != p)
    throw ArgumentError("feature_map: factor carries no whitener");
  Eigen::VectorXd kx(p);
  for (Index i = 0; i < p; ++i)
    kx[i] = evaluate(spec, train_points.row(f.selection.indices[static_cast<std::size_t>(i)]), x);
  return f.whitener * kx;
}

/// Feature vectors of many points, one per row.
inline Eigen::MatrixXd feature_matrix(const Eigen::MatrixXd& train_points, const KernelSpec& spec,
                                   const LowRankFactor& f, const Eigen::MatrixXd& xs) {
  Eigen::MatrixXd out(xs.rows(), f.selection.size());
  for (Index r = 0; r < xs.rows(); ++r) out.row(r) = feature_map(train_points, spec, f, xs.row(r)).transpose();
  return out;
}

enum class MatrixNorm { trace, operator_norm, frobenius };

/// ||K - phi phi^T|| in the requested norm. The trace norm is the sum of the
/// absolute eigenvalues of the residual, which equals tr(K - L) for a PSD
/// residual.
inline double approx_error(const KernelMatrix& k, const LowRankFactor& f, MatrixNorm norm) {
  if (f.rows() != k.size()) throw ArgumentError("approx_error: shape mismatch");
  Eigen::MatrixXd r = k.entries;
  r.noalias() -= f.phi * f.phi.transpose();
  if (norm == MatrixNorm::frobenius) return r.norm();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("approx_error: eigensolver failed");
  if (norm == MatrixNorm::trace) return es.eigenvalues().cwiseAbs().sum();
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// tr(K - L) = tr(K) - ||phi||_F^2, exact whenever L approximates K from below.
inline double trace_residual(const KernelMatrix& k, const LowRankFactor& f) {
  return k.trace() - f.phi.squaredNorm();
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
//
// CSV layout:
//   # nkrr-factor
//   # n=<n>
//   # p=<p>
//   # method=<uniform-random|greedy-pivoted|explicit>
//   # indices=<i_1;i_2;...;i_p>
//   row,phi_0,...,phi_{p-1}
//   0,<phi(0,0)>,...
//
// Binary layout (little endian): 8-byte magic "NKRRFAC1", u64 n, u64 p,
// p x u64 indices, n*p x f64 phi in row-major order.

inline void write_factor_csv(std::ostream& os, const LowRankFactor& f) {
  csv::Table t;
  t.comments = {"nkrr-factor", "n=" + std::to_string(f.rows()), "p=" + std::to_string(f.rank()),
                std::string("method=") + to_string(f.selection.method)};
  std::string idx = "indices=";
  for (std::size_t i = 0; i < f.selection.indices.size(); ++i)
    idx += (i ? ";" : "") + std::to_string(f.selection.indices[i]);
  t.comments.push_back(idx);
  t.header.push_back("row");
  for (Index j = 0; j < f.rank(); ++j) t.header.push_back("phi_" + std::to_string(j));
  for (Index i = 0; i < f.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (Index j = 0; j < f.rank(); ++j) row.push_back(csv::format(f.phi(i, j)));
    t.rows.push_back(std::move(row));
  }
  csv::write(os, t);
}

inline LowRankFactor read_factor_csv(std::istream& is) {
  csv::Table t = csv::read(is);
  Index n = -1, p = -1;
  LowRankFactor f;
  for (const auto& c : t.comments) {
    auto eq = c.find('=');
    if (eq == std::string::npos) continue;
    auto key = c.substr(0, eq), val = c.substr(eq + 1);
    if (key == "n") n = csv::parse_int(val).value_or(-1);
    else if (key == "p") p = csv::parse_int(val).value_or(-1);
    else if (key == "method") {
      if (val == "uniform-random") f.selection.method = SelectionMethod::uniform_random;
      else if (val == "greedy-pivoted") f.selection.method = SelectionMethod::greedy_pivoted;
    } else if (key == "indices") {
      std::string_view rest(val);
      while (!rest.empty()) {
        auto semi = rest.find(';');
        auto v = csv::parse_int(rest.substr(0, semi));
        if (!v) throw DataError(DataErrorCode::parse_failure, "factor csv: bad index");
        f.selection.indices.push_back(*v);
        if (semi == std::string_view::npos) break;
        rest.remove_prefix(semi + 1);
      }
    }
  }
  if (n < 0 || p < 0 || static_cast<Index>(t.rows.size()) != n || static_cast<Index>(f.selection.indices.size()) != p)
    throw DataError(DataErrorCode::parse_failure, "factor csv: inconsistent header");
  f.selection.n = n;
  f.phi.resize(n, p);
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    if (static_cast<Index>(row.size()) != p + 1) throw DataError(DataErrorCode::parse_failure, "factor csv: row width");
    for (Index j = 0; j < p; ++j) {
      auto v = csv::parse_double(row[static_cast<std::size_t>(j + 1)]);
      if (!v) throw DataError(DataErrorCode::non_numeric, "factor csv: cell");
      f.phi(i, j) = *v;
    }
  }
  return f;
}

inline void write_factor_binary(std::ostream& os, const LowRankFactor& f) {
  auto put_u64 = [&os](std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  };
  os.write("NKRRFAC1", 8);
  put_u64(static_cast<std::uint64_t>(f.rows()));
  put_u64(static_cast<std::uint64_t>(f.rank()));
  for (Index i : f.selection.indices) put_u64(static_cast<std::uint64_t>(i));
  for (Index i = 0; i < f.rows(); ++i)
    for (Index j = 0; j < f.rank(); ++j) {
      std::uint64_t bits;
      double v = f.phi(i, j);
      std::memcpy(&bits, &v, 8);
      put_u64(bits);
    }
}

inline LowRankFactor read_factor_binary(std::istream& is) {
  auto get_u64 = [&is]() {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError(DataErrorCode::parse_failure, "factor: truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  };
  char magic[8];
  if (!is.read(magic, 8) || std::string(magic, 8) != "NKRRFAC1")
    throw DataError(DataErrorCode::parse_failure, "factor: bad magic");
  LowRankFactor f;
  const auto n = static_cast<Index>(get_u64());
  const auto p = static_cast<Index>(get_u64());
  f.selection.n = n;
  for (Index j = 0; j < p; ++j) f.selection.indices.push_back(static_cast<Index>(get_u64()));
  f.phi.resize(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) {
      std::uint64_t bits = get_u64();
      double v;
      std::memcpy(&v, &bits, 8);
      f.phi(i, j) = v;
    }
  return f;
}

}  // namespace nkrr
