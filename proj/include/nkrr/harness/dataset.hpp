#pragma once

// Real-data ingestion and cross-validation of lambda.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nkrr/csv.hpp"
#include "nkrr/errors.hpp"
#include "nkrr/kernels.hpp"
#include "nkrr/lowrank.hpp"
#include "nkrr/regression.hpp"
#include "nkrr/rng.hpp"
#include "nkrr/statistics.hpp"

namespace nkrr::harness {

struct Dataset {
  Eigen::MatrixXd features;
  Eigen::VectorXd targets;
  std::string name;
  std::vector<std::string> feature_names;
  std::vector<std::string> warnings;
  Index rows_read = 0;  // before subsampling
};

struct DatasetSchema {
  std::string target;                 // empty: last column
  std::vector<std::string> features;  // empty: every other column
  bool standardize = true;            // zero-mean unit-variance features, centered target
  Index min_rows = 10;
  Index max_rows = 8192;  // larger files are subsampled uniformly with `seed`
  std::uint64_t seed = 0;
};

namespace detail {

inline bool is_missing(const std::string& cell) {
  std::string s;
  for (char c : cell) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return s.empty() || s == "na" || s == "nan" || s == "null" || s == "?";
}

}  // namespace detail

/// Parses a numeric CSV (header row required). Row order is kept.
inline Dataset parse_dataset(std::istream& is, const DatasetSchema& schema, const std::string& name = "") {
  const csv::Table t = csv::read(is);
  if (t.header.empty()) throw DataError(DataErrorCode::parse_failure, name + ": no header row");
  auto find = [&](const std::string& col) {
    const auto c = t.column(col);
    if (!c) throw DataError(DataErrorCode::parse_failure, name + ": no column named '" + col + "'");
    return *c;
  };
  const std::size_t target = schema.target.empty() ? t.header.size() - 1 : find(schema.target);
  std::vector<std::size_t> cols;
  if (schema.features.empty()) {
    for (std::size_t c = 0; c < t.header.size(); ++c)
      if (c != target) cols.push_back(c);
  } else {
    for (const auto& f : schema.features) cols.push_back(find(f));
  }
  if (cols.empty()) throw DataError(DataErrorCode::parse_failure, name + ": no feature columns");

  Dataset d;
  d.name = name;
  for (auto c : cols) d.feature_names.push_back(t.header[c]);
  const auto n = static_cast<Index>(t.rows.size());
  d.features.resize(n, static_cast<Index>(cols.size()));
  d.targets.resize(n);
  auto cell = [&](std::size_t r, std::size_t c) {
    const auto& row = t.rows[r];
    const std::string where = name + ": row " + std::to_string(r + 1) + ", column '" + t.header[c] + "'";
    if (row.size() != t.header.size())
      throw DataError(DataErrorCode::parse_failure,
                      name + ": row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) + " cells, expected " +
                          std::to_string(t.header.size()));
    if (detail::is_missing(row[c])) throw DataError(DataErrorCode::missing_value, where + ": missing value");
    const auto v = csv::parse_double(row[c]);
    if (!v || !std::isfinite(*v)) throw DataError(DataErrorCode::non_numeric, where + ": not a number: '" + row[c] + "'");
    return *v;
  };
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) d.features(static_cast<Index>(r), static_cast<Index>(j)) = cell(r, cols[j]);
    d.targets[static_cast<Index>(r)] = cell(r, target);
  }
  d.rows_read = n;
  return d;
}

/// Subsample to max_rows, drop constant features, standardize, center the
/// target. Kept rows stay in file order.
inline void prepare_dataset(Dataset& d, const DatasetSchema& schema) {
  if (d.features.rows() < schema.min_rows)
    throw DataError(DataErrorCode::too_few_rows,
                    d.name + ": " + std::to_string(d.features.rows()) + " rows, need at least " + std::to_string(schema.min_rows));
  if (schema.max_rows > 0 && d.features.rows() > schema.max_rows) {
    std::vector<Index> keep = random_order(d.features.rows(), schema.max_rows, derive_seed(schema.seed, "subsample"));
    std::sort(keep.begin(), keep.end());
    Eigen::MatrixXd f(schema.max_rows, d.features.cols());
    Eigen::VectorXd y(schema.max_rows);
    for (Index i = 0; i < schema.max_rows; ++i) {
      f.row(i) = d.features.row(keep[static_cast<std::size_t>(i)]);
      y[i] = d.targets[keep[static_cast<std::size_t>(i)]];
    }
    d.warnings.push_back("subsampled " + std::to_string(d.features.rows()) + " rows to " + std::to_string(schema.max_rows));
    d.features = std::move(f);
    d.targets = std::move(y);
  }
  if (!schema.standardize) return;
  const auto n = static_cast<double>(d.features.rows());
  std::vector<Index> kept;
  for (Index j = 0; j < d.features.cols(); ++j) {
    const double mean = d.features.col(j).mean();
    const double var = (d.features.col(j).array() - mean).square().sum() / n;
    if (!(var > 0.0)) {
      d.warnings.push_back("dropped constant column '" + d.feature_names[static_cast<std::size_t>(j)] + "'");
      continue;
    }
    d.features.col(j) = (d.features.col(j).array() - mean) / std::sqrt(var);
    kept.push_back(j);
  }
  if (kept.empty()) throw DataError(DataErrorCode::parse_failure, d.name + ": every feature column is constant");
  if (static_cast<Index>(kept.size()) != d.features.cols()) {
    Eigen::MatrixXd f(d.features.rows(), static_cast<Index>(kept.size()));
    std::vector<std::string> names;
    for (std::size_t j = 0; j < kept.size(); ++j) {
      f.col(static_cast<Index>(j)) = d.features.col(kept[j]);
      names.push_back(d.feature_names[static_cast<std::size_t>(kept[j])]);
    }
    d.features = std::move(f);
    d.feature_names = std::move(names);
  }
  d.targets.array() -= d.targets.mean();
}

inline Dataset load_dataset(const std::string& path, const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorCode::io_failure, "cannot open '" + path + "'");
  Dataset d = parse_dataset(in, schema, path);
  prepare_dataset(d, schema);
  return d;
}

/// Header = feature names then the target name; values in shortest
/// round-trip form, so parse_dataset reads back the same doubles.
inline void write_dataset(std::ostream& os, const Dataset& d, const std::string& target_name = "target") {
  csv::Table t;
  t.header = d.feature_names;
  t.header.push_back(target_name);
  for (Index i = 0; i < d.features.rows(); ++i) {
    std::vector<std::string> row;
    for (Index j = 0; j < d.features.cols(); ++j) row.push_back(csv::format(d.features(i, j)));
    row.push_back(csv::format(d.targets[i]));
    t.rows.push_back(std::move(row));
  }
  csv::write(os, t);
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// How the low-rank factor of each training fold is built.
struct RankRule {
  double trace_tol = 1e-3;  // stop when tr(K - L) <= trace_tol * tr K
  Index rank = 0;           // > 0: fixed rank instead
};

struct CvResult {
  double lambda_star = 0.0;
  std::vector<double> grid;
  std::vector<double> mean_error;  // held-out squared error per grid point
  std::vector<Index> ranks;        // factor rank per fold
};

/// Pivoted factor of the kernel matrix of `points`, never forming it.
inline LowRankFactor pivoted_factor(const Eigen::MatrixXd& points, const KernelSpec& kernel, const RankRule& rule) {
  const Index n = points.rows();
  KernelColumns cols{&points, kernel};
  Eigen::VectorXd diag(n);
  for (Index i = 0; i < n; ++i) diag[i] = evaluate(kernel, points.row(i), points.row(i));
  PivotStop stop;
  if (rule.rank > 0) {
    stop.max_rank = std::min(rule.rank, n);
  } else {
    if (!(rule.trace_tol > 0.0)) throw ArgumentError("trace tolerance must be > 0");
    stop.trace_tolerance = rule.trace_tol * diag.sum();
  }
  return pivoted_ichol(cols, diag, stop);
}

inline CvResult cross_validate_lambda(const Dataset& data, const KernelSpec& kernel, std::vector<double> grid, Index folds,
                                      std::uint64_t seed, const RankRule& rule = {}) {
  const Index n = data.features.rows();
  if (grid.empty()) throw ArgumentError("cross_validate_lambda: empty lambda grid");
  for (double l : grid)
    if (!(l > 0.0)) throw ArgumentError("cross_validate_lambda: lambda values must be > 0");
  if (folds < 2) throw ArgumentError("cross_validate_lambda: need at least 2 folds");
  if (n / folds < 2) throw ArgumentError("cross_validate_lambda: fold size < 2");
  std::sort(grid.begin(), grid.end());

  const std::vector<Index> perm = random_order(n, n, derive_seed(seed, "folds"));
  CvResult out;
  out.grid = grid;
  out.mean_error.assign(grid.size(), 0.0);
  for (Index f = 0; f < folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < n; ++i) (i % folds == f ? test : train).push_back(perm[static_cast<std::size_t>(i)]);
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    Eigen::MatrixXd xtr(static_cast<Index>(train.size()), data.features.cols()), xte(static_cast<Index>(test.size()), data.features.cols());
    Eigen::VectorXd ytr(xtr.rows()), yte(xte.rows());
    for (std::size_t i = 0; i < train.size(); ++i) {
      xtr.row(static_cast<Index>(i)) = data.features.row(train[i]);
      ytr[static_cast<Index>(i)] = data.targets[train[i]];
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      xte.row(static_cast<Index>(i)) = data.features.row(test[i]);
      yte[static_cast<Index>(i)] = data.targets[test[i]];
    }
    const LowRankFactor fac = pivoted_factor(xtr, kernel, rule);
    out.ranks.push_back(fac.rank());
    const Eigen::MatrixXd phi_te = feature_matrix(xtr, kernel, fac, xte);
    const Eigen::MatrixXd gram = fac.phi.transpose() * fac.phi;
    const Eigen::VectorXd rhs = fac.phi.transpose() * ytr;
    const auto ntr = static_cast<double>(xtr.rows());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      Eigen::MatrixXd a = gram;
      a.diagonal().array() += ntr * grid[g];
      const Eigen::VectorXd w = spd_solve(a, rhs);
      out.mean_error[g] += (phi_te * w - yte).squaredNorm() / static_cast<double>(yte.size()) / static_cast<double>(folds);
    }
  }
  const auto best = std::min_element(out.mean_error.begin(), out.mean_error.end());
  out.lambda_star = grid[static_cast<std::size_t>(best - out.mean_error.begin())];
  return out;
}

}  // namespace nkrr::harness
