#pragma once

// fit and cv commands on user-supplied CSV datasets.

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nkrr/harness/config.hpp"
#include "nkrr/harness/dataset.hpp"
#include "nkrr/harness/experiments.hpp"
#include "nkrr/regression.hpp"

namespace nkrr::harness {

inline DatasetSchema schema_from(const json& cfg) {
  DatasetSchema s;
  s.target = get<std::string>(cfg, "target");
  s.features = get<std::vector<std::string>>(cfg, "features");
  s.max_rows = get_count(cfg, "max_rows", 1);
  s.seed = get_seed(cfg);
  return s;
}

inline Dataset dataset_from(const json& cfg) {
  const std::string path = get<std::string>(cfg, "data");
  if (path.empty()) throw ConfigError("config: 'data' (path to a CSV file) is required");
  return load_dataset(path, schema_from(cfg));
}

inline KernelSpec kernel_from(const json& cfg, const Dataset& d) {
  double h = get<double>(cfg, "bandwidth");
  if (h < 0.0 || !std::isfinite(h)) throw ConfigError("config: 'bandwidth' must be >= 0");
  if (h == 0.0) h = median_bandwidth(d.features, derive_seed(get_seed(cfg), "bandwidth"));
  return Gaussian{h};
}

inline RankRule rank_rule_from(const json& cfg) {
  RankRule r;
  r.trace_tol = get_positive(cfg, "trace_tol");
  r.rank = get_count(cfg, "rank", 0);
  return r;
}

struct CvRun {
  csv::Table table;
  CvResult result;
  std::vector<std::string> warnings;
};

inline CvRun run_cv(const json& cfg) {
  const Dataset d = dataset_from(cfg);
  const KernelSpec kernel = kernel_from(cfg, d);
  std::vector<double> grid = get_reals(cfg, "lambda_grid");
  if (grid.empty()) grid = log_grid(1e-8, 1.0, 20);
  CvRun out;
  out.warnings = d.warnings;
  out.result = cross_validate_lambda(d, kernel, grid, get_count(cfg, "folds", 2), get_seed(cfg), rank_rule_from(cfg));
  csv::Table& t = out.table = start_table(Experiment::cv, cfg);
  t.comments.push_back("rows=" + std::to_string(d.features.rows()) + " features=" + std::to_string(d.features.cols()));
  t.comments.push_back("kernel=" + nkrr::describe(kernel));
  for (const auto& w : d.warnings) t.comments.push_back("warning: " + w);
  std::string ranks;
  for (Index r : out.result.ranks) ranks += (ranks.empty() ? "" : ";") + std::to_string(r);
  t.comments.push_back("fold_ranks=" + ranks);
  t.comments.push_back("lambda_star=" + csv::format(out.result.lambda_star));
  t.header = {"lambda", "cv_error"};
  for (std::size_t g = 0; g < out.result.grid.size(); ++g) t.add_row(out.result.grid[g], out.result.mean_error[g]);
  return out;
}

struct FitRun {
  std::string text;  // fit CSV
  RidgeFit fit;
  double train_mse = 0.0;
  std::vector<std::string> warnings;
};

inline FitRun run_fit(const json& cfg) {
  const Dataset d = dataset_from(cfg);
  const KernelSpec kernel = kernel_from(cfg, d);
  const double lambda = get_positive(cfg, "lambda");
  const std::string mode = get<std::string>(cfg, "mode"), loss_name = get<std::string>(cfg, "loss");
  const std::string method = get<std::string>(cfg, "method");
  Loss loss;
  if (loss_name == "square") loss = Loss::square;
  else if (loss_name == "logistic") loss = Loss::logistic;
  else throw ConfigError("config: 'loss' must be square or logistic");

  FitRun out;
  out.warnings = d.warnings;
  const Eigen::VectorXd& y = d.targets;
  Eigen::VectorXd yfit = y;
  if (loss == Loss::logistic) {
    // Labels are the sign of the centered target.
    for (Index i = 0; i < y.size(); ++i) yfit[i] = y[i] > 0.0 ? 1.0 : -1.0;
  }
  Eigen::VectorXd zhat;
  if (mode == "exact") {
    if (loss != Loss::square) throw ConfigError("config: the exact solver supports the square loss only");
    auto r = krr_exact(gram(d.features, kernel), y, lambda);
    out.fit = r.fit;
    zhat = r.zhat;
  } else if (mode == "lowrank") {
    LowRankFactor f;
    const RankRule rule = rank_rule_from(cfg);
    if (method == "pivoted") {
      f = pivoted_factor(d.features, kernel, rule);
    } else if (method == "random") {
      if (rule.rank < 1) throw ConfigError("config: random column sampling needs 'rank' >= 1");
      const Index p = std::min(rule.rank, d.features.rows());
      f = nystrom(KernelColumns{&d.features, kernel}, d.features.rows(),
                  sample_columns(d.features.rows(), p, derive_seed(get_seed(cfg), "columns")));
    } else {
      throw ConfigError("config: 'method' must be pivoted or random");
    }
    auto shared = std::make_shared<const LowRankFactor>(std::move(f));
    out.fit = newton_solve(shared, yfit, lambda, loss);
    zhat = shared->phi * out.fit.coef;
  } else {
    throw ConfigError("config: 'mode' must be exact or lowrank");
  }
  out.train_mse = loss == Loss::square ? (zhat - y).squaredNorm() / static_cast<double>(y.size())
                                       : (zhat.array() * yfit.array() <= 0.0).cast<double>().mean();

  const csv::Table meta = start_table(Experiment::fit, cfg);
  std::vector<std::string> extra = meta.comments;
  extra.push_back("kernel=" + nkrr::describe(kernel));
  extra.push_back("rows=" + std::to_string(d.features.rows()));
  extra.push_back(std::string(loss == Loss::square ? "train_mse=" : "train_error_rate=") + csv::format(out.train_mse));
  for (const auto& w : d.warnings) extra.push_back("warning: " + w);
  std::ostringstream os;
  write_fit_csv(os, out.fit, extra);
  out.text = os.str();
  return out;
}

}  // namespace nkrr::harness
