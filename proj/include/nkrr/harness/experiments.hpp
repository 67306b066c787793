#pragma once

// Experiment drivers. Each returns the CSV table it emits plus the typed
// numbers the table was built from. Per-trial seeds come from
// derive_seed(master, key), never from a shared stream, so the output does
// not depend on the order in which work items are processed.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nkrr/csv.hpp"
#include "nkrr/harness/config.hpp"
#include "nkrr/lowrank.hpp"
#include "nkrr/spectral.hpp"
#include "nkrr/statistics.hpp"
#include "nkrr/synthetic.hpp"

namespace nkrr::harness {

/// Metadata lines shared by every table: command, config hash, seed and the
/// effective config. The output path is left out so that the same run
/// written to two places produces identical bytes.
inline csv::Table start_table(Experiment e, const json& cfg) {
  json shown = cfg;
  shown.erase("output");
  csv::Table t;
  t.comments.push_back(std::string("nkrr ") + command_name(e));
  t.comments.push_back("config_hash=" + config_hash(shown));
  t.comments.push_back("seed=" + std::to_string(get_seed(cfg)));
  t.comments.push_back("config=" + shown.dump());
  return t;
}

inline std::string describe(const DecayLaw& law) {
  std::string s = law.kind == DecayKind::polynomial ? "poly(" : "exp(";
  s += csv::format(law.rate) + ")";
  if (law.amplitude != 1.0) s += "*" + csv::format(law.amplitude);
  return s;
}

/// Optimal lambda of a problem over the default grid.
inline LambdaSearch default_optimal_lambda(const FixedDesignProblem& p) {
  return optimal_lambda(p, default_lambda_grid(p.k.trace() / static_cast<double>(p.n())));
}

inline double resolve_lambda(const json& cfg, const FixedDesignProblem& p) {
  if (cfg.contains("lambda") && !cfg.at("lambda").is_null()) return get_positive(cfg, "lambda");
  return default_optimal_lambda(p).lambda_star;
}

// ---------------------------------------------------------------------------
// fig1: approximation error versus prediction error
// ---------------------------------------------------------------------------

struct Fig1Row {
  Index p = 0;
  SamplingMethod method = SamplingMethod::random;
  double rel_trace_err = 0.0;
  double rel_op_err = 0.0;
  double rel_pred_excess = 0.0;
  double error = 0.0;
};

/// First ranks on the grid where each curve crosses its threshold.
struct Crossings {
  std::optional<Index> excess_below;  // rel_pred_excess < excess_threshold
  std::optional<Index> nonpositive;   // rel_pred_excess <= 0
  std::optional<Index> trace_below;   // rel_trace_err < trace_threshold
};

struct Fig1Result {
  csv::Table table;
  std::vector<Fig1Row> rows;
  double lambda = 0.0;
  double error_full = 0.0;
  Crossings random, pivoted;
};

/// 1..64, then about four points per octave up to n.
inline std::vector<Index> default_rank_grid(Index n) {
  std::set<Index> ps;
  for (Index p = 1; p <= std::min<Index>(64, n); ++p) ps.insert(p);
  for (double q = 64.0; q < static_cast<double>(n); q *= std::pow(2.0, 0.25))
    ps.insert(std::min(n, static_cast<Index>(std::lround(q))));
  ps.insert(n);
  return {ps.begin(), ps.end()};
}

inline Fig1Result run_fig1(const json& cfg) {
  const FixedDesignProblem prob = build_problem(cfg);
  const Index n = prob.n(), trials = get_count(cfg, "trials", 1);
  const std::uint64_t seed = get_seed(cfg);
  const double excess_thr = get_positive(cfg, "excess_threshold");
  const double trace_thr = get_positive(cfg, "trace_threshold");
  std::vector<Index> grid = get_counts(cfg, "p_grid", 1);
  if (grid.empty()) grid = default_rank_grid(n);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.back() > n) throw ConfigError("config: p_grid entries must be <= n");

  Fig1Result out;
  out.lambda = resolve_lambda(cfg, prob);
  out.error_full = expected_error(full_spectral_form(prob), prob.sigma2, out.lambda).total();
  const double tr = prob.k.trace();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ek(prob.k.entries, Eigen::EigenvaluesOnly);
  const double op = ek.eigenvalues().maxCoeff();

  auto measure = [&](const LowRankFactor& f, Fig1Row& row) {
    // K - L is PSD, so its trace norm is its trace.
    row.rel_trace_err += std::max(0.0, tr - f.phi.squaredNorm()) / tr;
    Eigen::MatrixXd r = prob.k.entries;
    r.noalias() -= f.phi * f.phi.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> er(r, Eigen::EigenvaluesOnly);
    row.rel_op_err += std::max(0.0, er.eigenvalues().maxCoeff()) / op;
    const double e = expected_error(spectral_form(f, prob.z), prob.sigma2, out.lambda).total();
    row.error += e;
    row.rel_pred_excess += (e - out.error_full) / out.error_full;
  };

  std::vector<std::vector<Index>> orders;
  for (Index t = 0; t < trials; ++t) orders.push_back(random_order(n, n, derive_seed(seed, static_cast<std::uint64_t>(t))));
  PivotedCholesky<DenseColumns> chol(DenseColumns{&prob.k}, prob.k.diag);

  for (Index p : grid) {
    Fig1Row rnd{p, SamplingMethod::random};
    for (const auto& order : orders)
      measure(nystrom(prob.k, ColumnSelection{{order.begin(), order.begin() + p}, SelectionMethod::uniform_random, seed, n}), rnd);
    const auto tn = static_cast<double>(trials);
    rnd.rel_trace_err /= tn;
    rnd.rel_op_err /= tn;
    rnd.rel_pred_excess /= tn;
    rnd.error /= tn;

    while (chol.rank() < p && chol.step()) {
    }
    Fig1Row piv{p, SamplingMethod::pivoted};
    measure(chol.factor(p), piv);
    out.rows.push_back(rnd);
    out.rows.push_back(piv);
  }

  for (const auto& r : out.rows) {
    Crossings& c = r.method == SamplingMethod::random ? out.random : out.pivoted;
    if (!c.excess_below && r.rel_pred_excess < excess_thr) c.excess_below = r.p;
    if (!c.nonpositive && r.rel_pred_excess <= 0.0) c.nonpositive = r.p;
    if (!c.trace_below && r.rel_trace_err < trace_thr) c.trace_below = r.p;
  }

  csv::Table& t = out.table = start_table(Experiment::fig1, cfg);
  t.comments.push_back("lambda=" + csv::format(out.lambda));
  t.comments.push_back("error_full=" + csv::format(out.error_full));
  auto show = [](const std::optional<Index>& v) { return v ? std::to_string(*v) : std::string("none"); };
  for (auto m : {SamplingMethod::random, SamplingMethod::pivoted}) {
    const Crossings& c = m == SamplingMethod::random ? out.random : out.pivoted;
    t.comments.push_back(std::string("crossing method=") + to_string(m) + " excess_below=" + show(c.excess_below) +
                         " excess_nonpositive=" + show(c.nonpositive) + " trace_below=" + show(c.trace_below));
  }
  t.header = {"p", "method", "rel_trace_err", "rel_op_err", "rel_pred_excess", "error"};
  for (const auto& r : out.rows)
    t.add_row(static_cast<long long>(r.p), to_string(r.method), r.rel_trace_err, r.rel_op_err, r.rel_pred_excess, r.error);
  return out;
}

// ---------------------------------------------------------------------------
// rates: optimal lambda, error and degrees of freedom as n grows
// ---------------------------------------------------------------------------

/// Exponents of n predicted by the asymptotic rate table, where they are
/// pure powers of n.
struct RateTargets {
  std::optional<double> lambda_star, err_star, d_ave;
};

inline RateTargets table_rates(const DecayLaw& mu, const DecayLaw& nu) {
  const bool pm = mu.kind == DecayKind::polynomial, pn = nu.kind == DecayKind::polynomial;
  RateTargets r;
  if (pm) {
    const double b = mu.rate;
    // Large RKHS (or exponential signal): limited by the kernel.
    if (!pn || 2.0 * nu.rate > 4.0 * b + 1.0) {
      r.lambda_star = -1.0 / (2.0 + 1.0 / (2.0 * b));
      r.err_star = 1.0 / (4.0 * b + 1.0) - 1.0;
      r.d_ave = 1.0 / (4.0 * b + 1.0);
    } else if (2.0 * nu.rate < 4.0 * b + 1.0) {
      r.lambda_star = -b / nu.rate;
      r.err_star = 1.0 / (2.0 * nu.rate) - 1.0;
      r.d_ave = 1.0 / (2.0 * nu.rate);
    }
  } else if (pn) {
    r.err_star = 1.0 / (2.0 * nu.rate) - 1.0;
    r.d_ave = 1.0 / (2.0 * nu.rate);
  } else if (nu.rate > 2.0 * mu.rate) {
    r.lambda_star = -0.5;
  } else if (nu.rate < 2.0 * mu.rate) {
    r.lambda_star = -mu.rate / nu.rate;
  }
  return r;
}

struct RatePoint {
  Index n = 0;
  double lambda_star = 0.0, err_star = 0.0, bias = 0.0, variance = 0.0, d_ave = 0.0, d_max = 0.0;
  bool saturated = false, at_grid_min = false;
};

struct RateFamily {
  SpectrumSpec spec;
  std::string label;
  std::vector<RatePoint> points;
  std::optional<RateFit> lambda_fit, error_fit, d_ave_fit, d_max_fit;
  std::vector<std::string> diagnostics;
  std::optional<Index> saturation_n0;  // smallest n from which every larger n is saturated
  RateTargets targets;
};

struct RateResult {
  csv::Table table;
  std::vector<RateFamily> families;
};

/// Exact spectrum of a grid problem without forming the Gram matrix.
inline SpectralForm grid_spectral_form(Index n, const SpectrumSpec& spec) {
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i) x[i] = static_cast<double>(i) / static_cast<double>(n);
  SpectralForm s;
  s.n = n;
  s.eigenvalues = eig_circulant(spec.mu, n);
  s.signal_energy = dft_energy(signal_values(spec.nu, x));
  return s;
}

inline RateResult run_rate_check(const json& cfg) {
  const double sigma2 = get_sigma2(cfg);
  std::vector<Index> ns = get_counts(cfg, "n_list", 2);
  if (ns.size() < 5) throw ConfigError("config: 'n_list' needs at least 5 sizes");
  for (std::size_t i = 1; i < ns.size(); ++i)
    if (ns[i] <= ns[i - 1]) throw ConfigError("config: 'n_list' must be strictly increasing");
  const Index drop_req = get_count(cfg, "drop_smallest", 0);
  // Keep at least four sizes for the fit.
  const auto drop = static_cast<std::size_t>(std::min<Index>(drop_req, static_cast<Index>(ns.size()) - 4));
  const json& fams = cfg.at("families");
  if (!fams.is_array() || fams.empty()) throw ConfigError("config: 'families' must be a non-empty list");

  RateResult out;
  for (const auto& fj : fams) {
    if (!fj.is_object() || !fj.contains("mu") || !fj.contains("nu") || fj.size() != 2)
      throw ConfigError("config: each family needs exactly 'mu' and 'nu'");
    RateFamily fam;
    fam.spec = parse_spectrum(fj);
    fam.label = "mu=" + describe(fam.spec.mu) + " nu=" + describe(fam.spec.nu);
    fam.targets = table_rates(fam.spec.mu, fam.spec.nu);
    for (Index n : ns) {
      const SpectralForm s = grid_spectral_form(n, fam.spec);
      const LambdaSearch ls = optimal_lambda(s, sigma2, default_lambda_grid(s.eigenvalues.sum() / static_cast<double>(n)));
      const ErrorTerms e = expected_error(s, sigma2, ls.lambda_star);
      const DofTraces d = dof_traces(s, ls.lambda_star);
      // Circulant Gram matrix: constant leverage, so d_max = d_trace.
      fam.points.push_back({n, ls.lambda_star, e.total(), e.bias, e.variance, d.d_ave, d.d_trace, ls.saturated, ls.at_grid_min});
    }
    for (std::size_t i = fam.points.size(); i-- > 0;) {
      if (!fam.points[i].saturated) break;
      fam.saturation_n0 = fam.points[i].n;
    }

    std::vector<RatePoint> used(fam.points.begin() + static_cast<std::ptrdiff_t>(drop), fam.points.end());
    auto pairs = [&](auto field) {
      std::vector<std::pair<double, double>> v;
      for (const auto& p : used) v.emplace_back(static_cast<double>(p.n), field(p));
      return v;
    };
    auto try_fit = [&](const char* what, const std::vector<std::pair<double, double>>& v) -> std::optional<RateFit> {
      try {
        return fit_rate(v);
      } catch (const ArgumentError& e) {
        fam.diagnostics.push_back(std::string("fit refused quantity=") + what + ": " + e.what());
        return std::nullopt;
      }
    };
    if (sigma2 == 0.0) {
      fam.diagnostics.push_back("fit refused: sigma2 = 0, lambda* is pinned at the grid minimum and no rate is defined");
    } else {
      if (std::any_of(used.begin(), used.end(), [](const RatePoint& p) { return p.at_grid_min; }))
        fam.diagnostics.push_back("fit refused quantity=lambda_star: lambda* pinned at the grid minimum");
      else
        fam.lambda_fit = try_fit("lambda_star", pairs([](const RatePoint& p) { return p.lambda_star; }));
      fam.error_fit = try_fit("err_star", pairs([](const RatePoint& p) { return p.err_star; }));
      fam.d_ave_fit = try_fit("d_ave", pairs([](const RatePoint& p) { return p.d_ave; }));
      fam.d_max_fit = try_fit("d_max", pairs([](const RatePoint& p) { return p.d_max; }));
    }
    out.families.push_back(std::move(fam));
  }

  csv::Table& t = out.table = start_table(Experiment::rates, cfg);
  t.comments.push_back("fit_drops_smallest=" + std::to_string(drop));
  auto target = [](const std::optional<double>& v) { return v ? csv::format(*v) : std::string("none"); };
  for (std::size_t f = 0; f < out.families.size(); ++f) {
    const RateFamily& fam = out.families[f];
    const std::string tag = "family=" + std::to_string(f) + " ";
    t.comments.push_back(tag + fam.label);
    auto fit_line = [&](const char* q, const std::optional<RateFit>& fit, const std::optional<double>& tgt) {
      if (fit)
        t.comments.push_back(tag + "fit quantity=" + q + " exponent=" + csv::format(fit->exponent) +
                             " r2=" + csv::format(fit->r_squared) + " table=" + target(tgt));
    };
    fit_line("lambda_star", fam.lambda_fit, fam.targets.lambda_star);
    fit_line("err_star", fam.error_fit, fam.targets.err_star);
    fit_line("d_ave", fam.d_ave_fit, fam.targets.d_ave);
    fit_line("d_max", fam.d_max_fit, fam.targets.d_ave);
    for (const auto& d : fam.diagnostics) t.comments.push_back(tag + d);
    t.comments.push_back(tag + "saturation_n0=" + (fam.saturation_n0 ? std::to_string(*fam.saturation_n0) : std::string("none")));
  }
  t.header = {"family", "n", "lambda_star", "err_star", "bias", "variance", "d_ave", "d_max", "saturated", "at_grid_min"};
  for (std::size_t f = 0; f < out.families.size(); ++f)
    for (const auto& p : out.families[f].points)
      t.add_row(static_cast<long long>(f), static_cast<long long>(p.n), p.lambda_star, p.err_star, p.bias, p.variance,
                p.d_ave, p.d_max, p.saturated, p.at_grid_min);
  return out;
}

// ---------------------------------------------------------------------------
// rank-ratio: sufficient rank over degrees of freedom
// ---------------------------------------------------------------------------

struct RankRatioRow {
  double lambda = 0.0;
  Dof dof;
  Index p_random = 0, p_pivoted = 0;
};

struct RankRatioResult {
  csv::Table table;
  std::vector<RankRatioRow> rows;
  double lambda_star = 0.0;
};

inline RankRatioResult run_rank_ratio(const json& cfg) {
  const FixedDesignProblem prob = build_problem(cfg);
  const Index trials = get_count(cfg, "trials", 1);
  const std::uint64_t seed = get_seed(cfg);
  const double tol = get_positive(cfg, "tol");
  RankRatioResult out;
  out.lambda_star = default_optimal_lambda(prob).lambda_star;
  std::vector<double> grid = get_reals(cfg, "lambda_grid");
  if (grid.empty()) {
    const double w = get_positive(cfg, "lambda_window");
    if (w < 1.0) throw ConfigError("config: 'lambda_window' must be >= 1");
    grid = log_grid(out.lambda_star / w, out.lambda_star * w, get_count(cfg, "lambda_points", 1));
  }
  for (double lam : grid)
    if (!(lam > 0.0)) throw ConfigError("config: 'lambda_grid' entries must be > 0");

  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double lam = grid[i];
    RankRatioRow row;
    row.lambda = lam;
    row.dof = problem_dof(prob, lam);
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    row.p_random = sufficient_rank(prob, lam, tol, trials, SamplingMethod::random, s).p_star;
    row.p_pivoted = sufficient_rank(prob, lam, tol, 1, SamplingMethod::pivoted, s).p_star;
    out.rows.push_back(row);
  }

  csv::Table& t = out.table = start_table(Experiment::rank_ratio, cfg);
  t.comments.push_back("lambda_star=" + csv::format(out.lambda_star));
  t.header = {"lambda", "d_max", "d_trace", "d_ave", "p_star_random", "p_star_pivoted", "ratio_random_dmax",
              "ratio_pivoted_dmax", "ratio_random_dave", "ratio_pivoted_dave", "dmax_over_dave"};
  for (const auto& r : out.rows) {
    const double pr = static_cast<double>(r.p_random), pp = static_cast<double>(r.p_pivoted);
    t.add_row(r.lambda, r.dof.d_max, r.dof.d_trace, r.dof.d_ave, static_cast<long long>(r.p_random),
              static_cast<long long>(r.p_pivoted), pr / r.dof.d_max, pp / r.dof.d_max, pr / r.dof.d_ave,
              pp / r.dof.d_ave, r.dof.d_max / r.dof.d_ave);
  }
  return out;
}

// ---------------------------------------------------------------------------
// verify-theorem
// ---------------------------------------------------------------------------

struct TheoremRow {
  Index p = 0;
  bool from_bound = false;
  TheoremCheck check;
};

struct TheoremResult {
  csv::Table table;
  std::vector<TheoremRow> rows;
  double lambda = 0.0, delta = 0.0, d_max = 0.0, r2 = 0.0;
  RankBound bound;
};

inline TheoremResult run_verify_theorem(const json& cfg) {
  const FixedDesignProblem prob = build_problem(cfg);
  const Index n = prob.n(), trials = get_count(cfg, "trials", 1);
  const std::uint64_t seed = get_seed(cfg);
  TheoremResult out;
  out.delta = get_positive(cfg, "delta");
  if (out.delta >= 1.0) throw ConfigError("config: 'delta' must be in (0,1)");
  out.lambda = resolve_lambda(cfg, prob);
  out.d_max = problem_dof(prob, out.lambda).d_max;
  out.r2 = prob.k.max_diag();
  out.bound = theorem_rank_bound(out.d_max, out.delta, n, out.r2, out.lambda);

  std::vector<std::pair<Index, bool>> ps;
  // A vacuous bound asks for nothing; p = 1 is then the honest test.
  const Index p_bound = out.bound.status == BoundStatus::vacuous ? 1 : std::min(n, out.bound.rank);
  ps.emplace_back(p_bound, true);
  std::vector<Index> grid = get_counts(cfg, "p_grid", 1);
  if (grid.empty()) {
    const Index lo = std::min(n, static_cast<Index>(std::ceil(4.0 * out.d_max)));
    const Index pts = get_count(cfg, "p_points", 1);
    for (double v : log_grid(static_cast<double>(std::max<Index>(lo, 1)), static_cast<double>(n), pts))
      grid.push_back(std::min(n, static_cast<Index>(std::lround(v))));
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  for (Index p : grid) {
    if (p > n) throw ConfigError("config: p_grid entries must be <= n");
    ps.emplace_back(p, false);
  }
  for (const auto& [p, from_bound] : ps)
    out.rows.push_back({p, from_bound,
                        verify_theorem(prob, out.lambda, out.delta, p, trials, derive_seed(seed, static_cast<std::uint64_t>(p)))});

  csv::Table& t = out.table = start_table(Experiment::verify_theorem, cfg);
  t.comments.push_back("lambda=" + csv::format(out.lambda));
  t.comments.push_back("d_max=" + csv::format(out.d_max));
  t.comments.push_back("R2=" + csv::format(out.r2));
  t.comments.push_back(std::string("rank_bound status=") + (out.bound.status == BoundStatus::ok ? "ok" : "vacuous") +
                       " value=" + csv::format(out.bound.value) + " rank=" + std::to_string(out.bound.rank));
  t.header = {"p", "source", "mean_ratio", "bound", "holds", "exceed_fraction", "high_prob_threshold", "high_prob_bound",
              "max_ratio"};
  for (const auto& r : out.rows) {
    const auto& c = r.check;
    t.add_row(static_cast<long long>(r.p), r.from_bound ? "bound" : "grid", c.mean_ratio, c.bound, c.holds,
              c.exceed_fraction, c.high_prob_threshold, c.high_prob_bound,
              *std::max_element(c.ratios.begin(), c.ratios.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// verify-lemma
// ---------------------------------------------------------------------------

/// n x r test matrices for the covariance tail check.
///   gaussian: i.i.d. N(0,1) entries.
///   kernel:   Psi = U_r S_r^{1/2} from a periodic kernel on a random design.
///   leverage: Gaussian rows, the first n/20 of them scaled by 10, so a few
///             rows carry most of the norm.
inline Eigen::MatrixXd lemma_matrix(const std::string& family, Index n, Index r, std::uint64_t seed) {
  if (r < 1 || r > n) throw ConfigError("config: need 1 <= r <= n");
  auto gaussian = [&]() {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(n, r);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < r; ++j) m(i, j) = normal(rng);
    return m;
  };
  if (family == "gaussian") return gaussian();
  if (family == "leverage") {
    Eigen::MatrixXd m = gaussian();
    m.topRows(std::max<Index>(1, n / 20)) *= 10.0;
    return m;
  }
  if (family == "kernel") {
    const auto prob = random_design_problem(n, SpectrumSpec{polynomial_decay(1.0), polynomial_decay(8.0)}, 0.0, seed);
    const EigenSystem es = eigensystem(prob.k.entries);
    // Eigenvalues come in ascending order.
    return es.vectors.rightCols(r) * es.values.tail(r).cwiseSqrt().asDiagonal();
  }
  throw ConfigError("config: lemma family must be gaussian, kernel or leverage");
}

struct LemmaRun {
  std::string family;
  TailCheck check;
};

struct LemmaResult {
  csv::Table table;
  std::vector<LemmaRun> runs;
  Index violations = 0;
};

inline LemmaResult run_verify_lemma(const json& cfg) {
  const Index n = get_count(cfg, "n", 2), r = get_count(cfg, "r", 1), trials = get_count(cfg, "trials", 1);
  const Index t_points = get_count(cfg, "t_points", 1);
  const double t_max = get_positive(cfg, "t_max");  // grid end, in units of lambda_max(Psi^T Psi / n)
  const std::uint64_t seed = get_seed(cfg);
  const std::vector<Index> p_list = get_counts(cfg, "p_list", 1);
  const json& fams = cfg.at("families");
  if (!fams.is_array() || fams.empty()) throw ConfigError("config: 'families' must be a non-empty list");
  for (Index p : p_list)
    if (p > n) throw ConfigError("config: p_list entries must be <= n");

  LemmaResult out;
  for (const auto& fj : fams) {
    if (!fj.is_string()) throw ConfigError("config: 'families' entries must be strings");
    const std::string family = fj.get<std::string>();
    const Eigen::MatrixXd psi = lemma_matrix(family, n, r, derive_seed(seed, "matrix:" + family));
    const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(psi.transpose() * psi / static_cast<double>(n),
                                                                        Eigen::EigenvaluesOnly)
                            .eigenvalues()
                            .maxCoeff();
    std::vector<double> ts;
    for (Index k = 1; k <= t_points; ++k) ts.push_back(t_max * lmax * static_cast<double>(k) / static_cast<double>(t_points));
    for (Index p : p_list) {
      const std::uint64_t s = derive_seed(derive_seed(seed, "draws:" + family), static_cast<std::uint64_t>(p));
      out.runs.push_back({family, verify_lemma_tail(psi, p, ts, trials, s)});
    }
  }

  csv::Table& t = out.table = start_table(Experiment::verify_lemma, cfg);
  t.header = {"family", "p", "t", "empirical_prob", "std_err", "bound", "violated", "lambda_max", "R2"};
  for (const auto& run : out.runs)
    for (const auto& row : run.check.rows) {
      const bool bad = row.empirical_prob > row.bound;
      out.violations += bad;
      t.add_row(run.family, static_cast<long long>(run.check.p), row.t, row.empirical_prob, row.std_error, row.bound,
                bad, run.check.lambda_max, run.check.r2);
    }
  t.comments.push_back("violations=" + std::to_string(out.violations));
  return out;
}

}  // namespace nkrr::harness
