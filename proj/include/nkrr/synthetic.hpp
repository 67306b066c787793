#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "nkrr/csv.hpp"
#include "nkrr/errors.hpp"
#include "nkrr/kernels.hpp"
#include "nkrr/rng.hpp"
#include "nkrr/spectral.hpp"

namespace nkrr {

enum class DecayKind { polynomial, exponential };

/// a_i = amplitude * i^{-2 rate} (polynomial) or amplitude * e^{-rate i}
/// (exponential), for i >= 1. Used both for kernel eigenvalues mu_i (rate
/// beta or rho) and for signal coefficients nu_i (rate delta or kappa).
struct DecayLaw {
  DecayKind kind = DecayKind::polynomial;
  double rate = 1.0;
  double amplitude = 1.0;

  double operator()(double i) const {
    return kind == DecayKind::polynomial ? amplitude * std::pow(i, -2.0 * rate) : amplitude * std::exp(-rate * i);
  }

  void validate(const char* what) const {
    if (kind == DecayKind::polynomial && !(rate > 0.5))
      throw ConfigError(std::string(what) + ": polynomial decay needs exponent > 1/2");
    if (kind == DecayKind::exponential && !(rate > 0.0))
      throw ConfigError(std::string(what) + ": exponential decay needs rate > 0");
    if (!(amplitude > 0.0)) throw ConfigError(std::string(what) + ": amplitude must be > 0");
  }
};

inline DecayLaw polynomial_decay(double rate, double amplitude = 1.0) {
  return {DecayKind::polynomial, rate, amplitude};
}
inline DecayLaw exponential_decay(double rate, double amplitude = 1.0) {
  return {DecayKind::exponential, rate, amplitude};
}

/// Decay of the kernel eigenvalues (mu) and of the signal coefficients (nu).
struct SpectrumSpec {
  DecayLaw mu;
  DecayLaw nu;

  void validate() const {
    mu.validate("mu");
    nu.validate("nu");
    if (mu.kind == DecayKind::polynomial) {
      const double r = std::round(mu.rate);
      if (r != mu.rate || !detail::beta_supported(static_cast<int>(r)))
        throw ConfigError("mu: polynomial kernel needs beta in {1, 2, 3, 4, 8}");
    }
  }
};

/// (2 pi)^{-2 beta}: the scale of the uncorrected closed form B_{2 beta}(t)/(2 beta)!
/// relative to sum 2 i^{-2 beta} cos(2 i pi t).
inline double bernoulli_normalization(int beta) { return std::pow(2.0 * std::numbers::pi, -2.0 * beta); }

/// Periodic kernel whose Fourier coefficients are mu.
inline KernelSpec kernel_for(const DecayLaw& mu) {
  if (mu.kind == DecayKind::polynomial) return PeriodicPolynomial{static_cast<int>(std::lround(mu.rate)), mu.amplitude};
  return PeriodicExponential{mu.rate, mu.amplitude};
}

// ---------------------------------------------------------------------------
// Signal f(x) = sum_i 2 nu_i^{1/2} cos(2 i pi x)
// ---------------------------------------------------------------------------

/// Truncation cap for signal series without a closed form.
inline constexpr Index kMaxSignalTerms = Index{1} << 17;

/// Number of series terms kept: smallest m with sqrt(nu_{m+1}) m < 1e-10 sqrt(nu_1),
/// capped at kMaxSignalTerms.
inline Index signal_terms(const DecayLaw& nu) {
  const double head = std::sqrt(nu(1.0));
  if (nu.kind == DecayKind::exponential) {
    Index m = 1;
    while (m < kMaxSignalTerms && std::sqrt(nu(static_cast<double>(m + 1))) * static_cast<double>(m) >= 1e-10 * head) ++m;
    return m;
  }
  // sqrt(nu_{m+1}) m = a^{1/2} (m+1)^{-delta} m; solve on a doubling grid then bisect.
  auto ok = [&](Index m) { return std::sqrt(nu(static_cast<double>(m + 1))) * static_cast<double>(m) < 1e-10 * head; };
  Index hi = 1;
  while (hi < kMaxSignalTerms && !ok(hi)) hi *= 2;
  if (hi >= kMaxSignalTerms) return kMaxSignalTerms;
  Index lo = hi / 2;
  while (hi - lo > 1) {
    Index mid = (lo + hi) / 2;
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

/// Signal values at the given points. Uses the periodic kernel closed forms
/// when nu_i^{1/2} is itself a supported kernel decay (exponential nu, or
/// polynomial nu with delta/2 in {1,2,3,4,8}); otherwise a truncated series.
inline Eigen::VectorXd signal_values(const DecayLaw& nu, const Eigen::VectorXd& x) {
  Eigen::VectorXd f(x.size());
  const double root_amp = std::sqrt(nu.amplitude);
  if (nu.kind == DecayKind::exponential) {
    for (Index i = 0; i < x.size(); ++i) f[i] = periodic_exp_kernel(x[i], 0.0, nu.rate / 2.0, root_amp);
    return f;
  }
  const double half = nu.rate / 2.0;
  if (std::round(half) == half && detail::beta_supported(static_cast<int>(half))) {
    for (Index i = 0; i < x.size(); ++i) f[i] = periodic_poly_kernel(x[i], 0.0, static_cast<int>(half), root_amp);
    return f;
  }
  const Index m = signal_terms(nu);
  Eigen::VectorXd coef(m);
  for (Index s = 0; s < m; ++s) coef[s] = 2.0 * std::sqrt(nu(static_cast<double>(s + 1)));
  Eigen::VectorXd terms(m);
  for (Index i = 0; i < x.size(); ++i) {
    // cos(2 pi s x) by complex rotation, resynchronized every 256 terms.
    const double theta = 2.0 * std::numbers::pi * frac(x[i]);
    const std::complex<double> rot(std::cos(theta), std::sin(theta));
    std::complex<double> cur = rot;
    for (Index s = 0; s < m; ++s) {
      if (s % 256 == 0) cur = std::polar(1.0, theta * static_cast<double>(s + 1));
      terms[s] = coef[s] * cur.real();
      cur *= rot;
    }
    // Smallest terms first.
    double acc = 0.0;
    for (Index s = m - 1; s >= 0; --s) acc += terms[s];
    f[i] = acc;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Circulant spectra
// ---------------------------------------------------------------------------

namespace detail {

/// sum_{h>=1} mu(a + h n) for a in (-n, n), polynomial mu. Terms are added
/// until the midpoint-rule estimate of the remaining tail is accurate to
/// tail_tol relative to `scale`, then that estimate is added.
inline double polynomial_tail(const DecayLaw& mu, double a, double n, double tail_tol, double scale) {
  const double two_beta = 2.0 * mu.rate;
  double sum = 0.0;
  for (Index h = 1;; ++h) {
    sum += mu(a + static_cast<double>(h) * n);
    const double edge = a + (static_cast<double>(h) + 0.5) * n;
    const double remainder = mu.amplitude * std::pow(edge, 1.0 - two_beta) / (n * (two_beta - 1.0));
    const double hh = static_cast<double>(h);
    if (remainder * two_beta * two_beta / (hh * hh) < tail_tol * (scale + sum) || h >= 1000000) return sum + remainder;
  }
}

}  // namespace detail

/// Exact eigenvalues of the periodic-kernel Gram matrix on x_i = (i-1)/n, in
/// discrete Fourier order k = 0..n-1:
/// lambda_k = n (mu_k + sum_{h>=1} mu_{k+hn} + sum_{h>=1} mu_{hn-k}), mu_0 = 0.
inline Eigen::VectorXd eig_circulant(const DecayLaw& mu, Index n, double tail_tol = 1e-13) {
  mu.validate("mu");
  if (n < 1) throw ArgumentError("eig_circulant: n must be >= 1");
  if (!(tail_tol > 0.0)) throw ArgumentError("eig_circulant: tail_tol must be > 0");
  const double nd = static_cast<double>(n);
  Eigen::VectorXd eig(n);
  for (Index k = 0; k < n; ++k) {
    const double kd = static_cast<double>(k);
    const double head = k > 0 ? mu(kd) : 0.0;
    double tails;
    if (mu.kind == DecayKind::exponential) {
      const double denom = -std::expm1(-mu.rate * nd);
      tails = mu.amplitude * (std::exp(-mu.rate * (kd + nd)) + std::exp(-mu.rate * (nd - kd))) / denom;
    } else {
      const double scale = std::max(head, mu(kd + nd));
      tails = detail::polynomial_tail(mu, kd, nd, tail_tol, scale) + detail::polynomial_tail(mu, -kd, nd, tail_tol, scale);
    }
    eig[k] = nd * (head + tails);
  }
  return eig;
}

/// |DFT(z)_k|^2 with the unitary normalization, k = 0..n-1.
inline Eigen::VectorXd dft_energy(const Eigen::VectorXd& z) {
  const Index n = z.size();
  Eigen::VectorXd c(n), s(n);
  for (Index j = 0; j < n; ++j) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
    c[j] = std::cos(a);
    s[j] = std::sin(a);
  }
  Eigen::VectorXd out(n);
  for (Index k = 0; k < n; ++k) {
    double re = 0.0, im = 0.0;
    Index idx = 0;
    for (Index j = 0; j < n; ++j) {
      re += z[j] * c[idx];
      im -= z[j] * s[idx];
      idx += k;
      if (idx >= n) idx -= n;
    }
    out[k] = (re * re + im * im) / static_cast<double>(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Problems
// ---------------------------------------------------------------------------

/// Deterministic design x_1..x_n with kernel matrix, noiseless target z and
/// noise variance sigma2.
struct FixedDesignProblem {
  Eigen::MatrixXd points;  // n x 1
  KernelSpec kernel;
  KernelMatrix k;
  Eigen::VectorXd z;
  double sigma2 = 0.0;
  std::optional<SpectrumSpec> spectrum;
  std::optional<Eigen::VectorXd> exact_eigs;  // Fourier order, grid designs only
  std::uint64_t seed = 0;

  Index n() const { return z.size(); }
};

inline FixedDesignProblem make_problem(Eigen::VectorXd x, const SpectrumSpec& spec, double sigma2) {
  spec.validate();
  if (sigma2 < 0.0) throw ConfigError("sigma2 must be >= 0");
  FixedDesignProblem p;
  p.points = x;
  p.kernel = kernel_for(spec.mu);
  p.k = gram(p.points, p.kernel);
  p.z = signal_values(spec.nu, x);
  p.sigma2 = sigma2;
  p.spectrum = spec;
  return p;
}

/// x_i = (i-1)/n; the Gram matrix is circulant and its exact spectrum is attached.
inline FixedDesignProblem grid_problem(Index n, const SpectrumSpec& spec, double sigma2) {
  if (n < 2) throw ArgumentError("grid_problem: n must be >= 2");
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i) x[i] = static_cast<double>(i) / static_cast<double>(n);
  FixedDesignProblem p = make_problem(std::move(x), spec, sigma2);
  p.exact_eigs = eig_circulant(spec.mu, n);
  return p;
}

/// x_i i.i.d. uniform on [0,1].
inline FixedDesignProblem random_design_problem(Index n, const SpectrumSpec& spec, double sigma2, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("random_design_problem: n must be >= 2");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i) x[i] = unif(rng);
  FixedDesignProblem p = make_problem(std::move(x), spec, sigma2);
  p.seed = seed;
  return p;
}

/// trials x n matrix of i.i.d. N(0, sigma2) noise; row t depends only on (seed, t).
inline Eigen::MatrixXd draw_noise(Index n, double sigma2, Index trials, std::uint64_t seed) {
  if (sigma2 < 0.0) throw ArgumentError("draw_noise: sigma2 must be >= 0");
  Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(trials, n);
  if (sigma2 == 0.0) return eps;
  const double sd = std::sqrt(sigma2);
  for (Index t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::normal_distribution<double> normal(0.0, sd);
    for (Index j = 0; j < n; ++j) eps(t, j) = normal(rng);
  }
  return eps;
}

/// Spectral form of the full kernel matrix. Grid designs use the exact
/// circulant spectrum with DFT energies of z; other designs a dense
/// eigendecomposition.
inline SpectralForm full_spectral_form(const FixedDesignProblem& p) {
  if (p.exact_eigs) {
    SpectralForm s;
    s.n = p.n();
    s.eigenvalues = *p.exact_eigs;
    s.signal_energy = dft_energy(p.z);
    return s;
  }
  return spectral_form(p.k.entries, p.z);
}

// ---------------------------------------------------------------------------
// Serialization: (x, z) as CSV plus a key=value metadata sidecar
// ---------------------------------------------------------------------------

inline std::string describe_decay(const DecayLaw& d) {
  return std::string(d.kind == DecayKind::polynomial ? "polynomial" : "exponential") + ":" + csv::format(d.rate) + ":" +
         csv::format(d.amplitude);
}

inline void write_problem_csv(std::ostream& os, const FixedDesignProblem& p) {
  csv::Table t;
  t.header = {"i", "x", "z"};
  for (Index i = 0; i < p.n(); ++i) t.add_row(i, p.points(i, 0), p.z[i]);
  csv::write(os, t);
}

inline void write_problem_meta(std::ostream& os, const FixedDesignProblem& p) {
  os << "n=" << p.n() << '\n';
  os << "design=" << (p.exact_eigs ? "grid" : "random") << '\n';
  os << "seed=" << p.seed << '\n';
  os << "sigma2=" << csv::format(p.sigma2) << '\n';
  os << "kernel=" << describe(p.kernel) << '\n';
  if (p.spectrum) {
    os << "mu=" << describe_decay(p.spectrum->mu) << '\n';
    os << "nu=" << describe_decay(p.spectrum->nu) << '\n';
  }
}

/// Points (n x 1) and z from a problem CSV.
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> read_problem_csv(std::istream& is) {
  const csv::Table t = csv::read(is);
  const auto xc = t.column("x"), zc = t.column("z");
  if (!xc || !zc) throw DataError(DataErrorCode::parse_failure, "problem csv: need x and z columns");
  const auto n = static_cast<Index>(t.rows.size());
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd z(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    auto a = csv::parse_double(row.at(*xc)), b = csv::parse_double(row.at(*zc));
    if (!a || !b) throw DataError(DataErrorCode::non_numeric, "problem csv: row " + std::to_string(i));
    x(i, 0) = *a;
    z[i] = *b;
  }
  return {std::move(x), std::move(z)};
}

}  // namespace nkrr
