#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "nkrr/errors.hpp"
#include "nkrr/kernels.hpp"
#include "nkrr/lowrank.hpp"

namespace nkrr {

/// A PSD matrix M of size n and a target z seen through the eigenbasis of M:
/// eigenvalues s_k with energies (u_k^T z)^2, plus the energy of z in the
/// null space of M. Every fixed-design quantity of the ridge smoother is a
/// scalar function of this, so one decomposition serves a whole lambda grid.
struct SpectralForm {
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd signal_energy;
  double null_energy = 0.0;
  Index n = 0;
};

struct ErrorTerms {
  double bias = 0.0;
  double variance = 0.0;
  double total() const { return bias + variance; }
};

/// bias = n lambda^2 z^T (M + n lambda I)^{-2} z,
/// variance = sigma^2/n tr M^2 (M + n lambda I)^{-2}.
inline ErrorTerms expected_error(const SpectralForm& s, double sigma2, double lambda) {
  if (!(lambda > 0.0)) throw ArgumentError("expected_error: lambda must be > 0");
  if (sigma2 < 0.0) throw ArgumentError("expected_error: sigma2 must be >= 0");
  const double nl = static_cast<double>(s.n) * lambda;
  double bias = 0.0, dof = 0.0;
  for (Index k = 0; k < s.eigenvalues.size(); ++k) {
    const double d = s.eigenvalues[k] + nl;
    bias += s.signal_energy[k] / (d * d);
    const double h = s.eigenvalues[k] / d;
    dof += h * h;
  }
  // (M + n lambda I)^{-1} acts as 1/(n lambda) on the null space.
  bias = nl * lambda * bias + s.null_energy / static_cast<double>(s.n);
  return {bias, sigma2 / static_cast<double>(s.n) * dof};
}

/// tr M (M + n lambda I)^{-1} and tr M^2 (M + n lambda I)^{-2}.
struct DofTraces {
  double d_trace = 0.0;
  double d_ave = 0.0;
};

inline DofTraces dof_traces(const SpectralForm& s, double lambda) {
  const double nl = static_cast<double>(s.n) * lambda;
  DofTraces out;
  for (Index k = 0; k < s.eigenvalues.size(); ++k) {
    const double h = s.eigenvalues[k] / (s.eigenvalues[k] + nl);
    out.d_trace += h;
    out.d_ave += h * h;
  }
  return out;
}

/// Dense symmetric eigendecomposition; tiny negative eigenvalues from
/// roundoff are clamped to zero.
struct EigenSystem {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

inline EigenSystem eigensystem(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericalError("eigensystem: solver failed");
  const Eigen::VectorXd& w = es.eigenvalues();
  const double wmax = w.size() ? std::max(w.maxCoeff(), 0.0) : 0.0;
  if (w.size() && w.minCoeff() < -1e-8 * std::max(wmax, 1e-300))
    throw NumericalError("eigensystem: matrix is not positive semidefinite");
  return {w.cwiseMax(0.0), es.eigenvectors()};
}

inline SpectralForm spectral_form(const EigenSystem& es, const Eigen::VectorXd& z) {
  if (es.vectors.rows() != z.size()) throw ArgumentError("spectral_form: size mismatch");
  SpectralForm s;
  s.n = z.size();
  s.eigenvalues = es.values;
  s.signal_energy = (es.vectors.transpose() * z).cwiseAbs2();
  return s;
}

inline SpectralForm spectral_form(const Eigen::MatrixXd& m, const Eigen::VectorXd& z) {
  return spectral_form(eigensystem(m), z);
}

/// Spectral form of L = phi phi^T through a thin SVD of phi, O(n p^2).
inline SpectralForm spectral_form(const LowRankFactor& f, const Eigen::VectorXd& z) {
  if (f.rows() != z.size()) throw ArgumentError("spectral_form: size mismatch");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(f.phi, Eigen::ComputeThinU);
  SpectralForm s;
  s.n = z.size();
  s.eigenvalues = svd.singularValues().cwiseAbs2();
  s.signal_energy = (svd.matrixU().transpose() * z).cwiseAbs2();
  s.null_energy = std::max(0.0, z.squaredNorm() - s.signal_energy.sum());
  return s;
}

}  // namespace nkrr
