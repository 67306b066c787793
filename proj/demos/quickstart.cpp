// Fit kernel ridge regression on a synthetic periodic problem with the full
// kernel matrix and with a pivoted low-rank factor, and compare the expected
// in-sample errors.

#include <iostream>

#include "nkrr/lowrank.hpp"
#include "nkrr/regression.hpp"
#include "nkrr/statistics.hpp"
#include "nkrr/synthetic.hpp"

int main() {
  using namespace nkrr;
  const auto prob = grid_problem(400, SpectrumSpec{polynomial_decay(1), polynomial_decay(8)}, 1.0);
  const auto ls = optimal_lambda(prob, default_lambda_grid(prob.k.trace() / prob.n()));
  const Dof d = problem_dof(prob, ls.lambda_star);
  std::cout << "lambda* = " << ls.lambda_star << ", d = " << d.d_max << ", d_ave = " << d.d_ave << '\n';

  const double full = expected_error(full_spectral_form(prob), prob.sigma2, ls.lambda_star).total();
  for (Index p : {4, 8, 16, 32}) {
    const LowRankFactor f = pivoted_ichol(prob.k, PivotStop{p, std::nullopt});
    const double e = bias_variance(f, prob.z, prob.sigma2, ls.lambda_star).total();
    std::cout << "p = " << p << "  error ratio = " << e / full << '\n';
  }

  // One noisy draw, solved through the factor.
  const Eigen::VectorXd y = prob.z + draw_noise(prob.n(), prob.sigma2, 1, 7).row(0).transpose();
  const auto fit = krr_lowrank(pivoted_ichol(prob.k, PivotStop{32, std::nullopt}), y, ls.lambda_star);
  std::cout << "in-sample error of one draw: " << (fit.zhat - prob.z).squaredNorm() / prob.n() << '\n';
}
