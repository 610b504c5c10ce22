#pragma once

#include <Eigen/Dense>
#include <vector>

#include "milsurv/survstats.hpp"

namespace milsurv::survstats {

struct CoxFitOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  double loglik_tolerance = 1e-10;  // relative change
  // |beta_j| * sd(x_j) above this is treated as a diverging coefficient.
  double monotone_threshold = 20.0;
};

struct CoxFit {
  Eigen::VectorXd beta;  // one per covariate column; 0 for aliased columns
  Eigen::VectorXd se;    // NaN for aliased columns
  std::vector<bool> aliased;
  double loglik = 0.0;       // Breslow partial log-likelihood at beta
  double loglik_null = 0.0;  // at beta = 0
  bool converged = false;
  int iterations = 0;
};

// Breslow partial log-likelihood of ds.covariates at beta.
double cox_loglik(const SurvivalDataset& ds, const Eigen::VectorXd& beta);

// Newton-Raphson with step halving. Constant columns and columns that are
// linear combinations of earlier ones are aliased: fixed at 0 and flagged.
// Throws EstimationError without events, MonotoneLikelihoodError when a
// coefficient diverges, ConvergenceError after max_iterations.
CoxFit cox_fit(const SurvivalDataset& ds, const CoxFitOptions& options = {});

struct LrtResult {
  double chi_square = 0.0;
  double p = 1.0;
  int df = 0;
};

// 2 (ll_full - ll_reduced). A negative statistic beyond 1e-6 raises
// NestingError; smaller negative values are rounded to 0.
LrtResult likelihood_ratio_test(const CoxFit& full, const CoxFit& reduced, int df_added);

}  // namespace milsurv::survstats
