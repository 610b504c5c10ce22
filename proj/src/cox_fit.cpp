#include "milsurv/cox_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "milsurv/errors.hpp"

namespace milsurv::survstats {

namespace {

struct Derivs {
  double loglik = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd info;  // negative Hessian
};

// Subjects sorted by descending time; tied times are adjacent.
std::vector<std::size_t> by_time_desc(const SurvivalDataset& ds) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ds.time[a] > ds.time[b]; });
  return order;
}

Derivs evaluate(const SurvivalDataset& ds, const std::vector<std::size_t>& order, const Eigen::MatrixXd& X,
                const Eigen::VectorXd& beta, bool second_order) {
  const auto p = X.cols();
  const Eigen::VectorXd eta = X * beta;
  const double shift = eta.size() ? eta.maxCoeff() : 0.0;

  Derivs d;
  d.grad = Eigen::VectorXd::Zero(p);
  d.info = Eigen::MatrixXd::Zero(p, p);
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  const std::size_t n = order.size();
  for (std::size_t a = 0; a < n;) {
    std::size_t b = a;
    while (b < n && ds.time[order[b]] == ds.time[order[a]]) {
      const auto i = static_cast<Eigen::Index>(order[b]);
      const double w = std::exp(eta(i) - shift);
      s0 += w;
      s1 += w * X.row(i).transpose();
      if (second_order) s2.noalias() += w * X.row(i).transpose() * X.row(i);
      ++b;
    }
    const Eigen::VectorXd mean = s1 / s0;
    for (std::size_t k = a; k < b; ++k) {
      const auto i = static_cast<Eigen::Index>(order[k]);
      if (!ds.event[order[k]]) continue;
      d.loglik += eta(i) - shift - std::log(s0);
      d.grad += X.row(i).transpose() - mean;
      if (second_order) d.info += s2 / s0 - mean * mean.transpose();
    }
    a = b;
  }
  return d;
}

}  // namespace

double cox_loglik(const SurvivalDataset& ds, const Eigen::VectorXd& beta) {
  ds.validate();
  if (beta.size() != ds.covariates.cols()) throw PreconditionError("beta length differs from covariate columns");
  return evaluate(ds, by_time_desc(ds), ds.covariates, beta, false).loglik;
}

CoxFit cox_fit(const SurvivalDataset& ds, const CoxFitOptions& options) {
  ds.validate();
  if (ds.events() == 0) throw EstimationError("Cox fit needs at least one event");
  const auto n = static_cast<Eigen::Index>(ds.size());
  const auto p = ds.covariates.cols();
  if (p > 0 && ds.covariates.rows() != n) throw ValidationError("covariate rows differ from subjects");

  // Center, then alias constant columns and columns already spanned by the
  // kept ones.
  Eigen::MatrixXd centered = ds.covariates;
  Eigen::VectorXd sd(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    centered.col(j).array() -= centered.col(j).mean();
    sd(j) = n > 1 ? std::sqrt(centered.col(j).squaredNorm() / static_cast<double>(n - 1)) : 0.0;
  }
  CoxFit fit;
  fit.aliased.assign(static_cast<std::size_t>(p), false);
  std::vector<Eigen::Index> kept;
  Eigen::MatrixXd basis(n, 0);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double norm2 = centered.col(j).squaredNorm();
    Eigen::VectorXd r = centered.col(j);
    if (basis.cols() > 0) r -= basis * (basis.transpose() * r);
    if (!(norm2 > 0.0) || r.squaredNorm() <= 1e-10 * norm2) {
      fit.aliased[static_cast<std::size_t>(j)] = true;
      continue;
    }
    basis.conservativeResize(n, basis.cols() + 1);
    basis.col(basis.cols() - 1) = r / r.norm();
    kept.push_back(j);
  }
  const auto q = static_cast<Eigen::Index>(kept.size());
  Eigen::MatrixXd X(n, q);
  for (Eigen::Index k = 0; k < q; ++k) X.col(k) = centered.col(kept[static_cast<std::size_t>(k)]);

  const auto order = by_time_desc(ds);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  Derivs cur = evaluate(ds, order, X, beta, true);
  fit.loglik_null = cur.loglik;

  bool converged = q == 0 || cur.grad.cwiseAbs().maxCoeff() < options.gradient_tolerance;
  int it = 0;
  while (!converged) {
    if (it >= options.max_iterations)
      throw ConvergenceError("Cox fit did not converge in " + std::to_string(options.max_iterations) + " iterations");
    ++it;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.info);
    Eigen::VectorXd step = ldlt.solve(cur.grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite())
      throw ConvergenceError("Cox fit information matrix is singular");

    Eigen::VectorXd next = beta + step;
    Derivs cand = evaluate(ds, order, X, next, true);
    for (int h = 0; h < 40 && !(cand.loglik >= cur.loglik); ++h) {
      step /= 2.0;
      next = beta + step;
      cand = evaluate(ds, order, X, next, true);
    }
    if (!(cand.loglik >= cur.loglik)) throw ConvergenceError("Cox fit step halving failed to increase the likelihood");

    for (Eigen::Index k = 0; k < q; ++k)
      if (std::abs(next(k)) * sd(kept[static_cast<std::size_t>(k)]) > options.monotone_threshold)
        throw MonotoneLikelihoodError("monotone likelihood: coefficient of covariate " +
                                      std::to_string(kept[static_cast<std::size_t>(k)]) + " diverges");

    const double rel = std::abs(cand.loglik - cur.loglik) / std::max(std::abs(cur.loglik), 1e-300);
    beta = next;
    cur = std::move(cand);
    converged = cur.grad.cwiseAbs().maxCoeff() < options.gradient_tolerance || rel < options.loglik_tolerance;
  }

  fit.beta = Eigen::VectorXd::Zero(p);
  fit.se = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  if (q > 0) {
    const Eigen::MatrixXd cov = cur.info.ldlt().solve(Eigen::MatrixXd::Identity(q, q));
    for (Eigen::Index k = 0; k < q; ++k) {
      fit.beta(kept[static_cast<std::size_t>(k)]) = beta(k);
      fit.se(kept[static_cast<std::size_t>(k)]) = std::sqrt(cov(k, k));
    }
  }
  fit.loglik = cur.loglik;
  fit.converged = true;
  fit.iterations = it;
  return fit;
}

LrtResult likelihood_ratio_test(const CoxFit& full, const CoxFit& reduced, int df_added) {
  if (df_added < 1) throw PreconditionError("likelihood ratio test needs df_added >= 1");
  if (!full.converged || !reduced.converged) throw PreconditionError("likelihood ratio test needs converged fits");
  if (full.beta.size() < reduced.beta.size()) throw NestingError("full model has fewer covariates than the reduced one");
  double chi = 2.0 * (full.loglik - reduced.loglik);
  if (chi < -1e-6) throw NestingError("full model log-likelihood is below the reduced model's");
  chi = std::max(chi, 0.0);
  return {chi, chi_square_sf(chi, df_added), df_added};
}

}  // namespace milsurv::survstats
