#include "milsurv/capra_compare.hpp"

#include "milsurv/errors.hpp"

namespace milsurv::pipeline {

namespace {

using survstats::SurvivalDataset;

SurvivalDataset with_score_column(const SurvivalDataset& ds, Eigen::Index col) {
  SurvivalDataset out = ds;
  for (std::size_t i = 0; i < ds.size(); ++i) out.score[i] = ds.covariates(static_cast<Eigen::Index>(i), col);
  return out;
}

double combined_auc(const SurvivalDataset& ds, double horizon) {
  const auto fit = survstats::cox_fit(ds);
  SurvivalDataset lp = ds;
  const Eigen::VectorXd eta = ds.covariates * fit.beta;
  lp.score.assign(eta.data(), eta.data() + eta.size());
  return survstats::time_dependent_auc(lp, horizon);
}

}  // namespace

CapraComparison compare_with_capra(const cohort::Cohort& records, std::span<const double> ai_scores,
                                   const CompareOptions& options) {
  if (ai_scores.size() != records.size()) throw PreconditionError("AI scores do not align with records");
  CapraComparison out;
  SurvivalDataset ds;
  ds.source = "capra-comparison";
  std::vector<double> capra, ai;
  std::vector<int> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.capra_s || !r.capra_s->complete()) {
      ++out.n_excluded;
      continue;
    }
    const auto c = cohort::capra_s_score(*r.capra_s);
    ds.time.push_back(r.outcome.time);
    ds.event.push_back(r.outcome.event ? 1 : 0);
    ds.score.push_back(ai_scores[i]);
    capra.push_back(c.score);
    ai.push_back(ai_scores[i]);
    groups.push_back(static_cast<int>(c.group));
  }
  out.n_used = ds.size();
  if (out.n_used < 4) throw PreconditionError("CAPRA-S comparison needs at least 4 patients with complete inputs");
  ds.covariates.resize(static_cast<Eigen::Index>(ds.size()), 2);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds.covariates(static_cast<Eigen::Index>(i), 0) = capra[i];
    ds.covariates(static_cast<Eigen::Index>(i), 1) = ai[i];
  }

  const double h = options.horizon_years;
  auto opts = options.bootstrap;
  opts.horizon_years = h;
  out.auc_ai = survstats::bootstrap_ci(
      "auc_ai", [h](const SurvivalDataset& d) { return survstats::time_dependent_auc(d, h); }, ds, opts);
  out.auc_capra = survstats::bootstrap_ci(
      "auc_capra_s", [h](const SurvivalDataset& d) { return survstats::time_dependent_auc(with_score_column(d, 0), h); },
      ds, opts);
  out.auc_combined = survstats::bootstrap_ci(
      "auc_combined", [h](const SurvivalDataset& d) { return combined_auc(d, h); }, ds, opts);
  out.delta_auc = survstats::bootstrap_ci(
      "delta_auc",
      [h](const SurvivalDataset& d) {
        return survstats::time_dependent_auc(d, h) - survstats::time_dependent_auc(with_score_column(d, 0), h);
      },
      ds, opts);

  SurvivalDataset reduced = ds;
  reduced.covariates = ds.covariates.leftCols(1);
  out.reduced = survstats::cox_fit(reduced);
  out.full = survstats::cox_fit(ds);
  out.lrt = survstats::likelihood_ratio_test(out.full, out.reduced, 1);

  const auto q = survstats::quartile_stratify(ai);
  for (std::size_t i = 0; i < ai.size(); ++i)
    ++out.group_by_quartile[static_cast<std::size_t>(groups[i])][static_cast<std::size_t>(q.group[i])];
  return out;
}

}  // namespace milsurv::pipeline
