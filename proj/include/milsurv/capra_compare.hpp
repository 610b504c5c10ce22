#pragma once

#include <array>
#include <span>
#include <string>

#include "milsurv/bootstrap.hpp"
#include "milsurv/cohort.hpp"
#include "milsurv/cox_fit.hpp"

namespace milsurv::pipeline {

struct CompareOptions {
  double horizon_years = 5.0;
  survstats::BootstrapOptions bootstrap;
};

struct CapraComparison {
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;  // incomplete CAPRA-S inputs
  survstats::MetricReport auc_ai;
  survstats::MetricReport auc_capra;
  survstats::MetricReport auc_combined;  // linear predictor of Cox(CAPRA-S + AI)
  survstats::MetricReport delta_auc;     // AI minus CAPRA-S
  survstats::CoxFit reduced;             // CAPRA-S
  survstats::CoxFit full;                // CAPRA-S + AI
  survstats::LrtResult lrt;
  // Patients per (CAPRA-S group, AI quartile).
  std::array<std::array<int, 4>, 3> group_by_quartile{};
};

// CAPRA-S enters the Cox models as its integer score. Records without complete
// CAPRA-S inputs are dropped and counted. `ai_scores` aligns with `records`.
CapraComparison compare_with_capra(const cohort::Cohort& records, std::span<const double> ai_scores,
                                   const CompareOptions& options);

}  // namespace milsurv::pipeline
