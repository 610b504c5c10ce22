#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "milsurv/survstats.hpp"

namespace milsurv::survstats {

using MetricFn = std::function<double(const SurvivalDataset&)>;

struct MetricReport {
  std::string metric;
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_boot = 0;
  std::optional<double> horizon_years;
  std::uint64_t seed = 0;
  int n_degenerate = 0;
  double level = 0.95;
  std::vector<double> replicates;  // successful resamples, in resample order

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

struct BootstrapOptions {
  int n_resamples = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  int threads = 1;
  std::optional<double> horizon_years;  // recorded in the report only
};

// Percentile bootstrap over patients. Resample r draws its indices from
// derive_seed(seed, {r}), so the report does not depend on `threads`.
// Resamples on which the metric throws EstimationError or ConvergenceError
// are skipped and counted; more than half skipped raises ReliabilityError.
MetricReport bootstrap_ci(const std::string& metric, const MetricFn& fn, const SurvivalDataset& ds,
                          const BootstrapOptions& options);

// Type-7 (linear interpolation) quantile of unsorted values.
double quantile(std::vector<double> values, double p);

}  // namespace milsurv::survstats
