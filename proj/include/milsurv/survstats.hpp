#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace milsurv::survstats {

// Aligned per-subject arrays consumed by every estimator. `score` and
// `covariates` are optional (empty / zero columns) depending on the estimator.
struct SurvivalDataset {
  std::vector<double> time;           // > 0
  std::vector<std::uint8_t> event;    // 1 = event observed
  std::vector<double> score;          // higher = higher risk
  Eigen::MatrixXd covariates;         // rows aligned with time
  std::string source;                 // provenance tag, e.g. cohort name

  std::size_t size() const noexcept { return time.size(); }
  std::size_t events() const noexcept;
  // Throws ValidationError on length mismatch or non-positive / non-finite times.
  void validate() const;
  SurvivalDataset subset(std::span<const std::size_t> idx) const;
};

// ---- Kaplan-Meier --------------------------------------------------------------

struct KmCurve {
  std::vector<double> time;      // distinct event times, ascending
  std::vector<double> survival;  // S(t) just after each time
  std::vector<int> at_risk;
  std::vector<int> events;
  std::vector<int> censored;     // censored at exactly this time

  // Right-continuous step function; 1 before the first event time.
  double at(double t) const;
  // Left limit S(t-).
  double before(double t) const;
};

// Product-limit estimator. A subject censored at an event time stays in that
// time's risk set. Throws EstimationError when there are no events.
KmCurve km_estimate(const SurvivalDataset& ds);
// Same estimator with an explicit indicator (used for the censoring
// distribution, where the "event" is being censored). Never throws on zero
// indicators; the curve is then flat at 1.
KmCurve product_limit(std::span<const double> time, std::span<const std::uint8_t> indicator);

// ---- log-rank ----------------------------------------------------------------------

struct LogRankResult {
  double chi_square = 0.0;
  double p = 1.0;
  int df = 0;
  std::vector<double> observed;
  std::vector<double> expected;
};

LogRankResult logrank_test(const std::vector<SurvivalDataset>& groups);

// Upper tail of the chi-square distribution.
double chi_square_sf(double x, double df);

// ---- discrimination -------------------------------------------------------------

struct ConcordanceCounts {
  long long concordant = 0;
  long long tied_score = 0;
  long long comparable = 0;
};

// Harrell's C. Pair (i, j) is comparable when i has an event and t_i < t_j,
// or t_i == t_j with j censored. Two events at the same time are not
// comparable. Score ties count 1/2. O(n log n).
ConcordanceCounts concordance_counts(const SurvivalDataset& ds);
double c_index(const SurvivalDataset& ds);

// Cumulative/dynamic AUC at `horizon` with inverse-probability-of-censoring
// weights: cases are events with t <= horizon weighted 1/G(t-), controls have
// t > horizon (common weight 1/G(horizon), which cancels). G is the
// Kaplan-Meier estimate of the censoring distribution. Score ties count 1/2.
double time_dependent_auc(const SurvivalDataset& ds, double horizon);

// ROC points (false positive rate, true positive rate) at the horizon under
// the same weights, for plotting. Starts at (0,0) and ends at (1,1).
std::vector<std::array<double, 2>> time_dependent_roc(const SurvivalDataset& ds, double horizon);

// ---- stratification ----------------------------------------------------------------

struct QuartileResult {
  std::vector<int> group;       // 0..3 for Q1..Q4 (Q4 = highest scores)
  std::array<double, 3> cuts{};  // lower empirical quartiles of the scores
  bool degenerate = false;      // fewer than four non-empty groups
};

// Cuts are the order statistics at 0-based positions floor((n-1)k/4); a score
// equal to a cut joins the lower group. Needs at least four scores.
QuartileResult quartile_stratify(std::span<const double> scores);

}  // namespace milsurv::survstats
