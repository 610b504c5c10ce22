#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "milsurv/bootstrap.hpp"
#include "milsurv/experiment.hpp"

namespace milsurv::pipeline {

// Exactly the keys metric, estimate, ci_low, ci_high, n_boot, horizon_years,
// seed, n_degenerate (horizon_years is null when not applicable).
nlohmann::json metric_report_to_json(const survstats::MetricReport& r);
survstats::MetricReport metric_report_from_json(const nlohmann::json& j);

nlohmann::json run_report_to_json(const RunReport& report);
// Pretty-printed, newline-terminated; byte-stable for equal reports.
std::string dump_json(const nlohmann::json& j);

// Aligned-column tables for people.
std::string render_text(const nlohmann::json& report);

// Writes plot-ready CSVs for a run report into `dir` and returns their paths:
// cv_folds.csv, km_<cohort>_<modality>.csv, roc_<cohort>_<modality>.csv,
// scores_<cohort>_<modality>.csv, violin.csv.
std::vector<std::string> write_plot_data(const nlohmann::json& report, const std::string& dir);

// Scores exchange file: patient_id, score, time_years, event.
struct ScoredPatient {
  std::string patient_id;
  double score = 0.0;
  double time_years = 0.0;
  bool event = false;
};
std::vector<ScoredPatient> read_scores(std::istream& in);
std::vector<ScoredPatient> load_scores(const std::string& path);
void write_scores(std::ostream& out, const std::vector<ScoredPatient>& rows);
survstats::SurvivalDataset scores_dataset(const std::vector<ScoredPatient>& rows, const std::string& source);

// KM step coordinates: one row per curve start and per event time.
void write_km_csv(std::ostream& out, const Stratification& s);

}  // namespace milsurv::pipeline
