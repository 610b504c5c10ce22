#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "milsurv/bootstrap.hpp"
#include "milsurv/capra_compare.hpp"
#include "milsurv/config.hpp"
#include "milsurv/folds.hpp"
#include "milsurv/synthetic.hpp"
#include "milsurv/trainer.hpp"

namespace milsurv::pipeline {

// A cohort with its embeddings joined to the manifest, ready for training or
// evaluation. `name` doubles as the provenance tag of every dataset built
// from it.
struct LoadedCohort {
  std::string name;
  cohort::Cohort records;
  std::vector<model::PatientData> patients;  // aligned with records
};

// Store bags are matched to records by patient id; a patient's bags appear in
// slide order. Every bag must carry `encoder` provenance, and a patient listing
// slide ids must have exactly that many bags.
LoadedCohort join_cohort(std::string name, cohort::Cohort records, const std::vector<tiling::EmbeddingBag>& bags,
                         tiling::Encoder encoder);
LoadedCohort load_cohort(const CohortPaths& paths, tiling::Encoder encoder);
LoadedCohort from_synthetic(std::string name, const tiling::SyntheticCohort& synth);

// Runs fn(0..n-1) on up to `threads` workers. Rethrows the exception of the
// lowest failing index.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// ---- nested cross-validation -------------------------------------------------

struct FoldResult {
  int fold = 0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  int best_epoch = 0;
  int epochs_run = 0;
  double val_c_index = 0.0;
  double test_c_index = 0.0;
  std::optional<double> test_auc;  // absent when the test fold has no case or no control
  std::string model_id;
  std::vector<model::EpochRecord> history;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  int n = 0;
};
MeanStd mean_std(const std::vector<double>& v);

struct ModalityCv {
  model::Modality modality = model::Modality::Image;
  std::vector<FoldResult> folds;
  MeanStd c_index;
  MeanStd auc;
  std::vector<std::optional<double>> heldout_score;  // per patient
};

struct CvResult {
  FoldPlan plan;
  std::vector<ModalityCv> modalities;
  std::optional<model::Modality> selected;  // highest mean held-out AUC
};

// Test fold f, validation fold (f+1) mod k, training on the rest. Patients
// without the inputs a modality needs are left out of that modality's splits.
CvResult nested_cv(const LoadedCohort& dev, const ExperimentConfig& cfg);

// ---- final models and external validation -------------------------------------

struct FinalModels {
  model::Modality modality = model::Modality::Image;
  std::vector<model::RiskModel> members;  // member f early-stopped on fold f
  std::vector<int> best_epoch;
  std::vector<double> val_c_index;
};

std::vector<FinalModels> train_final(const LoadedCohort& dev, const ExperimentConfig& cfg);

struct Stratification {
  survstats::QuartileResult quartiles;
  std::array<survstats::KmCurve, 4> curves;
  std::array<int, 4> sizes{};
  std::array<int, 4> events{};
  std::array<double, 4> survival_at_horizon{};
  std::optional<survstats::LogRankResult> overall;   // all non-empty quartiles
  std::optional<survstats::LogRankResult> q1_vs_q4;
};

Stratification stratify(const survstats::SurvivalDataset& ds, double horizon);

struct ExternalResult {
  std::string cohort;
  model::Modality modality = model::Modality::Image;
  std::size_t n = 0;
  std::size_t n_excluded = 0;  // patients lacking the modality's inputs
  std::vector<std::string> patient_ids;
  survstats::SurvivalDataset data;  // ensemble scores
  survstats::MetricReport c_index;
  survstats::MetricReport auc;
  std::vector<std::optional<double>> member_auc;
  Stratification strata;
  std::optional<CapraComparison> capra;
  std::string capra_note;  // why the comparison is absent
};

struct SkippedEvaluation {
  std::string cohort;
  model::Modality modality = model::Modality::Image;
  std::string reason;
};

struct ExternalEvaluation {
  std::vector<ExternalResult> results;
  std::vector<SkippedEvaluation> skipped;
};

// `cohort_index` only feeds the bootstrap seeds.
ExternalEvaluation evaluate_external(const std::vector<FinalModels>& models, const LoadedCohort& cohort,
                                     std::size_t cohort_index, const ExperimentConfig& cfg,
                                     const std::string& development_name);

// ---- run report ---------------------------------------------------------------------

struct RunHeader {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string version;
};

struct RunReport {
  RunHeader header;
  std::optional<CvResult> cv;
  std::vector<std::string> development_ids;  // ids behind cv.heldout_score
  std::optional<ExternalEvaluation> external;
};

std::string version_string();

}  // namespace milsurv::pipeline
