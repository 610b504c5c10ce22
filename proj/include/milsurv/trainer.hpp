#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "milsurv/cohort.hpp"
#include "milsurv/embedding.hpp"
#include "milsurv/model.hpp"

namespace milsurv::model {

struct TrainConfig {
  Modality modality = Modality::Image;
  double learning_rate = 1e-4;
  int batch_size = 256;  // bags per optimizer step
  int max_tiles = 3500;
  int min_epochs = 100;
  int max_epochs = 300;
  int patience = 20;  // epochs without validation C-index improvement
  int slides_per_epoch = 1;
  int attention_dim = 128;
  int head_hidden = 128;
  int fusion_hidden = 128;
  std::uint64_t seed = 0;

  void validate() const;
  Architecture architecture(int input_dim) const;
};

// Everything any modality may need for one patient.
struct PatientData {
  std::string patient_id;
  std::vector<tiling::EmbeddingBag> slides;
  std::optional<cohort::ClinicalFeatures> clinical;
  cohort::SurvivalOutcome outcome;
};

bool has_inputs(const PatientData& p, Modality m);

// Patients plus their evaluation bags (all slides pooled, capped at max_tiles
// with a sampler seeded by the patient id), converted once.
class PreparedCohort {
 public:
  PreparedCohort(std::vector<PatientData> patients, int max_tiles);

  std::size_t size() const noexcept { return patients_.size(); }
  const PatientData& patient(std::size_t i) const { return patients_[i]; }
  const std::vector<PatientData>& patients() const noexcept { return patients_; }
  // Null when the patient has no slides.
  const TileMatrix* tiles(std::size_t i) const { return tiles_[i] ? &*tiles_[i] : nullptr; }
  int max_tiles() const noexcept { return max_tiles_; }
  // Embedding width shared by every bag, 0 when there are none.
  int input_dim() const noexcept { return input_dim_; }

 private:
  std::vector<PatientData> patients_;
  std::vector<std::optional<TileMatrix>> tiles_;
  int max_tiles_;
  int input_dim_ = 0;
};

std::uint64_t patient_sampler_seed(const std::string& patient_id);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean over optimizer steps
  double val_c_index = 0.0;
  int skipped_batches = 0;  // batches without an event
};

struct TrainResult {
  RiskModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_c_index = 0.0;
};

// Mini-batch Cox training with Adam and early stopping on validation C-index.
// Returns the parameters of the best validation epoch (earliest on ties).
TrainResult train(const PreparedCohort& data, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& config);

// Scores with the model's own normalization statistics.
std::vector<double> predict_patients(const RiskModel& model, const PreparedCohort& data,
                                     std::span<const std::size_t> idx);
std::vector<double> ensemble_predict_patients(const std::vector<RiskModel>& models, const PreparedCohort& data,
                                              std::span<const std::size_t> idx);

}  // namespace milsurv::model
