#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "milsurv/cohort.hpp"
#include "milsurv/embedding.hpp"
#include "milsurv/params.hpp"

namespace milsurv::model {

enum class Modality { Clinical, Image, Multimodal };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);
bool needs_image(Modality m);
bool needs_clinical(Modality m);

// Widths of every layer. Only the clinical encoder widths are fixed.
struct Architecture {
  Modality modality = Modality::Image;
  int input_dim = 0;  // tile embedding width; unused by the clinical-only head
  int attention_dim = 128;
  int head_hidden = 128;
  int fusion_hidden = 128;
  static constexpr int kClinicalInputs = 3;
  static constexpr int kClinicalHidden = 256;
  static constexpr int kClinicalEmbedding = 128;

  void validate() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Tiles as rows, in canonical (lexicographic) order: sums over tiles then run
// in an order that does not depend on how the bag was stored.
using TileMatrix = Eigen::MatrixXd;

TileMatrix to_tile_matrix(const tiling::EmbeddingBag& bag);

// Non-owning view of one patient's model inputs.
struct ModelInput {
  const TileMatrix* tiles = nullptr;
  const cohort::Standardized* clinical = nullptr;
};

struct AttentionResult {
  Eigen::VectorXd pooled;   // input_dim
  Eigen::VectorXd weights;  // one per tile, sums to 1
};

class RiskModel {
 public:
  RiskModel(Architecture arch, ParameterSet params, std::optional<cohort::NormalizationStats> norm = std::nullopt);

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static RiskModel initialize(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const noexcept { return arch_; }
  Modality modality() const noexcept { return arch_.modality; }
  const ParameterSet& parameters() const noexcept { return params_; }
  ParameterSet& parameters() noexcept { return params_; }
  const std::optional<cohort::NormalizationStats>& normalization() const noexcept { return norm_; }
  void set_normalization(std::optional<cohort::NormalizationStats> n) { norm_ = std::move(n); }

  // Attention pooling over tiles (rows): a = softmax(tanh(H V^T) w).
  AttentionResult attention_pool(const TileMatrix& tiles) const;

  double predict(const ModelInput& in) const;

  // Adds score gradient * dscore into grad (same layout as parameters()) and
  // returns the score.
  double accumulate_gradient(const ModelInput& in, double dscore, ParameterSet& grad) const;

 private:
  void check_input(const ModelInput& in) const;
  void bind_slots();

  Architecture arch_;
  ParameterSet params_;
  std::optional<cohort::NormalizationStats> norm_;
  std::vector<std::size_t> slot_;
};

// Operation-level wrappers over RiskModel.
AttentionResult attention_pool(const tiling::EmbeddingBag& bag, const RiskModel& model);

// `clinical` must already be standardized.
double predict(const RiskModel& model, const tiling::EmbeddingBag* bag, const cohort::Standardized* clinical);

// Standardizes raw clinical features with the model's own statistics, then
// predicts. Either pointer may be null when the modality does not need it.
double predict_raw(const RiskModel& model, const TileMatrix* tiles, const cohort::ClinicalFeatures* clinical);

// Mean of member predictions; all members must share a modality.
double ensemble_predict(const std::vector<RiskModel>& models, const ModelInput& in);
// Each member standardizes the raw clinical features with its own statistics.
double ensemble_predict(const std::vector<RiskModel>& models, const TileMatrix* tiles,
                        const cohort::ClinicalFeatures* clinical);

}  // namespace milsurv::model
