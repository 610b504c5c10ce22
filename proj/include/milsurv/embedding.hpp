#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace milsurv::tiling {

enum class Encoder : std::uint32_t { Uni2 = 0, Virchow2 = 1, Conch = 2, Ensemble = 3, Synthetic = 4 };

// Fixed output width of a foundation encoder; nullopt for ensemble/synthetic,
// whose width is whatever was concatenated or generated.
std::optional<int> encoder_dim(Encoder e);
std::string_view to_string(Encoder e);
Encoder encoder_from_string(std::string_view s);

// Tile embeddings of one patient (or one slide), row-major tiles x dim.
class EmbeddingBag {
 public:
  EmbeddingBag() = default;
  EmbeddingBag(std::string patient_id, Encoder provenance, int dim, std::vector<float> data);

  const std::string& patient_id() const noexcept { return patient_id_; }
  Encoder provenance() const noexcept { return provenance_; }
  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return dim_ ? data_.size() / static_cast<std::size_t>(dim_) : 0; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> tile(std::size_t i) const {
    return {data_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  const std::vector<float>& data() const noexcept { return data_; }

  friend bool operator==(const EmbeddingBag&, const EmbeddingBag&) = default;

 private:
  std::string patient_id_;
  Encoder provenance_ = Encoder::Synthetic;
  int dim_ = 0;
  std::vector<float> data_;
};

// Pools tiles across a patient's slides; when the pooled count exceeds
// max_tiles, keeps a uniform sample without replacement (original relative
// order preserved) drawn from sampler_seed.
EmbeddingBag assemble_bag(const std::vector<EmbeddingBag>& bags_per_slide, std::size_t max_tiles,
                          std::uint64_t sampler_seed);

// min(k, |slide_ids|) ids drawn uniformly without replacement. Callers pass a
// seed already derived from (master seed, epoch, patient).
std::vector<std::string> sample_training_slides(const std::vector<std::string>& slide_ids, std::size_t k,
                                                std::uint64_t seed);

// Per-tile concatenation of tile-aligned bags from different encoders.
EmbeddingBag concat_embeddings(const std::vector<EmbeddingBag>& bags);

}  // namespace milsurv::tiling
