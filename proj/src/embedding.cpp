#include "milsurv/embedding.hpp"

#include <algorithm>
#include <numeric>

#include "milsurv/errors.hpp"
#include "milsurv/rng.hpp"

namespace milsurv::tiling {

std::optional<int> encoder_dim(Encoder e) {
  switch (e) {
    case Encoder::Uni2: return 1536;
    case Encoder::Virchow2: return 2560;
    case Encoder::Conch: return 512;
    default: return std::nullopt;
  }
}

std::string_view to_string(Encoder e) {
  switch (e) {
    case Encoder::Uni2: return "uni2";
    case Encoder::Virchow2: return "virchow2";
    case Encoder::Conch: return "conch";
    case Encoder::Ensemble: return "ensemble";
    case Encoder::Synthetic: return "synthetic";
  }
  return "?";
}

Encoder encoder_from_string(std::string_view s) {
  for (auto e : {Encoder::Uni2, Encoder::Virchow2, Encoder::Conch, Encoder::Ensemble, Encoder::Synthetic})
    if (to_string(e) == s) return e;
  throw ValidationError("unknown encoder tag '" + std::string(s) + "'");
}

EmbeddingBag::EmbeddingBag(std::string patient_id, Encoder provenance, int dim, std::vector<float> data)
    : patient_id_(std::move(patient_id)), provenance_(provenance), dim_(dim), data_(std::move(data)) {
  if (dim_ < 1) throw ValidationError("embedding dim must be >= 1");
  if (data_.size() % static_cast<std::size_t>(dim_) != 0)
    throw ValidationError("embedding payload is not a whole number of tiles");
  if (const auto want = encoder_dim(provenance_); want && *want != dim_)
    throw ValidationError("encoder " + std::string(to_string(provenance_)) + " produces dim " +
                          std::to_string(*want) + ", bag has " + std::to_string(dim_));
}

EmbeddingBag assemble_bag(const std::vector<EmbeddingBag>& bags, std::size_t max_tiles, std::uint64_t sampler_seed) {
  if (bags.empty()) throw PreconditionError("assemble_bag: no slides");
  if (max_tiles < 1) throw PreconditionError("assemble_bag: max_tiles must be >= 1");
  const auto& first = bags.front();
  std::size_t total = 0;
  for (const auto& b : bags) {
    if (b.dim() != first.dim())
      throw ValidationError("assemble_bag: mixed embedding dims " + std::to_string(first.dim()) + " and " +
                            std::to_string(b.dim()));
    if (b.patient_id() != first.patient_id()) throw ValidationError("assemble_bag: slides of different patients");
    if (b.provenance() != first.provenance()) throw ValidationError("assemble_bag: mixed encoder provenance");
    total += b.size();
  }
  if (total == 0) throw PreconditionError("assemble_bag: no tiles");

  const std::size_t dim = static_cast<std::size_t>(first.dim());
  std::vector<float> pooled;
  pooled.reserve(total * dim);
  for (const auto& b : bags) pooled.insert(pooled.end(), b.data().begin(), b.data().end());
  if (total <= max_tiles) return EmbeddingBag(first.patient_id(), first.provenance(), first.dim(), std::move(pooled));

  // Partial Fisher-Yates picks max_tiles indices; sorting keeps tile order.
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(sampler_seed);
  for (std::size_t i = 0; i < max_tiles; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_tiles);
  std::sort(idx.begin(), idx.end());
  std::vector<float> out;
  out.reserve(max_tiles * dim);
  for (auto i : idx) out.insert(out.end(), pooled.begin() + i * dim, pooled.begin() + (i + 1) * dim);
  return EmbeddingBag(first.patient_id(), first.provenance(), first.dim(), std::move(out));
}

std::vector<std::string> sample_training_slides(const std::vector<std::string>& slide_ids, std::size_t k,
                                                std::uint64_t seed) {
  if (slide_ids.empty()) throw PreconditionError("sample_training_slides: empty slide list");
  if (k < 1) throw PreconditionError("sample_training_slides: k must be >= 1");
  if (k >= slide_ids.size()) return slide_ids;
  std::vector<std::size_t> idx(slide_ids.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(slide_ids[idx[i]]);
  return out;
}

EmbeddingBag concat_embeddings(const std::vector<EmbeddingBag>& bags) {
  if (bags.empty()) throw PreconditionError("concat_embeddings: no inputs");
  if (bags.size() == 1) return bags.front();
  const std::size_t n = bags.front().size();
  int dim = 0;
  for (const auto& b : bags) {
    if (b.size() != n)
      throw ValidationError("concat_embeddings: tile counts differ (" + std::to_string(n) + " vs " +
                            std::to_string(b.size()) + ")");
    if (b.patient_id() != bags.front().patient_id()) throw ValidationError("concat_embeddings: patient ids differ");
    dim += b.dim();
  }
  std::vector<float> out;
  out.reserve(n * static_cast<std::size_t>(dim));
  for (std::size_t t = 0; t < n; ++t)
    for (const auto& b : bags) {
      const auto row = b.tile(t);
      out.insert(out.end(), row.begin(), row.end());
    }
  return EmbeddingBag(bags.front().patient_id(), Encoder::Ensemble, dim, std::move(out));
}

}  // namespace milsurv::tiling
