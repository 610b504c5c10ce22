#include "milsurv/trainer.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "milsurv/adam.hpp"
#include "milsurv/errors.hpp"
#include "milsurv/objective.hpp"
#include "milsurv/rng.hpp"
#include "milsurv/survstats.hpp"

namespace milsurv::model {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
  if (max_tiles < 1) throw ValidationError("max_tiles must be >= 1");
  if (min_epochs < 1) throw ValidationError("min_epochs must be >= 1");
  if (max_epochs < min_epochs) throw ValidationError("max_epochs must be >= min_epochs");
  if (patience < 1) throw ValidationError("patience must be >= 1");
  if (slides_per_epoch < 1) throw ValidationError("slides_per_epoch must be >= 1");
  if (attention_dim < 1 || head_hidden < 1 || fusion_hidden < 1) throw ValidationError("layer widths must be >= 1");
}

Architecture TrainConfig::architecture(int input_dim) const {
  Architecture a;
  a.modality = modality;
  a.input_dim = needs_image(modality) ? input_dim : 0;
  a.attention_dim = attention_dim;
  a.head_hidden = head_hidden;
  a.fusion_hidden = fusion_hidden;
  a.validate();
  return a;
}

bool has_inputs(const PatientData& p, Modality m) {
  if (needs_image(m) && p.slides.empty()) return false;
  if (needs_clinical(m) && !p.clinical) return false;
  return true;
}

std::uint64_t patient_sampler_seed(const std::string& patient_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : patient_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

PreparedCohort::PreparedCohort(std::vector<PatientData> patients, int max_tiles)
    : patients_(std::move(patients)), max_tiles_(max_tiles) {
  if (max_tiles < 1) throw PreconditionError("max_tiles must be >= 1");
  tiles_.reserve(patients_.size());
  for (const auto& p : patients_) {
    if (p.slides.empty()) {
      tiles_.emplace_back(std::nullopt);
      continue;
    }
    const auto bag = tiling::assemble_bag(p.slides, static_cast<std::size_t>(max_tiles),
                                          patient_sampler_seed(p.patient_id));
    if (input_dim_ == 0) input_dim_ = bag.dim();
    if (bag.dim() != input_dim_)
      throw ValidationError("patient '" + p.patient_id + "' has embedding width " + std::to_string(bag.dim()) +
                            ", expected " + std::to_string(input_dim_));
    tiles_.emplace_back(to_tile_matrix(bag));
  }
}

namespace {

struct Inputs {
  std::vector<std::optional<cohort::Standardized>> clinical;  // by patient index
};

ModelInput input_for(const PreparedCohort& data, const Inputs& in, std::size_t i, const TileMatrix* tiles) {
  ModelInput m;
  m.tiles = tiles;
  m.clinical = in.clinical[i] ? &*in.clinical[i] : nullptr;
  (void)data;
  return m;
}

Inputs standardize(const PreparedCohort& data, const RiskModel& model, std::span<const std::size_t> idx) {
  Inputs in;
  in.clinical.resize(data.size());
  if (!needs_clinical(model.modality())) return in;
  for (auto i : idx) in.clinical[i] = cohort::normalize_clinical(*data.patient(i).clinical, *model.normalization());
  return in;
}

void check_split(const PreparedCohort& data, std::span<const std::size_t> idx, Modality m, const char* what) {
  for (auto i : idx) {
    if (i >= data.size()) throw PreconditionError(std::string(what) + " index out of range");
    if (!has_inputs(data.patient(i), m))
      throw PreconditionError(std::string(what) + " patient '" + data.patient(i).patient_id + "' lacks " +
                              std::string(to_string(m)) + " inputs");
  }
}

survstats::SurvivalDataset outcomes_of(const PreparedCohort& data, std::span<const std::size_t> idx) {
  survstats::SurvivalDataset ds;
  for (auto i : idx) {
    ds.time.push_back(data.patient(i).outcome.time);
    ds.event.push_back(data.patient(i).outcome.event ? 1 : 0);
  }
  return ds;
}

// Tiles seen by patient i during one training epoch.
TileMatrix training_tiles(const PreparedCohort& data, std::size_t i, const TrainConfig& cfg, int epoch) {
  const auto& p = data.patient(i);
  std::vector<tiling::EmbeddingBag> slides = p.slides;
  if (slides.size() > static_cast<std::size_t>(cfg.slides_per_epoch)) {
    std::vector<std::string> keys;
    for (std::size_t s = 0; s < slides.size(); ++s) keys.push_back(std::to_string(s));
    const auto picked = tiling::sample_training_slides(keys, static_cast<std::size_t>(cfg.slides_per_epoch),
                                                       derive_seed(cfg.seed, {0x5L, std::uint64_t(epoch), i}));
    std::vector<tiling::EmbeddingBag> chosen;
    for (const auto& k : picked) chosen.push_back(p.slides[std::stoul(k)]);
    slides = std::move(chosen);
  }
  const auto bag = tiling::assemble_bag(slides, static_cast<std::size_t>(cfg.max_tiles),
                                        derive_seed(cfg.seed, {0x7L, std::uint64_t(epoch), i}));
  return to_tile_matrix(bag);
}

bool uses_cached_tiles(const PreparedCohort& data, std::size_t i, const TrainConfig& cfg) {
  const auto& p = data.patient(i);
  if (p.slides.size() > static_cast<std::size_t>(cfg.slides_per_epoch)) return false;
  std::size_t n = 0;
  for (const auto& s : p.slides) n += s.size();
  return n <= static_cast<std::size_t>(cfg.max_tiles);
}

}  // namespace

TrainResult train(const PreparedCohort& data, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& config) {
  config.validate();
  if (config.max_tiles != data.max_tiles())
    throw PreconditionError("training max_tiles differs from the prepared cohort's");
  check_split(data, train_idx, config.modality, "training");
  check_split(data, val_idx, config.modality, "validation");
  if (train_idx.size() < 2) throw PreconditionError("training split needs at least two patients");

  const auto val_outcomes = outcomes_of(data, val_idx);
  if (val_outcomes.events() == 0) throw PreconditionError("validation split has no events");
  {
    auto probe = val_outcomes;
    probe.score.assign(probe.size(), 0.0);
    if (survstats::concordance_counts(probe).comparable == 0)
      throw PreconditionError("validation split has no comparable pairs");
  }
  if (outcomes_of(data, train_idx).events() == 0) throw PreconditionError("training split has no events");

  const auto arch = config.architecture(data.input_dim());
  RiskModel model = RiskModel::initialize(arch, derive_seed(config.seed, {0xAL}));
  if (needs_clinical(config.modality)) {
    cohort::Cohort fit;
    for (auto i : train_idx) {
      cohort::CohortRecord r;
      r.patient_id = data.patient(i).patient_id;
      r.clinical = data.patient(i).clinical;
      fit.push_back(std::move(r));
    }
    model.set_normalization(cohort::fit_normalization(fit));
  }

  std::vector<std::size_t> both(train_idx.begin(), train_idx.end());
  both.insert(both.end(), val_idx.begin(), val_idx.end());
  const Inputs inputs = standardize(data, model, both);

  TrainResult result{model, {}, 0, -std::numeric_limits<double>::infinity()};
  AdamState state = AdamState::zeros_like(model.parameters());
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  auto val_scores = val_outcomes;
  long step = 0;
  const bool image = needs_image(config.modality);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {0xEL, std::uint64_t(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t a = 0; a < order.size(); a += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t b = std::min(order.size(), a + static_cast<std::size_t>(config.batch_size));
      bool any_event = false;
      for (std::size_t k = a; k < b; ++k) any_event |= data.patient(order[k]).outcome.event;
      if (!any_event) {
        ++rec.skipped_batches;
        continue;
      }
      std::vector<TileMatrix> fresh;
      fresh.reserve(b - a);
      Batch batch;
      for (std::size_t k = a; k < b; ++k) {
        const auto i = order[k];
        const TileMatrix* tiles = nullptr;
        if (image) {
          if (uses_cached_tiles(data, i, config)) {
            tiles = data.tiles(i);
          } else {
            fresh.push_back(training_tiles(data, i, config, epoch));
            tiles = &fresh.back();
          }
        }
        batch.inputs.push_back(input_for(data, inputs, i, tiles));
        batch.outcomes.push_back(data.patient(i).outcome);
      }
      auto g = gradients(model, batch);
      adam_step(model.parameters(), g.grads, state, config.learning_rate, ++step);
      if (const auto bad = model.parameters().first_non_finite(); !bad.empty())
        throw NumericalError("parameter '" + bad + "' became non-finite at epoch " + std::to_string(epoch));
      loss_sum += g.loss;
      ++steps;
    }
    rec.train_loss = steps ? loss_sum / steps : 0.0;

    val_scores.score.clear();
    for (auto i : val_idx) val_scores.score.push_back(model.predict(input_for(data, inputs, i, data.tiles(i))));
    rec.val_c_index = survstats::c_index(val_scores);
    result.history.push_back(rec);

    if (rec.val_c_index > result.best_val_c_index) {
      result.best_val_c_index = rec.val_c_index;
      result.best_epoch = epoch;
      result.model = model;
    }
    if (epoch >= config.min_epochs && epoch - result.best_epoch >= config.patience) break;
  }
  return result;
}

std::vector<double> predict_patients(const RiskModel& model, const PreparedCohort& data,
                                     std::span<const std::size_t> idx) {
  check_split(data, idx, model.modality(), "prediction");
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    const auto& p = data.patient(i);
    out.push_back(predict_raw(model, data.tiles(i), p.clinical ? &*p.clinical : nullptr));
  }
  return out;
}

std::vector<double> ensemble_predict_patients(const std::vector<RiskModel>& models, const PreparedCohort& data,
                                              std::span<const std::size_t> idx) {
  if (models.empty()) throw PreconditionError("ensemble has no members");
  check_split(data, idx, models.front().modality(), "prediction");
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    const auto& p = data.patient(i);
    out.push_back(ensemble_predict(models, data.tiles(i), p.clinical ? &*p.clinical : nullptr));
  }
  return out;
}

}  // namespace milsurv::model
