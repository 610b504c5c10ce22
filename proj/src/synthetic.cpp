#include "milsurv/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "milsurv/errors.hpp"
#include "milsurv/rng.hpp"

namespace milsurv::tiling {

void SyntheticSignalSpec::validate() const {
  if (dim < 1) throw PreconditionError("synthetic dim must be >= 1");
  if (!(frac_lo >= 0.0 && frac_lo <= frac_hi && frac_hi <= 1.0))
    throw PreconditionError("signal fraction range must satisfy 0 <= lo <= hi <= 1");
  if (!(noise_std > 0.0)) throw PreconditionError("noise_std must be > 0");
  if (!(baseline_hazard > 0.0)) throw PreconditionError("baseline_hazard must be > 0");
  if (!(censor_horizon > 0.0) || !(censor_uniform_max > 0.0)) throw PreconditionError("censoring bounds must be > 0");
  if (tiles_min < 1 || tiles_max < tiles_min) throw PreconditionError("tile count range invalid");
  if (slides_min < 1 || slides_max < slides_min || slides_min > tiles_min)
    throw PreconditionError("slide count range invalid");
  if (!signal_direction.empty()) {
    if (signal_direction.size() != static_cast<std::size_t>(dim))
      throw PreconditionError("signal_direction length must equal dim");
    double n2 = 0.0;
    for (double v : signal_direction) n2 += v * v;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-9) throw PreconditionError("signal_direction must have unit norm");
  }
}

std::vector<double> SyntheticSignalSpec::direction() const {
  if (!signal_direction.empty()) return signal_direction;
  Rng rng(derive_seed(direction_seed, {0xD1}));
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> d(static_cast<std::size_t>(dim));
  double n2 = 0.0;
  for (auto& v : d) {
    v = g(rng);
    n2 += v * v;
  }
  const double n = std::sqrt(n2);
  for (auto& v : d) v /= n;
  return d;
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr int kGleason[5][2] = {{3, 3}, {3, 4}, {4, 3}, {4, 4}, {4, 5}};

}  // namespace

SyntheticCohort generate_synthetic_cohort(const SyntheticSignalSpec& spec, std::size_t n_patients, std::uint64_t seed,
                                          const std::string& id_prefix) {
  spec.validate();
  if (n_patients < 10) throw PreconditionError("generate_synthetic_cohort needs at least 10 patients");

  const auto dir = spec.direction();
  const double f_mid = 0.5 * (spec.frac_lo + spec.frac_hi);
  const double f_sd = (spec.frac_hi - spec.frac_lo) / std::sqrt(12.0);

  SyntheticCohort out;
  out.records.reserve(n_patients);
  for (std::size_t i = 0; i < n_patients; ++i) {
    // Each patient owns independent streams so the cohort does not depend on
    // generation order.
    Rng rng(derive_seed(seed, {i, 1}));
    Rng tile_rng(derive_seed(seed, {i, 2}));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double f = spec.frac_lo + (spec.frac_hi - spec.frac_lo) * unif(rng);
    const double z = gauss(rng);
    const double risk = spec.beta * f + spec.clinical_beta * z;

    const double rate = spec.baseline_hazard * std::exp(risk);
    const double t_event = -std::log1p(-unif(rng)) / rate;
    const double t_censor = std::min(spec.censor_horizon, spec.censor_uniform_max * (1.0 - unif(rng)));

    char id[64];
    std::snprintf(id, sizeof(id), "%s%05zu", id_prefix.c_str(), i + 1);
    cohort::CohortRecord rec;
    rec.patient_id = id;
    rec.outcome = {std::min(t_event, t_censor), t_event <= t_censor};

    const double c = z + (f_sd > 0.0 ? spec.clinical_coupling * (f - f_mid) / f_sd : 0.0);
    const double age = std::clamp(64.0 + 6.0 * gauss(rng), 40.0, 90.0);
    const double psa = std::max(0.1, std::exp(1.8 + 0.45 * c + 0.25 * gauss(rng)));
    const int isup = static_cast<int>(std::clamp(std::lround(2.5 + 1.1 * c + 0.4 * gauss(rng)), 1L, 5L));
    if (spec.with_clinical) rec.clinical = cohort::ClinicalFeatures{age, psa, isup};
    if (spec.with_capra) {
      cohort::CapraSInputs cap;
      cap.psa = psa;
      cap.gleason_primary = kGleason[isup - 1][0];
      cap.gleason_secondary = kGleason[isup - 1][1];
      cap.positive_margins = unif(rng) < logistic(-1.0 + 0.8 * c);
      cap.extracapsular_extension = unif(rng) < logistic(-0.8 + 0.8 * c);
      cap.seminal_vesicle_invasion = unif(rng) < logistic(-2.0 + 0.8 * c);
      cap.lymph_node_invasion = unif(rng) < logistic(-2.5 + 0.8 * c);
      rec.capra_s = cap;
    }

    // Tiles: shuffle which tiles carry signal, then split across slides.
    const int n_tiles = std::uniform_int_distribution<int>(spec.tiles_min, spec.tiles_max)(tile_rng);
    const int n_slides = std::uniform_int_distribution<int>(spec.slides_min, spec.slides_max)(tile_rng);
    const int n_signal = static_cast<int>(std::lround(f * n_tiles));
    std::vector<char> is_signal(static_cast<std::size_t>(n_tiles), 0);
    std::fill(is_signal.begin(), is_signal.begin() + n_signal, 1);
    std::shuffle(is_signal.begin(), is_signal.end(), tile_rng);
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    std::vector<float> data(static_cast<std::size_t>(n_tiles) * spec.dim);
    for (int t = 0; t < n_tiles; ++t)
      for (int k = 0; k < spec.dim; ++k) {
        const double mean = is_signal[t] ? spec.signal_scale * dir[k] : 0.0;
        data[static_cast<std::size_t>(t) * spec.dim + k] = static_cast<float>(mean + noise(tile_rng));
      }
    for (int s = 0; s < n_slides; ++s) {
      const int lo = n_tiles * s / n_slides, hi = n_tiles * (s + 1) / n_slides;
      std::vector<float> part(data.begin() + static_cast<std::ptrdiff_t>(lo) * spec.dim,
                              data.begin() + static_cast<std::ptrdiff_t>(hi) * spec.dim);
      rec.slide_ids.push_back(rec.patient_id + "_S" + std::to_string(s + 1));
      out.slide_bags.emplace_back(rec.patient_id, Encoder::Synthetic, spec.dim, std::move(part));
    }

    out.records.push_back(std::move(rec));
    out.true_risk.push_back(risk);
    out.signal_fraction.push_back(f);
    out.clinical_latent.push_back(z);
  }
  return out;
}

}  // namespace milsurv::tiling
