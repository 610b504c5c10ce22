#pragma once

#include <cstdint>
#include <vector>

#include "milsurv/cohort.hpp"
#include "milsurv/embedding.hpp"

namespace milsurv::tiling {

// Generator for cohorts with a planted, known risk signal.
//
// Patient i draws a signal fraction f_i ~ U[frac_lo, frac_hi]; that share of
// its tiles is signal_scale * signal_direction + N(0, noise_std^2) per
// coordinate, the rest pure noise. A latent clinical factor z_i ~ N(0,1)
// drives age/PSA/ISUP and the CAPRA-S inputs. True log-hazard is
//   r_i = beta * f_i + clinical_beta * z_i
// and event times are exponential with rate baseline_hazard * exp(r_i),
// censored at min(censor_horizon, U(0, censor_uniform_max]).
struct SyntheticSignalSpec {
  int dim = 64;
  // Unit vector; when empty it is derived from direction_seed so that cohorts
  // drawn with different seeds share the same signal direction.
  std::vector<double> signal_direction;
  std::uint64_t direction_seed = 20240917;
  double frac_lo = 0.0;
  double frac_hi = 1.0;
  double signal_scale = 2.0;
  double noise_std = 1.0;
  double beta = 0.0;
  double baseline_hazard = 0.1;
  double censor_horizon = 10.0;
  double censor_uniform_max = 20.0;
  double clinical_beta = 0.0;
  // Weight of the standardized f_i in the latent that drives clinical features.
  double clinical_coupling = 0.0;
  int tiles_min = 50;
  int tiles_max = 50;
  int slides_min = 1;
  int slides_max = 1;
  bool with_clinical = true;
  bool with_capra = true;

  void validate() const;
  std::vector<double> direction() const;
};

struct SyntheticCohort {
  cohort::Cohort records;
  std::vector<EmbeddingBag> slide_bags;  // one per slide, grouped by patient in record order
  std::vector<double> true_risk;         // r_i
  std::vector<double> signal_fraction;   // f_i
  std::vector<double> clinical_latent;   // z_i
};

SyntheticCohort generate_synthetic_cohort(const SyntheticSignalSpec& spec, std::size_t n_patients, std::uint64_t seed,
                                          const std::string& id_prefix = "P");

}  // namespace milsurv::tiling
