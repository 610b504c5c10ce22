#include <array>

#include "milsurv/cohort.hpp"
#include "milsurv/errors.hpp"

namespace milsurv::cohort {

namespace {

// CAPRA-S point table, version 1 (Cooperberg, Hilton & Carroll, Cancer 2011).
//   PSA (ng/mL):        <= 6 -> 0, 6-10 -> 1, 10-20 -> 2, > 20 -> 3
//   pathologic Gleason: <= 6 -> 0, 3+4 -> 1, 4+3 -> 2, 8-10 -> 3
//   positive margins 2, extracapsular extension 1,
//   seminal vesicle invasion 2, lymph node invasion 1.
struct PsaBand {
  double upper;  // inclusive
  int points;
};
constexpr std::array<PsaBand, 3> kPsaBands{{{6.0, 0}, {10.0, 1}, {20.0, 2}}};
constexpr int kPsaAbove20 = 3;
constexpr int kMarginPoints = 2;
constexpr int kEcePoints = 1;
constexpr int kSviPoints = 2;
constexpr int kLniPoints = 1;

int psa_points(double psa) {
  for (const auto& band : kPsaBands)
    if (psa <= band.upper) return band.points;
  return kPsaAbove20;
}

int gleason_points(int primary, int secondary) {
  const int sum = primary + secondary;
  if (sum <= 6) return 0;
  if (sum == 7) return primary >= 4 ? 2 : 1;
  return 3;
}

}  // namespace

const char* to_string(CapraGroup g) {
  switch (g) {
    case CapraGroup::Low: return "Low";
    case CapraGroup::Intermediate: return "Intermediate";
    case CapraGroup::High: return "High";
  }
  return "?";
}

CapraGroup capra_group(int score) {
  if (score < 0 || score > 12) throw PreconditionError("CAPRA-S score outside 0..12: " + std::to_string(score));
  if (score <= 2) return CapraGroup::Low;
  if (score <= 5) return CapraGroup::Intermediate;
  return CapraGroup::High;
}

CapraResult capra_s_score(const CapraSInputs& in) {
  if (!in.complete()) throw PreconditionError("capra_s_score: missing input field");
  if (!(*in.psa >= 0.0)) throw PreconditionError("capra_s_score: PSA must be >= 0");
  for (int g : {*in.gleason_primary, *in.gleason_secondary})
    if (g < 1 || g > 5) throw PreconditionError("capra_s_score: Gleason pattern outside 1..5");

  int score = psa_points(*in.psa) + gleason_points(*in.gleason_primary, *in.gleason_secondary);
  if (*in.positive_margins) score += kMarginPoints;
  if (*in.extracapsular_extension) score += kEcePoints;
  if (*in.seminal_vesicle_invasion) score += kSviPoints;
  if (*in.lymph_node_invasion) score += kLniPoints;
  return {score, capra_group(score)};
}

}  // namespace milsurv::cohort
