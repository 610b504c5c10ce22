#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace milsurv::cohort {

struct ClinicalFeatures {
  double age_at_diagnosis = 0.0;  // years
  double psa_pretreatment = 0.0;  // ng/mL
  int isup_grade = 1;             // 1..5

  // Throws ValidationError naming the offending field.
  void validate() const;
  friend bool operator==(const ClinicalFeatures&, const ClinicalFeatures&) = default;
};

struct SurvivalOutcome {
  double time = 0.0;  // years, > 0
  bool event = false;
  friend bool operator==(const SurvivalOutcome&, const SurvivalOutcome&) = default;
};

struct PsaMeasurement {
  double time = 0.0;   // years after surgery
  double value = 0.0;  // ng/mL
  friend bool operator==(const PsaMeasurement&, const PsaMeasurement&) = default;
};

class PsaSeries {
 public:
  PsaSeries() = default;
  // Throws ValidationError unless times strictly increase and values are >= 0.
  explicit PsaSeries(std::vector<PsaMeasurement> measurements);

  const std::vector<PsaMeasurement>& measurements() const noexcept { return m_; }
  bool empty() const noexcept { return m_.empty(); }

 private:
  std::vector<PsaMeasurement> m_;
};

// Inputs of the post-surgical CAPRA-S score. Every field is optional so that a
// manifest with blank cells can still be represented; scoring requires all.
struct CapraSInputs {
  std::optional<double> psa;
  std::optional<int> gleason_primary;
  std::optional<int> gleason_secondary;
  std::optional<bool> positive_margins;
  std::optional<bool> extracapsular_extension;
  std::optional<bool> seminal_vesicle_invasion;
  std::optional<bool> lymph_node_invasion;

  bool complete() const noexcept;
  friend bool operator==(const CapraSInputs&, const CapraSInputs&) = default;
};

struct CohortRecord {
  std::string patient_id;
  std::optional<ClinicalFeatures> clinical;
  SurvivalOutcome outcome;
  std::vector<std::string> slide_ids;
  std::optional<CapraSInputs> capra_s;

  friend bool operator==(const CohortRecord&, const CohortRecord&) = default;
};

using Cohort = std::vector<CohortRecord>;

// Checks id uniqueness and per-record invariants; throws ValidationError.
void validate_cohort(const Cohort& records);

// CSV manifest with columns
//   patient_id, age, psa, isup, time_years, event, slide_ids,
//   psa_capra, gleason_p, gleason_s, margins, ece, svi, lni
// Only patient_id, time_years and event are mandatory columns.
Cohort read_manifest(std::istream& in);
Cohort load_manifest(const std::string& path);
void write_manifest(std::ostream& out, const Cohort& records);
void save_manifest(const std::string& path, const Cohort& records);

// ---- outcome derivation ---------------------------------------------------

enum class BcrRule {
  TwoConsecutive_0_2,  // two adjacent measurements >= 0.2 ng/mL
  Single_0_1,          // one measurement >= 0.1 ng/mL
};

// Event time under TwoConsecutive_0_2 is the first of the two qualifying
// measurements. Censored outcomes carry time = followup_end.
SurvivalOutcome derive_bcr(const PsaSeries& series, BcrRule rule, double followup_end);

// Long-format CSV: patient_id, time_years, psa. Rows may be unordered.
std::map<std::string, PsaSeries> load_psa_series(const std::string& path);
std::map<std::string, PsaSeries> read_psa_series(std::istream& in);

// ---- clinical normalization ---------------------------------------------

using Standardized = std::array<double, 3>;  // (age, psa, isup)

struct NormalizationStats {
  std::array<double, 3> mean{};
  std::array<double, 3> sd{1.0, 1.0, 1.0};

  void validate() const;
  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

inline constexpr std::array<const char*, 3> kClinicalFeatureNames{"age", "psa", "isup"};

// Mean and sample (n-1) standard deviation over records that carry clinical
// features. Needs at least two such records.
NormalizationStats fit_normalization(const Cohort& records);
Standardized normalize_clinical(const ClinicalFeatures& c, const NormalizationStats& stats);
// Inverse of normalize_clinical; isup is returned unrounded.
std::array<double, 3> denormalize_clinical(const Standardized& z, const NormalizationStats& stats);

// ---- CAPRA-S -------------------------------------------------------------

enum class CapraGroup { Low, Intermediate, High };

struct CapraResult {
  int score = 0;
  CapraGroup group = CapraGroup::Low;
};

const char* to_string(CapraGroup g);
CapraGroup capra_group(int score);
CapraResult capra_s_score(const CapraSInputs& in);

}  // namespace milsurv::cohort
