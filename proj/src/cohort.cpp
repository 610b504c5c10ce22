#include "milsurv/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "milsurv/csv.hpp"
#include "milsurv/errors.hpp"

namespace milsurv::cohort {

void ClinicalFeatures::validate() const {
  if (!(age_at_diagnosis >= 18.0 && age_at_diagnosis <= 120.0))
    throw ValidationError("age_at_diagnosis must lie in [18, 120], got " + std::to_string(age_at_diagnosis));
  if (!(psa_pretreatment > 0.0) || !std::isfinite(psa_pretreatment))
    throw ValidationError("psa_pretreatment must be > 0, got " + std::to_string(psa_pretreatment));
  if (isup_grade < 1 || isup_grade > 5)
    throw ValidationError("isup_grade must be in 1..5, got " + std::to_string(isup_grade));
}

PsaSeries::PsaSeries(std::vector<PsaMeasurement> measurements) : m_(std::move(measurements)) {
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (!(m_[i].value >= 0.0)) throw ValidationError("PSA values must be >= 0");
    if (i > 0 && !(m_[i].time > m_[i - 1].time))
      throw ValidationError("PSA measurement times must be strictly increasing");
  }
}

bool CapraSInputs::complete() const noexcept {
  return psa && gleason_primary && gleason_secondary && positive_margins && extracapsular_extension &&
         seminal_vesicle_invasion && lymph_node_invasion;
}

void validate_cohort(const Cohort& records) {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.patient_id.empty()) throw ValidationError("empty patient_id");
    if (!seen.insert(r.patient_id).second) throw ValidationError("duplicate patient_id '" + r.patient_id + "'");
    if (!(r.outcome.time > 0.0)) throw ValidationError("patient '" + r.patient_id + "': time must be > 0");
    if (!r.clinical && r.slide_ids.empty())
      throw ValidationError("patient '" + r.patient_id + "' has neither clinical features nor slides");
    if (r.clinical) r.clinical->validate();
  }
}

// ---- manifest ---------------------------------------------------------------

namespace {

const std::vector<std::string> kManifestColumns{"patient_id", "age",       "psa",       "isup",    "time_years",
                                                "event",      "slide_ids", "psa_capra", "gleason_p", "gleason_s",
                                                "margins",    "ece",       "svi",       "lni"};

struct Row {
  const csv::Table& t;
  std::size_t r;

  std::size_t line() const { return t.line_numbers[r]; }
  // Empty string when the column is absent from the header.
  const std::string& cell(const std::string& name) const {
    static const std::string empty;
    const int c = t.column(name);
    return c < 0 ? empty : t.rows[r][static_cast<std::size_t>(c)];
  }
};

std::optional<int> optional_int(const Row& row, const std::string& col, int lo, int hi) {
  const auto& s = row.cell(col);
  if (s.empty()) return std::nullopt;
  const auto v = csv::parse_int(s, row.line(), col);
  if (v < lo || v > hi)
    throw ParseError("row " + std::to_string(row.line()) + ", column '" + col + "': value " + s + " outside " +
                         std::to_string(lo) + ".." + std::to_string(hi),
                     row.line(), col);
  return static_cast<int>(v);
}

std::optional<double> optional_double(const Row& row, const std::string& col) {
  const auto& s = row.cell(col);
  if (s.empty()) return std::nullopt;
  return csv::parse_double(s, row.line(), col);
}

std::optional<bool> optional_flag(const Row& row, const std::string& col) {
  const auto& s = row.cell(col);
  if (s.empty()) return std::nullopt;
  return csv::parse_flag(s, row.line(), col);
}

CohortRecord parse_row(const Row& row) {
  CohortRecord rec;
  rec.patient_id = row.cell("patient_id");
  if (rec.patient_id.empty()) throw ParseError("row " + std::to_string(row.line()) + ": empty patient_id", row.line(), "patient_id");

  const auto age = optional_double(row, "age");
  const auto psa = optional_double(row, "psa");
  const auto isup = optional_int(row, "isup", 1, 5);
  if (age && psa && isup) {
    if (*age < 18.0 || *age > 120.0)
      throw ParseError("row " + std::to_string(row.line()) + ", column 'age': outside [18, 120]", row.line(), "age");
    if (!(*psa > 0.0))
      throw ParseError("row " + std::to_string(row.line()) + ", column 'psa': must be > 0", row.line(), "psa");
    rec.clinical = ClinicalFeatures{*age, *psa, *isup};
  }

  const auto& tcell = row.cell("time_years");
  rec.outcome.time = csv::parse_double(tcell, row.line(), "time_years");
  if (!(rec.outcome.time > 0.0))
    throw ParseError("row " + std::to_string(row.line()) + ", column 'time_years': must be > 0", row.line(), "time_years");
  rec.outcome.event = csv::parse_flag(row.cell("event"), row.line(), "event");

  const auto& slides = row.cell("slide_ids");
  if (!slides.empty()) {
    std::stringstream ss(slides);
    std::string id;
    while (std::getline(ss, id, ';')) {
      id = csv::trim(id);
      if (!id.empty()) rec.slide_ids.push_back(id);
    }
  }

  CapraSInputs cap;
  cap.psa = optional_double(row, "psa_capra");
  cap.gleason_primary = optional_int(row, "gleason_p", 1, 5);
  cap.gleason_secondary = optional_int(row, "gleason_s", 1, 5);
  cap.positive_margins = optional_flag(row, "margins");
  cap.extracapsular_extension = optional_flag(row, "ece");
  cap.seminal_vesicle_invasion = optional_flag(row, "svi");
  cap.lymph_node_invasion = optional_flag(row, "lni");
  if (cap != CapraSInputs{}) rec.capra_s = cap;
  return rec;
}

template <typename T, typename F>
std::string opt_cell(const std::optional<T>& v, F fmt) {
  return v ? fmt(*v) : std::string();
}

}  // namespace

Cohort read_manifest(std::istream& in) {
  const auto table = csv::read(in);
  for (const char* required : {"patient_id", "time_years", "event"})
    if (table.column(required) < 0) throw ParseError(std::string("manifest lacks required column '") + required + "'", 1, required);
  for (const auto& h : table.header)
    if (std::find(kManifestColumns.begin(), kManifestColumns.end(), h) == kManifestColumns.end())
      throw ParseError("manifest has unknown column '" + h + "'", 1, h);

  Cohort out;
  out.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) out.push_back(parse_row(Row{table, r}));
  validate_cohort(out);
  return out;
}

Cohort load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path, 0);
  return read_manifest(in);
}

void write_manifest(std::ostream& out, const Cohort& records) {
  for (std::size_t i = 0; i < kManifestColumns.size(); ++i) out << (i ? "," : "") << kManifestColumns[i];
  out << '\n';
  const auto d = [](double v) { return csv::format_double(v); };
  const auto i = [](int v) { return std::to_string(v); };
  const auto b = [](bool v) { return std::string(v ? "1" : "0"); };
  for (const auto& r : records) {
    std::string slides;
    for (std::size_t k = 0; k < r.slide_ids.size(); ++k) slides += (k ? ";" : "") + r.slide_ids[k];
    const CapraSInputs cap = r.capra_s.value_or(CapraSInputs{});
    out << csv::escape(r.patient_id) << ',' << (r.clinical ? d(r.clinical->age_at_diagnosis) : "") << ','
        << (r.clinical ? d(r.clinical->psa_pretreatment) : "") << ','
        << (r.clinical ? i(r.clinical->isup_grade) : "") << ',' << d(r.outcome.time) << ','
        << (r.outcome.event ? 1 : 0) << ',' << csv::escape(slides) << ',' << opt_cell(cap.psa, d) << ','
        << opt_cell(cap.gleason_primary, i) << ',' << opt_cell(cap.gleason_secondary, i) << ','
        << opt_cell(cap.positive_margins, b) << ',' << opt_cell(cap.extracapsular_extension, b) << ','
        << opt_cell(cap.seminal_vesicle_invasion, b) << ',' << opt_cell(cap.lymph_node_invasion, b) << '\n';
  }
}

void save_manifest(const std::string& path, const Cohort& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path);
  write_manifest(out, records);
}

// ---- outcome derivation ----------------------------------------------------

SurvivalOutcome derive_bcr(const PsaSeries& series, BcrRule rule, double followup_end) {
  const auto& m = series.measurements();
  if (m.empty()) throw PreconditionError("derive_bcr: empty PSA series");
  if (followup_end < m.back().time)
    throw PreconditionError("derive_bcr: followup_end precedes the last PSA measurement");

  std::optional<double> event_time;
  if (rule == BcrRule::TwoConsecutive_0_2) {
    for (std::size_t i = 0; i + 1 < m.size(); ++i)
      if (m[i].value >= 0.2 && m[i + 1].value >= 0.2) {
        event_time = m[i].time;
        break;
      }
  } else {
    for (const auto& x : m)
      if (x.value >= 0.1) {
        event_time = x.time;
        break;
      }
  }
  if (event_time) {
    if (!(*event_time > 0.0)) throw PreconditionError("derive_bcr: event at non-positive time");
    return {*event_time, true};
  }
  if (!(followup_end > 0.0)) throw PreconditionError("derive_bcr: followup_end must be > 0");
  return {followup_end, false};
}

std::map<std::string, PsaSeries> read_psa_series(std::istream& in) {
  const auto table = csv::read(in);
  const int cid = table.column("patient_id"), ct = table.column("time_years"), cv = table.column("psa");
  if (cid < 0 || ct < 0 || cv < 0) throw ParseError("PSA file needs columns patient_id,time_years,psa", 1);
  std::map<std::string, std::vector<PsaMeasurement>> raw;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.line_numbers[r];
    const double t = csv::parse_double(row[ct], line, "time_years");
    const double v = csv::parse_double(row[cv], line, "psa");
    if (v < 0.0) throw ParseError("row " + std::to_string(line) + ", column 'psa': negative value", line, "psa");
    raw[row[cid]].push_back({t, v});
  }
  std::map<std::string, PsaSeries> out;
  for (auto& [id, ms] : raw) {
    std::stable_sort(ms.begin(), ms.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    try {
      out.emplace(id, PsaSeries(std::move(ms)));
    } catch (const ValidationError& e) {
      throw ValidationError("patient '" + id + "': " + e.what());
    }
  }
  return out;
}

std::map<std::string, PsaSeries> load_psa_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open PSA file " + path, 0);
  return read_psa_series(in);
}

// ---- normalization -----------------------------------------------------------

void NormalizationStats::validate() const {
  for (std::size_t k = 0; k < 3; ++k)
    if (!(sd[k] > 0.0) || !std::isfinite(sd[k]) || !std::isfinite(mean[k]))
      throw ValidationError(std::string("normalization stats invalid for feature ") + kClinicalFeatureNames[k]);
}

NormalizationStats fit_normalization(const Cohort& records) {
  std::vector<std::array<double, 3>> xs;
  for (const auto& r : records)
    if (r.clinical)
      xs.push_back({r.clinical->age_at_diagnosis, r.clinical->psa_pretreatment, double(r.clinical->isup_grade)});
  if (xs.size() < 2) throw PreconditionError("fit_normalization needs at least two records with clinical features");

  NormalizationStats s;
  const double n = static_cast<double>(xs.size());
  for (std::size_t k = 0; k < 3; ++k) {
    double sum = 0.0;
    for (const auto& x : xs) sum += x[k];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& x : xs) ss += (x[k] - mean) * (x[k] - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0))
      throw DegenerateFeatureError(std::string("feature '") + kClinicalFeatureNames[k] + "' has zero variance");
    s.mean[k] = mean;
    s.sd[k] = sd;
  }
  return s;
}

Standardized normalize_clinical(const ClinicalFeatures& c, const NormalizationStats& stats) {
  stats.validate();
  const std::array<double, 3> x{c.age_at_diagnosis, c.psa_pretreatment, double(c.isup_grade)};
  Standardized z;
  for (std::size_t k = 0; k < 3; ++k) z[k] = (x[k] - stats.mean[k]) / stats.sd[k];
  return z;
}

std::array<double, 3> denormalize_clinical(const Standardized& z, const NormalizationStats& stats) {
  stats.validate();
  std::array<double, 3> x;
  for (std::size_t k = 0; k < 3; ++k) x[k] = z[k] * stats.sd[k] + stats.mean[k];
  return x;
}

}  // namespace milsurv::cohort
