#include "milsurv/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "milsurv/csv.hpp"
#include "milsurv/errors.hpp"

namespace milsurv::pipeline {

// ---- TOML subset ----------------------------------------------------------------

namespace {

class LineParser {
 public:
  LineParser(std::string_view s, int line) : s_(s), line_(line) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("config line " + std::to_string(line_) + ": " + msg, static_cast<std::size_t>(line_),
                     "col " + std::to_string(pos_ + 1));
  }
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  bool at_end() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }
  char peek() {
    skip_ws();
    return pos_ < s_.size() ? s_[pos_] : '\0';
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string bare_key() {
    skip_ws();
    const auto start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-'))
      ++pos_;
    if (pos_ == start) fail("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  TomlValue value() {
    TomlValue out;
    out.line = line_;
    const char c = peek();
    if (c == '"') {
      out.v = string();
    } else if (c == '[') {
      ++pos_;
      TomlArray arr;
      while (peek() != ']') {
        if (pos_ >= s_.size()) fail("unterminated array");
        arr.push_back(value());
        if (peek() == ',') ++pos_;
        else if (peek() != ']') fail("expected ',' or ']'");
      }
      ++pos_;
      out.v = std::move(arr);
    } else {
      const auto start = pos_;
      while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '#' && s_[pos_] != ' ' &&
             s_[pos_] != '\t')
        ++pos_;
      std::string tok(s_.substr(start, pos_ - start));
      tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
      if (tok.empty()) fail("expected a value");
      if (tok == "true") {
        out.v = true;
      } else if (tok == "false") {
        out.v = false;
      } else {
        const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
        const char* e = tok.data() + tok.size();
        long long i = 0;
        auto ri = std::from_chars(b, e, i);
        if (ri.ec == std::errc() && ri.ptr == e) {
          out.v = i;
        } else {
          double d = 0.0;
          auto rd = std::from_chars(b, e, d);
          if (rd.ec != std::errc() || rd.ptr != e) {
            pos_ = start;
            fail("cannot parse value '" + tok + "'");
          }
          out.v = d;
        }
      }
    }
    return out;
  }

 private:
  std::string string() {
    ++pos_;
    std::string out;
    while (true) {
      if (pos_ >= s_.size()) fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (pos_ >= s_.size()) fail("unterminated escape");
      switch (s_[pos_++]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: --pos_; fail("unknown escape");
      }
    }
  }

  std::string_view s_;
  int line_;
  std::size_t pos_ = 0;
};

}  // namespace

TomlTable parse_toml(std::string_view text) {
  TomlTable table;
  std::string section;
  table[section];
  std::set<std::string> seen_sections;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 0 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
    ++line_no;
    start = end + 1;

    LineParser p(line, line_no);
    if (p.at_end()) continue;
    if (p.peek() == '[') {
      p.expect('[');
      section = p.bare_key();
      p.expect(']');
      if (!p.at_end()) p.fail("trailing characters after section header");
      if (!seen_sections.insert(section).second) p.fail("duplicate section [" + section + "]");
      table[section];
      continue;
    }
    const auto key = p.bare_key();
    p.expect('=');
    auto v = p.value();
    if (!p.at_end()) p.fail("trailing characters after value");
    if (!table[section].emplace(key, std::move(v)).second) p.fail("duplicate key '" + key + "'");
    if (end == text.size()) break;
  }
  return table;
}

// ---- binding -------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::string where(const std::string& section, const std::string& key, const TomlValue& v) {
  return "[" + section + "] " + key + " (line " + std::to_string(v.line) + ")";
}

double as_double(const std::string& s, const std::string& k, const TomlValue& v) {
  if (auto d = std::get_if<double>(&v.v)) return *d;
  if (auto i = std::get_if<long long>(&v.v)) return static_cast<double>(*i);
  throw ValidationError(where(s, k, v) + " must be a number");
}
long long as_int(const std::string& s, const std::string& k, const TomlValue& v) {
  if (auto i = std::get_if<long long>(&v.v)) return *i;
  throw ValidationError(where(s, k, v) + " must be an integer");
}
int as_int32(const std::string& s, const std::string& k, const TomlValue& v) {
  const auto i = as_int(s, k, v);
  if (i < -2147483647LL || i > 2147483647LL) throw ValidationError(where(s, k, v) + " is out of range");
  return static_cast<int>(i);
}
bool as_bool(const std::string& s, const std::string& k, const TomlValue& v) {
  if (auto b = std::get_if<bool>(&v.v)) return *b;
  throw ValidationError(where(s, k, v) + " must be true or false");
}
std::string as_string(const std::string& s, const std::string& k, const TomlValue& v) {
  if (auto str = std::get_if<std::string>(&v.v)) return *str;
  throw ValidationError(where(s, k, v) + " must be a string");
}
std::vector<std::string> as_strings(const std::string& s, const std::string& k, const TomlValue& v) {
  auto arr = std::get_if<TomlArray>(&v.v);
  if (!arr) throw ValidationError(where(s, k, v) + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : *arr) out.push_back(as_string(s, k, e));
  return out;
}
std::vector<double> as_doubles(const std::string& s, const std::string& k, const TomlValue& v) {
  auto arr = std::get_if<TomlArray>(&v.v);
  if (!arr) throw ValidationError(where(s, k, v) + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : *arr) out.push_back(as_double(s, k, e));
  return out;
}

using Setter = std::function<void(const std::string&, const std::string&, const TomlValue&)>;

struct CohortKeys {
  std::optional<std::string> development, development_embeddings;
  std::vector<std::string> external, external_embeddings, external_names;
};

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  const auto table = parse_toml(text);
  ExperimentConfig c;
  CohortKeys ck;
  auto& t = c.train;
  auto& sy = c.synthetic;

  const std::map<std::string, std::map<std::string, Setter>> binders{
      {"experiment",
       {{"seed",
         [&](auto& s, auto& k, auto& v) {
           const auto i = as_int(s, k, v);
           if (i < 0) throw ValidationError(where(s, k, v) + " must be >= 0");
           c.seed = static_cast<std::uint64_t>(i);
         }},
        {"output_dir", [&](auto& s, auto& k, auto& v) { c.output_dir = as_string(s, k, v); }},
        {"modalities",
         [&](auto& s, auto& k, auto& v) {
           c.modalities.clear();
           for (const auto& m : as_strings(s, k, v)) {
             try {
               c.modalities.push_back(model::modality_from_string(m));
             } catch (const Error& e) {
               throw ValidationError(where(s, k, v) + ": " + e.what());
             }
           }
         }},
        {"encoder",
         [&](auto& s, auto& k, auto& v) {
           try {
             c.encoder = tiling::encoder_from_string(as_string(s, k, v));
           } catch (const ValidationError&) {
             throw;
           } catch (const Error& e) {
             throw ValidationError(where(s, k, v) + ": " + e.what());
           }
         }}}},
      {"cohorts",
       {{"development", [&](auto& s, auto& k, auto& v) { ck.development = as_string(s, k, v); }},
        {"development_embeddings", [&](auto& s, auto& k, auto& v) { ck.development_embeddings = as_string(s, k, v); }},
        {"external", [&](auto& s, auto& k, auto& v) { ck.external = as_strings(s, k, v); }},
        {"external_embeddings", [&](auto& s, auto& k, auto& v) { ck.external_embeddings = as_strings(s, k, v); }},
        {"external_names", [&](auto& s, auto& k, auto& v) { ck.external_names = as_strings(s, k, v); }}}},
      {"train",
       {{"learning_rate", [&](auto& s, auto& k, auto& v) { t.learning_rate = as_double(s, k, v); }},
        {"batch_size", [&](auto& s, auto& k, auto& v) { t.batch_size = as_int32(s, k, v); }},
        {"max_tiles", [&](auto& s, auto& k, auto& v) { t.max_tiles = as_int32(s, k, v); }},
        {"min_epochs", [&](auto& s, auto& k, auto& v) { t.min_epochs = as_int32(s, k, v); }},
        {"max_epochs", [&](auto& s, auto& k, auto& v) { t.max_epochs = as_int32(s, k, v); }},
        {"patience", [&](auto& s, auto& k, auto& v) { t.patience = as_int32(s, k, v); }},
        {"slides_per_epoch", [&](auto& s, auto& k, auto& v) { t.slides_per_epoch = as_int32(s, k, v); }},
        {"attention_dim", [&](auto& s, auto& k, auto& v) { t.attention_dim = as_int32(s, k, v); }},
        {"head_hidden", [&](auto& s, auto& k, auto& v) { t.head_hidden = as_int32(s, k, v); }},
        {"fusion_hidden", [&](auto& s, auto& k, auto& v) { t.fusion_hidden = as_int32(s, k, v); }},
        {"optimizer",
         [&](auto& s, auto& k, auto& v) {
           if (as_string(s, k, v) != "adam") throw ValidationError(where(s, k, v) + ": only \"adam\" is supported");
         }},
        {"gradient_accumulation",
         [&](auto& s, auto& k, auto& v) {
           if (as_int(s, k, v) != 1) throw ValidationError(where(s, k, v) + ": only 1 is supported");
         }}}},
      {"cv",
       {{"folds", [&](auto& s, auto& k, auto& v) { c.folds = as_int32(s, k, v); }},
        {"strata_bins", [&](auto& s, auto& k, auto& v) { c.strata_bins = as_int32(s, k, v); }},
        {"threads", [&](auto& s, auto& k, auto& v) { c.threads = as_int32(s, k, v); }}}},
      {"evaluation",
       {{"horizon_years", [&](auto& s, auto& k, auto& v) { c.horizon_years = as_double(s, k, v); }},
        {"bootstrap", [&](auto& s, auto& k, auto& v) { c.bootstrap = as_int32(s, k, v); }},
        {"level", [&](auto& s, auto& k, auto& v) { c.level = as_double(s, k, v); }},
        {"bootstrap_threads", [&](auto& s, auto& k, auto& v) { c.bootstrap_threads = as_int32(s, k, v); }}}},
      {"tiling",
       {{"tile_size", [&](auto& s, auto& k, auto& v) { c.tiling.tile_size = as_int32(s, k, v); }},
        {"stride", [&](auto& s, auto& k, auto& v) { c.tiling.stride = as_int32(s, k, v); }},
        {"min_tissue_fraction",
         [&](auto& s, auto& k, auto& v) { c.tiling.min_tissue_fraction = as_double(s, k, v); }}}},
      {"synthetic",
       {{"patients", [&](auto& s, auto& k, auto& v) { c.synthetic_patients = as_int32(s, k, v); }},
        {"dim", [&](auto& s, auto& k, auto& v) { sy.dim = as_int32(s, k, v); }},
        {"signal_direction", [&](auto& s, auto& k, auto& v) { sy.signal_direction = as_doubles(s, k, v); }},
        {"direction_seed",
         [&](auto& s, auto& k, auto& v) { sy.direction_seed = static_cast<std::uint64_t>(as_int(s, k, v)); }},
        {"frac_lo", [&](auto& s, auto& k, auto& v) { sy.frac_lo = as_double(s, k, v); }},
        {"frac_hi", [&](auto& s, auto& k, auto& v) { sy.frac_hi = as_double(s, k, v); }},
        {"signal_scale", [&](auto& s, auto& k, auto& v) { sy.signal_scale = as_double(s, k, v); }},
        {"noise_std", [&](auto& s, auto& k, auto& v) { sy.noise_std = as_double(s, k, v); }},
        {"beta", [&](auto& s, auto& k, auto& v) { sy.beta = as_double(s, k, v); }},
        {"baseline_hazard", [&](auto& s, auto& k, auto& v) { sy.baseline_hazard = as_double(s, k, v); }},
        {"censor_horizon", [&](auto& s, auto& k, auto& v) { sy.censor_horizon = as_double(s, k, v); }},
        {"censor_uniform_max", [&](auto& s, auto& k, auto& v) { sy.censor_uniform_max = as_double(s, k, v); }},
        {"clinical_beta", [&](auto& s, auto& k, auto& v) { sy.clinical_beta = as_double(s, k, v); }},
        {"clinical_coupling", [&](auto& s, auto& k, auto& v) { sy.clinical_coupling = as_double(s, k, v); }},
        {"tiles_min", [&](auto& s, auto& k, auto& v) { sy.tiles_min = as_int32(s, k, v); }},
        {"tiles_max", [&](auto& s, auto& k, auto& v) { sy.tiles_max = as_int32(s, k, v); }},
        {"slides_min", [&](auto& s, auto& k, auto& v) { sy.slides_min = as_int32(s, k, v); }},
        {"slides_max", [&](auto& s, auto& k, auto& v) { sy.slides_max = as_int32(s, k, v); }},
        {"with_clinical", [&](auto& s, auto& k, auto& v) { sy.with_clinical = as_bool(s, k, v); }},
        {"with_capra", [&](auto& s, auto& k, auto& v) { sy.with_capra = as_bool(s, k, v); }}}},
  };

  for (const auto& [section, keys] : table) {
    if (section.empty()) {
      if (!keys.empty())
        throw ValidationError("key '" + keys.begin()->first + "' (line " + std::to_string(keys.begin()->second.line) +
                              ") appears before any section");
      continue;
    }
    const auto b = binders.find(section);
    if (b == binders.end()) throw ValidationError("unknown config section [" + section + "]");
    for (const auto& [key, value] : keys) {
      const auto setter = b->second.find(key);
      if (setter == b->second.end()) throw ValidationError("unknown key " + where(section, key, value));
      setter->second(section, key, value);
    }
  }

  if (ck.development) c.development = CohortPaths{"development", *ck.development, ck.development_embeddings.value_or("")};
  else if (ck.development_embeddings)
    throw ValidationError("[cohorts] development_embeddings given without development");
  if (!ck.external_embeddings.empty() && ck.external_embeddings.size() != ck.external.size())
    throw ValidationError("[cohorts] external_embeddings must list one entry per external cohort (\"\" for none)");
  if (!ck.external_names.empty() && ck.external_names.size() != ck.external.size())
    throw ValidationError("[cohorts] external_names must list one entry per external cohort");
  for (std::size_t i = 0; i < ck.external.size(); ++i) {
    CohortPaths p;
    p.manifest = ck.external[i];
    p.embeddings = ck.external_embeddings.empty() ? "" : ck.external_embeddings[i];
    p.name = ck.external_names.empty() ? std::filesystem::path(p.manifest).stem().string() : ck.external_names[i];
    c.external.push_back(std::move(p));
  }
  c.validate(false);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  auto c = parse_config(ss.str());
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  if (c.development) {
    resolve(c.development->manifest);
    resolve(c.development->embeddings);
  }
  for (auto& e : c.external) {
    resolve(e.manifest);
    resolve(e.embeddings);
  }
  return c;
}

void ExperimentConfig::validate(bool check_files) const {
  if (modalities.empty()) throw ValidationError("[experiment] modalities must not be empty");
  for (std::size_t i = 0; i < modalities.size(); ++i)
    for (std::size_t j = i + 1; j < modalities.size(); ++j)
      if (modalities[i] == modalities[j]) throw ValidationError("[experiment] modalities lists a modality twice");
  if (output_dir.empty()) throw ValidationError("[experiment] output_dir must not be empty");
  train.validate();
  if (folds < 3) throw ValidationError("[cv] folds must be >= 3");
  if (strata_bins < 2) throw ValidationError("[cv] strata_bins must be >= 2");
  if (threads < 1) throw ValidationError("[cv] threads must be >= 1");
  if (!(horizon_years > 0.0)) throw ValidationError("[evaluation] horizon_years must be > 0");
  if (bootstrap < 1) throw ValidationError("[evaluation] bootstrap must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("[evaluation] level must be in (0, 1)");
  if (bootstrap_threads < 1) throw ValidationError("[evaluation] bootstrap_threads must be >= 1");
  if (tiling.tile_size < 1 || tiling.stride < 1 || tiling.stride > tiling.tile_size)
    throw ValidationError("[tiling] needs 0 < stride <= tile_size");
  if (!(tiling.min_tissue_fraction >= 0.0 && tiling.min_tissue_fraction <= 1.0))
    throw ValidationError("[tiling] min_tissue_fraction must be in [0, 1]");
  if (synthetic_patients < 10) throw ValidationError("[synthetic] patients must be >= 10");
  try {
    synthetic.validate();
  } catch (const Error& e) {
    throw ValidationError(std::string("[synthetic] ") + e.what());
  }
  std::set<std::string> names;
  for (const auto& e : external)
    if (!names.insert(e.name).second) throw ValidationError("external cohort name '" + e.name + "' is used twice");
  if (check_files) {
    auto need = [](const std::string& p) {
      if (!p.empty() && !std::filesystem::exists(p)) throw ValidationError("file '" + p + "' does not exist");
    };
    if (development) {
      need(development->manifest);
      need(development->embeddings);
    }
    for (const auto& e : external) {
      need(e.manifest);
      need(e.embeddings);
    }
  }
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream o;
  auto d = [](double v) { return csv::format_double(v); };
  o << "experiment.seed=" << seed << "\n";
  o << "experiment.modalities=";
  for (std::size_t i = 0; i < modalities.size(); ++i) o << (i ? "," : "") << model::to_string(modalities[i]);
  o << "\nexperiment.encoder=" << tiling::to_string(encoder) << "\n";
  if (development) o << "cohorts.development=" << development->manifest << "|" << development->embeddings << "\n";
  for (const auto& e : external) o << "cohorts.external=" << e.name << "|" << e.manifest << "|" << e.embeddings << "\n";
  o << "train.learning_rate=" << d(train.learning_rate) << "\ntrain.batch_size=" << train.batch_size
    << "\ntrain.max_tiles=" << train.max_tiles << "\ntrain.min_epochs=" << train.min_epochs
    << "\ntrain.max_epochs=" << train.max_epochs << "\ntrain.patience=" << train.patience
    << "\ntrain.slides_per_epoch=" << train.slides_per_epoch << "\ntrain.attention_dim=" << train.attention_dim
    << "\ntrain.head_hidden=" << train.head_hidden << "\ntrain.fusion_hidden=" << train.fusion_hidden << "\n";
  o << "cv.folds=" << folds << "\ncv.strata_bins=" << strata_bins << "\n";
  o << "evaluation.horizon_years=" << d(horizon_years) << "\nevaluation.bootstrap=" << bootstrap
    << "\nevaluation.level=" << d(level) << "\n";
  o << "tiling.tile_size=" << tiling.tile_size << "\ntiling.stride=" << tiling.stride
    << "\ntiling.min_tissue_fraction=" << d(tiling.min_tissue_fraction) << "\n";
  const auto& s = synthetic;
  o << "synthetic.patients=" << synthetic_patients << "\nsynthetic.dim=" << s.dim << "\nsynthetic.signal_direction=";
  for (std::size_t i = 0; i < s.signal_direction.size(); ++i) o << (i ? "," : "") << d(s.signal_direction[i]);
  o << "\nsynthetic.direction_seed=" << s.direction_seed << "\nsynthetic.frac_lo=" << d(s.frac_lo)
    << "\nsynthetic.frac_hi=" << d(s.frac_hi) << "\nsynthetic.signal_scale=" << d(s.signal_scale)
    << "\nsynthetic.noise_std=" << d(s.noise_std) << "\nsynthetic.beta=" << d(s.beta)
    << "\nsynthetic.baseline_hazard=" << d(s.baseline_hazard) << "\nsynthetic.censor_horizon=" << d(s.censor_horizon)
    << "\nsynthetic.censor_uniform_max=" << d(s.censor_uniform_max) << "\nsynthetic.clinical_beta=" << d(s.clinical_beta)
    << "\nsynthetic.clinical_coupling=" << d(s.clinical_coupling) << "\nsynthetic.tiles=" << s.tiles_min << ","
    << s.tiles_max << "\nsynthetic.slides=" << s.slides_min << "," << s.slides_max
    << "\nsynthetic.with_clinical=" << s.with_clinical << "\nsynthetic.with_capra=" << s.with_capra << "\n";
  return o.str();
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical())); }

}  // namespace milsurv::pipeline
