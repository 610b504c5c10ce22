#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "milsurv/embedding.hpp"
#include "milsurv/synthetic.hpp"
#include "milsurv/trainer.hpp"

namespace milsurv::pipeline {

// ---- TOML subset -------------------------------------------------------------
// Sections "[name]", "key = value" lines, '#' comments. Values: double-quoted
// strings, integers, floats, booleans, and single-line arrays of those.

struct TomlValue;
using TomlArray = std::vector<TomlValue>;
struct TomlValue {
  std::variant<bool, long long, double, std::string, TomlArray> v;
  int line = 0;
};
using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

// Throws ParseError (row = line, column = 1-based character position).
TomlTable parse_toml(std::string_view text);

// ---- experiment configuration ----------------------------------------------

struct CohortPaths {
  std::string name;
  std::string manifest;
  std::string embeddings;  // empty when the cohort has no images
  friend bool operator==(const CohortPaths&, const CohortPaths&) = default;
};

struct TilingConfig {
  int tile_size = 256;
  int stride = 128;
  double min_tissue_fraction = 0.2;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::vector<model::Modality> modalities{model::Modality::Image};
  tiling::Encoder encoder = tiling::Encoder::Synthetic;
  std::optional<CohortPaths> development;
  std::vector<CohortPaths> external;

  model::TrainConfig train;  // modality and seed are set per task

  int folds = 5;
  int strata_bins = 4;
  int threads = 1;  // parallel fold tasks

  double horizon_years = 5.0;
  int bootstrap = 1000;
  double level = 0.95;
  int bootstrap_threads = 1;

  TilingConfig tiling;

  tiling::SyntheticSignalSpec synthetic;
  int synthetic_patients = 300;

  // Throws ValidationError. File existence is checked only when asked.
  void validate(bool check_files = false) const;
  // Stable text listing every setting that can change a result (not the
  // output directory or thread counts); the hash is FNV-1a 64 of it.
  std::string canonical() const;
  std::string hash() const;
};

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace milsurv::pipeline
