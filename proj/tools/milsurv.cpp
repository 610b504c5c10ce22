#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "milsurv/capra_compare.hpp"
#include "milsurv/checkpoint.hpp"
#include "milsurv/config.hpp"
#include "milsurv/csv.hpp"
#include "milsurv/embedding_store.hpp"
#include "milsurv/errors.hpp"
#include "milsurv/experiment.hpp"
#include "milsurv/report.hpp"
#include "milsurv/rng.hpp"
#include "milsurv/synthetic.hpp"
#include "milsurv/tiling.hpp"

namespace fs = std::filesystem;
using namespace milsurv;
using nlohmann::json;

namespace {

// Files written by one run. Unless commit() is reached, they are deleted
// together with any directory the run created.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    fs::path p;
    for (const auto& part : fs::absolute(dir_)) {
      p /= part;
      if (!fs::exists(p)) created_dirs_.push_back(p);
    }
    fs::create_directories(dir_);
  }
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = files_.rbegin(); it != files_.rend(); ++it) fs::remove(*it, ec);
    for (auto it = created_dirs_.rbegin(); it != created_dirs_.rend(); ++it) fs::remove_all(*it, ec);
  }
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;

  fs::path path(const std::string& name) {
    auto p = dir_ / name;
    fs::create_directories(p.parent_path());
    files_.push_back(p);
    return p;
  }
  void write(const std::string& name, const std::string& bytes) {
    std::ofstream f(path(name), std::ios::binary);
    f << bytes;
    if (!f) throw Error("failed writing '" + (dir_ / name).string() + "'");
  }
  void adopt(const std::vector<std::string>& paths) {
    for (const auto& p : paths) files_.emplace_back(p);
  }
  // Writes the run manifest and keeps every output.
  void commit(const std::string& command, std::uint64_t seed, const std::string& config_hash) {
    json names = json::array();
    for (const auto& f : files_) names.push_back(fs::relative(f, dir_).generic_string());
    std::sort(names.begin(), names.end());
    json m = {{"command", command},
              {"seed", seed},
              {"config_hash", config_hash},
              {"version", pipeline::version_string()},
              {"outputs", names}};
    write("run_manifest.json", pipeline::dump_json(m));
    committed_ = true;
  }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  std::vector<fs::path> created_dirs_;
  bool committed_ = false;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> modalities;
  std::string cohort;
  std::string embeddings;
};

void add_common(CLI::App* app, Common& c, bool cohort_flags) {
  app->add_option("--config", c.config, "Experiment config (TOML)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Master seed (overrides the config)");
  app->add_option("--out", c.out, "Output directory (overrides the config)");
  app->add_option("--modality", c.modalities, "clinical, image or multimodal; repeatable");
  if (cohort_flags) {
    app->add_option("--cohort", c.cohort, "Cohort manifest CSV (overrides the config)");
    app->add_option("--embeddings", c.embeddings, "Embedding store of --cohort");
  }
}

pipeline::ExperimentConfig resolve(const Common& c) {
  auto cfg = c.config.empty() ? pipeline::ExperimentConfig{} : pipeline::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (!c.modalities.empty()) {
    cfg.modalities.clear();
    for (const auto& m : c.modalities) cfg.modalities.push_back(model::modality_from_string(m));
  }
  if (!c.cohort.empty()) cfg.development = pipeline::CohortPaths{"development", c.cohort, c.embeddings};
  cfg.validate(true);
  return cfg;
}

pipeline::LoadedCohort development(const pipeline::ExperimentConfig& cfg) {
  if (!cfg.development) throw ValidationError("no development cohort: pass --cohort or set [cohorts] development");
  return pipeline::load_cohort(*cfg.development, cfg.encoder);
}

void write_report(Outputs& out, const std::string& stem, const json& report) {
  out.write(stem + ".json", pipeline::dump_json(report));
  out.write(stem + ".txt", pipeline::render_text(report));
  out.adopt(pipeline::write_plot_data(report, (out.dir() / "plots").string()));
}

pipeline::RunHeader header(const std::string& command, const pipeline::ExperimentConfig& cfg) {
  return {command, cfg.seed, cfg.hash(), pipeline::version_string()};
}

// ---- subcommands -----------------------------------------------------------------------

int run_synth(const Common& c, std::optional<int> patients, const std::string& name, std::optional<double> beta) {
  auto cfg = resolve(c);
  if (patients) cfg.synthetic_patients = *patients;
  if (beta) cfg.synthetic.beta = *beta;
  cfg.validate();
  const auto synth = tiling::generate_synthetic_cohort(cfg.synthetic, static_cast<std::size_t>(cfg.synthetic_patients),
                                                       derive_seed(cfg.seed, {0x5EULL}), name.empty() ? "P" : name);
  const std::string stem = name.empty() ? "cohort" : name;
  Outputs out(cfg.output_dir);
  {
    std::ostringstream m;
    cohort::write_manifest(m, synth.records);
    out.write(stem + ".csv", m.str());
  }
  tiling::write_store(out.path(stem + ".mse").string(), synth.slide_bags);
  {
    std::ostringstream t;
    t << "patient_id,true_risk,signal_fraction,clinical_latent\n";
    for (std::size_t i = 0; i < synth.records.size(); ++i)
      t << synth.records[i].patient_id << "," << csv::format_double(synth.true_risk[i]) << ","
        << csv::format_double(synth.signal_fraction[i]) << "," << csv::format_double(synth.clinical_latent[i])
        << "\n";
    out.write(stem + "_truth.csv", t.str());
  }
  out.commit("synth", cfg.seed, cfg.hash());
  std::cout << "wrote " << synth.records.size() << " patients to " << out.dir().string() << "\n";
  return 0;
}

int run_tile(const Common& c, const std::string& mask_path, std::optional<int> tile_size, std::optional<int> stride,
             std::optional<double> min_tissue) {
  auto cfg = resolve(c);
  if (tile_size) cfg.tiling.tile_size = *tile_size;
  if (stride) cfg.tiling.stride = *stride;
  if (min_tissue) cfg.tiling.min_tissue_fraction = *min_tissue;
  cfg.validate();
  const auto mask = tiling::read_pgm_mask(mask_path);
  const auto grid =
      tiling::enumerate_tiles(mask, cfg.tiling.tile_size, cfg.tiling.stride, cfg.tiling.min_tissue_fraction);
  Outputs out(cfg.output_dir);
  std::ostringstream t;
  t << "x,y,tissue_fraction\n";
  for (std::size_t i = 0; i < grid.positions.size(); ++i)
    t << grid.positions[i].x << "," << grid.positions[i].y << "," << csv::format_double(grid.tissue_fraction[i])
      << "\n";
  out.write("tiles.csv", t.str());
  json summary = {{"mask", fs::path(mask_path).filename().string()},
                  {"width", mask.width},
                  {"height", mask.height},
                  {"resolution_um", mask.resolution_um},
                  {"tile_size", grid.tile_size},
                  {"stride", grid.stride},
                  {"min_tissue_fraction", cfg.tiling.min_tissue_fraction},
                  {"lattice_cols", grid.lattice_cols},
                  {"lattice_rows", grid.lattice_rows},
                  {"retained", grid.positions.size()}};
  out.write("tile_grid.json", pipeline::dump_json(summary));
  out.commit("tile", cfg.seed, cfg.hash());
  std::cout << grid.positions.size() << " of " << grid.lattice_cols * grid.lattice_rows << " tiles retained\n";
  return 0;
}

int run_cv(const Common& c) {
  const auto cfg = resolve(c);
  const auto dev = development(cfg);
  pipeline::RunReport rep;
  rep.header = header("cv", cfg);
  rep.cv = pipeline::nested_cv(dev, cfg);
  for (const auto& r : dev.records) rep.development_ids.push_back(r.patient_id);
  Outputs out(cfg.output_dir);
  write_report(out, "cv_report", pipeline::run_report_to_json(rep));
  for (const auto& m : rep.cv->modalities) {
    std::vector<pipeline::ScoredPatient> rows;
    for (std::size_t i = 0; i < dev.records.size(); ++i)
      if (m.heldout_score[i])
        rows.push_back({dev.records[i].patient_id, *m.heldout_score[i], dev.records[i].outcome.time,
                        dev.records[i].outcome.event});
    std::ostringstream f;
    pipeline::write_scores(f, rows);
    out.write("heldout_scores_" + std::string(model::to_string(m.modality)) + ".csv", f.str());
  }
  out.commit("cv", cfg.seed, cfg.hash());
  std::cout << pipeline::render_text(pipeline::run_report_to_json(rep));
  return 0;
}

std::vector<pipeline::LoadedCohort> externals(const pipeline::ExperimentConfig& cfg) {
  std::vector<pipeline::LoadedCohort> out;
  for (const auto& e : cfg.external) out.push_back(pipeline::load_cohort(e, cfg.encoder));
  return out;
}

pipeline::ExternalEvaluation evaluate_all(const std::vector<pipeline::FinalModels>& models,
                                          const std::vector<pipeline::LoadedCohort>& cohorts,
                                          const pipeline::ExperimentConfig& cfg) {
  pipeline::ExternalEvaluation all;
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    auto e = pipeline::evaluate_external(models, cohorts[i], i, cfg, "development");
    for (auto& s : e.skipped) std::cerr << "warning: skipping " << s.cohort << "/" << model::to_string(s.modality)
                                        << ": " << s.reason << "\n";
    std::move(e.results.begin(), e.results.end(), std::back_inserter(all.results));
    std::move(e.skipped.begin(), e.skipped.end(), std::back_inserter(all.skipped));
  }
  return all;
}

int run_train_final(const Common& c) {
  const auto cfg = resolve(c);
  const auto dev = development(cfg);
  const auto ext = externals(cfg);
  const auto models = pipeline::train_final(dev, cfg);
  Outputs out(cfg.output_dir);
  for (const auto& fm : models)
    for (std::size_t f = 0; f < fm.members.size(); ++f)
      out.write("models/" + std::string(model::to_string(fm.modality)) + "_member" + std::to_string(f) + ".json",
                model::encode_checkpoint(fm.members[f]));
  pipeline::RunReport rep;
  rep.header = header("train-final", cfg);
  if (!ext.empty()) rep.external = evaluate_all(models, ext, cfg);
  write_report(out, "run_report", pipeline::run_report_to_json(rep));
  out.commit("train-final", cfg.seed, cfg.hash());
  std::cout << pipeline::render_text(pipeline::run_report_to_json(rep));
  return 0;
}

int run_validate(const Common& c, const std::vector<std::string>& model_paths, const std::string& name) {
  const auto cfg = resolve(c);
  std::map<model::Modality, pipeline::FinalModels> by_mod;
  for (const auto& p : model_paths) {
    auto m = model::load_checkpoint(p);
    auto& fm = by_mod[m.modality()];
    fm.modality = m.modality();
    fm.members.push_back(std::move(m));
  }
  if (by_mod.empty()) throw ValidationError("validate needs at least one --model checkpoint");
  std::vector<pipeline::FinalModels> models;
  for (auto& [mod, fm] : by_mod) models.push_back(std::move(fm));

  std::vector<pipeline::LoadedCohort> cohorts;
  if (!c.cohort.empty())
    cohorts.push_back(pipeline::load_cohort({name, c.cohort, c.embeddings}, cfg.encoder));
  else
    cohorts = externals(cfg);
  if (cohorts.empty()) throw ValidationError("validate needs --cohort or [cohorts] external");
  pipeline::RunReport rep;
  rep.header = header("validate", cfg);
  rep.external = evaluate_all(models, cohorts, cfg);
  Outputs out(cfg.output_dir);
  write_report(out, "run_report", pipeline::run_report_to_json(rep));
  out.commit("validate", cfg.seed, cfg.hash());
  std::cout << pipeline::render_text(pipeline::run_report_to_json(rep));
  return 0;
}

int run_compare(const Common& c, const std::string& scores_path) {
  const auto cfg = resolve(c);
  if (c.cohort.empty()) throw ValidationError("compare-capra needs --cohort (manifest with CAPRA-S columns)");
  const auto records = cohort::load_manifest(c.cohort);
  const auto scores = pipeline::load_scores(scores_path);
  std::map<std::string, double> by_id;
  for (const auto& s : scores) by_id[s.patient_id] = s.score;
  cohort::Cohort used;
  std::vector<double> ai;
  for (const auto& r : records)
    if (auto it = by_id.find(r.patient_id); it != by_id.end()) {
      used.push_back(r);
      ai.push_back(it->second);
    }
  const std::size_t unscored = records.size() - used.size();
  pipeline::CompareOptions o;
  o.horizon_years = cfg.horizon_years;
  o.bootstrap.n_resamples = cfg.bootstrap;
  o.bootstrap.level = cfg.level;
  o.bootstrap.threads = cfg.bootstrap_threads;
  o.bootstrap.seed = derive_seed(cfg.seed, {0xCAULL});
  const auto cmp = pipeline::compare_with_capra(used, ai, o);
  json j = {{"header", {{"command", "compare-capra"}, {"seed", cfg.seed}, {"config_hash", cfg.hash()},
                        {"version", pipeline::version_string()}}},
            {"n_used", cmp.n_used},
            {"n_excluded_incomplete_capra_s", cmp.n_excluded},
            {"n_without_score", unscored},
            {"auc_ai", pipeline::metric_report_to_json(cmp.auc_ai)},
            {"auc_capra_s", pipeline::metric_report_to_json(cmp.auc_capra)},
            {"auc_combined", pipeline::metric_report_to_json(cmp.auc_combined)},
            {"delta_auc", pipeline::metric_report_to_json(cmp.delta_auc)},
            {"lrt", {{"chi_square", cmp.lrt.chi_square}, {"p", cmp.lrt.p}, {"df", cmp.lrt.df}}}};
  std::ostringstream t;
  t << "n used " << cmp.n_used << ", excluded (incomplete CAPRA-S) " << cmp.n_excluded << "\n"
    << "AUC AI        " << cmp.auc_ai.estimate << " [" << cmp.auc_ai.ci_low << ", " << cmp.auc_ai.ci_high << "]\n"
    << "AUC CAPRA-S   " << cmp.auc_capra.estimate << " [" << cmp.auc_capra.ci_low << ", " << cmp.auc_capra.ci_high
    << "]\n"
    << "AUC combined  " << cmp.auc_combined.estimate << " [" << cmp.auc_combined.ci_low << ", "
    << cmp.auc_combined.ci_high << "]\n"
    << "delta AUC     " << cmp.delta_auc.estimate << " [" << cmp.delta_auc.ci_low << ", " << cmp.delta_auc.ci_high
    << "]\n"
    << "LRT chi2      " << cmp.lrt.chi_square << " (df " << cmp.lrt.df << "), p = " << cmp.lrt.p << "\n";
  Outputs out(cfg.output_dir);
  out.write("capra_comparison.json", pipeline::dump_json(j));
  out.write("capra_comparison.txt", t.str());
  out.commit("compare-capra", cfg.seed, cfg.hash());
  std::cout << t.str();
  return 0;
}

int run_stratify(const Common& c, const std::string& scores_path) {
  const auto cfg = resolve(c);
  const auto ds = pipeline::scores_dataset(pipeline::load_scores(scores_path), "scores");
  const auto s = pipeline::stratify(ds, cfg.horizon_years);
  json groups = json::array();
  for (std::size_t g = 0; g < 4; ++g)
    groups.push_back({{"quartile", "Q" + std::to_string(g + 1)},
                      {"n", s.sizes[g]},
                      {"events", s.events[g]},
                      {"survival_at_horizon",
                       std::isfinite(s.survival_at_horizon[g]) ? json(s.survival_at_horizon[g]) : json(nullptr)}});
  auto lr = [](const std::optional<survstats::LogRankResult>& r) {
    return r ? json{{"chi_square", r->chi_square}, {"p", r->p}, {"df", r->df}} : json(nullptr);
  };
  json j = {{"header", {{"command", "stratify"}, {"seed", cfg.seed}, {"config_hash", cfg.hash()},
                        {"version", pipeline::version_string()}}},
            {"horizon_years", cfg.horizon_years},
            {"cuts", s.quartiles.cuts},
            {"degenerate", s.quartiles.degenerate},
            {"groups", groups},
            {"logrank", lr(s.overall)},
            {"q1_vs_q4", lr(s.q1_vs_q4)}};
  if (s.quartiles.degenerate) std::cerr << "warning: fewer than four non-empty risk quartiles\n";
  Outputs out(cfg.output_dir);
  out.write("stratification.json", pipeline::dump_json(j));
  {
    std::ostringstream km;
    pipeline::write_km_csv(km, s);
    out.write("km.csv", km.str());
  }
  out.commit("stratify", cfg.seed, cfg.hash());
  std::cout << pipeline::dump_json(j);
  return 0;
}

int run_report(const Common& c, const std::string& input) {
  std::ifstream in(input, std::ios::binary);
  if (!in) throw Error("cannot open '" + input + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("run report is not valid JSON: ") + e.what(), e.byte);
  }
  const auto& h = j.at("header");
  Outputs out(c.out.empty() ? fs::path(input).parent_path() / "rendered" : fs::path(c.out));
  const auto text = pipeline::render_text(j);
  out.write("report.txt", text);
  out.adopt(pipeline::write_plot_data(j, (out.dir() / "plots").string()));
  out.commit("report", h.at("seed").get<std::uint64_t>(), h.at("config_hash").get<std::string>());
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-MIL survival modelling: cohorts, training, validation and reports"};
  app.set_version_flag("--version", pipeline::version_string());
  app.require_subcommand(1);

  Common c;
  std::optional<int> patients;
  std::string name;
  std::optional<double> beta;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort manifest and embedding store");
  add_common(synth, c, false);
  synth->add_option("--patients", patients, "Number of patients (overrides [synthetic] patients)");
  synth->add_option("--name", name, "Patient id prefix and output file stem");
  synth->add_option("--beta", beta, "Planted image risk coefficient (overrides [synthetic] beta)");

  std::string mask;
  std::optional<int> tile_size, stride;
  std::optional<double> min_tissue;
  auto* tile = app.add_subcommand("tile", "Enumerate tiles of a tissue mask");
  add_common(tile, c, false);
  tile->add_option("--mask", mask, "Binary PGM tissue mask")->required()->check(CLI::ExistingFile);
  tile->add_option("--tile-size", tile_size, "Tile edge in pixels");
  tile->add_option("--stride", stride, "Lattice stride in pixels");
  tile->add_option("--min-tissue", min_tissue, "Minimum tissue fraction (inclusive)");

  auto* cv = app.add_subcommand("cv", "Nested cross-validation on the development cohort");
  add_common(cv, c, true);

  auto* final = app.add_subcommand("train-final", "Train final ensembles and validate on external cohorts");
  add_common(final, c, true);

  std::vector<std::string> models;
  std::string cohort_name = "external";
  auto* validate = app.add_subcommand("validate", "Apply saved checkpoints to a cohort");
  add_common(validate, c, true);
  validate->add_option("--model", models, "Checkpoint file; repeat for an ensemble")->required()->check(
      CLI::ExistingFile);
  validate->add_option("--name", cohort_name, "Cohort name used in the report");

  std::string scores;
  auto* compare = app.add_subcommand("compare-capra", "Compare AI scores with CAPRA-S");
  add_common(compare, c, true);
  compare->add_option("--scores", scores, "Scores CSV: patient_id, score, time_years, event")->required()->check(
      CLI::ExistingFile);

  auto* strat = app.add_subcommand("stratify", "Risk quartiles, Kaplan-Meier curves and log-rank tests");
  add_common(strat, c, false);
  strat->add_option("--scores", scores, "Scores CSV: patient_id, score, time_years, event")->required()->check(
      CLI::ExistingFile);

  std::string input;
  auto* report = app.add_subcommand("report", "Render a run report as text and plot-data CSVs");
  report->add_option("--input", input, "Run report JSON")->required()->check(CLI::ExistingFile);
  report->add_option("--out", c.out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(c, patients, name, beta);
    if (*tile) return run_tile(c, mask, tile_size, stride, min_tissue);
    if (*cv) return run_cv(c);
    if (*final) return run_train_final(c);
    if (*validate) return run_validate(c, models, cohort_name);
    if (*compare) return run_compare(c, scores);
    if (*strat) return run_stratify(c, scores);
    if (*report) return run_report(c, input);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
