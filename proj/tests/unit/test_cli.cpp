#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "milsurv/cohort.hpp"
#include "milsurv/tiling.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / "milsurv_cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + MILSURV_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return status == 0 ? 0 : 1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Small synthetic settings so that the CLI runs finish in seconds.
void write_config(const fs::path& path, const std::string& extra = "") {
  std::ofstream(path) << "[experiment]\nseed = 3\nmodalities = [\"image\"]\n\n"
                         "[train]\nlearning_rate = 0.003\nbatch_size = 32\nmax_tiles = 20\n"
                         "min_epochs = 3\nmax_epochs = 6\npatience = 3\n"
                         "attention_dim = 8\nhead_hidden = 8\nfusion_hidden = 8\n\n"
                         "[evaluation]\nbootstrap = 40\n\n"
                         "[synthetic]\ndim = 8\nbeta = 4.0\nbaseline_hazard = 0.02\ntiles_min = 5\ntiles_max = 10\n"
                      << extra;
}

}  // namespace

TEST_CASE("synth is byte-identical across runs") {
  const auto dir = scratch("synth");
  REQUIRE(run("synth --patients 200 --seed 7 --out " + q(dir / "a"), dir / "a.log") == 0);
  REQUIRE(run("synth --patients 200 --seed 7 --out " + q(dir / "b"), dir / "b.log") == 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    ++files;
    CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
  }
  CHECK(files == 4);
  CHECK(milsurv::cohort::load_manifest((dir / "a" / "cohort.csv").string()).size() == 200);
  REQUIRE(run("synth --patients 200 --seed 8 --out " + q(dir / "c"), dir / "c.log") == 0);
  CHECK(slurp(dir / "a" / "cohort.csv") != slurp(dir / "c" / "cohort.csv"));
}

TEST_CASE("unknown flags and subcommands fail") {
  const auto dir = scratch("usage");
  CHECK(run("synth --no-such-flag", dir / "a.log") != 0);
  CHECK(run("frobnicate", dir / "b.log") != 0);
  CHECK(run("", dir / "c.log") != 0);
  CHECK(run("cv --config " + q(dir / "missing.toml"), dir / "d.log") != 0);
}

TEST_CASE("tile writes the retained lattice") {
  const auto dir = scratch("tile");
  milsurv::tiling::TissueMask m;
  m.width = m.height = 512;
  m.bitmap.assign(512 * 512, 1);
  milsurv::tiling::write_pgm_mask((dir / "mask.pgm").string(), m);
  REQUIRE(run("tile --mask " + q(dir / "mask.pgm") + " --out " + q(dir / "out"), dir / "t.log") == 0);
  const auto grid = nlohmann::json::parse(slurp(dir / "out" / "tile_grid.json"));
  CHECK(grid["retained"] == 9);
  CHECK(fs::exists(dir / "out" / "run_manifest.json"));
}

TEST_CASE("cv, train-final, stratify, compare-capra and report run end to end") {
  const auto dir = scratch("flow");
  write_config(dir / "c.toml");
  const auto cfg = "--config " + q(dir / "c.toml");
  REQUIRE(run("synth " + cfg + " --patients 200 --name dev --out " + q(dir / "data"), dir / "s1.log") == 0);
  REQUIRE(run("synth " + cfg + " --patients 120 --name ext --seed 4 --out " + q(dir / "data"), dir / "s2.log") == 0);

  const auto dev = " --cohort " + q(dir / "data" / "dev.csv") + " --embeddings " + q(dir / "data" / "dev.mse");
  REQUIRE(run("cv " + cfg + dev + " --out " + q(dir / "cv"), dir / "cv.log") == 0);
  const auto rep = nlohmann::json::parse(slurp(dir / "cv" / "cv_report.json"));
  const auto& folds = rep["cross_validation"]["modalities"][0]["folds"];
  CHECK(folds.size() == 5);
  std::istringstream rows(slurp(dir / "cv" / "plots" / "cv_folds.csv"));
  std::string line;
  int c_rows = 0, auc_rows = 0;
  while (std::getline(rows, line)) {
    c_rows += line.find(",c_index,") != std::string::npos;
    auc_rows += line.find(",auc,") != std::string::npos;
  }
  CHECK(c_rows == 5);
  CHECK(auc_rows == 5);
  CHECK(fs::exists(dir / "cv" / "cv_report.txt"));
  CHECK(fs::exists(dir / "cv" / "heldout_scores_image.csv"));

  const auto manifest = nlohmann::json::parse(slurp(dir / "cv" / "run_manifest.json"));
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);

  const auto scores = q(dir / "cv" / "heldout_scores_image.csv");
  REQUIRE(run("stratify " + cfg + " --scores " + scores + " --out " + q(dir / "strat"), dir / "st.log") == 0);
  CHECK(fs::exists(dir / "strat" / "km.csv"));
  REQUIRE(run("compare-capra " + cfg + " --scores " + scores + " --cohort " + q(dir / "data" / "dev.csv") + " --out " +
                  q(dir / "cmp"),
              dir / "cmp.log") == 0);
  const auto cmp = nlohmann::json::parse(slurp(dir / "cmp" / "capra_comparison.json"));
  CHECK(cmp["lrt"]["df"] == 1);

  write_config(dir / "f.toml", "\n[cohorts]\ndevelopment = \"data/dev.csv\"\ndevelopment_embeddings = "
                               "\"data/dev.mse\"\nexternal = [\"data/ext.csv\"]\nexternal_embeddings = "
                               "[\"data/ext.mse\"]\nexternal_names = [\"ext\"]\n");
  REQUIRE(run("train-final --config " + q(dir / "f.toml") + " --out " + q(dir / "final"), dir / "f.log") == 0);
  CHECK(fs::exists(dir / "final" / "models" / "image_member4.json"));
  const auto fin = nlohmann::json::parse(slurp(dir / "final" / "run_report.json"));
  CHECK(fin["external"]["results"].size() == 1);

  REQUIRE(run("report --input " + q(dir / "final" / "run_report.json") + " --out " + q(dir / "rendered"),
              dir / "r.log") == 0);
  const auto km = slurp(dir / "rendered" / "plots" / "km_ext_image.csv");
  for (const char* g : {"Q1,0,1,", "Q2,0,1,", "Q3,0,1,", "Q4,0,1,"}) CHECK(km.find(g) != std::string::npos);
  CHECK(fs::exists(dir / "rendered" / "report.txt"));

  std::string models;
  for (int f = 0; f < 5; ++f) models += " --model " + q(dir / "final" / "models" / ("image_member" + std::to_string(f) + ".json"));
  REQUIRE(run("validate " + cfg + models + " --name ext --cohort " + q(dir / "data" / "ext.csv") + " --embeddings " +
                  q(dir / "data" / "ext.mse") + " --out " + q(dir / "val"),
              dir / "v.log") == 0);
  const auto val = nlohmann::json::parse(slurp(dir / "val" / "run_report.json"));
  CHECK(val["external"]["results"][0]["auc"]["estimate"] == fin["external"]["results"][0]["auc"]["estimate"]);
}

TEST_CASE("a failing run leaves no partial outputs") {
  const auto dir = scratch("fail");
  write_config(dir / "c.toml");
  const auto cfg = "--config " + q(dir / "c.toml");
  REQUIRE(run("synth " + cfg + " --patients 100 --name dev --out " + q(dir / "data"), dir / "s1.log") == 0);
  REQUIRE(run("synth " + cfg + " --patients 40 --name ext --seed 9 --out " + q(dir / "data"), dir / "s2.log") == 0);
  // External cohort without a single event: its metrics are undefined and the
  // run fails after the checkpoints were written.
  auto ext = milsurv::cohort::load_manifest((dir / "data" / "ext.csv").string());
  for (auto& r : ext) r.outcome.event = false;
  milsurv::cohort::save_manifest((dir / "data" / "ext.csv").string(), ext);
  write_config(dir / "f.toml", "\n[cohorts]\ndevelopment = \"data/dev.csv\"\ndevelopment_embeddings = "
                               "\"data/dev.mse\"\nexternal = [\"data/ext.csv\"]\nexternal_embeddings = "
                               "[\"data/ext.mse\"]\n");
  CHECK(run("train-final --config " + q(dir / "f.toml") + " --out " + q(dir / "out" / "nested"), dir / "f.log") != 0);
  CHECK_FALSE(fs::exists(dir / "out"));
  CHECK(slurp(dir / "f.log").find("error:") != std::string::npos);
}
