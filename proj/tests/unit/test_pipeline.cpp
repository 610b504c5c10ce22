#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "milsurv/capra_compare.hpp"
#include "milsurv/config.hpp"
#include "milsurv/errors.hpp"
#include "milsurv/experiment.hpp"
#include "milsurv/folds.hpp"
#include "milsurv/report.hpp"

using namespace milsurv;
using namespace milsurv::pipeline;

namespace {

cohort::Cohort outcome_cohort(std::size_t n, double event_share) {
  cohort::Cohort c;
  for (std::size_t i = 0; i < n; ++i) {
    cohort::CohortRecord r;
    r.patient_id = "P" + std::to_string(i);
    r.clinical = cohort::ClinicalFeatures{60.0 + double(i % 7), 5.0 + double(i % 11), 1 + int(i % 5)};
    r.outcome = {0.5 + 0.1 * double((i * 37) % 97), double(i % 100) < event_share * 100};
    c.push_back(r);
  }
  return c;
}

tiling::SyntheticSignalSpec small_spec(double beta) {
  tiling::SyntheticSignalSpec s;
  s.dim = 8;
  s.beta = beta;
  s.baseline_hazard = 0.02;
  s.tiles_min = 4;
  s.tiles_max = 8;
  s.signal_scale = 2.0;
  return s;
}

ExperimentConfig quick_experiment() {
  ExperimentConfig cfg;
  cfg.seed = 5;
  cfg.folds = 5;
  cfg.train.learning_rate = 3e-3;
  cfg.train.batch_size = 16;
  cfg.train.min_epochs = 3;
  cfg.train.max_epochs = 8;
  cfg.train.patience = 3;
  cfg.train.max_tiles = 8;
  cfg.train.attention_dim = 8;
  cfg.train.head_hidden = 8;
  cfg.train.fusion_hidden = 8;
  cfg.bootstrap = 50;
  return cfg;
}

const char* kConfig = R"(# experiment
[experiment]
seed = 42
output_dir = "runs/a"
modalities = ["image", "multimodal"]
encoder = "synthetic"

[train]
learning_rate = 1e-4
batch_size = 256
max_tiles = 3_500
min_epochs = 100
max_epochs = 300
patience = 20

[cv]
folds = 5
strata_bins = 4
threads = 2

[evaluation]
horizon_years = 5.0
bootstrap = 1000
)";

}  // namespace

TEST_CASE("config parses sections and applies defaults") {
  const auto cfg = parse_config(kConfig);
  CHECK(cfg.seed == 42);
  CHECK(cfg.output_dir == "runs/a");
  CHECK(cfg.modalities == std::vector<model::Modality>{model::Modality::Image, model::Modality::Multimodal});
  CHECK(cfg.train.max_tiles == 3500);
  CHECK(cfg.train.learning_rate == 1e-4);
  CHECK(cfg.threads == 2);
  CHECK(cfg.level == 0.95);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config rejects unknown keys, sections and bad values") {
  CHECK_THROWS_AS(parse_config("[train]\nlearning_rat = 0.1\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[nope]\nx = 1\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[train]\noptimizer = \"sgd\"\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[train]\nbatch_size = \"big\"\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[train]\nbatch_size = 1\nbatch_size = 2\n"), ParseError);
  CHECK_THROWS_AS(parse_config("[train\n"), ParseError);
  CHECK_THROWS_AS(parse_config("[evaluation]\nhorizon_years = 0\n").validate(), ValidationError);
}

TEST_CASE("config hash tracks settings but not thread counts") {
  const auto a = parse_config(kConfig);
  auto b = a;
  b.threads = 1;
  b.bootstrap_threads = 3;
  CHECK(a.hash() == b.hash());
  b.train.learning_rate = 2e-4;
  CHECK(a.hash() != b.hash());
  CHECK(a.hash().size() == 16);
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
}

TEST_CASE("config file paths resolve relative to the file") {
  const auto dir = std::filesystem::temp_directory_path() / "milsurv_unit" / "cfg";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "c.toml") << "[cohorts]\ndevelopment = \"dev.csv\"\n";
  const auto cfg = load_config((dir / "c.toml").string());
  REQUIRE(cfg.development);
  CHECK(cfg.development->manifest == (dir / "dev.csv").string());
  CHECK_THROWS_AS(cfg.validate(true), ValidationError);
}

TEST_CASE("folds balance events within one") {
  const auto c = outcome_cohort(100, 0.5);
  const auto plan = make_folds(c, 5, 4, 1);
  std::array<int, 5> events{}, sizes{};
  for (std::size_t i = 0; i < c.size(); ++i) {
    ++sizes[static_cast<std::size_t>(plan.fold[i])];
    events[static_cast<std::size_t>(plan.fold[i])] += c[i].outcome.event;
  }
  for (int e : events) CHECK((e >= 9 && e <= 11));
  for (int s : sizes) CHECK(s == 20);
}

TEST_CASE("folds partition the cohort and balance every stratum") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = outcome_cohort(53 + seed, 0.3);
    const auto plan = make_folds(c, 5, 4, seed);
    std::set<std::size_t> seen;
    for (int f = 0; f < 5; ++f)
      for (auto i : plan.members(f)) CHECK(seen.insert(i).second);
    CHECK(seen.size() == c.size());
    std::map<std::string, std::array<int, 5>> per;
    for (std::size_t i = 0; i < c.size(); ++i) ++per[plan.stratum[i]][static_cast<std::size_t>(plan.fold[i])];
    for (const auto& [k, counts] : per)
      CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
  }
}

TEST_CASE("folds at k = n are leave-one-out and deterministic") {
  const auto c = outcome_cohort(12, 0.5);
  const auto plan = make_folds(c, 12, 2, 3);
  for (int f = 0; f < 12; ++f) CHECK(plan.members(f).size() == 1);
  CHECK(make_folds(c, 12, 2, 3).fold == plan.fold);
  CHECK(make_folds(c, 5, 4, 7).fold == make_folds(c, 5, 4, 7).fold);
  CHECK_THROWS_AS(make_folds(c, 13, 2, 3), PreconditionError);
  CHECK_THROWS_AS(make_folds(c, 5, 1, 3), PreconditionError);
}

TEST_CASE("nested cross-validation yields one row per fold and disjoint splits") {
  const auto dev = from_synthetic("dev", tiling::generate_synthetic_cohort(small_spec(4.0), 80, 3));
  auto cfg = quick_experiment();
  cfg.modalities = {model::Modality::Image, model::Modality::Clinical};
  const auto cv = nested_cv(dev, cfg);
  REQUIRE(cv.modalities.size() == 2);
  for (const auto& m : cv.modalities) {
    CHECK(m.folds.size() == 5);
    CHECK(m.c_index.n == 5);
    std::size_t scored = 0;
    for (const auto& s : m.heldout_score) scored += s.has_value();
    CHECK(scored == dev.records.size());
    for (const auto& f : m.folds) {
      CHECK(f.n_train + f.n_val + f.n_test == dev.records.size());
      CHECK(f.history.size() >= 3);
    }
  }
  CHECK(cv.selected.has_value());
  std::vector<std::string> ids;
  for (const auto& r : dev.records) ids.push_back(r.patient_id);
  const auto again = nested_cv(dev, cfg);
  CHECK(dump_json(run_report_to_json({{"cv", 5, "h", "v"}, cv, ids, {}})) ==
        dump_json(run_report_to_json({{"cv", 5, "h", "v"}, again, ids, {}})));
}

TEST_CASE("a fold without events is reported by number") {
  auto synth = tiling::generate_synthetic_cohort(small_spec(0.0), 20, 4);
  int kept = 0;
  for (auto& r : synth.records) {
    if (r.outcome.event && kept < 2) {
      ++kept;
      continue;
    }
    r.outcome.event = false;
  }
  const auto dev = from_synthetic("dev", synth);
  try {
    nested_cv(dev, quick_experiment());
    FAIL("expected a fold degeneracy error");
  } catch (const FoldDegeneracyError& e) {
    CHECK(e.fold() >= 0);
    CHECK(e.fold() < 5);
  }
}

TEST_CASE("final ensemble on a same-distribution cohort") {
  auto spec = small_spec(10.0);
  spec.baseline_hazard = 5e-4;
  const auto dev = from_synthetic("dev", tiling::generate_synthetic_cohort(spec, 200, 6));
  const auto ext = from_synthetic("ext", tiling::generate_synthetic_cohort(spec, 150, 7, "E"));
  auto cfg = quick_experiment();
  cfg.modalities = {model::Modality::Image};
  // Members need to be trained to convergence for the comparison to be fair.
  cfg.train.min_epochs = 20;
  cfg.train.max_epochs = 60;
  cfg.train.patience = 15;
  const auto models = train_final(dev, cfg);
  REQUIRE(models.size() == 1);
  CHECK(models[0].members.size() == 5);
  const auto ev = evaluate_external(models, ext, 0, cfg, "dev");
  REQUIRE(ev.results.size() == 1);
  const auto& r = ev.results[0];
  double mean = 0;
  for (const auto& a : r.member_auc) mean += a.value() / 5.0;
  INFO("ensemble ", r.auc.estimate, " member mean ", mean);
  CHECK(std::abs(r.auc.estimate - mean) < 0.05);
  CHECK(r.strata.curves.size() == 4);
  CHECK(r.strata.q1_vs_q4.has_value());
  CHECK_THROWS_AS(evaluate_external(models, dev, 0, cfg, "dev"), ContractError);
}

TEST_CASE("external cohort without clinical data gets image rows only") {
  auto spec = small_spec(3.0);
  const auto dev = from_synthetic("dev", tiling::generate_synthetic_cohort(spec, 60, 8));
  spec.with_clinical = false;
  spec.with_capra = false;
  const auto ext = from_synthetic("ext", tiling::generate_synthetic_cohort(spec, 60, 9, "E"));
  auto cfg = quick_experiment();
  cfg.modalities = {model::Modality::Image, model::Modality::Multimodal};
  cfg.train.max_epochs = 4;
  const auto ev = evaluate_external(train_final(dev, cfg), ext, 0, cfg, "dev");
  REQUIRE(ev.results.size() == 1);
  CHECK(ev.results[0].modality == model::Modality::Image);
  REQUIRE(ev.skipped.size() == 1);
  CHECK(ev.skipped[0].modality == model::Modality::Multimodal);
}

TEST_CASE("comparing CAPRA-S with itself adds nothing") {
  const auto synth = tiling::generate_synthetic_cohort(small_spec(2.0), 200, 10);
  std::vector<double> capra;
  for (const auto& r : synth.records) capra.push_back(cohort::capra_s_score(*r.capra_s).score);
  CompareOptions o;
  o.bootstrap.n_resamples = 50;
  const auto c = compare_with_capra(synth.records, capra, o);
  CHECK(c.delta_auc.estimate == 0.0);
  CHECK(c.lrt.chi_square <= 1e-6);
  CHECK(c.full.aliased[1]);
  CHECK(c.n_used == 200);
}

TEST_CASE("CAPRA-S comparison excludes incomplete records and detects added signal") {
  auto spec = small_spec(3.0);
  spec.baseline_hazard = 0.05;
  auto synth = tiling::generate_synthetic_cohort(spec, 400, 11);
  synth.records[0].capra_s->psa.reset();
  CompareOptions o;
  o.bootstrap.n_resamples = 50;
  const auto c = compare_with_capra(synth.records, synth.true_risk, o);
  CHECK(c.n_excluded == 1);
  CHECK(c.n_used == 399);
  CHECK(c.delta_auc.estimate > 0.0);
  CHECK(c.lrt.p < 0.01);
  int total = 0;
  for (const auto& row : c.group_by_quartile)
    for (int v : row) total += v;
  CHECK(total == 399);
}

TEST_CASE("metric report JSON has exactly the fixed keys") {
  survstats::MetricReport r;
  r.metric = "auc";
  r.estimate = 0.75;
  r.ci_low = 0.7;
  r.ci_high = 0.8;
  r.n_boot = 1000;
  r.horizon_years = 5.0;
  r.seed = 12;
  r.n_degenerate = 1;
  const auto j = metric_report_to_json(r);
  std::set<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.insert(k);
  CHECK(keys == std::set<std::string>{"metric", "estimate", "ci_low", "ci_high", "n_boot", "horizon_years", "seed",
                                      "n_degenerate"});
  const auto back = metric_report_from_json(j);
  CHECK(back.estimate == 0.75);
  CHECK(back.horizon_years == 5.0);
  r.horizon_years.reset();
  CHECK(metric_report_to_json(r)["horizon_years"].is_null());
}

TEST_CASE("scores file round-trips") {
  const std::vector<ScoredPatient> rows{{"A", 0.125, 3.5, true}, {"B,2", -1.0, 6.0, false}};
  std::ostringstream out;
  write_scores(out, rows);
  std::istringstream in(out.str());
  const auto back = read_scores(in);
  REQUIRE(back.size() == 2);
  CHECK(back[1].patient_id == "B,2");
  CHECK(back[0].score == 0.125);
  CHECK(back[0].event);
  CHECK(out.str().substr(0, out.str().find('\n')) == "patient_id,score,time_years,event");
  std::istringstream bad("patient_id,score\nA,1\n");
  CHECK_THROWS_AS(read_scores(bad), ParseError);
}

TEST_CASE("stratification gives four KM curves and a Q1 vs Q4 test") {
  std::vector<ScoredPatient> rows;
  for (int i = 0; i < 40; ++i) rows.push_back({"P" + std::to_string(i), double(i), 10.0 - 0.2 * i, i % 3 != 0});
  const auto s = stratify(scores_dataset(rows, "x"), 5.0);
  CHECK(s.sizes == std::array<int, 4>{10, 10, 10, 10});
  REQUIRE(s.q1_vs_q4);
  CHECK(s.q1_vs_q4->p < 0.05);
  std::ostringstream km;
  write_km_csv(km, s);
  CHECK(km.str().rfind("quartile,time_years,survival,at_risk,events\n", 0) == 0);
  CHECK(km.str().find("Q4,0,1,") != std::string::npos);
}
