#include "milsurv/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <set>
#include <thread>

#include "milsurv/embedding_store.hpp"
#include "milsurv/errors.hpp"
#include "milsurv/rng.hpp"

namespace milsurv::pipeline {

using model::Modality;
using survstats::SurvivalDataset;

std::string version_string() { return MILSURV_VERSION; }

// ---- loading ------------------------------------------------------------------------

LoadedCohort join_cohort(std::string name, cohort::Cohort records, const std::vector<tiling::EmbeddingBag>& bags,
                         tiling::Encoder encoder) {
  cohort::validate_cohort(records);
  std::map<std::string, std::vector<const tiling::EmbeddingBag*>> by_id;
  for (const auto& b : bags) {
    if (b.provenance() != encoder)
      throw ValidationError("cohort '" + name + "': bag of patient '" + b.patient_id() + "' comes from encoder " +
                            std::string(tiling::to_string(b.provenance())) + ", expected " +
                            std::string(tiling::to_string(encoder)));
    by_id[b.patient_id()].push_back(&b);
  }
  LoadedCohort out;
  out.name = std::move(name);
  for (const auto& r : records) {
    model::PatientData p;
    p.patient_id = r.patient_id;
    p.clinical = r.clinical;
    p.outcome = r.outcome;
    if (auto it = by_id.find(r.patient_id); it != by_id.end()) {
      if (it->second.size() != r.slide_ids.size())
        throw ValidationError("cohort '" + out.name + "': patient '" + r.patient_id + "' lists " +
                              std::to_string(r.slide_ids.size()) + " slides but the store holds " +
                              std::to_string(it->second.size()) + " bags");
      for (const auto* b : it->second) p.slides.push_back(*b);
      by_id.erase(it);
    } else if (!bags.empty() && !r.slide_ids.empty()) {
      throw ValidationError("cohort '" + out.name + "': no embeddings for patient '" + r.patient_id + "'");
    }
    out.patients.push_back(std::move(p));
  }
  if (!by_id.empty())
    throw ValidationError("cohort '" + out.name + "': store holds bags for unknown patient '" + by_id.begin()->first +
                          "'");
  out.records = std::move(records);
  return out;
}

LoadedCohort load_cohort(const CohortPaths& paths, tiling::Encoder encoder) {
  auto records = cohort::load_manifest(paths.manifest);
  std::vector<tiling::EmbeddingBag> bags;
  if (!paths.embeddings.empty()) {
    bags = tiling::read_store(paths.embeddings);
  } else {
    // Without a store the images are unavailable, whatever the manifest lists.
    for (auto& r : records) r.slide_ids.clear();
  }
  return join_cohort(paths.name, std::move(records), bags, encoder);
}

LoadedCohort from_synthetic(std::string name, const tiling::SyntheticCohort& synth) {
  return join_cohort(std::move(name), synth.records, synth.slide_bags, tiling::Encoder::Synthetic);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- helpers ------------------------------------------------------------------------

namespace {

std::uint64_t modality_key(Modality m) { return static_cast<std::uint64_t>(m); }

std::vector<std::size_t> with_inputs(const LoadedCohort& c, const std::vector<std::size_t>& idx, Modality m) {
  std::vector<std::size_t> out;
  for (auto i : idx)
    if (model::has_inputs(c.patients[i], m)) out.push_back(i);
  return out;
}

SurvivalDataset dataset_of(const LoadedCohort& c, const std::vector<std::size_t>& idx, std::vector<double> scores) {
  SurvivalDataset ds;
  ds.source = c.name;
  for (auto i : idx) {
    ds.time.push_back(c.records[i].outcome.time);
    ds.event.push_back(c.records[i].outcome.event ? 1 : 0);
  }
  ds.score = std::move(scores);
  return ds;
}

void assert_disjoint(const LoadedCohort& c, const std::vector<std::vector<std::size_t>>& parts, int fold) {
  std::set<std::string> seen;
  for (const auto& part : parts)
    for (auto i : part)
      if (!seen.insert(c.records[i].patient_id).second)
        throw ContractError("fold " + std::to_string(fold) + ": patient '" + c.records[i].patient_id +
                            "' appears in more than one split");
}

std::optional<double> try_auc(const SurvivalDataset& ds, double horizon) {
  try {
    return survstats::time_dependent_auc(ds, horizon);
  } catch (const EstimationError&) {
    return std::nullopt;
  }
}

FoldPlan plan_for(const LoadedCohort& dev, const ExperimentConfig& cfg) {
  auto plan = make_folds(dev.records, cfg.folds, cfg.strata_bins, derive_seed(cfg.seed, {0xF0ULL}));
  for (int f = 0; f < plan.k; ++f) {
    bool event = false;
    for (auto i : plan.members(f)) event |= dev.records[i].outcome.event;
    if (!event) throw FoldDegeneracyError("fold " + std::to_string(f) + " has no events", f);
  }
  return plan;
}

model::TrainConfig train_config(const ExperimentConfig& cfg, Modality m, std::uint64_t seed) {
  auto t = cfg.train;
  t.modality = m;
  t.seed = seed;
  return t;
}

}  // namespace

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  r.n = static_cast<int>(v.size());
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

// ---- nested CV ------------------------------------------------------------------------

CvResult nested_cv(const LoadedCohort& dev, const ExperimentConfig& cfg) {
  cfg.validate();
  CvResult out;
  out.plan = plan_for(dev, cfg);
  const int k = out.plan.k;
  const model::PreparedCohort data(dev.patients, cfg.train.max_tiles);

  const auto nm = cfg.modalities.size();
  out.modalities.resize(nm);
  std::vector<std::vector<double>> fold_scores(nm * static_cast<std::size_t>(k));
  std::vector<std::vector<std::size_t>> fold_tests(nm * static_cast<std::size_t>(k));
  for (std::size_t m = 0; m < nm; ++m) {
    out.modalities[m].modality = cfg.modalities[m];
    out.modalities[m].folds.resize(static_cast<std::size_t>(k));
  }

  parallel_for(nm * static_cast<std::size_t>(k), cfg.threads, [&](std::size_t task) {
    const std::size_t m = task / static_cast<std::size_t>(k);
    const int f = static_cast<int>(task % static_cast<std::size_t>(k));
    const Modality mod = cfg.modalities[m];
    const int v = (f + 1) % k;
    const auto test = with_inputs(dev, out.plan.members(f), mod);
    const auto val = with_inputs(dev, out.plan.members(v), mod);
    const auto train = with_inputs(dev, out.plan.members_except({f, v}), mod);
    assert_disjoint(dev, {train, val, test}, f);
    if (test.empty() || val.empty() || train.empty())
      throw FoldDegeneracyError("fold " + std::to_string(f) + " has no patients with " +
                                    std::string(model::to_string(mod)) + " inputs in one of its splits",
                                f);

    const auto tr = model::train(data, train, val,
                                 train_config(cfg, mod, derive_seed(cfg.seed, {0xC0ULL, modality_key(mod),
                                                                               static_cast<std::uint64_t>(f)})));
    auto scores = model::predict_patients(tr.model, data, test);
    const auto ds = dataset_of(dev, test, scores);
    if (ds.events() == 0) throw FoldDegeneracyError("test fold " + std::to_string(f) + " has no events", f);

    FoldResult r;
    r.fold = f;
    r.n_train = train.size();
    r.n_val = val.size();
    r.n_test = test.size();
    r.best_epoch = tr.best_epoch;
    r.epochs_run = static_cast<int>(tr.history.size());
    r.val_c_index = tr.best_val_c_index;
    try {
      r.test_c_index = survstats::c_index(ds);
    } catch (const EstimationError&) {
      throw FoldDegeneracyError("test fold " + std::to_string(f) + " has no comparable pairs", f);
    }
    r.test_auc = try_auc(ds, cfg.horizon_years);
    r.model_id = std::string(model::to_string(mod)) + "/fold" + std::to_string(f) + "/epoch" +
                 std::to_string(tr.best_epoch);
    r.history = tr.history;
    out.modalities[m].folds[static_cast<std::size_t>(f)] = std::move(r);
    fold_scores[task] = std::move(scores);
    fold_tests[task] = test;
  });

  std::optional<double> best_auc;
  for (std::size_t m = 0; m < nm; ++m) {
    auto& mc = out.modalities[m];
    mc.heldout_score.assign(dev.records.size(), std::nullopt);
    std::vector<double> cs, aucs;
    for (int f = 0; f < k; ++f) {
      const auto task = m * static_cast<std::size_t>(k) + static_cast<std::size_t>(f);
      for (std::size_t j = 0; j < fold_tests[task].size(); ++j) mc.heldout_score[fold_tests[task][j]] = fold_scores[task][j];
      cs.push_back(mc.folds[static_cast<std::size_t>(f)].test_c_index);
      if (const auto a = mc.folds[static_cast<std::size_t>(f)].test_auc) aucs.push_back(*a);
    }
    mc.c_index = mean_std(cs);
    mc.auc = mean_std(aucs);
    if (!aucs.empty() && (!best_auc || mc.auc.mean > *best_auc)) {
      best_auc = mc.auc.mean;
      out.selected = mc.modality;
    }
  }
  return out;
}

// ---- final models ---------------------------------------------------------------------

std::vector<FinalModels> train_final(const LoadedCohort& dev, const ExperimentConfig& cfg) {
  cfg.validate();
  const auto plan = plan_for(dev, cfg);
  const int k = plan.k;
  const model::PreparedCohort data(dev.patients, cfg.train.max_tiles);
  const auto nm = cfg.modalities.size();

  std::vector<FinalModels> out(nm);
  std::vector<std::optional<model::TrainResult>> results(nm * static_cast<std::size_t>(k));
  parallel_for(results.size(), cfg.threads, [&](std::size_t task) {
    const std::size_t m = task / static_cast<std::size_t>(k);
    const int f = static_cast<int>(task % static_cast<std::size_t>(k));
    const Modality mod = cfg.modalities[m];
    const auto val = with_inputs(dev, plan.members(f), mod);
    const auto train = with_inputs(dev, plan.members_except({f}), mod);
    assert_disjoint(dev, {train, val}, f);
    if (val.empty() || train.empty())
      throw FoldDegeneracyError("fold " + std::to_string(f) + " has no patients with " +
                                    std::string(model::to_string(mod)) + " inputs",
                                f);
    results[task] = model::train(
        data, train, val,
        train_config(cfg, mod, derive_seed(cfg.seed, {0xF1ULL, modality_key(mod), static_cast<std::uint64_t>(f)})));
  });
  for (std::size_t m = 0; m < nm; ++m) {
    out[m].modality = cfg.modalities[m];
    for (int f = 0; f < k; ++f) {
      auto& r = *results[m * static_cast<std::size_t>(k) + static_cast<std::size_t>(f)];
      out[m].members.push_back(std::move(r.model));
      out[m].best_epoch.push_back(r.best_epoch);
      out[m].val_c_index.push_back(r.best_val_c_index);
    }
  }
  return out;
}

// ---- stratification and external validation ---------------------------------------------

Stratification stratify(const SurvivalDataset& ds, double horizon) {
  Stratification s;
  s.quartiles = survstats::quartile_stratify(ds.score);
  std::array<std::vector<std::size_t>, 4> idx;
  for (std::size_t i = 0; i < ds.size(); ++i) idx[static_cast<std::size_t>(s.quartiles.group[i])].push_back(i);
  std::vector<SurvivalDataset> nonempty;
  for (std::size_t g = 0; g < 4; ++g) {
    const auto sub = ds.subset(idx[g]);
    s.sizes[g] = static_cast<int>(sub.size());
    s.events[g] = static_cast<int>(sub.events());
    s.curves[g] = survstats::product_limit(sub.time, sub.event);
    s.survival_at_horizon[g] = sub.size() ? s.curves[g].at(horizon) : std::nan("");
    if (sub.size()) nonempty.push_back(sub);
  }
  try {
    if (nonempty.size() >= 2) s.overall = survstats::logrank_test(nonempty);
  } catch (const EstimationError&) {
  }
  try {
    if (s.sizes[0] && s.sizes[3]) s.q1_vs_q4 = survstats::logrank_test({ds.subset(idx[0]), ds.subset(idx[3])});
  } catch (const EstimationError&) {
  }
  return s;
}

ExternalEvaluation evaluate_external(const std::vector<FinalModels>& models, const LoadedCohort& cohort,
                                     std::size_t cohort_index, const ExperimentConfig& cfg,
                                     const std::string& development_name) {
  if (cohort.name == development_name)
    throw ContractError("external cohort '" + cohort.name + "' carries the development provenance tag");
  ExternalEvaluation out;
  const model::PreparedCohort data(cohort.patients, cfg.train.max_tiles);
  std::vector<std::size_t> all(cohort.records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  for (const auto& fm : models) {
    const auto idx = with_inputs(cohort, all, fm.modality);
    if (idx.empty()) {
      out.skipped.push_back({cohort.name, fm.modality,
                             "no patient has the " + std::string(model::to_string(fm.modality)) + " inputs"});
      continue;
    }
    if (model::needs_image(fm.modality) && data.input_dim() != fm.members.front().architecture().input_dim) {
      out.skipped.push_back({cohort.name, fm.modality, "embedding width differs from the trained models'"});
      continue;
    }
    ExternalResult r;
    r.cohort = cohort.name;
    r.modality = fm.modality;
    r.n = idx.size();
    r.n_excluded = all.size() - idx.size();
    for (auto i : idx) r.patient_ids.push_back(cohort.records[i].patient_id);
    r.data = dataset_of(cohort, idx, model::ensemble_predict_patients(fm.members, data, idx));
    if (r.data.source != cohort.name || r.data.source == development_name)
      throw ContractError("external metrics would use a dataset tagged '" + r.data.source + "'");

    for (const auto& member : fm.members)
      r.member_auc.push_back(try_auc(dataset_of(cohort, idx, model::predict_patients(member, data, idx)),
                                     cfg.horizon_years));

    auto boot = [&](std::uint64_t metric) {
      survstats::BootstrapOptions o;
      o.n_resamples = cfg.bootstrap;
      o.level = cfg.level;
      o.threads = cfg.bootstrap_threads;
      o.seed = derive_seed(cfg.seed, {0xB0ULL, cohort_index, modality_key(fm.modality), metric});
      return o;
    };
    r.c_index = survstats::bootstrap_ci("c_index", survstats::c_index, r.data, boot(0));
    const double h = cfg.horizon_years;
    auto auc_opts = boot(1);
    auc_opts.horizon_years = h;
    r.auc = survstats::bootstrap_ci(
        "auc", [h](const SurvivalDataset& d) { return survstats::time_dependent_auc(d, h); }, r.data, auc_opts);
    r.strata = stratify(r.data, h);

    cohort::Cohort sub;
    for (auto i : idx) sub.push_back(cohort.records[i]);
    const auto complete = std::count_if(sub.begin(), sub.end(), [](const auto& rec) {
      return rec.capra_s && rec.capra_s->complete();
    });
    if (complete >= 4) {
      CompareOptions co;
      co.horizon_years = h;
      co.bootstrap = boot(2);
      try {
        r.capra = compare_with_capra(sub, r.data.score, co);
      } catch (const EstimationError& e) {
        r.capra_note = e.what();
      } catch (const ConvergenceError& e) {
        r.capra_note = e.what();
      } catch (const ReliabilityError& e) {
        r.capra_note = e.what();
      }
    } else {
      r.capra_note = "fewer than 4 patients with complete CAPRA-S inputs";
    }
    out.results.push_back(std::move(r));
  }
  return out;
}

}  // namespace milsurv::pipeline
