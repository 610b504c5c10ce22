#include "milsurv/report.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "milsurv/csv.hpp"
#include "milsurv/errors.hpp"

namespace milsurv::pipeline {

using nlohmann::json;

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
json num(const std::optional<double>& v) { return v ? num(*v) : json(nullptr); }

double get_num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

json mean_std_json(const MeanStd& m) { return {{"mean", num(m.mean)}, {"std", num(m.std)}, {"n", m.n}}; }

json logrank_json(const std::optional<survstats::LogRankResult>& r) {
  if (!r) return nullptr;
  return {{"chi_square", num(r->chi_square)}, {"p", num(r->p)}, {"df", r->df}};
}

json cox_json(const survstats::CoxFit& f) {
  json beta = json::array(), se = json::array(), aliased = json::array();
  for (Eigen::Index i = 0; i < f.beta.size(); ++i) {
    beta.push_back(num(f.beta(i)));
    se.push_back(num(f.se(i)));
    aliased.push_back(static_cast<bool>(f.aliased[static_cast<std::size_t>(i)]));
  }
  return {{"beta", beta},          {"se", se},
          {"aliased", aliased},    {"loglik", num(f.loglik)},
          {"loglik_null", num(f.loglik_null)}, {"iterations", f.iterations}};
}

std::string fixed(double v, int digits = 3) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

std::string fixed_json(const json& j, int digits = 3) { return j.is_null() ? "NA" : fixed(j.get<double>(), digits); }

std::string pvalue(const json& j) {
  if (j.is_null()) return "NA";
  const double p = j.get<double>();
  if (p < 1e-4) {
    std::ostringstream o;
    o << std::scientific << std::setprecision(2) << p;
    return o.str();
  }
  return fixed(p, 4);
}

std::string ci(const json& mr) {
  return fixed_json(mr.at("estimate")) + " [" + fixed_json(mr.at("ci_low")) + ", " + fixed_json(mr.at("ci_high")) + "]";
}

class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  std::string render() const {
    std::vector<std::size_t> w;
    for (const auto& r : rows_) {
      if (w.size() < r.size()) w.resize(r.size(), 0);
      for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], r[c].size());
    }
    std::ostringstream o;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      std::string line;
      for (std::size_t c = 0; c < rows_[i].size(); ++c) {
        if (c) line += "  ";
        line += rows_[i][c] + std::string(w[c] - rows_[i][c].size(), ' ');
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      o << line << "\n";
      if (i == 0) {
        std::size_t total = 0;
        for (std::size_t c = 0; c < w.size(); ++c) total += w[c] + (c ? 2 : 0);
        o << std::string(total, '-') << "\n";
      }
    }
    return o.str();
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

std::string file_token(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

}  // namespace

// ---- MetricReport ------------------------------------------------------------------

json metric_report_to_json(const survstats::MetricReport& r) {
  return {{"metric", r.metric},
          {"estimate", num(r.estimate)},
          {"ci_low", num(r.ci_low)},
          {"ci_high", num(r.ci_high)},
          {"n_boot", r.n_boot},
          {"horizon_years", num(r.horizon_years)},
          {"seed", r.seed},
          {"n_degenerate", r.n_degenerate}};
}

survstats::MetricReport metric_report_from_json(const json& j) {
  try {
    survstats::MetricReport r;
    r.metric = j.at("metric").get<std::string>();
    r.estimate = get_num(j.at("estimate"));
    r.ci_low = get_num(j.at("ci_low"));
    r.ci_high = get_num(j.at("ci_high"));
    r.n_boot = j.at("n_boot").get<int>();
    if (!j.at("horizon_years").is_null()) r.horizon_years = j["horizon_years"].get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_degenerate = j.at("n_degenerate").get<int>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed metric report: ") + e.what(), 0);
  }
}

// ---- RunReport ----------------------------------------------------------------------

json run_report_to_json(const RunReport& report) {
  json j;
  j["header"] = {{"command", report.header.command},
                 {"seed", report.header.seed},
                 {"config_hash", report.header.config_hash},
                 {"version", report.header.version}};

  if (report.cv) {
    const auto& cv = *report.cv;
    json plan = json::array();
    for (std::size_t i = 0; i < cv.plan.fold.size(); ++i)
      plan.push_back({{"patient_id", report.development_ids.at(i)},
                      {"fold", cv.plan.fold[i]},
                      {"stratum", cv.plan.stratum[i]}});
    json mods = json::array();
    for (const auto& mc : cv.modalities) {
      json folds = json::array();
      for (const auto& f : mc.folds) {
        json history = json::array();
        for (const auto& h : f.history)
          history.push_back({{"epoch", h.epoch},
                             {"train_loss", num(h.train_loss)},
                             {"val_c_index", num(h.val_c_index)},
                             {"skipped_batches", h.skipped_batches}});
        folds.push_back({{"fold", f.fold},
                         {"n_train", f.n_train},
                         {"n_val", f.n_val},
                         {"n_test", f.n_test},
                         {"best_epoch", f.best_epoch},
                         {"epochs_run", f.epochs_run},
                         {"val_c_index", num(f.val_c_index)},
                         {"test_c_index", num(f.test_c_index)},
                         {"test_auc", num(f.test_auc)},
                         {"model_id", f.model_id},
                         {"history", history}});
      }
      json heldout = json::array();
      for (std::size_t i = 0; i < mc.heldout_score.size(); ++i)
        if (mc.heldout_score[i])
          heldout.push_back({{"patient_id", report.development_ids.at(i)}, {"score", num(*mc.heldout_score[i])}});
      mods.push_back({{"modality", std::string(model::to_string(mc.modality))},
                      {"folds", folds},
                      {"c_index", mean_std_json(mc.c_index)},
                      {"auc", mean_std_json(mc.auc)},
                      {"heldout", heldout}});
    }
    j["cross_validation"] = {
        {"k", cv.plan.k},
        {"plan", plan},
        {"modalities", mods},
        {"selected_modality", cv.selected ? json(std::string(model::to_string(*cv.selected))) : json(nullptr)}};
  } else {
    j["cross_validation"] = nullptr;
  }

  if (report.external) {
    json results = json::array();
    for (const auto& r : report.external->results) {
      json scores = json::array();
      for (std::size_t i = 0; i < r.data.size(); ++i)
        scores.push_back({{"patient_id", r.patient_ids[i]},
                          {"score", num(r.data.score[i])},
                          {"time_years", num(r.data.time[i])},
                          {"event", r.data.event[i] != 0}});
      json member_auc = json::array();
      double member_sum = 0.0;
      int member_n = 0;
      for (const auto& a : r.member_auc) {
        member_auc.push_back(num(a));
        if (a) {
          member_sum += *a;
          ++member_n;
        }
      }
      const auto& st = r.strata;
      json groups = json::array();
      for (std::size_t g = 0; g < 4; ++g)
        groups.push_back({{"quartile", "Q" + std::to_string(g + 1)},
                          {"n", st.sizes[g]},
                          {"events", st.events[g]},
                          {"survival_at_horizon", num(st.survival_at_horizon[g])}});
      json capra = nullptr;
      if (r.capra) {
        const auto& c = *r.capra;
        json cross = json::array();
        for (std::size_t g = 0; g < 3; ++g)
          cross.push_back({{"capra_s_group", cohort::to_string(static_cast<cohort::CapraGroup>(g))},
                           {"quartile_counts", c.group_by_quartile[g]}});
        capra = {{"n_used", c.n_used},
                 {"n_excluded", c.n_excluded},
                 {"auc_ai", metric_report_to_json(c.auc_ai)},
                 {"auc_capra_s", metric_report_to_json(c.auc_capra)},
                 {"auc_combined", metric_report_to_json(c.auc_combined)},
                 {"delta_auc", metric_report_to_json(c.delta_auc)},
                 {"lrt", {{"chi_square", num(c.lrt.chi_square)}, {"p", num(c.lrt.p)}, {"df", c.lrt.df}}},
                 {"cox_capra_s", cox_json(c.reduced)},
                 {"cox_capra_s_ai", cox_json(c.full)},
                 {"capra_s_by_ai_quartile", cross}};
      }
      results.push_back(
          {{"cohort", r.cohort},
           {"modality", std::string(model::to_string(r.modality))},
           {"n", r.n},
           {"n_excluded", r.n_excluded},
           {"c_index", metric_report_to_json(r.c_index)},
           {"auc", metric_report_to_json(r.auc)},
           {"member_auc", member_auc},
           {"member_auc_mean", member_n ? num(member_sum / member_n) : json(nullptr)},
           {"stratification",
            {{"cuts", st.quartiles.cuts},
             {"degenerate", st.quartiles.degenerate},
             {"groups", groups},
             {"logrank", logrank_json(st.overall)},
             {"q1_vs_q4", logrank_json(st.q1_vs_q4)}}},
           {"capra_comparison", capra},
           {"capra_note", r.capra_note},
           {"bootstrap_replicates", {{"c_index", r.c_index.replicates}, {"auc", r.auc.replicates}}},
           {"scores", scores}});
    }
    json skipped = json::array();
    for (const auto& s : report.external->skipped)
      skipped.push_back(
          {{"cohort", s.cohort}, {"modality", std::string(model::to_string(s.modality))}, {"reason", s.reason}});
    j["external"] = {{"results", results}, {"skipped", skipped}};
  } else {
    j["external"] = nullptr;
  }
  return j;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

// ---- text -----------------------------------------------------------------------------

std::string render_text(const json& report) {
  std::ostringstream o;
  try {
    const auto& h = report.at("header");
    o << "command      " << h.at("command").get<std::string>() << "\n"
      << "seed         " << h.at("seed").get<std::uint64_t>() << "\n"
      << "config hash  " << h.at("config_hash").get<std::string>() << "\n"
      << "version      " << h.at("version").get<std::string>() << "\n";

    if (const auto& cv = report.at("cross_validation"); !cv.is_null()) {
      o << "\nNested cross-validation (held-out folds)\n\n";
      TextTable t({"modality", "fold", "n_test", "best_epoch", "val_c_index", "test_c_index", "test_auc"});
      for (const auto& m : cv.at("modalities")) {
        const auto mod = m.at("modality").get<std::string>();
        for (const auto& f : m.at("folds"))
          t.add({mod, std::to_string(f.at("fold").get<int>()), std::to_string(f.at("n_test").get<int>()),
                 std::to_string(f.at("best_epoch").get<int>()), fixed_json(f.at("val_c_index")),
                 fixed_json(f.at("test_c_index")), fixed_json(f.at("test_auc"))});
      }
      o << t.render() << "\n";
      TextTable s({"modality", "c_index mean", "c_index std", "auc mean", "auc std"});
      for (const auto& m : cv.at("modalities"))
        s.add({m.at("modality").get<std::string>(), fixed_json(m["c_index"]["mean"]), fixed_json(m["c_index"]["std"]),
               fixed_json(m["auc"]["mean"]), fixed_json(m["auc"]["std"])});
      o << s.render();
      const auto& sel = cv.at("selected_modality");
      o << "selected modality: " << (sel.is_null() ? std::string("none") : sel.get<std::string>()) << "\n";
    }

    if (const auto& ext = report.at("external"); !ext.is_null()) {
      o << "\nExternal validation (ensemble of final models)\n\n";
      TextTable t({"cohort", "modality", "n", "excluded", "c_index [CI]", "auc [CI]", "member auc mean"});
      for (const auto& r : ext.at("results"))
        t.add({r.at("cohort").get<std::string>(), r.at("modality").get<std::string>(),
               std::to_string(r.at("n").get<int>()), std::to_string(r.at("n_excluded").get<int>()),
               ci(r.at("c_index")), ci(r.at("auc")), fixed_json(r.at("member_auc_mean"))});
      o << t.render();

      o << "\nRisk quartiles\n\n";
      TextTable q({"cohort", "modality", "quartile", "n", "events", "S(horizon)"});
      for (const auto& r : ext.at("results"))
        for (const auto& g : r.at("stratification").at("groups"))
          q.add({r.at("cohort").get<std::string>(), r.at("modality").get<std::string>(),
                 g.at("quartile").get<std::string>(), std::to_string(g.at("n").get<int>()),
                 std::to_string(g.at("events").get<int>()), fixed_json(g.at("survival_at_horizon"))});
      o << q.render() << "\n";
      TextTable lr({"cohort", "modality", "log-rank chi2", "p", "Q1 vs Q4 p"});
      for (const auto& r : ext.at("results")) {
        const auto& s = r.at("stratification");
        const auto& all = s.at("logrank");
        const auto& q14 = s.at("q1_vs_q4");
        lr.add({r.at("cohort").get<std::string>(), r.at("modality").get<std::string>(),
                all.is_null() ? "NA" : fixed_json(all.at("chi_square"), 2), all.is_null() ? "NA" : pvalue(all.at("p")),
                q14.is_null() ? "NA" : pvalue(q14.at("p"))});
      }
      o << lr.render();

      bool any_capra = false;
      TextTable c({"cohort", "modality", "n", "auc AI", "auc CAPRA-S", "auc combined", "delta auc", "LRT chi2", "p"});
      for (const auto& r : ext.at("results")) {
        const auto& cc = r.at("capra_comparison");
        if (cc.is_null()) continue;
        any_capra = true;
        c.add({r.at("cohort").get<std::string>(), r.at("modality").get<std::string>(),
               std::to_string(cc.at("n_used").get<int>()), ci(cc.at("auc_ai")), ci(cc.at("auc_capra_s")),
               ci(cc.at("auc_combined")), ci(cc.at("delta_auc")), fixed_json(cc.at("lrt").at("chi_square"), 2),
               pvalue(cc.at("lrt").at("p"))});
      }
      if (any_capra) o << "\nComparison with CAPRA-S\n\n" << c.render();

      if (!ext.at("skipped").empty()) {
        o << "\nSkipped\n\n";
        TextTable sk({"cohort", "modality", "reason"});
        for (const auto& s : ext.at("skipped"))
          sk.add({s.at("cohort").get<std::string>(), s.at("modality").get<std::string>(),
                  s.at("reason").get<std::string>()});
        o << sk.render();
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed run report: ") + e.what(), 0);
  }
  return o.str();
}

// ---- plot data ---------------------------------------------------------------------------

void write_km_csv(std::ostream& out, const Stratification& s) {
  out << "quartile,time_years,survival,at_risk,events\n";
  for (std::size_t g = 0; g < 4; ++g) {
    if (s.sizes[g] == 0) continue;
    const auto& c = s.curves[g];
    const auto q = "Q" + std::to_string(g + 1);
    out << q << ",0,1," << s.sizes[g] << ",0\n";
    for (std::size_t i = 0; i < c.time.size(); ++i)
      out << q << "," << csv::format_double(c.time[i]) << "," << csv::format_double(c.survival[i]) << ","
          << c.at_risk[i] << "," << c.events[i] << "\n";
  }
}

std::vector<std::string> write_plot_data(const json& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> written;
  auto open = [&](const std::string& name) {
    const auto path = (fs::path(dir) / name).string();
    written.push_back(path);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write '" + path + "'");
    return f;
  };
  try {
    if (const auto& cv = report.at("cross_validation"); !cv.is_null()) {
      auto f = open("cv_folds.csv");
      f << "modality,fold,metric,value\n";
      for (const auto& m : cv.at("modalities")) {
        const auto mod = m.at("modality").get<std::string>();
        for (const char* metric : {"test_c_index", "test_auc"})
          for (const auto& fr : m.at("folds")) {
            const auto& v = fr.at(metric);
            f << mod << "," << fr.at("fold").get<int>() << "," << (metric + 5) << ","
              << (v.is_null() ? std::string("NA") : csv::format_double(v.get<double>())) << "\n";
          }
      }
    }
    if (const auto& ext = report.at("external"); !ext.is_null()) {
      std::set<std::string> used;
      auto violin = open("violin.csv");
      violin << "cohort,modality,metric,replicate,value\n";
      for (const auto& r : ext.at("results")) {
        const auto cohort = r.at("cohort").get<std::string>();
        const auto mod = r.at("modality").get<std::string>();
        const auto stem = file_token(cohort) + "_" + file_token(mod);
        if (!used.insert(stem).second) throw ValidationError("two results share the plot file stem '" + stem + "'");

        std::vector<ScoredPatient> rows;
        for (const auto& s : r.at("scores"))
          rows.push_back({s.at("patient_id").get<std::string>(), s.at("score").get<double>(),
                          s.at("time_years").get<double>(), s.at("event").get<bool>()});
        {
          auto f = open("scores_" + stem + ".csv");
          write_scores(f, rows);
        }
        const auto ds = scores_dataset(rows, cohort);
        const double horizon = r.at("auc").at("horizon_years").is_null() ? 5.0 : r["auc"]["horizon_years"].get<double>();
        {
          auto f = open("km_" + stem + ".csv");
          write_km_csv(f, stratify(ds, horizon));
        }
        {
          auto f = open("roc_" + stem + ".csv");
          f << "fpr,tpr\n";
          try {
            for (const auto& p : survstats::time_dependent_roc(ds, horizon))
              f << csv::format_double(p[0]) << "," << csv::format_double(p[1]) << "\n";
          } catch (const EstimationError&) {
          }
        }
        for (const char* metric : {"c_index", "auc"}) {
          int k = 0;
          for (const auto& v : r.at("bootstrap_replicates").at(metric))
            violin << csv::escape(cohort) << "," << mod << "," << metric << "," << k++ << ","
                   << csv::format_double(v.get<double>()) << "\n";
        }
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed run report: ") + e.what(), 0);
  }
  return written;
}

// ---- scores exchange ---------------------------------------------------------------------

std::vector<ScoredPatient> read_scores(std::istream& in) {
  const auto t = csv::read(in);
  const int id = t.column("patient_id"), sc = t.column("score"), tm = t.column("time_years"), ev = t.column("event");
  if (id < 0 || sc < 0 || tm < 0 || ev < 0)
    throw ParseError("scores file needs columns patient_id, score, time_years, event", 1);
  std::vector<ScoredPatient> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto line = t.line_numbers[r];
    ScoredPatient p;
    p.patient_id = row[static_cast<std::size_t>(id)];
    p.score = csv::parse_double(row[static_cast<std::size_t>(sc)], line, "score");
    p.time_years = csv::parse_double(row[static_cast<std::size_t>(tm)], line, "time_years");
    p.event = csv::parse_flag(row[static_cast<std::size_t>(ev)], line, "event");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ScoredPatient> load_scores(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_scores(in);
}

void write_scores(std::ostream& out, const std::vector<ScoredPatient>& rows) {
  out << "patient_id,score,time_years,event\n";
  for (const auto& r : rows)
    out << csv::escape(r.patient_id) << "," << csv::format_double(r.score) << "," << csv::format_double(r.time_years)
        << "," << (r.event ? 1 : 0) << "\n";
}

survstats::SurvivalDataset scores_dataset(const std::vector<ScoredPatient>& rows, const std::string& source) {
  survstats::SurvivalDataset ds;
  ds.source = source;
  for (const auto& r : rows) {
    ds.time.push_back(r.time_years);
    ds.event.push_back(r.event ? 1 : 0);
    ds.score.push_back(r.score);
  }
  ds.validate();
  return ds;
}

}  // namespace milsurv::pipeline
