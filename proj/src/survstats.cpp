#include "milsurv/survstats.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numeric>

#include "milsurv/errors.hpp"

namespace milsurv::survstats {

std::size_t SurvivalDataset::events() const noexcept {
  return static_cast<std::size_t>(std::count_if(event.begin(), event.end(), [](auto e) { return e != 0; }));
}

void SurvivalDataset::validate() const {
  const auto n = time.size();
  if (event.size() != n) throw ValidationError("dataset: time and event lengths differ");
  if (!score.empty() && score.size() != n) throw ValidationError("dataset: score length differs from time");
  if (covariates.cols() > 0 && static_cast<std::size_t>(covariates.rows()) != n)
    throw ValidationError("dataset: covariate rows differ from time");
  for (double t : time)
    if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("dataset: times must be finite and > 0");
  for (double s : score)
    if (!std::isfinite(s)) throw ValidationError("dataset: non-finite score");
}

SurvivalDataset SurvivalDataset::subset(std::span<const std::size_t> idx) const {
  SurvivalDataset out;
  out.source = source;
  out.time.reserve(idx.size());
  out.event.reserve(idx.size());
  for (auto i : idx) {
    out.time.push_back(time[i]);
    out.event.push_back(event[i]);
    if (!score.empty()) out.score.push_back(score[i]);
  }
  if (covariates.cols() > 0) {
    out.covariates.resize(static_cast<Eigen::Index>(idx.size()), covariates.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
      out.covariates.row(static_cast<Eigen::Index>(r)) = covariates.row(static_cast<Eigen::Index>(idx[r]));
  }
  return out;
}

// ---- Kaplan-Meier -------------------------------------------------------------------

double KmCurve::at(double t) const {
  const auto it = std::upper_bound(time.begin(), time.end(), t);
  if (it == time.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - time.begin()) - 1];
}

double KmCurve::before(double t) const {
  const auto it = std::lower_bound(time.begin(), time.end(), t);
  if (it == time.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - time.begin()) - 1];
}

KmCurve product_limit(std::span<const double> time, std::span<const std::uint8_t> indicator) {
  const std::size_t n = time.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return time[a] < time[b]; });

  KmCurve km;
  double s = 1.0;
  int at_risk = static_cast<int>(n);
  for (std::size_t a = 0; a < n;) {
    std::size_t b = a;
    int d = 0, c = 0;
    while (b < n && time[order[b]] == time[order[a]]) {
      (indicator[order[b]] ? d : c) += 1;
      ++b;
    }
    if (d > 0) {
      s *= static_cast<double>(at_risk - d) / static_cast<double>(at_risk);
      km.time.push_back(time[order[a]]);
      km.survival.push_back(s);
      km.at_risk.push_back(at_risk);
      km.events.push_back(d);
      km.censored.push_back(c);
    }
    at_risk -= d + c;
    a = b;
  }
  return km;
}

KmCurve km_estimate(const SurvivalDataset& ds) {
  ds.validate();
  if (ds.events() == 0) throw EstimationError("Kaplan-Meier needs at least one event");
  return product_limit(ds.time, ds.event);
}

// ---- log-rank -------------------------------------------------------------------------

double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw PreconditionError("chi-square df must be > 0");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

LogRankResult logrank_test(const std::vector<SurvivalDataset>& groups) {
  const std::size_t k = groups.size();
  if (k < 2) throw PreconditionError("log-rank test needs at least two groups");
  struct Obs {
    double t;
    bool event;
    std::size_t g;
  };
  std::vector<Obs> all;
  for (std::size_t g = 0; g < k; ++g) {
    groups[g].validate();
    for (std::size_t i = 0; i < groups[g].size(); ++i) all.push_back({groups[g].time[i], groups[g].event[i] != 0, g});
  }
  std::sort(all.begin(), all.end(), [](const Obs& a, const Obs& b) { return a.t < b.t; });

  std::vector<double> at_risk(k, 0.0);
  for (const auto& o : all) at_risk[o.g] += 1.0;

  LogRankResult r;
  r.df = static_cast<int>(k) - 1;
  r.observed.assign(k, 0.0);
  r.expected.assign(k, 0.0);
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  bool any_event = false;

  for (std::size_t a = 0; a < all.size();) {
    std::size_t b = a;
    std::vector<double> d(k, 0.0), leaving(k, 0.0);
    while (b < all.size() && all[b].t == all[a].t) {
      if (all[b].event) d[all[b].g] += 1.0;
      leaving[all[b].g] += 1.0;
      ++b;
    }
    const double n = std::accumulate(at_risk.begin(), at_risk.end(), 0.0);
    const double dt = std::accumulate(d.begin(), d.end(), 0.0);
    if (dt > 0.0) {
      any_event = true;
      for (std::size_t g = 0; g < k; ++g) {
        r.observed[g] += d[g];
        r.expected[g] += dt * at_risk[g] / n;
      }
      if (n > 1.0) {
        const double f = dt * (n - dt) / (n - 1.0);
        for (std::size_t g = 0; g < k; ++g)
          for (std::size_t h = 0; h < k; ++h) {
            const double pg = at_risk[g] / n, ph = at_risk[h] / n;
            V(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(h)) += f * pg * ((g == h ? 1.0 : 0.0) - ph);
          }
      }
    }
    for (std::size_t g = 0; g < k; ++g) at_risk[g] -= leaving[g];
    a = b;
  }
  if (!any_event) throw EstimationError("log-rank test needs at least one event");

  // Drop the last group; the full covariance is singular.
  const auto m = static_cast<Eigen::Index>(k - 1);
  Eigen::VectorXd oe(m);
  for (Eigen::Index g = 0; g < m; ++g) oe(g) = r.observed[static_cast<std::size_t>(g)] - r.expected[static_cast<std::size_t>(g)];
  if (oe.isZero(0.0)) {
    r.chi_square = 0.0;
  } else {
    const Eigen::MatrixXd Vm = V.topLeftCorner(m, m);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Vm);
    cod.setThreshold(1e-12);
    r.chi_square = std::max(0.0, oe.dot(cod.solve(oe)));
    r.df = static_cast<int>(std::max<Eigen::Index>(cod.rank(), 1));
  }
  r.p = chi_square_sf(r.chi_square, r.df);
  return r;
}

// ---- discrimination ----------------------------------------------------------------

namespace {

// Fenwick tree over dense score ranks.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : t_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < t_.size(); i += i & (~i + 1)) ++t_[i];
  }
  // Count of inserted ranks < i.
  long long below(std::size_t i) const {
    long long s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += t_[i];
    return s;
  }

 private:
  std::vector<long long> t_;
};

std::vector<std::size_t> dense_ranks(std::span<const double> v, std::size_t& levels) {
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  levels = u.size();
  std::vector<std::size_t> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    r[i] = static_cast<std::size_t>(std::lower_bound(u.begin(), u.end(), v[i]) - u.begin());
  return r;
}

void require_scores(const SurvivalDataset& ds) {
  ds.validate();
  if (ds.score.size() != ds.size()) throw PreconditionError("dataset carries no scores");
}

}  // namespace

ConcordanceCounts concordance_counts(const SurvivalDataset& ds) {
  require_scores(ds);
  const std::size_t n = ds.size();
  std::size_t levels = 0;
  const auto rank = dense_ranks(ds.score, levels);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ds.time[a] > ds.time[b]; });

  // Walk times from latest to earliest. The tree holds everyone strictly
  // later; censored subjects at the current time join before events query.
  Fenwick tree(levels);
  long long inserted = 0;
  ConcordanceCounts c;
  for (std::size_t a = 0; a < n;) {
    std::size_t b = a;
    while (b < n && ds.time[order[b]] == ds.time[order[a]]) ++b;
    for (std::size_t k = a; k < b; ++k)
      if (!ds.event[order[k]]) {
        tree.add(rank[order[k]]);
        ++inserted;
      }
    for (std::size_t k = a; k < b; ++k) {
      const auto i = order[k];
      if (!ds.event[i]) continue;
      const long long lower = tree.below(rank[i]);
      const long long equal = tree.below(rank[i] + 1) - lower;
      c.concordant += lower;
      c.tied_score += equal;
      c.comparable += inserted;
    }
    for (std::size_t k = a; k < b; ++k)
      if (ds.event[order[k]]) {
        tree.add(rank[order[k]]);
        ++inserted;
      }
    a = b;
  }
  return c;
}

double c_index(const SurvivalDataset& ds) {
  const auto c = concordance_counts(ds);
  if (c.comparable == 0) throw EstimationError("C-index undefined: no comparable pairs");
  return (static_cast<double>(c.concordant) + 0.5 * static_cast<double>(c.tied_score)) /
         static_cast<double>(c.comparable);
}

namespace {

struct AucParts {
  std::vector<std::size_t> cases;
  std::vector<double> case_weight;
  std::vector<double> control_scores;  // sorted ascending
};

AucParts auc_parts(const SurvivalDataset& ds, double horizon) {
  require_scores(ds);
  if (!(horizon > 0.0)) throw PreconditionError("AUC horizon must be > 0");
  std::vector<std::uint8_t> censored(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) censored[i] = ds.event[i] ? 0 : 1;
  const auto G = product_limit(ds.time, censored);

  AucParts p;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.time[i] <= horizon && ds.event[i]) {
      const double g = G.before(ds.time[i]);
      if (!(g > 0.0)) throw EstimationError("censoring survival is zero before a case time");
      p.cases.push_back(i);
      p.case_weight.push_back(1.0 / g);
    } else if (ds.time[i] > horizon) {
      p.control_scores.push_back(ds.score[i]);
    }
  }
  if (p.cases.empty()) throw EstimationError("time-dependent AUC undefined: no cases before the horizon");
  if (p.control_scores.empty()) throw EstimationError("time-dependent AUC undefined: no controls beyond the horizon");
  std::sort(p.control_scores.begin(), p.control_scores.end());
  return p;
}

}  // namespace

double time_dependent_auc(const SurvivalDataset& ds, double horizon) {
  const auto p = auc_parts(ds, horizon);
  double num = 0.0, wsum = 0.0;
  for (std::size_t k = 0; k < p.cases.size(); ++k) {
    const double s = ds.score[p.cases[k]];
    const auto lo = std::lower_bound(p.control_scores.begin(), p.control_scores.end(), s);
    const auto hi = std::upper_bound(lo, p.control_scores.end(), s);
    const double less = static_cast<double>(lo - p.control_scores.begin());
    const double equal = static_cast<double>(hi - lo);
    num += p.case_weight[k] * (less + 0.5 * equal);
    wsum += p.case_weight[k];
  }
  return num / (wsum * static_cast<double>(p.control_scores.size()));
}

std::vector<std::array<double, 2>> time_dependent_roc(const SurvivalDataset& ds, double horizon) {
  const auto p = auc_parts(ds, horizon);
  std::vector<double> thresholds;
  for (auto i : p.cases) thresholds.push_back(ds.score[i]);
  thresholds.insert(thresholds.end(), p.control_scores.begin(), p.control_scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double wsum = std::accumulate(p.case_weight.begin(), p.case_weight.end(), 0.0);
  const double nc = static_cast<double>(p.control_scores.size());
  std::vector<std::array<double, 2>> roc{{0.0, 0.0}};
  for (double c : thresholds) {
    double tp = 0.0;
    for (std::size_t k = 0; k < p.cases.size(); ++k)
      if (ds.score[p.cases[k]] >= c) tp += p.case_weight[k];
    const auto fp = p.control_scores.end() - std::lower_bound(p.control_scores.begin(), p.control_scores.end(), c);
    roc.push_back({static_cast<double>(fp) / nc, tp / wsum});
  }
  return roc;
}

// ---- quartiles ---------------------------------------------------------------------

QuartileResult quartile_stratify(std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (n < 4) throw PreconditionError("quartile stratification needs at least 4 patients");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  QuartileResult q;
  for (std::size_t k = 1; k <= 3; ++k) q.cuts[k - 1] = sorted[(n - 1) * k / 4];
  q.group.resize(n);
  std::array<int, 4> counts{};
  for (std::size_t i = 0; i < n; ++i) {
    int g = 0;
    for (double c : q.cuts) g += scores[i] > c ? 1 : 0;
    q.group[i] = g;
    ++counts[static_cast<std::size_t>(g)];
  }
  q.degenerate = std::count(counts.begin(), counts.end(), 0) > 0;
  return q;
}

}  // namespace milsurv::survstats
