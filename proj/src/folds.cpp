#include "milsurv/folds.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

#include "milsurv/errors.hpp"
#include "milsurv/rng.hpp"

namespace milsurv::pipeline {

std::vector<std::size_t> FoldPlan::members(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] == f) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::members_except(std::initializer_list<int> excluded) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (std::find(excluded.begin(), excluded.end(), fold[i]) == excluded.end()) out.push_back(i);
  return out;
}

FoldPlan make_folds(const cohort::Cohort& records, int k, int bins, std::uint64_t seed) {
  const std::size_t n = records.size();
  if (k < 2) throw PreconditionError("make_folds needs k >= 2");
  if (bins < 2) throw PreconditionError("make_folds needs bins >= 2");
  if (n < static_cast<std::size_t>(k)) throw PreconditionError("make_folds needs at least k patients");

  std::vector<std::size_t> by_time(n);
  std::iota(by_time.begin(), by_time.end(), std::size_t{0});
  std::stable_sort(by_time.begin(), by_time.end(),
                   [&](auto a, auto b) { return records[a].outcome.time < records[b].outcome.time; });
  std::vector<int> bin(n);
  for (std::size_t r = 0; r < n; ++r) bin[by_time[r]] = static_cast<int>(r * static_cast<std::size_t>(bins) / n);

  // (not event, bin, isup) sorts event strata first.
  using Key = std::tuple<int, int, int>;
  std::map<Key, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i) {
    const int isup = records[i].clinical ? records[i].clinical->isup_grade : 0;
    strata[{records[i].outcome.event ? 0 : 1, bin[i], isup}].push_back(i);
  }

  FoldPlan plan;
  plan.k = k;
  plan.fold.assign(n, -1);
  plan.stratum.resize(n);
  std::size_t counter = 0;
  std::uint64_t ordinal = 0;
  for (auto& [key, idx] : strata) {
    Rng rng(derive_seed(seed, {0xF01DULL, ordinal++}));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto label = "e" + std::to_string(1 - std::get<0>(key)) + "|b" + std::to_string(std::get<1>(key)) + "|g" +
                       std::to_string(std::get<2>(key));
    for (auto i : idx) {
      plan.fold[i] = static_cast<int>(counter++ % static_cast<std::size_t>(k));
      plan.stratum[i] = label;
    }
  }
  return plan;
}

}  // namespace milsurv::pipeline
