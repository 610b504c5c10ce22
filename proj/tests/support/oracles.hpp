#pragma once

// Brute-force reference implementations of the discrimination metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "milsurv/survstats.hpp"

namespace milsurv::testing {

// Harrell's C over all ordered pairs.
inline double c_index_pairs(const survstats::SurvivalDataset& ds) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.event[i]) continue;
    for (std::size_t j = 0; j < ds.size(); ++j) {
      if (i == j) continue;
      const bool comparable = ds.time[i] < ds.time[j] || (ds.time[i] == ds.time[j] && !ds.event[j]);
      if (!comparable) continue;
      den += 1;
      if (ds.score[i] > ds.score[j]) num += 1;
      else if (ds.score[i] == ds.score[j]) num += 0.5;
    }
  }
  return num / den;
}

// Plain binary AUC of (event by horizon) against (alive past horizon).
inline double binary_auc_pairs(const survstats::SurvivalDataset& ds, double horizon) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!(ds.event[i] && ds.time[i] <= horizon)) continue;
    for (std::size_t j = 0; j < ds.size(); ++j) {
      if (!(ds.time[j] > horizon)) continue;
      den += 1;
      if (ds.score[i] > ds.score[j]) num += 1;
      else if (ds.score[i] == ds.score[j]) num += 0.5;
    }
  }
  return num / den;
}

// Censoring survival G(t-) by direct product over distinct censoring times
// strictly before t. A subject censored at an event time still counts as at
// risk of censoring there.
inline double censoring_survival_before(const survstats::SurvivalDataset& ds, double t) {
  std::vector<double> times;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!ds.event[i] && ds.time[i] < t) times.push_back(ds.time[i]);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double g = 1.0;
  for (double c : times) {
    double at_risk = 0, censored = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.time[i] >= c) at_risk += 1;
      if (ds.time[i] == c && !ds.event[i]) censored += 1;
    }
    g *= 1.0 - censored / at_risk;
  }
  return g;
}

// IPCW cumulative/dynamic AUC by pair enumeration.
inline double ipcw_auc_pairs(const survstats::SurvivalDataset& ds, double horizon) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!(ds.event[i] && ds.time[i] <= horizon)) continue;
    const double w = 1.0 / censoring_survival_before(ds, ds.time[i]);
    for (std::size_t j = 0; j < ds.size(); ++j) {
      if (!(ds.time[j] > horizon)) continue;
      den += w;
      if (ds.score[i] > ds.score[j]) num += w;
      else if (ds.score[i] == ds.score[j]) num += 0.5 * w;
    }
  }
  return num / den;
}

}  // namespace milsurv::testing
