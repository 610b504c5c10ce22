#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "milsurv/cohort.hpp"

namespace milsurv::pipeline {

struct FoldPlan {
  int k = 5;
  std::vector<int> fold;             // per patient, 0..k-1
  std::vector<std::string> stratum;  // per patient, e.g. "e1|b2|g3"

  std::vector<std::size_t> members(int f) const;
  std::vector<std::size_t> members_except(std::initializer_list<int> excluded) const;
};

// Stratum = (event, follow-up bin, ISUP grade or 0 when unknown). Follow-up
// bins split the time ranks into `bins` equal-count groups. Strata are visited
// in sorted order with event strata first, members shuffled per stratum, and
// one round-robin counter runs across all of them, so every stratum and the
// event total are balanced across folds within 1.
FoldPlan make_folds(const cohort::Cohort& records, int k, int bins, std::uint64_t seed);

}  // namespace milsurv::pipeline
