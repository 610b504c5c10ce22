#pragma once

#include "milsurv/params.hpp"

namespace milsurv::model {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParameterSet m;  // first moment
  ParameterSet v;  // second moment

  static AdamState zeros_like(const ParameterSet& params) { return {params.zeros_like(), params.zeros_like()}; }
};

// One bias-corrected Adam update at step t (1-based).
void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state, double lr, long t,
               const AdamHyper& hyper = {});

}  // namespace milsurv::model
