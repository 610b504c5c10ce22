#pragma once

#include <span>
#include <vector>

#include "milsurv/cohort.hpp"
#include "milsurv/model.hpp"

namespace milsurv::model {

struct CoxLoss {
  double value = 0.0;
  std::vector<double> dscores;  // dL/ds_k
};

// Negative mean-over-events Breslow partial log-likelihood,
//   L = -(1/E) sum_{i: event} [ s_i - log sum_{j: t_j >= t_i} exp(s_j) ],
// with the risk sets formed inside the supplied batch. Throws EstimationError
// when the batch holds no event.
CoxLoss cox_loss_with_grad(std::span<const double> scores, std::span<const cohort::SurvivalOutcome> outcomes);
double cox_loss(std::span<const double> scores, std::span<const cohort::SurvivalOutcome> outcomes);

struct Batch {
  std::vector<ModelInput> inputs;
  std::vector<cohort::SurvivalOutcome> outcomes;
};

struct GradientResult {
  double loss = 0.0;
  ParameterSet grads;
};

// Exact gradient of cox_loss(predict(batch)) with respect to every parameter.
// Each batch row is its own risk-set member, so a patient listed twice counts
// twice. Throws NumericalError naming the first non-finite tensor.
GradientResult gradients(const RiskModel& model, const Batch& batch);

}  // namespace milsurv::model
