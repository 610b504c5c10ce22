#include <algorithm>
#include <cmath>
#include <numeric>

#include "milsurv/errors.hpp"
#include "milsurv/objective.hpp"

namespace milsurv::model {

CoxLoss cox_loss_with_grad(std::span<const double> s, std::span<const cohort::SurvivalOutcome> y) {
  const std::size_t n = s.size();
  if (y.size() != n) throw ContractError("cox_loss: scores and outcomes differ in length");
  std::size_t events = 0;
  for (const auto& o : y) events += o.event ? 1 : 0;
  if (events == 0) throw EstimationError("cox_loss undefined: batch has no events");

  const double shift = *std::max_element(s.begin(), s.end());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y[a].time > y[b].time; });

  // Descending time: risk-set sum for everyone in a tie group includes the
  // whole group (Breslow).
  std::vector<double> log_risk(n, 0.0);
  double acc = 0.0;
  for (std::size_t a = 0; a < n;) {
    std::size_t b = a;
    while (b < n && y[order[b]].time == y[order[a]].time) acc += std::exp(s[order[b++]] - shift);
    const double lr = std::log(acc) + shift;
    for (std::size_t k = a; k < b; ++k) log_risk[order[k]] = lr;
    a = b;
  }

  CoxLoss out;
  out.dscores.assign(n, 0.0);
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (y[i].event) ll += s[i] - log_risk[i];
  const double inv_e = 1.0 / static_cast<double>(events);
  out.value = -ll * inv_e;

  // Ascending time: cumulative sum over events i with t_i <= t_k of 1/R_i,
  // carried in units of exp(-shift).
  double inv_risk_sum = 0.0;
  for (std::size_t a = n; a > 0;) {
    std::size_t b = a;
    const double t = y[order[a - 1]].time;
    while (b > 0 && y[order[b - 1]].time == t) {
      const auto i = order[b - 1];
      if (y[i].event) inv_risk_sum += std::exp(shift - log_risk[i]);
      --b;
    }
    for (std::size_t k = b; k < a; ++k) {
      const auto j = order[k];
      out.dscores[j] = -inv_e * ((y[j].event ? 1.0 : 0.0) - std::exp(s[j] - shift) * inv_risk_sum);
    }
    a = b;
  }
  return out;
}

double cox_loss(std::span<const double> scores, std::span<const cohort::SurvivalOutcome> outcomes) {
  return cox_loss_with_grad(scores, outcomes).value;
}

GradientResult gradients(const RiskModel& model, const Batch& batch) {
  if (batch.inputs.size() != batch.outcomes.size()) throw ContractError("batch inputs and outcomes differ in length");
  std::vector<double> scores(batch.inputs.size());
  for (std::size_t k = 0; k < scores.size(); ++k) scores[k] = model.predict(batch.inputs[k]);
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (!std::isfinite(scores[k])) throw NumericalError("non-finite risk score for batch row " + std::to_string(k));

  auto loss = cox_loss_with_grad(scores, batch.outcomes);
  GradientResult out{loss.value, model.parameters().zeros_like()};
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (loss.dscores[k] != 0.0) model.accumulate_gradient(batch.inputs[k], loss.dscores[k], out.grads);
  if (const auto bad = out.grads.first_non_finite(); !bad.empty())
    throw NumericalError("non-finite gradient in parameter '" + bad + "'");
  if (!std::isfinite(out.loss)) throw NumericalError("non-finite Cox loss");
  return out;
}

}  // namespace milsurv::model
