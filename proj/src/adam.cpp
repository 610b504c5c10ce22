#include "milsurv/adam.hpp"

#include <cmath>

#include "milsurv/errors.hpp"

namespace milsurv::model {

void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state, double lr, long t,
               const AdamHyper& h) {
  if (t < 1) throw PreconditionError("adam_step: t must be >= 1");
  if (!grads.same_layout(params) || !state.m.same_layout(params) || !state.v.same_layout(params))
    throw ContractError("adam_step: parameter, gradient and state layouts differ");

  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseProduct(g);
    params[i].array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + h.eps);
  }
}

}  // namespace milsurv::model
