// SPDX-License-Identifier: Apache-2.0
#include "tfn/adam.hpp"

#include <cmath>

namespace tfn {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::string_view name) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::string(name) + " has " + std::to_string(params.size()) +
                     " entries but " + std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) state.m.assign(params.size(), 0.0);
  if (state.v.empty()) state.v.assign(params.size(), 0.0);
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: moment buffers of " + std::string(name) + " do not match");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (std::isnan(grads[i])) {
      throw NumericError("adam_step: NaN gradient in " + std::string(name) + " at index " +
                         std::to_string(i));
    }
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

void AdamOptimizer::step(ParameterStore& store) {
  for (auto& [path, tensor] : store.all()) {
    auto [it, inserted] = states_.try_emplace(path);
    if (inserted) {
      it->second.beta1 = cfg_.beta1;
      it->second.beta2 = cfg_.beta2;
      it->second.eps = cfg_.eps;
      it->second.lr = cfg_.lr;
    }
    std::span<const double> grads = tensor.mutable_grad();
    adam_step(tensor.mutable_values(), grads, it->second, path);
  }
}

}  // namespace tfn
