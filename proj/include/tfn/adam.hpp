// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tfn/parameters.hpp"

namespace tfn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-3;
};

/// Bias-corrected Adam update of `params` in place. Throws NumericError
/// naming `name` when a gradient entry is NaN.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::string_view name = "parameter");

class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every parameter of the store from its accumulated gradient;
  /// parameters without a gradient buffer are treated as zero-gradient.
  void step(ParameterStore& store);

  const AdamConfig& config() const { return cfg_; }
  const std::map<std::string, AdamState>& states() const { return states_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, AdamState> states_;
};

}  // namespace tfn
