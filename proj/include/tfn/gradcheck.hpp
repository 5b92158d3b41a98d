// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "tfn/tensor.hpp"

namespace tfn {

struct GradcheckOptions {
  double h = 1e-6;
  /// Seeds the random linear functional applied to non-scalar outputs and
  /// the entry subsampling below.
  std::uint64_t seed = 0;
  /// 0 checks every entry; otherwise at most this many entries per tensor.
  std::size_t max_entries_per_tensor = 0;
};

/// Compares tape gradients of `f` with respect to the leaf tensors `wrt`
/// against central differences. `f` must rebuild its graph from the current
/// values of `wrt` on every call. Returns
///   max |analytic - numeric| / max(1, |analytic|)
/// over the checked entries.
double finite_difference_gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                                   const GradcheckOptions& opt = {});

using ConfigSampler = std::function<std::vector<Tensor>(std::mt19937_64&)>;
using KinkPredicate = std::function<bool(const std::vector<Tensor>&)>;
using OpUnderTest = std::function<Tensor(const std::vector<Tensor>&)>;

/// Runs the check on `configs` random input configurations. Samples for
/// which `near_kink` fires are redrawn so non-differentiable points never
/// produce a false failure.
double gradcheck_random_configs(const ConfigSampler& sample, const KinkPredicate& near_kink,
                                const OpUnderTest& op, int configs, std::uint64_t seed,
                                const GradcheckOptions& opt = {});

}  // namespace tfn
