// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck_suite.hpp
 * @brief  Finite-difference checks over every differentiable op and the
 *         end-to-end toy detector.
 */
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tfn/model.hpp"

namespace tfn {

struct GradcheckEntry {
  std::string name;
  double error = 0;
  double tolerance = 0;
  bool ok() const { return error < tolerance; }
};

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kEndToEndTolerance = 1e-4;

/// Random sequence sample in the frustum frame with `num_points` points per
/// frame and `frames` history frames.
data::SequenceSample make_toy_sample(std::mt19937_64& rng, std::size_t num_points, int frames,
                                     const geometry::BoxCoder& coder);

/// Toy model config: widths at most 16, feature_dim 16.
model::ModelConfig toy_model_config(int tau, model::Branching branching, bool with_center);

/// One entry per op, plus one per end-to-end model variant.
std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed, int configs_per_op = 4);

}  // namespace tfn
