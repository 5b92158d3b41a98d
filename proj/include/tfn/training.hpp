// SPDX-License-Identifier: Apache-2.0
/**
 * @file   training.hpp
 * @brief  Loss assembly, the mini-batch training loop, checkpoints and
 *         checkpoint evaluation.
 */
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tfn/adam.hpp"
#include "tfn/evaluation.hpp"
#include "tfn/model.hpp"

namespace tfn::training {

enum LossTerm { kSeg, kCenter, kHeadingClass, kHeadingResidual, kSizeClass, kSizeResidual, kCorner, kCosine, kNumLossTerms };
inline constexpr std::array<const char*, kNumLossTerms> kLossTermNames{
    "seg", "center", "heading_cls", "heading_res", "size_cls", "size_res", "corner", "cos"};

struct LossConfig {
  std::array<double, kNumLossTerms> weights{1, 1, 1, 1, 1, 1, 0, 0};
  double huber_delta = 1.0;

  double& weight(LossTerm t) { return weights[t]; }
  double weight(LossTerm t) const { return weights[t]; }
  void validate() const;
};

struct LossBreakdown {
  Tensor total;
  /// Unweighted value of each term.
  std::array<double, kNumLossTerms> terms{};
};

/// [8 x 3] corners (box3d_corners order) of a box given as center [3],
/// heading [1] and size (h, w, l) [3], differentiable in all three.
Tensor box_corners(const Tensor& center, const Tensor& heading, const Tensor& size_hwl);

/// Huber distance to the ground-truth corners, minimised over the
/// heading-flipped ground truth. `gt` is in the same frame as the inputs.
Tensor corner_loss(const Tensor& center, const Tensor& heading, const Tensor& size_hwl,
                   const geometry::Box3D& gt, double delta);

/// Weighted sum of the segmentation, box and cosine terms for one sample.
/// Throws NumericError naming the first non-finite term.
LossBreakdown compute_total_loss(const model::ModelOutput& out, const data::SequenceSample& sample,
                                 const model::ModelConfig& cfg, const LossConfig& loss);

/// Validation data: sequence samples plus every labelled object of the
/// frames they come from.
struct EvalSet {
  std::vector<data::SequenceSample> samples;
  std::vector<eval::GroundTruth> gts;
  std::map<int, geometry::Calibration> calibs;
};

EvalSet make_eval_set(const std::vector<const data::DriveRecord*>& drives, const data::SequenceOptions& opt,
                      const geometry::BoxCoder& coder);

struct Prediction {
  geometry::Box3D box;
  double score = 0;
  std::size_t mask_fallbacks = 0;
};

/// Forward pass without recording, history truncated to the model's tau.
Prediction predict(const model::Detector& det, const data::SequenceSample& sample);

std::vector<eval::Detection> detect(const model::Detector& det, const std::vector<data::SequenceSample>& samples,
                                    const std::map<int, geometry::Calibration>& calibs);

struct TrainConfig {
  std::size_t batch_size = 32;
  int epochs = 100;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 17;
  LossConfig loss;
  eval::Interp interp = eval::Interp::eleven_point;
  /// Checkpoints and the metric log go here when non-empty.
  std::string out_dir;
  /// Evaluate on the validation set every this many epochs (0 never).
  int val_every = 1;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double total = 0;
  std::array<double, kNumLossTerms> terms{};
  std::vector<eval::APResult> val;
  double val_moderate = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_moderate_ap = -1;
  std::size_t mask_fallbacks = 0;
};

/// Adam on per-sample gradients averaged over each shuffled mini-batch.
/// `on_epoch` is called after every epoch.
TrainResult train(model::Detector& det, const std::vector<data::SequenceSample>& train_samples,
                  const EvalSet& val, const TrainConfig& tc,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Header line and per-epoch rows of the tab-separated metric log.
std::string log_header();
std::string log_row(const EpochLog& e);

/// Writes <path> (parameter archive) and the config block next to it
/// (<path> with extension .cfg).
void save_checkpoint(const model::Detector& det, const std::string& path);
model::Detector load_checkpoint(const std::string& path);

struct CheckpointEval {
  std::vector<eval::Detection> detections;
  std::vector<eval::APResult> results;
};

/// Loads a checkpoint and evaluates it. A requested branching that differs
/// from the checkpoint's raises Error; `tau` overrides the history length.
CheckpointEval evaluate_checkpoint(const std::string& path, const EvalSet& val, std::optional<int> tau,
                                   std::optional<model::Branching> branching,
                                   eval::Interp interp = eval::Interp::eleven_point);

}  // namespace tfn::training
