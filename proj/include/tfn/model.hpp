// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  Frustum detector: instance segmentation, T-Net, box backbone,
 *         temporal fusion and the output-branching heads.
 */
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "tfn/data.hpp"
#include "tfn/geometry.hpp"
#include "tfn/gru.hpp"
#include "tfn/parameters.hpp"
#include "tfn/tensor.hpp"

namespace tfn::model {

using geometry::Vec3;

enum class Branching { ob, tb, ours };

Branching parse_branching(std::string_view s);
std::string_view branching_name(Branching b);

struct Widths {
  std::vector<std::size_t> seg_point{64, 64, 64, 128, 1024};
  std::vector<std::size_t> seg_head{512, 256, 128, 128};
  std::vector<std::size_t> tnet_point{128, 128, 256};
  std::vector<std::size_t> tnet_fc{256, 128};
  std::vector<std::size_t> box_point{128, 128, 256, 512};
  std::size_t head_hidden = 256;
  /// Index of the segmentation point layer whose output is concatenated
  /// with the global feature.
  std::size_t seg_skip_layer = 1;

  static Widths full() { return {}; }
  /// Every layer at most 16 wide.
  static Widths toy();
};

struct ModelConfig {
  int tau = 3;
  Branching branching = Branching::ours;
  bool with_center_concat = false;
  int num_heading_bins = 12;
  /// (h, w, l) size anchors, one per size class.
  std::vector<Vec3> anchors{{1.53, 1.63, 3.88}, {1.76, 0.66, 0.84}, {1.74, 0.60, 1.76}};
  std::size_t feature_dim = 512;
  Widths widths;
  /// Per-frame normalization of shared-MLP activations over the point axis.
  bool normalization = false;

  int num_size_classes() const { return static_cast<int>(anchors.size()); }
  geometry::HeadLayout layout() const { return {num_heading_bins, num_size_classes()}; }
  geometry::BoxCoder coder() const { return {num_heading_bins, anchors}; }
  void validate() const;

  /// Flat key = value block; doubles are written round-trip exact.
  std::string to_text() const;
  static ModelConfig from_text(std::istream& is);
  bool operator==(const ModelConfig& o) const { return to_text() == o.to_text(); }
};

struct MaskResult {
  Tensor centered;  // [m x 3], no gradient
  Vec3 centroid = Vec3::Zero();
  std::size_t selected = 0;
  bool fallback = false;
};

struct ModelOutput {
  /// Per history frame, oldest first.
  std::vector<Tensor> seg_logits;
  std::vector<Tensor> tnet_center;
  std::vector<Vec3> mask_centroids;
  std::vector<Tensor> features;
  Tensor fused;
  /// Raw head outputs in HeadLayout order.
  Tensor head;
  std::size_t mask_fallbacks = 0;
};

/// [n x 3] constant tensor of a cloud's points.
Tensor points_tensor(const geometry::PointCloud& pc);

class Detector {
 public:
  Detector(ModelConfig cfg, std::uint64_t seed);
  // Copies would share parameter storage with the original.
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;
  Detector(Detector&&) = default;
  Detector& operator=(Detector&&) = default;

  const ModelConfig& config() const { return cfg_; }
  /// History length used by full_forward; does not change any parameter.
  void set_tau(int tau);
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  Tensor segmentation_forward(const Tensor& points, const Tensor& one_hot) const;
  /// Keeps points whose positive logit wins; falls back to all points.
  MaskResult mask_center_points(const Tensor& points, const Tensor& logits) const;
  Tensor tnet_forward(const Tensor& centered) const;
  Tensor backbone_forward(const Tensor& points, const Tensor& one_hot) const;
  /// `deltas` holds each frame's T-Net output and is used only with
  /// with_center_concat.
  Tensor tfm_forward(const std::vector<Tensor>& features, const std::vector<Tensor>& deltas) const;
  Tensor head_forward(const Tensor& f_t, const Tensor& f_fused) const;
  /// A single head branch ("a" or "b") on a feature.
  Tensor branch_forward(const Tensor& feature, char branch) const;
  ModelOutput full_forward(const data::SequenceSample& sample) const;

  /// Box in the rectified camera frame from the newest frame's outputs.
  geometry::Box3D decode(const ModelOutput& out, const data::SequenceSample& sample,
                         geometry::DecodeStats* stats = nullptr) const;
  /// Max heading-bin probability times max size-class probability.
  double confidence(const ModelOutput& out) const;

  std::size_t mask_fallback_count() const { return fallbacks_; }

 private:
  Tensor shared_mlp(const Tensor& x, const std::string& prefix, std::size_t layers) const;
  Tensor normalize(const Tensor& x) const;
  const Tensor& p(const std::string& path) const { return params_.get(path); }

  ModelConfig cfg_;
  ParameterStore params_;
  GruParams gru_;
  mutable std::size_t fallbacks_ = 0;
};

}  // namespace tfn::model
