// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <optional>

#include "tfn/ops.hpp"
#include "tfn/training.hpp"

namespace tfn::training {

void LossConfig::validate() const {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0) || !std::isfinite(weights[i])) {
      throw Error(std::string("loss weight ") + kLossTermNames[i] + " must be finite and non-negative");
    }
  }
  if (!(huber_delta > 0)) throw Error("huber delta must be positive");
}

namespace {

// Box-frame corner offsets: x = sx * l/2, y = sy * h, z = sz * w/2.
constexpr double kSx[8] = {1, 1, -1, -1, 1, 1, -1, -1};
constexpr double kSy[8] = {0, 0, 0, 0, -1, -1, -1, -1};
constexpr double kSz[8] = {1, -1, -1, 1, 1, -1, -1, 1};

Tensor constant_vec(const geometry::Vec3& v) { return Tensor::vector({v.x(), v.y(), v.z()}); }

Tensor constant_corners(const geometry::Box3D& b) {
  std::vector<double> v;
  for (const auto& c : geometry::box3d_corners(b)) {
    v.push_back(c.x());
    v.push_back(c.y());
    v.push_back(c.z());
  }
  return Tensor({8, 3}, std::move(v));
}

}  // namespace

Tensor box_corners(const Tensor& center, const Tensor& heading, const Tensor& size_hwl) {
  if (center.shape() != Shape{3} || heading.shape() != Shape{1} || size_hwl.shape() != Shape{3}) {
    throw ShapeError("box_corners: expected center [3], heading [1], size [3]");
  }
  const double th = heading[0];
  const double c = std::cos(th), s = std::sin(th);
  const double h = size_hwl[0], w = size_hwl[1], l = size_hwl[2];
  std::vector<double> out(24);
  for (int k = 0; k < 8; ++k) {
    const double x = kSx[k] * 0.5 * l, y = kSy[k] * h, z = kSz[k] * 0.5 * w;
    out[3 * k + 0] = x * c + z * s + center[0];
    out[3 * k + 1] = y + center[1];
    out[3 * k + 2] = -x * s + z * c + center[2];
  }
  const bool track = active_tape() &&
                     (center.requires_grad() || heading.requires_grad() || size_hwl.requires_grad());
  Tensor y({8, 3}, std::move(out), track);
  if (track) {
    active_tape()->record("box_corners", {center, heading, size_hwl}, y, [center, heading, size_hwl, y]() {
      const auto g = y.grad();
      const double th = heading[0];
      const double c = std::cos(th), s = std::sin(th);
      const double l = size_hwl[2], w = size_hwl[1];
      double gc[3] = {0, 0, 0}, gth = 0, gh = 0, gw = 0, gl = 0;
      for (int k = 0; k < 8; ++k) {
        const double gx = g[3 * k], gy = g[3 * k + 1], gz = g[3 * k + 2];
        const double x = kSx[k] * 0.5 * l, z = kSz[k] * 0.5 * w;
        gc[0] += gx;
        gc[1] += gy;
        gc[2] += gz;
        // d/dtheta of (x c + z s, -x s + z c)
        gth += gx * (-x * s + z * c) + gz * (-x * c - z * s);
        gl += gx * (0.5 * kSx[k] * c) + gz * (-0.5 * kSx[k] * s);
        gw += gx * (0.5 * kSz[k] * s) + gz * (0.5 * kSz[k] * c);
        gh += gy * kSy[k];
      }
      if (center.requires_grad()) {
        auto gcen = center.mutable_grad();
        for (int i = 0; i < 3; ++i) gcen[static_cast<std::size_t>(i)] += gc[i];
      }
      if (heading.requires_grad()) heading.mutable_grad()[0] += gth;
      if (size_hwl.requires_grad()) {
        auto gs = size_hwl.mutable_grad();
        gs[0] += gh;
        gs[1] += gw;
        gs[2] += gl;
      }
    });
  }
  return y;
}

Tensor corner_loss(const Tensor& center, const Tensor& heading, const Tensor& size_hwl,
                   const geometry::Box3D& gt, double delta) {
  const Tensor pred = box_corners(center, heading, size_hwl);
  geometry::Box3D flipped = gt;
  flipped.heading = gt.heading + geometry::kPi;
  return minimum(huber_loss(pred, constant_corners(gt), delta), huber_loss(pred, constant_corners(flipped), delta));
}

LossBreakdown compute_total_loss(const model::ModelOutput& out, const data::SequenceSample& sample,
                                 const model::ModelConfig& cfg, const LossConfig& loss) {
  const std::size_t nf = sample.frames.size();
  if (out.seg_logits.size() != nf || out.features.size() != nf || out.tnet_center.size() != nf) {
    throw ShapeError("compute_total_loss: model output covers " + std::to_string(out.seg_logits.size()) +
                     " frames, sample has " + std::to_string(nf));
  }
  const auto lay = cfg.layout();
  if (out.head.numel() != lay.total()) throw ShapeError("compute_total_loss: head output has the wrong length");
  const double delta = loss.huber_delta;
  const auto& tg = sample.targets;
  std::array<std::optional<Tensor>, kNumLossTerms> term;

  Tensor seg;
  for (std::size_t k = 0; k < nf; ++k) {
    const Tensor ce = softmax_cross_entropy_rows(out.seg_logits[k], sample.frames[k].seg_labels);
    seg = k == 0 ? ce : add(seg, ce);
  }
  term[kSeg] = scale(seg, 1.0 / static_cast<double>(nf));

  const Tensor& dc = out.tnet_center.back();
  const Tensor head_center = slice(out.head, lay.center(), 3);
  const geometry::Vec3 centroid = out.mask_centroids.back();
  const Tensor stage1_target = constant_vec(tg.center_residual - centroid);
  const Tensor pred_offset = add(dc, head_center);
  term[kCenter] = add(huber_loss(dc, stage1_target, delta), huber_loss(pred_offset, stage1_target, delta));

  const auto nh = static_cast<std::size_t>(cfg.num_heading_bins);
  const auto ns = static_cast<std::size_t>(cfg.num_size_classes());
  const auto bin = static_cast<std::size_t>(tg.heading_bin);
  const auto cls = static_cast<std::size_t>(tg.size_class);
  term[kHeadingClass] = softmax_cross_entropy(slice(out.head, lay.heading_scores(), nh), bin);
  const Tensor heading_res = slice(out.head, lay.heading_residuals() + bin, 1);
  term[kHeadingResidual] = huber_loss(heading_res, Tensor::vector({tg.heading_residual}), delta);
  term[kSizeClass] = softmax_cross_entropy(slice(out.head, lay.size_scores(), ns), cls);
  const Tensor size_res = slice(out.head, lay.size_residuals() + 3 * cls, 3);
  term[kSizeResidual] = huber_loss(size_res, constant_vec(tg.size_residual), delta);

  if (loss.weight(kCorner) > 0) {
    const geometry::BoxCoder coder = cfg.coder();
    const Tensor center = add(pred_offset, constant_vec(centroid));
    const Tensor heading = add_scalar(scale(heading_res, 0.5 * coder.bin_width()), coder.bin_center(tg.heading_bin));
    const Tensor size = mul(add_scalar(size_res, 1.0), constant_vec(cfg.anchors[cls]));
    const geometry::Box3D gt = geometry::box_to_frustum(sample.record.box3d, sample.newest().frustum_angle);
    term[kCorner] = corner_loss(center, heading, size, gt, delta);
  }

  if (loss.weight(kCosine) > 0 && nf >= 2) {
    // Pairs with a vanishing feature have no defined direction and are skipped.
    Tensor acc;
    std::size_t pairs = 0;
    auto norm = [](const Tensor& t) {
      double s = 0;
      for (double v : t.values()) s += v * v;
      return std::sqrt(s);
    };
    for (std::size_t k = 1; k < nf; ++k) {
      if (norm(out.features[k]) < 1e-12 || norm(out.features[k - 1]) < 1e-12) continue;
      const Tensor d = cosine_distance(out.features[k], out.features[k - 1]);
      acc = pairs == 0 ? d : add(acc, d);
      ++pairs;
    }
    if (pairs) term[kCosine] = scale(acc, 1.0 / static_cast<double>(pairs));
  }

  LossBreakdown res;
  Tensor total;
  bool any = false;
  for (int t = 0; t < kNumLossTerms; ++t) {
    const auto& tt = term[static_cast<std::size_t>(t)];
    if (!tt) continue;
    const double v = tt->item();
    if (!std::isfinite(v)) throw NumericError(std::string("loss term ") + kLossTermNames[static_cast<std::size_t>(t)] + " is not finite");
    res.terms[static_cast<std::size_t>(t)] = v;
    const double w = loss.weights[static_cast<std::size_t>(t)];
    if (w == 0) continue;
    const Tensor weighted = w == 1.0 ? *tt : scale(*tt, w);
    total = any ? add(total, weighted) : weighted;
    any = true;
  }
  res.total = any ? total : Tensor::scalar(0.0);
  return res;
}

}  // namespace tfn::training
