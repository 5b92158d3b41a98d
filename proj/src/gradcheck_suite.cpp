// SPDX-License-Identifier: Apache-2.0
#include "tfn/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "tfn/gradcheck.hpp"
#include "tfn/gru.hpp"
#include "tfn/ops.hpp"
#include "tfn/training.hpp"

namespace tfn {

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

bool any_near(const Tensor& t, double at, double eps) {
  for (double v : t.values())
    if (std::abs(v - at) < eps) return true;
  return false;
}

struct OpCase {
  std::string name;
  ConfigSampler sample;
  KinkPredicate kink;
  OpUnderTest op;
};

ConfigSampler shapes(std::vector<Shape> s, double lo = -2.0, double hi = 2.0) {
  return [s, lo, hi](std::mt19937_64& rng) {
    std::vector<Tensor> out;
    for (const auto& shape : s) out.push_back(random_tensor(rng, shape, lo, hi));
    return out;
  };
}

constexpr double kKink = 1e-3;

std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  c.push_back({"matmul", shapes({{3, 4}, {4, 2}}), {}, [](auto& in) { return matmul(in[0], in[1]); }});
  c.push_back({"matvec", shapes({{3, 4}, {4}}), {}, [](auto& in) { return matvec(in[0], in[1]); }});
  c.push_back({"add", shapes({{2, 3}, {2, 3}}), {}, [](auto& in) { return add(in[0], in[1]); }});
  c.push_back({"sub", shapes({{2, 3}, {2, 3}}), {}, [](auto& in) { return sub(in[0], in[1]); }});
  c.push_back({"mul", shapes({{2, 3}, {2, 3}}), {}, [](auto& in) { return mul(in[0], in[1]); }});
  c.push_back({"scale", shapes({{2, 3}}), {}, [](auto& in) { return scale(in[0], -1.7); }});
  c.push_back({"add_scalar", shapes({{4}}), {}, [](auto& in) { return add_scalar(in[0], 0.3); }});
  c.push_back({"pow_scalar", shapes({{4}}, 0.5, 2.0), {}, [](auto& in) {
                 return add(pow_scalar(in[0], 2.5), pow_scalar(in[0], -0.5));
               }});
  c.push_back({"relu", shapes({{2, 4}}), [](auto& in) { return any_near(in[0], 0.0, kKink); },
               [](auto& in) { return relu(in[0]); }});
  c.push_back({"sigmoid", shapes({{2, 4}}), {}, [](auto& in) { return sigmoid(in[0]); }});
  c.push_back({"tanh", shapes({{2, 4}}), {}, [](auto& in) { return tfn::tanh(in[0]); }});
  c.push_back({"minimum", shapes({{5}, {5}}), [](auto& in) { return any_near(sub(in[0], in[1]), 0.0, kKink); },
               [](auto& in) { return minimum(in[0], in[1]); }});
  c.push_back({"add_row_vector", shapes({{4, 3}, {3}}), {}, [](auto& in) { return add_row_vector(in[0], in[1]); }});
  c.push_back({"mul_row_vector", shapes({{4, 3}, {3}}), {}, [](auto& in) { return mul_row_vector(in[0], in[1]); }});
  c.push_back({"tile_rows", shapes({{3}}), {}, [](auto& in) { return tile_rows(in[0], 4); }});
  c.push_back({"sum", shapes({{4, 3}}), {}, [](auto& in) { return sum(in[0]); }});
  c.push_back({"mean", shapes({{4, 3}}), {}, [](auto& in) { return mean(in[0]); }});
  c.push_back({"mean_rows", shapes({{4, 3}}), {}, [](auto& in) { return mean_rows(in[0]); }});
  c.push_back({"reduce_max_over_points", shapes({{5, 3}}),
               [](auto& in) {
                 const Tensor& x = in[0];
                 for (std::size_t col = 0; col < x.dim(1); ++col) {
                   std::vector<double> v;
                   for (std::size_t r = 0; r < x.dim(0); ++r) v.push_back(x.at(r, col));
                   std::sort(v.rbegin(), v.rend());
                   if (v[0] - v[1] < kKink) return true;
                 }
                 return false;
               },
               [](auto& in) { return reduce_max_over_points(in[0]); }});
  c.push_back({"reshape", shapes({{2, 3}}), {}, [](auto& in) { return reshape(in[0], {3, 2}); }});
  c.push_back({"slice", shapes({{6}}), {}, [](auto& in) { return slice(in[0], 1, 4); }});
  c.push_back({"concat", shapes({{2}, {3}}), {}, [](auto& in) { return concat({in[0], in[1]}); }});
  c.push_back({"concat_cols", shapes({{3, 2}, {3, 1}}), {}, [](auto& in) { return concat_cols(in[0], in[1]); }});
  c.push_back({"huber_loss", shapes({{6}, {6}}),
               [](auto& in) {
                 const Tensor r = sub(in[0], in[1]);
                 return any_near(r, 1.0, kKink) || any_near(r, -1.0, kKink);
               },
               [](auto& in) { return huber_loss(in[0], in[1], 1.0); }});
  c.push_back({"softmax_cross_entropy", shapes({{5}}), {}, [](auto& in) { return softmax_cross_entropy(in[0], 2); }});
  c.push_back({"softmax_cross_entropy_rows", shapes({{4, 3}}), {},
               [](auto& in) { return softmax_cross_entropy_rows(in[0], {0, 2, 1, 1}); }});
  c.push_back({"cosine_distance", shapes({{4}, {4}}), {}, [](auto& in) { return cosine_distance(in[0], in[1]); }});
  c.push_back({"dense", shapes({{3}, {3, 4}, {4}}), {}, [](auto& in) { return dense(in[0], in[1], in[2]); }});
  c.push_back({"dense_rows", shapes({{5, 3}, {3, 4}, {4}}), {}, [](auto& in) { return dense_rows(in[0], in[1], in[2]); }});
  c.push_back({"gru_cell", shapes({{3}, {4}, {4, 3}, {4, 3}, {4, 3}, {4, 4}, {4, 4}, {4, 4}, {4}, {4}, {4}}), {},
               [](auto& in) {
                 GruParams p{in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9], in[10]};
                 return gru_cell(in[0], in[1], p);
               }});
  c.push_back({"box_corners",
               [](std::mt19937_64& rng) {
                 return std::vector<Tensor>{random_tensor(rng, {3}), random_tensor(rng, {1}, -3.0, 3.0),
                                            random_tensor(rng, {3}, 0.5, 4.0)};
               },
               {}, [](auto& in) { return training::box_corners(in[0], in[1], in[2]); }});

  geometry::Box3D gt;
  gt.h = 1.5;
  gt.w = 1.6;
  gt.l = 3.9;
  gt.cx = 0.2;
  gt.cy = 1.0;
  gt.cz = 0.3;
  gt.heading = 0.4;
  auto corner_inputs = [](std::mt19937_64& rng) {
    return std::vector<Tensor>{random_tensor(rng, {3}, -0.5, 0.5), random_tensor(rng, {1}, -3.0, 3.0),
                               random_tensor(rng, {3}, 1.0, 4.0)};
  };
  auto corner_kink = [gt](const std::vector<Tensor>& in) {
    NoGradScope ng;
    const Tensor pred = training::box_corners(in[0], in[1], in[2]);
    geometry::Box3D flipped = gt;
    flipped.heading += geometry::kPi;
    double d[2] = {0, 0};
    int which = 0;
    for (const auto& b : {gt, flipped}) {
      const auto corners = geometry::box3d_corners(b);
      for (std::size_t k = 0; k < 8; ++k)
        for (std::size_t j = 0; j < 3; ++j) {
          const double r = std::abs(pred.at(k, j) - corners[k][static_cast<Eigen::Index>(j)]);
          if (std::abs(r - 1.0) < kKink) return true;
          d[which] += r < 1.0 ? 0.5 * r * r : r - 0.5;
        }
      ++which;
    }
    return std::abs(d[0] - d[1]) / 24.0 < kKink;
  };
  c.push_back({"corner_loss", corner_inputs, corner_kink,
               [gt](auto& in) { return training::corner_loss(in[0], in[1], in[2], gt, 1.0); }});
  return c;
}

struct EndToEndCase {
  std::string name;
  model::Branching branching;
  bool with_center;
  bool normalization;
};

// True when a finite-difference step could flip a segmentation mask decision.
bool mask_margin_too_small(const model::Detector& det, const data::SequenceSample& s) {
  NoGradScope ng;
  const model::ModelOutput out = det.full_forward(s);
  for (const auto& logits : out.seg_logits)
    for (std::size_t i = 0; i < logits.dim(0); ++i)
      if (std::abs(logits.at(i, 1) - logits.at(i, 0)) < 1e-4) return true;
  return false;
}

}  // namespace

data::SequenceSample make_toy_sample(std::mt19937_64& rng, std::size_t num_points, int frames,
                                     const geometry::BoxCoder& coder) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> cls_pick(0, data::kNumClasses - 1);
  data::SequenceSample s;
  s.drive_id = 0;
  s.track_id = 1;
  const int k = cls_pick(rng);
  s.cls = data::class_from_index(k);
  s.one_hot[static_cast<std::size_t>(k)] = 1.0;
  for (int f = 0; f < frames; ++f) {
    data::FrameSample fs;
    fs.frame = f;
    fs.frustum_angle = 0.3 * u(rng);
    fs.points.frame = geometry::Frame::frustum_rotated;
    for (std::size_t i = 0; i < num_points; ++i) {
      fs.points.points.emplace_back(u(rng), 1.0 + 0.8 * u(rng), 10.0 + u(rng));
      fs.seg_labels.push_back(u(rng) > 0 ? 1 : 0);
    }
    fs.raw_frustum_size = num_points;
    s.frames.push_back(std::move(fs));
  }
  const geometry::Vec3& anchor = coder.anchors()[static_cast<std::size_t>(k % coder.num_size_classes())];
  geometry::Box3D local;
  local.h = anchor.x() * (1.0 + 0.1 * u(rng));
  local.w = anchor.y() * (1.0 + 0.1 * u(rng));
  local.l = anchor.z() * (1.0 + 0.1 * u(rng));
  local.cx = 0.3 * u(rng);
  local.cy = 1.6 + 0.1 * u(rng);
  local.cz = 10.0 + 0.3 * u(rng);
  local.heading = geometry::kPi * u(rng);
  const double angle = s.frames.back().frustum_angle;
  s.record.frame = frames - 1;
  s.record.track_id = 1;
  s.record.cls = s.cls;
  s.record.type = std::string(data::class_name(s.cls));
  s.record.box3d = geometry::box_from_frustum(local, angle);
  s.targets = coder.encode(s.record.box3d, k % coder.num_size_classes(), angle, geometry::Vec3::Zero(),
                           geometry::Vec3::Zero());
  for (auto& fs : s.frames) fs.gt_box = s.record.box3d;
  return s;
}

model::ModelConfig toy_model_config(int tau, model::Branching branching, bool with_center) {
  model::ModelConfig cfg;
  cfg.tau = tau;
  cfg.branching = branching;
  cfg.with_center_concat = with_center;
  cfg.feature_dim = 16;
  cfg.widths = model::Widths::toy();
  return cfg;
}

std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed, int configs_per_op) {
  std::vector<GradcheckEntry> out;
  GradcheckOptions opt;
  opt.seed = seed;
  std::uint64_t op_seed = seed;
  for (const auto& c : op_cases()) {
    const double err = gradcheck_random_configs(c.sample, c.kink, c.op, configs_per_op, ++op_seed, opt);
    out.push_back({c.name, err, kOpTolerance});
  }

  const std::vector<EndToEndCase> e2e{
      {"end_to_end_ours", model::Branching::ours, false, false},
      {"end_to_end_ob", model::Branching::ob, false, false},
      {"end_to_end_tb", model::Branching::tb, false, false},
      {"end_to_end_ours_center_concat", model::Branching::ours, true, false},
      {"end_to_end_ours_normalized", model::Branching::ours, false, true},
  };
  training::LossConfig loss;
  loss.weights.fill(1.0);
  std::mt19937_64 rng(seed);
  for (const auto& c : e2e) {
    model::ModelConfig cfg = toy_model_config(3, c.branching, c.with_center);
    cfg.normalization = c.normalization;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100) throw Error("gradcheck: could not draw a sample away from mask decision boundaries");
      model::Detector det(cfg, rng());
      // Zero-initialised biases put dead units' successors exactly on the
      // relu kink, so move every bias off zero first.
      std::uniform_real_distribution<double> jitter(-0.1, 0.1);
      for (auto& [path, t] : det.params().all())
        if (path.ends_with("/b") || path.find("/b_") != std::string::npos)
          for (auto& v : t.mutable_values()) v = jitter(rng);
      const data::SequenceSample sample = make_toy_sample(rng, 8, 3, cfg.coder());
      if (mask_margin_too_small(det, sample)) continue;
      std::vector<Tensor> wrt;
      for (auto& [path, t] : det.params().all()) wrt.push_back(t);
      const double err = finite_difference_gradcheck(
          [&] { return training::compute_total_loss(det.full_forward(sample), sample, cfg, loss).total; }, wrt, opt);
      out.push_back({c.name, err, kEndToEndTolerance});
      break;
    }
  }
  return out;
}

}  // namespace tfn
