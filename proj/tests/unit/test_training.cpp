// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "tfn/gradcheck_suite.hpp"
#include "tfn/ops.hpp"
#include "tfn/training.hpp"

using namespace tfn;
using namespace tfn::training;
namespace fs = std::filesystem;

namespace {

std::vector<double> values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Head vector that decodes exactly to the targets.
std::vector<double> perfect_head(const geometry::BoxTargets& t, const geometry::HeadLayout& lay, double sat) {
  std::vector<double> h(lay.total(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) h[i] = t.center_residual[static_cast<Eigen::Index>(i)];
  h[lay.heading_scores() + static_cast<std::size_t>(t.heading_bin)] = sat;
  h[lay.heading_residuals() + static_cast<std::size_t>(t.heading_bin)] = t.heading_residual;
  h[lay.size_scores() + static_cast<std::size_t>(t.size_class)] = sat;
  for (std::size_t i = 0; i < 3; ++i)
    h[lay.size_residuals() + 3 * static_cast<std::size_t>(t.size_class) + i] = t.size_residual[static_cast<Eigen::Index>(i)];
  return h;
}

data::DriveRecord small_drive(std::uint64_t seed, int objects = 3, int frames = 10) {
  data::SynthConfig cfg;
  cfg.num_objects = objects;
  cfg.num_frames = frames;
  cfg.point_density = 600.0;
  cfg.seed = seed;
  return data::synth_generate(cfg);
}

std::vector<data::SequenceSample> samples_of(const data::DriveRecord& d, const model::ModelConfig& cfg,
                                             std::size_t points = 24) {
  data::SequenceOptions so;
  so.tau = cfg.tau;
  so.num_points = points;
  return data::build_sequence_samples(d, so, cfg.coder()).samples;
}

LossConfig all_on() {
  LossConfig l;
  l.weights.fill(1.0);
  return l;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("box corners tensor matches the geometry corners and the corner loss") {
  std::mt19937_64 rng(50);
  for (int t = 0; t < 20; ++t) {
    geometry::Box3D b;
    const auto v = oracle::uniform(rng, 7, 0.5, 3.0);
    b.h = v[0];
    b.w = v[1];
    b.l = v[2];
    b.cx = v[3] - 1.5;
    b.cy = v[4];
    b.cz = v[5] * 4;
    b.heading = (v[6] - 1.75) * 2;
    const Tensor c = box_corners(Tensor::vector({b.cx, b.cy, b.cz}), Tensor::vector({b.heading}),
                                 Tensor::vector({b.h, b.w, b.l}));
    const auto want = geometry::box3d_corners(b);
    for (std::size_t k = 0; k < 8; ++k)
      for (std::size_t j = 0; j < 3; ++j) CHECK(c.at(k, j) == doctest::Approx(want[k][static_cast<Eigen::Index>(j)]).epsilon(1e-12));

    const Tensor zero = corner_loss(Tensor::vector({b.cx, b.cy, b.cz}), Tensor::vector({b.heading}),
                                    Tensor::vector({b.h, b.w, b.l}), b, 1.0);
    CHECK(zero.item() == doctest::Approx(0.0).epsilon(1e-12));
    // The flipped box has the same corners, so it also scores zero.
    const Tensor flipped = corner_loss(Tensor::vector({b.cx, b.cy, b.cz}), Tensor::vector({b.heading + geometry::kPi}),
                                       Tensor::vector({b.h, b.w, b.l}), b, 1.0);
    CHECK(flipped.item() < 1e-12);
  }
}

TEST_CASE("loss terms against an independent re-computation") {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 5; ++trial) {
    const model::ModelConfig cfg = toy_model_config(3, model::Branching::ours, false);
    const auto lay = cfg.layout();
    const data::SequenceSample s = make_toy_sample(rng, 8, 3, cfg.coder());
    const model::Detector det(cfg, 100 + static_cast<std::uint64_t>(trial));
    const model::ModelOutput out = det.full_forward(s);
    LossConfig lc = all_on();
    const LossBreakdown lb = compute_total_loss(out, s, cfg, lc);

    double seg = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const Tensor& l = out.seg_logits[k];
      double ce = 0;
      for (std::size_t i = 0; i < l.dim(0); ++i)
        ce += oracle::cross_entropy({l.at(i, 0), l.at(i, 1)}, static_cast<std::size_t>(s.frames[k].seg_labels[i]));
      seg += ce / static_cast<double>(l.dim(0)) / 3.0;
    }
    CHECK(lb.terms[kSeg] == doctest::Approx(seg).epsilon(1e-10));

    const auto h = values(out.head);
    const auto dc = values(out.tnet_center.back());
    const geometry::Vec3 target = s.targets.center_residual - out.mask_centroids.back();
    double center = 0;
    for (int i = 0; i < 3; ++i) {
      center += oracle::huber(dc[static_cast<std::size_t>(i)] - target[i], 1.0) / 3.0;
      center += oracle::huber(dc[static_cast<std::size_t>(i)] + h[static_cast<std::size_t>(i)] - target[i], 1.0) / 3.0;
    }
    CHECK(lb.terms[kCenter] == doctest::Approx(center).epsilon(1e-10));

    const std::vector<double> hs(h.begin() + 3, h.begin() + 15);
    CHECK(lb.terms[kHeadingClass] == doctest::Approx(oracle::cross_entropy(hs, static_cast<std::size_t>(s.targets.heading_bin))).epsilon(1e-10));
    CHECK(lb.terms[kHeadingResidual] ==
          doctest::Approx(oracle::huber(h[lay.heading_residuals() + static_cast<std::size_t>(s.targets.heading_bin)] - s.targets.heading_residual, 1.0)).epsilon(1e-10));
    const std::vector<double> ss(h.begin() + 27, h.begin() + 30);
    CHECK(lb.terms[kSizeClass] == doctest::Approx(oracle::cross_entropy(ss, static_cast<std::size_t>(s.targets.size_class))).epsilon(1e-10));
    double sr = 0;
    for (int i = 0; i < 3; ++i)
      sr += oracle::huber(h[lay.size_residuals() + 3 * static_cast<std::size_t>(s.targets.size_class) + static_cast<std::size_t>(i)] - s.targets.size_residual[i], 1.0) / 3.0;
    CHECK(lb.terms[kSizeResidual] == doctest::Approx(sr).epsilon(1e-10));

    double cos = 0;
    for (std::size_t k = 1; k < 3; ++k) cos += oracle::cosine_distance(values(out.features[k]), values(out.features[k - 1])) / 2.0;
    CHECK(lb.terms[kCosine] == doctest::Approx(cos).epsilon(1e-10));

    double total = 0;
    for (double t : lb.terms) {
      CHECK(t >= 0.0);
      total += t;
    }
    CHECK(lb.total.item() == doctest::Approx(total).epsilon(1e-10));

    // Raising one weight never lowers the total.
    for (int t = 0; t < kNumLossTerms; ++t) {
      LossConfig more = lc;
      more.weights[static_cast<std::size_t>(t)] += 0.5;
      CHECK(compute_total_loss(out, s, cfg, more).total.item() >= lb.total.item());
    }
  }
}

TEST_CASE("perfect outputs give a near-zero loss") {
  std::mt19937_64 rng(52);
  const model::ModelConfig cfg = toy_model_config(2, model::Branching::ours, false);
  const data::SequenceSample s = make_toy_sample(rng, 6, 2, cfg.coder());
  model::ModelOutput out;
  const geometry::Vec3 centroid(0.1, 1.0, 10.0);
  for (const auto& f : s.frames) {
    std::vector<double> l;
    for (int lab : f.seg_labels) {
      l.push_back(lab ? -50.0 : 50.0);
      l.push_back(lab ? 50.0 : -50.0);
    }
    out.seg_logits.push_back(Tensor::matrix(f.seg_labels.size(), 2, l));
    const geometry::Vec3 dc = s.targets.center_residual - centroid;
    out.tnet_center.push_back(Tensor::vector({dc.x(), dc.y(), dc.z()}));
    out.mask_centroids.push_back(centroid);
    out.features.push_back(Tensor::vector({1.0, 2.0, 3.0}));
  }
  geometry::BoxTargets t = s.targets;
  t.center_residual.setZero();
  out.head = Tensor::vector(perfect_head(t, cfg.layout(), 50.0));
  LossConfig lc = all_on();
  const LossBreakdown lb = compute_total_loss(out, s, cfg, lc);
  CHECK(lb.total.item() < 1e-3);
  // Identical consecutive features contribute exactly zero.
  CHECK(lb.terms[kCosine] == 0.0);
}

TEST_CASE("cosine weight zero reproduces the plain gradients bitwise") {
  std::mt19937_64 rng(53);
  const model::ModelConfig cfg = toy_model_config(3, model::Branching::tb, false);
  const data::SequenceSample s = make_toy_sample(rng, 8, 3, cfg.coder());
  model::Detector det(cfg, 7);
  auto grads = [&](const LossConfig& lc) {
    det.params().zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(compute_total_loss(det.full_forward(s), s, cfg, lc).total);
    std::vector<double> g;
    for (const auto& [path, t] : det.params().all()) g.insert(g.end(), t.grad().begin(), t.grad().end());
    return g;
  };
  LossConfig plain;
  LossConfig with_cos_zero;
  with_cos_zero.weight(kCosine) = 0.0;
  CHECK(grads(plain) == grads(with_cos_zero));
  LossConfig with_cos;
  with_cos.weight(kCosine) = 1.0;
  CHECK(grads(plain) != grads(with_cos));
}

TEST_CASE("cosine term has zero gradient for parallel features") {
  const Tensor u = Tensor::vector({1.0, 2.0, -1.0}, true);
  const Tensor w = Tensor::vector({2.0, 4.0, -2.0}, true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(cosine_distance(u, w));
  for (double g : u.grad()) CHECK(std::abs(g) < 1e-15);
  for (double g : w.grad()) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("one small Adam step lowers the sample loss") {
  std::mt19937_64 rng(54);
  const model::ModelConfig cfg = toy_model_config(3, model::Branching::ours, false);
  const data::SequenceSample s = make_toy_sample(rng, 8, 3, cfg.coder());
  model::Detector det(cfg, 8);
  const LossConfig lc;
  double before;
  {
    Tape tape;
    TapeScope scope(tape);
    const LossBreakdown lb = compute_total_loss(det.full_forward(s), s, cfg, lc);
    before = lb.total.item();
    tape.backward(lb.total);
  }
  AdamOptimizer opt({1e-4, 0.9, 0.999, 1e-8});
  opt.step(det.params());
  NoGradScope ng;
  CHECK(compute_total_loss(det.full_forward(s), s, cfg, lc).total.item() < before);
}

TEST_CASE("training loop: descent, determinism, errors") {
  model::ModelConfig cfg = toy_model_config(2, model::Branching::ours, false);
  const data::DriveRecord drive = small_drive(3, 4, 16);
  auto samples = samples_of(drive, cfg);
  REQUIRE(samples.size() >= 48);
  samples.resize(std::min<std::size_t>(samples.size(), 64));

  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.lr = 1e-3;
  tc.val_every = 0;
  auto run = [&] {
    model::Detector det(cfg, 9);
    return train(det, samples, {}, tc);
  };
  const TrainResult a = run(), b = run();
  REQUIRE(a.log.size() == 2);
  CHECK(a.log[1].total < a.log[0].total);
  CHECK(a.log[0].total == b.log[0].total);
  CHECK(a.log[1].terms == b.log[1].terms);

  model::Detector det(cfg, 9);
  CHECK_THROWS_AS(train(det, {}, {}, tc), Error);
  TrainConfig bad = tc;
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(det, samples, {}, bad), Error);
}

TEST_CASE("divergence is reported with epoch and batch") {
  model::ModelConfig cfg = toy_model_config(1, model::Branching::ob, false);
  auto samples = samples_of(small_drive(4), cfg, 8);
  samples.resize(4);
  model::Detector det(cfg, 10);
  det.params().get("head/b/out/b").mutable_values()[0] = std::nan("");
  TrainConfig tc;
  tc.epochs = 1;
  tc.val_every = 0;
  CHECK_THROWS_WITH_AS(train(det, samples, {}, tc), doctest::Contains("epoch 1, batch 0"), NumericError);
}

TEST_CASE("checkpoints, logs and checkpoint evaluation") {
  const fs::path dir = fs::temp_directory_path() / "tfn_train_test";
  fs::remove_all(dir);
  model::ModelConfig cfg = toy_model_config(2, model::Branching::tb, true);
  const data::DriveRecord train_drive = small_drive(5), val_drive = small_drive(6);
  auto samples = samples_of(train_drive, cfg, 16);
  data::SequenceOptions so;
  so.tau = 2;
  so.num_points = 16;
  const EvalSet val = make_eval_set({&val_drive}, so, cfg.coder());
  CHECK(!val.gts.empty());
  CHECK(val.calibs.count(val_drive.drive_id) == 1);

  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  tc.out_dir = dir.string();
  model::Detector det(cfg, 11);
  const TrainResult r = train(det, samples, val, tc);
  CHECK(fs::exists(dir / "ckpt_1.tfn"));
  CHECK(fs::exists(dir / "ckpt_2.cfg"));
  CHECK(fs::exists(dir / "best.tfn"));
  CHECK(r.best_epoch >= 1);

  std::ifstream log(dir / "train_log.tsv");
  std::string header, row;
  std::getline(log, header);
  CHECK(header == log_header());
  int rows = 0;
  while (std::getline(log, row)) ++rows;
  CHECK(rows == 2);

  const model::Detector back = load_checkpoint((dir / "ckpt_2.tfn").string());
  CHECK(back.config() == cfg);
  CHECK(back.params().to_archive() == det.params().to_archive());

  const auto ev = evaluate_checkpoint((dir / "ckpt_2.tfn").string(), val, std::nullopt, model::Branching::tb);
  CHECK(ev.detections.size() == val.samples.size());
  CHECK_THROWS_WITH_AS(evaluate_checkpoint((dir / "ckpt_2.tfn").string(), val, std::nullopt, model::Branching::ob),
                       doctest::Contains("branching"), Error);

  // A tau override of 1 evaluates only the newest frame.
  const auto one = evaluate_checkpoint((dir / "ckpt_2.tfn").string(), val, 1, std::nullopt);
  model::Detector manual = load_checkpoint((dir / "ckpt_2.tfn").string());
  manual.set_tau(1);
  const auto p = predict(manual, val.samples.front());
  CHECK(one.detections.front().box.cx == p.box.cx);
  CHECK(one.detections.front().score == p.score);
  fs::remove_all(dir);
}

TEST_CASE("perfect head outputs decode to the ground truth") {
  model::ModelConfig cfg = toy_model_config(3, model::Branching::ours, false);
  const data::DriveRecord d = small_drive(7);
  const auto coder = cfg.coder();
  for (const auto& s : samples_of(d, cfg)) {
    const geometry::Box3D b = coder.decode(perfect_head(s.targets, cfg.layout(), 10.0), geometry::Vec3::Zero(),
                                           geometry::Vec3::Zero(), s.newest().frustum_angle);
    CHECK(geometry::iou3d(b, s.record.box3d) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

}  // TEST_SUITE
