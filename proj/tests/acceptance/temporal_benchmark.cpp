// SPDX-License-Identifier: Apache-2.0
#include "temporal_benchmark.hpp"

#include <chrono>
#include <set>
#include <tuple>

#include "tfn/data.hpp"
#include "tfn/gradcheck_suite.hpp"
#include "tfn/training.hpp"

namespace tfn::bench {

namespace {

using Key = std::tuple<int, int, int>;  // drive, track, frame

struct Corpus {
  std::vector<data::DriveRecord> drives;
  std::set<Key> occluded;
};

Corpus make_corpus(const TemporalBenchConfig& cfg, std::uint64_t seed) {
  Corpus c;
  for (int d = 0; d < cfg.drives; ++d) {
    data::SynthConfig sc;
    sc.drive_id = d;
    sc.num_objects = cfg.objects_per_drive;
    sc.num_frames = cfg.frames;
    sc.ground_points = cfg.ground_points;
    sc.size_jitter = cfg.size_jitter;
    sc.seed = data::derive_seed(seed, 0x6472697665ull, static_cast<std::uint64_t>(d));
    data::script_random_occlusions(sc, cfg.windows_per_track, cfg.window_min, cfg.window_max, cfg.drop_min,
                                   cfg.drop_max, data::derive_seed(sc.seed, 1));
    for (const auto& w : sc.occlusions)
      for (int f = w.first_frame; f <= w.last_frame; ++f) c.occluded.insert({d, w.track_id, f});
    c.drives.push_back(data::synth_generate(sc));
  }
  return c;
}

bool is_occluded(const Corpus& c, const data::SequenceSample& s) {
  return c.occluded.count({s.drive_id, s.track_id, s.newest().frame}) != 0;
}

struct Scores {
  double iou = 0;
  double center_error = 0;
  double size_error = 0;
};

Scores score(const model::Detector& det, const std::vector<data::SequenceSample>& samples) {
  Scores sc;
  for (const auto& s : samples) {
    const geometry::Box3D p = training::predict(det, s).box;
    const geometry::Box3D& g = s.record.box3d;
    sc.iou += geometry::iou3d(p, g);
    sc.center_error += (p.center() - g.center()).norm();
    sc.size_error += (std::abs(p.h - g.h) / g.h + std::abs(p.w - g.w) / g.w + std::abs(p.l - g.l) / g.l) / 3.0;
  }
  if (!samples.empty()) {
    const double n = static_cast<double>(samples.size());
    sc.iou /= n;
    sc.center_error /= n;
    sc.size_error /= n;
  }
  return sc;
}

}  // namespace

TemporalBenchSeed run_temporal_seed(const TemporalBenchConfig& cfg, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const Corpus corpus = make_corpus(cfg, seed);

  std::vector<const data::DriveRecord*> train_drives;
  for (int d = 0; d < cfg.drives - cfg.test_drives; ++d) train_drives.push_back(&corpus.drives[static_cast<std::size_t>(d)]);

  model::ModelConfig mc = toy_model_config(3, model::Branching::ours, false);
  mc.anchors = data::class_mean_sizes(train_drives, data::SynthConfig{}.class_sizes);
  const geometry::BoxCoder coder = mc.coder();

  data::SequenceOptions so;
  so.tau = 3;
  so.num_points = cfg.points;
  so.seed = seed;
  std::vector<data::SequenceSample> train_samples, test_samples;
  for (std::size_t d = 0; d < corpus.drives.size(); ++d) {
    auto built = data::build_sequence_samples(corpus.drives[d], so, coder);
    const bool test = static_cast<int>(d) >= cfg.drives - cfg.test_drives;
    for (auto& s : built.samples) {
      const bool occ = is_occluded(corpus, s);
      if (test) {
        if (occ) test_samples.push_back(std::move(s));
      } else if (occ || s.newest().frame % cfg.train_stride == 0) {
        train_samples.push_back(std::move(s));
      }
    }
  }

  training::TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.seed = seed;
  tc.val_every = 0;

  TemporalBenchSeed r;
  r.seed = seed;
  r.occluded_samples = test_samples.size();
  for (int tau : {1, 3}) {
    mc.tau = tau;
    model::Detector det(mc, data::derive_seed(seed, 0x6d6f64656cull));
    training::train(det, train_samples, {}, tc, {});
    const Scores sc = score(det, test_samples);
    const std::size_t k = tau == 1 ? 0 : 1;
    r.iou[k] = sc.iou;
    r.center_error[k] = sc.center_error;
    r.size_error[k] = sc.size_error;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace tfn::bench
