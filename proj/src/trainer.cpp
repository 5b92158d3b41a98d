// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "tfn/ops.hpp"
#include "tfn/training.hpp"

namespace tfn::training {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error("batch size must be at least 1");
  if (epochs < 1) throw Error("epochs must be at least 1");
  if (!(lr > 0)) throw Error("learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) throw Error("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw Error("beta2 must lie in [0, 1)");
  if (val_every < 0) throw Error("val_every must be non-negative");
  loss.validate();
}

EvalSet make_eval_set(const std::vector<const data::DriveRecord*>& drives, const data::SequenceOptions& opt,
                      const geometry::BoxCoder& coder) {
  EvalSet set;
  for (const auto* d : drives) {
    auto built = data::build_sequence_samples(*d, opt, coder);
    for (auto& s : built.samples) set.samples.push_back(std::move(s));
    for (const auto& frame : d->labels)
      for (const auto& r : frame) set.gts.push_back({d->drive_id, r});
    set.calibs[d->drive_id] = d->calib;
  }
  return set;
}

Prediction predict(const model::Detector& det, const data::SequenceSample& sample) {
  NoGradScope no_grad;
  const data::SequenceSample s = data::truncate_history(sample, det.config().tau);
  const model::ModelOutput out = det.full_forward(s);
  Prediction p;
  geometry::DecodeStats stats;
  p.box = det.decode(out, s, &stats);
  p.score = det.confidence(out);
  p.mask_fallbacks = out.mask_fallbacks;
  return p;
}

std::vector<eval::Detection> detect(const model::Detector& det, const std::vector<data::SequenceSample>& samples,
                                    const std::map<int, geometry::Calibration>& calibs) {
  std::vector<eval::Detection> dets;
  dets.reserve(samples.size());
  for (const auto& s : samples) {
    const Prediction p = predict(det, s);
    eval::Detection d;
    d.drive_id = s.drive_id;
    d.frame = s.newest().frame;
    d.cls = s.cls;
    d.box = p.box;
    d.score = p.score;
    d.track_id = s.track_id;
    if (auto it = calibs.find(s.drive_id); it != calibs.end()) d.box2d = geometry::project_box(p.box, it->second);
    dets.push_back(d);
  }
  return dets;
}

std::string log_header() {
  std::string h = "epoch\ttotal";
  for (const char* n : kLossTermNames) h += std::string("\t") + n;
  for (int k = 0; k < data::kNumClasses; ++k)
    for (auto d : eval::kDifficulties)
      h += "\tap_" + std::string(data::class_name(data::class_from_index(k))) + "_" + std::string(eval::difficulty_name(d));
  return h + "\tap_moderate_mean";
}

std::string log_row(const EpochLog& e) {
  char buf[64];
  std::string row = std::to_string(e.epoch);
  std::snprintf(buf, sizeof buf, "\t%.10g", e.total);
  row += buf;
  for (double t : e.terms) {
    std::snprintf(buf, sizeof buf, "\t%.10g", t);
    row += buf;
  }
  for (int k = 0; k < data::kNumClasses; ++k)
    for (auto d : eval::kDifficulties) {
      const auto ap = eval::find_ap(e.val, data::class_from_index(k), d);
      if (ap) {
        std::snprintf(buf, sizeof buf, "\t%.6f", *ap);
        row += buf;
      } else {
        row += "\t-";
      }
    }
  std::snprintf(buf, sizeof buf, "\t%.6f", e.val_moderate);
  return row + buf;
}

namespace {

fs::path config_path(const std::string& path) { return fs::path(path).replace_extension(".cfg"); }

}  // namespace

void save_checkpoint(const model::Detector& det, const std::string& path) {
  save_archive(path, det.params().to_archive());
  std::ofstream os(config_path(path));
  if (!os) throw Error("cannot write checkpoint config next to " + path);
  os << det.config().to_text();
}

model::Detector load_checkpoint(const std::string& path) {
  std::ifstream is(config_path(path));
  if (!is) throw Error("checkpoint config " + config_path(path).string() + " not found");
  model::Detector det(model::ModelConfig::from_text(is), 0);
  det.params().load(load_archive(path));
  return det;
}

TrainResult train(model::Detector& det, const std::vector<data::SequenceSample>& train_samples, const EvalSet& val,
                  const TrainConfig& tc, const std::function<void(const EpochLog&)>& on_epoch) {
  tc.validate();
  if (train_samples.empty()) throw Error("training set is empty");
  const int tau = det.config().tau;
  std::vector<data::SequenceSample> samples;
  samples.reserve(train_samples.size());
  for (const auto& s : train_samples) samples.push_back(data::truncate_history(s, tau));

  std::ofstream log;
  if (!tc.out_dir.empty()) {
    fs::create_directories(tc.out_dir);
    log.open(fs::path(tc.out_dir) / "train_log.tsv");
    if (!log) throw Error("cannot write metric log in " + tc.out_dir);
    log << log_header() << '\n';
  }

  AdamOptimizer opt({tc.lr, tc.beta1, tc.beta2, 1e-8});
  TrainResult result;
  const std::size_t fallbacks_before = det.mask_fallback_count();
  std::vector<std::size_t> order(samples.size());
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(data::derive_seed(tc.seed, 0x7368756666ull, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog e;
    e.epoch = epoch;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      det.params().zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = samples[order[i]];
        Tape tape;
        TapeScope scope(tape);
        const model::ModelOutput out = det.full_forward(s);
        LossBreakdown lb;
        try {
          lb = compute_total_loss(out, s, det.config(), tc.loss);
        } catch (const NumericError& err) {
          throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index) + ": " + err.what());
        }
        tape.backward(scale(lb.total, inv));
        e.total += lb.total.item();
        for (std::size_t t = 0; t < lb.terms.size(); ++t) e.terms[t] += lb.terms[t];
      }
      try {
        opt.step(det.params());
      } catch (const NumericError& err) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + err.what());
      }
    }
    const double n = static_cast<double>(samples.size());
    e.total /= n;
    for (auto& t : e.terms) t /= n;

    const bool run_val = !val.samples.empty() && tc.val_every > 0 && (epoch % tc.val_every == 0 || epoch == tc.epochs);
    if (run_val) {
      e.val = eval::evaluate(detect(det, val.samples, val.calibs), val.gts, tc.interp);
      e.val_moderate = eval::mean_moderate_ap(e.val);
    }
    if (!tc.out_dir.empty()) {
      const std::string ckpt = (fs::path(tc.out_dir) / ("ckpt_" + std::to_string(epoch) + ".tfn")).string();
      save_checkpoint(det, ckpt);
      log << log_row(e) << '\n';
      log.flush();
    }
    if (run_val && e.val_moderate > result.best_moderate_ap) {
      result.best_moderate_ap = e.val_moderate;
      result.best_epoch = epoch;
      if (!tc.out_dir.empty()) save_checkpoint(det, (fs::path(tc.out_dir) / "best.tfn").string());
    }
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  result.mask_fallbacks = det.mask_fallback_count() - fallbacks_before;
  return result;
}

CheckpointEval evaluate_checkpoint(const std::string& path, const EvalSet& val, std::optional<int> tau,
                                   std::optional<model::Branching> branching, eval::Interp interp) {
  model::Detector det = load_checkpoint(path);
  if (branching && *branching != det.config().branching) {
    throw Error("checkpoint " + path + " was trained with branching " +
                std::string(model::branching_name(det.config().branching)) + ", requested " +
                std::string(model::branching_name(*branching)));
  }
  if (tau) det.set_tau(*tau);
  CheckpointEval res;
  res.detections = detect(det, val.samples, val.calibs);
  res.results = eval::evaluate(res.detections, val.gts, interp);
  return res;
}

}  // namespace tfn::training
