// SPDX-License-Identifier: Apache-2.0
#include "tfn/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <ostream>

#include "tfn/evaluation.hpp"
#include "tfn/gradcheck_suite.hpp"
#include "tfn/training.hpp"

namespace tfn::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::uint64_t seed = 17;
  std::string root;
  std::string synth;
  int synth_drives = 2;
  std::vector<int> val_drives;
  std::string out;
  std::string checkpoint;
  int workers = 1;

  int tau = 3;
  std::string branching = "ours";
  bool with_center = false;
  double cos_weight = 0.0;
  double corner_weight = 0.0;
  int epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  std::size_t points = 1024;
  std::string widths = "full";
  std::size_t feature_dim = 0;
  bool normalization = false;
  std::string interp = "11";
  int eval_tau = 0;
  std::string eval_branching;
  int gradcheck_configs = 4;
};

void add_common(CLI::App* sub, Options& o) {
  sub->set_config("--config", "", "Flat key=value file; flags given on the command line take precedence");
  sub->add_option("--seed", o.seed, "Root random seed")->capture_default_str();
  sub->add_option("--workers", o.workers, "Worker threads for drive loading")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();
}

void add_data(CLI::App* sub, Options& o) {
  sub->add_option("--root", o.root, "KITTI tracking root (default: $TFN_DATA_ROOT)");
  sub->add_option("--synth", o.synth, "Synthetic data instead of --root: 'default' or a synth config file");
  sub->add_option("--synth-drives", o.synth_drives, "Number of synthetic drives; the last one validates")
      ->check(CLI::Range(2, 1000))
      ->capture_default_str();
  sub->add_option("--val-drives", o.val_drives, "Validation drive ids (default 11 15 16 18)");
  sub->add_option("--points", o.points, "Points sampled per frustum")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20))
      ->capture_default_str();
}

void add_model(CLI::App* sub, Options& o) {
  sub->add_option("--tau", o.tau, "History length fused by the temporal module")
      ->check(CLI::Range(1, 64))
      ->capture_default_str();
  sub->add_option("--branching", o.branching, "Output branching")
      ->check(CLI::IsMember({"ob", "tb", "ours"}))
      ->capture_default_str();
  sub->add_flag("--with-center", o.with_center, "Concatenate each frame's T-Net center to its feature");
  sub->add_option("--widths", o.widths, "Layer widths preset")
      ->check(CLI::IsMember({"full", "toy"}))
      ->capture_default_str();
  sub->add_option("--feature-dim", o.feature_dim, "Feature and GRU width (default 512, 16 with toy widths)")
      ->check(CLI::Range(std::size_t{1}, std::size_t{8192}));
  sub->add_flag("--normalization", o.normalization, "Normalize shared-MLP activations per frame");
}

void add_interp(CLI::App* sub, Options& o) {
  sub->add_option("--interp", o.interp, "AP interpolation: 11 or 40 recall positions")
      ->check(CLI::IsMember({"11", "40"}))
      ->capture_default_str();
}

std::string data_root(const Options& o) {
  if (!o.root.empty()) return o.root;
  if (const char* env = std::getenv("TFN_DATA_ROOT")) return env;
  throw Error("no data root: pass --root, --synth or set TFN_DATA_ROOT");
}

data::SynthConfig synth_config(const Options& o) {
  if (o.synth.empty() || o.synth == "default") return {};
  std::ifstream is(o.synth);
  if (!is) throw Error("cannot open synth config " + o.synth);
  return data::parse_synth_config(is);
}

struct Corpus {
  std::vector<data::DriveRecord> train;
  std::vector<data::DriveRecord> val;
  std::vector<geometry::Vec3> fallback_sizes;
};

std::vector<data::DriveRecord> load_drives(const std::string& root, const std::vector<int>& ids, int workers) {
  std::vector<data::DriveRecord> out(ids.size());
  for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(workers)) {
    std::vector<std::future<data::DriveRecord>> jobs;
    const std::size_t end = std::min(ids.size(), start + static_cast<std::size_t>(workers));
    for (std::size_t i = start; i < end; ++i) {
      jobs.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                [&root, id = ids[i]] { return data::load_drive(root, id); }));
    }
    for (std::size_t i = start; i < end; ++i) out[i] = jobs[i - start].get();
  }
  for (const auto& d : out) d.validate();
  return out;
}

Corpus load_corpus(const Options& o) {
  Corpus c;
  if (!o.synth.empty()) {
    const data::SynthConfig base = synth_config(o);
    c.fallback_sizes = base.class_sizes;
    for (int i = 0; i < o.synth_drives; ++i) {
      data::SynthConfig cfg = base;
      cfg.drive_id = base.drive_id + i;
      cfg.seed = data::derive_seed(base.seed ^ o.seed, static_cast<std::uint64_t>(i));
      (i + 1 == o.synth_drives ? c.val : c.train).push_back(data::synth_generate(cfg));
    }
    return c;
  }
  const std::string root = data_root(o);
  const data::Split split = data::split_train_val(
      data::list_drives(root), o.val_drives.empty() ? std::nullopt : std::optional<std::vector<int>>(o.val_drives));
  c.train = load_drives(root, split.train, o.workers);
  c.val = load_drives(root, split.val, o.workers);
  c.fallback_sizes = data::SynthConfig{}.class_sizes;
  return c;
}

std::vector<const data::DriveRecord*> pointers(const std::vector<data::DriveRecord>& v) {
  std::vector<const data::DriveRecord*> out;
  for (const auto& d : v) out.push_back(&d);
  return out;
}

model::ModelConfig model_config(const Options& o, const Corpus& c) {
  model::ModelConfig cfg;
  cfg.tau = o.tau;
  cfg.branching = model::parse_branching(o.branching);
  cfg.with_center_concat = o.with_center;
  cfg.widths = o.widths == "toy" ? model::Widths::toy() : model::Widths::full();
  cfg.feature_dim = o.feature_dim ? o.feature_dim : (o.widths == "toy" ? 16 : 512);
  cfg.normalization = o.normalization;
  cfg.anchors = data::class_mean_sizes(pointers(c.train), c.fallback_sizes);
  cfg.validate();
  return cfg;
}

int cmd_ingest_check(const Options& o, std::ostream& out) {
  const std::string root = data_root(o);
  const auto ids = data::list_drives(root);
  const data::Split split = data::split_train_val(
      ids, o.val_drives.empty() ? std::nullopt : std::optional<std::vector<int>>(o.val_drives));
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-6s %7s %8s %8s %11s %8s\n", "split", "drives", "frames", "Car", "Pedestrian",
                "Cyclist");
  out << buf;
  for (const auto& [name, list] : {std::pair{"train", split.train}, std::pair{"val", split.val}}) {
    data::SplitCounts total;
    for (int id : list) {
      data::load_drive(root, id).validate();
      const auto c = data::count_drive(root, id);
      total.frames += c.frames;
      for (std::size_t k = 0; k < total.instances.size(); ++k) total.instances[k] += c.instances[k];
    }
    std::snprintf(buf, sizeof buf, "%-6s %7zu %8zu %8zu %11zu %8zu\n", name, list.size(), total.frames,
                  total.instances[0], total.instances[1], total.instances[2]);
    out << buf;
  }
  return kExitOk;
}

int cmd_synth_gen(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw Error("synth-gen needs --out");
  const data::SynthConfig base = synth_config(o);
  for (int i = 0; i < o.synth_drives; ++i) {
    data::SynthConfig cfg = base;
    cfg.drive_id = base.drive_id + i;
    cfg.seed = data::derive_seed(base.seed ^ o.seed, static_cast<std::uint64_t>(i));
    const data::DriveRecord d = data::synth_generate(cfg);
    data::export_drive(o.out, d);
    out << "drive " << d.drive_id << ": " << d.num_frames() << " frames written to " << o.out << '\n';
  }
  return kExitOk;
}

data::SequenceOptions sequence_options(const Options& o, int tau) {
  data::SequenceOptions so;
  so.tau = tau;
  so.num_points = o.points;
  so.seed = o.seed;
  return so;
}

int cmd_train(const Options& o, std::ostream& out) {
  const Corpus corpus = load_corpus(o);
  const model::ModelConfig cfg = model_config(o, corpus);
  const geometry::BoxCoder coder = cfg.coder();
  const data::SequenceOptions so = sequence_options(o, cfg.tau);
  std::vector<data::SequenceSample> train_samples;
  for (const auto& d : corpus.train) {
    auto built = data::build_sequence_samples(d, so, coder);
    for (auto& s : built.samples) train_samples.push_back(std::move(s));
  }
  const training::EvalSet val = training::make_eval_set(pointers(corpus.val), so, coder);

  training::TrainConfig tc;
  tc.batch_size = o.batch_size;
  tc.epochs = o.epochs;
  tc.lr = o.lr;
  tc.beta1 = o.beta1;
  tc.seed = o.seed;
  tc.loss.weight(training::kCosine) = o.cos_weight;
  tc.loss.weight(training::kCorner) = o.corner_weight;
  tc.interp = eval::parse_interp(o.interp);
  tc.out_dir = o.out.empty() ? "runs" : o.out;

  model::Detector det(cfg, data::derive_seed(o.seed, 0x6d6f64656cull));
  out << "train samples " << train_samples.size() << ", val samples " << val.samples.size() << ", parameters "
      << det.params().scalar_count() << '\n';
  out << training::log_header() << '\n';
  const auto result = training::train(det, train_samples, val, tc,
                                      [&](const training::EpochLog& e) { out << training::log_row(e) << std::endl; });
  if (result.best_epoch > 0) {
    out << "best epoch " << result.best_epoch << " (mean moderate AP " << result.best_moderate_ap << ")\n";
    out << eval::report_table(result.log[static_cast<std::size_t>(result.best_epoch - 1)].val);
  }
  out << "checkpoints in " << tc.out_dir << '\n';
  return kExitOk;
}

training::EvalSet eval_set_for(const Options& o, const std::string& checkpoint) {
  std::ifstream is(fs::path(checkpoint).replace_extension(".cfg"));
  if (!is) throw Error("checkpoint config for " + checkpoint + " not found");
  const model::ModelConfig cfg = model::ModelConfig::from_text(is);
  const Corpus corpus = load_corpus(o);
  const int tau = o.eval_tau > 0 ? o.eval_tau : cfg.tau;
  return training::make_eval_set(pointers(corpus.val), sequence_options(o, tau), cfg.coder());
}

training::CheckpointEval run_eval(const Options& o) {
  if (o.checkpoint.empty()) throw Error("--checkpoint is required");
  const training::EvalSet val = eval_set_for(o, o.checkpoint);
  return training::evaluate_checkpoint(
      o.checkpoint, val, o.eval_tau > 0 ? std::optional<int>(o.eval_tau) : std::nullopt,
      o.eval_branching.empty() ? std::nullopt : std::optional<model::Branching>(model::parse_branching(o.eval_branching)),
      eval::parse_interp(o.interp));
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto res = run_eval(o);
  out << eval::report_table(res.results);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / "ap_table.txt") << eval::report_table(res.results);
    std::ofstream(fs::path(o.out) / "ap_table.tsv") << eval::report_tsv(res.results);
  }
  return kExitOk;
}

int cmd_export(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw Error("export-detections needs --out");
  const auto res = run_eval(o);
  eval::write_detections(o.out, res.detections);
  out << res.detections.size() << " detections written to " << o.out << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const auto entries = run_gradcheck_suite(o.seed, o.gradcheck_configs);
  double worst_op = 0, worst_e2e = 0;
  bool ok = true;
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-32s %.3e  (tol %.0e)  %s\n", e.name.c_str(), e.error, e.tolerance,
                  e.ok() ? "ok" : "FAIL");
    out << buf;
    ok = ok && e.ok();
    (e.tolerance == kOpTolerance ? worst_op : worst_e2e) =
        std::max(e.tolerance == kOpTolerance ? worst_op : worst_e2e, e.error);
  }
  std::snprintf(buf, sizeof buf, "max relative error: ops %.3e, end-to-end %.3e\n", worst_op, worst_e2e);
  out << buf;
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal frustum detector"};
  app.name("tfn");
  app.require_subcommand(1);
  Options o;

  auto* ingest = app.add_subcommand("ingest-check", "Parse a data root and print per-split counts");
  add_common(ingest, o);
  ingest->add_option("--root", o.root, "KITTI tracking root (default: $TFN_DATA_ROOT)");
  ingest->add_option("--val-drives", o.val_drives, "Validation drive ids (default 11 15 16 18)");

  auto* synth = app.add_subcommand("synth-gen", "Write synthetic drives in the KITTI tracking layout");
  add_common(synth, o);
  synth->add_option("--synth", o.synth, "'default' or a synth config file")->capture_default_str();
  synth->add_option("--synth-drives", o.synth_drives, "Number of drives")->check(CLI::Range(1, 1000))->capture_default_str();
  synth->add_option("--out", o.out, "Output root")->required();

  auto* train = app.add_subcommand("train", "Train a detector");
  add_common(train, o);
  add_data(train, o);
  add_model(train, o);
  add_interp(train, o);
  train->add_option("--cos-weight", o.cos_weight, "Weight of the cosine feature-alignment loss (0 disables)")
      ->check(CLI::Range(0.0, 1e6))
      ->capture_default_str();
  train->add_option("--corner-weight", o.corner_weight, "Weight of the corner loss (0 disables)")
      ->check(CLI::Range(0.0, 1e6))
      ->capture_default_str();
  train->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::Range(1, 100000))->capture_default_str();
  train->add_option("--batch-size", o.batch_size, "Mini-batch size")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20))
      ->capture_default_str();
  train->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::Range(1e-12, 10.0))->capture_default_str();
  train->add_option("--beta1", o.beta1, "Adam first-moment decay")->check(CLI::Range(0.0, 0.999999))->capture_default_str();
  train->add_option("--out", o.out, "Run directory for checkpoints and the metric log (default runs)");

  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint and print the AP table");
  auto* exportc = app.add_subcommand("export-detections", "Write KITTI-style detections for a checkpoint");
  for (auto* sub : {evalc, exportc}) {
    add_common(sub, o);
    add_data(sub, o);
    add_interp(sub, o);
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint archive (ckpt_<epoch>.tfn)")->required();
    sub->add_option("--tau", o.eval_tau, "Override the checkpoint's history length")->check(CLI::Range(1, 64));
    sub->add_option("--branching", o.eval_branching, "Expected branching; a mismatch is an error")
        ->check(CLI::IsMember({"ob", "tb", "ours"}));
  }
  evalc->add_option("--out", o.out, "Also write ap_table.txt and ap_table.tsv here");
  exportc->add_option("--out", o.out, "Detection output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op and the toy model");
  add_common(grad, o);
  grad->add_option("--configs", o.gradcheck_configs, "Random configurations per op")
      ->check(CLI::Range(1, 1000))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  try {
    if (ingest->parsed()) return cmd_ingest_check(o, out);
    if (synth->parsed()) return cmd_synth_gen(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (evalc->parsed()) return cmd_eval(o, out);
    if (exportc->parsed()) return cmd_export(o, out);
    if (grad->parsed()) return cmd_gradcheck(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace tfn::cli
