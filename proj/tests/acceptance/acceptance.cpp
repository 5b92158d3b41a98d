// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "temporal_benchmark.hpp"
#include "tfn/evaluation.hpp"
#include "tfn/gradcheck_suite.hpp"
#include "tfn/ops.hpp"
#include "tfn/training.hpp"

namespace fs = std::filesystem;
using namespace tfn;

namespace {

// Tolerances and budgets.
constexpr double kOpTol = 1e-5;
constexpr double kE2eTol = 1e-4;
constexpr double kGradcheckSeconds = 120.0;
constexpr double kMonteCarloTol = 0.01;
constexpr std::size_t kMonteCarloSamples = 1'000'000;
constexpr int kMonteCarloPairs = 50;
constexpr int kRoundTrips = 1000;
constexpr double kRoundTripTol = 1e-9;
constexpr int kApSets = 100;
// Eleven-point AP is a sum of eleven ratios divided by 11, so the worked
// example is compared to 28/33 up to rounding.
constexpr double kWorkedExampleTol = 1e-12;
constexpr int kTemporalSeeds = 5;
constexpr int kTemporalWinsNeeded = 4;
constexpr double kTemporalMeanGain = 0.02;
constexpr double kTemporalSeconds = 15 * 60.0;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %d. %-28s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string fixture(const std::string& name) { return std::string(TFN_FIXTURE_DIR) + "/" + name; }

// ---------------------------------------------------------------------------

void gradient_fidelity() {
  const auto t0 = Clock::now();
  double worst_op = 0, worst_e2e = 0;
  std::string worst_name;
  bool ok = true;
  for (const auto& e : run_gradcheck_suite(17)) {
    const bool e2e = e.tolerance == kEndToEndTolerance;
    (e2e ? worst_e2e : worst_op) = std::max(e2e ? worst_e2e : worst_op, e.error);
    if (e.error >= (e2e ? kE2eTol : kOpTol)) {
      ok = false;
      worst_name = e.name;
    }
  }
  const double secs = since(t0);
  ok = ok && secs < kGradcheckSeconds;
  report(1, "gradient fidelity", ok,
         fmt("ops max rel err %.2e (< %.0e), end-to-end %.2e (< %.0e), %.1f s%s%s", worst_op, kOpTol, worst_e2e,
             kE2eTol, secs, worst_name.empty() ? "" : ", failing ", worst_name.c_str()));
}

void cosine_exactness() {
  auto cd = [](const std::vector<double>& a, const std::vector<double>& b) {
    return cosine_distance(Tensor::vector(a), Tensor::vector(b)).item();
  };
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-10, 10);
  constexpr int kTrials = 1000;
  int exact = 0;
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<double> a(n), neg(n), orth(n, 0.0);
    for (auto& v : a) v = u(rng);
    for (std::size_t i = 0; i < n; ++i) neg[i] = -a[i];
    // (x, y, 0, ...) and (-y, x, 0, ...) have a dot product of exactly zero.
    std::vector<double> pa(n, 0.0);
    pa[0] = a[0];
    pa[1] = a[1];
    orth[0] = -a[1];
    orth[1] = a[0];
    exact += cd(a, a) == 0.0 && cd(a, neg) == 2.0 && cd(pa, orth) == 1.0;
  }
  report(2, "cosine distance exactness", exact == kTrials,
         fmt("identical/orthogonal/opposite give exactly 0/1/2 on %d/%d random vector triples", exact, kTrials));
}

// Membership straight from the box definition.
bool inside(const geometry::Vec3& p, const geometry::Box3D& b) {
  const double dx = p.x() - b.cx, dz = p.z() - b.cz;
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double along = dx * c - dz * s, across = dx * s + dz * c;
  return std::abs(along) <= b.l / 2 && std::abs(across) <= b.w / 2 && p.y() <= b.cy && p.y() >= b.cy - b.h;
}

double monte_carlo_iou(const geometry::Box3D& a, const geometry::Box3D& b, std::uint64_t seed) {
  double lo[3] = {1e9, 1e9, 1e9}, hi[3] = {-1e9, -1e9, -1e9};
  for (const auto& box : {a, b})
    for (const auto& c : geometry::box3d_corners(box))
      for (int i = 0; i < 3; ++i) {
        lo[i] = std::min(lo[i], c[i]);
        hi[i] = std::max(hi[i], c[i]);
      }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t ia = 0, ib = 0, both = 0;
  for (std::size_t i = 0; i < kMonteCarloSamples; ++i) {
    const geometry::Vec3 p(lo[0] + (hi[0] - lo[0]) * u(rng), lo[1] + (hi[1] - lo[1]) * u(rng),
                           lo[2] + (hi[2] - lo[2]) * u(rng));
    const bool x = inside(p, a), y = inside(p, b);
    ia += x;
    ib += y;
    both += x && y;
  }
  const double uni = static_cast<double>(ia + ib - both);
  return uni > 0 ? static_cast<double>(both) / uni : 0.0;
}

geometry::Box3D random_box(std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> size(0.5, 3.0), pos(-spread, spread), ang(-geometry::kPi, geometry::kPi);
  geometry::Box3D b;
  b.h = size(rng);
  b.w = size(rng);
  b.l = size(rng);
  b.cx = pos(rng);
  b.cy = pos(rng) * 0.3;
  b.cz = pos(rng);
  b.heading = ang(rng);
  return b;
}

void geometry_oracles() {
  std::mt19937_64 rng(3);
  double worst_iou = 0;
  int overlapping = 0;
  for (int t = 0; t < kMonteCarloPairs; ++t) {
    const geometry::Box3D a = random_box(rng, 0.8), b = random_box(rng, 0.8);
    const double exact = geometry::iou3d(a, b);
    overlapping += exact > 0;
    worst_iou = std::max(worst_iou, std::abs(exact - monte_carlo_iou(a, b, 1000 + static_cast<std::uint64_t>(t))));
  }

  const geometry::BoxCoder coder(12, {{1.53, 1.63, 3.88}, {1.76, 0.66, 0.84}, {1.74, 0.60, 1.76}});
  const auto lay = coder.layout();
  std::uniform_real_distribution<double> angle(-0.7, 0.7), off(-2, 2), turns(-3 * geometry::kPi, 3 * geometry::kPi);
  double worst_trip = 0, worst_heading = 0;
  for (int t = 0; t < kRoundTrips; ++t) {
    geometry::Box3D gt = random_box(rng, 20.0);
    gt.heading = turns(rng);
    const double phi = angle(rng);
    const geometry::Vec3 centroid(off(rng), off(rng), off(rng)), tnet(off(rng) / 2, off(rng) / 2, off(rng) / 2);
    const auto tg = coder.encode(gt, t % 3, phi, centroid, tnet);
    std::vector<double> h(lay.total(), 0.0);
    for (int i = 0; i < 3; ++i) h[static_cast<std::size_t>(i)] = tg.center_residual[i];
    h[lay.heading_scores() + static_cast<std::size_t>(tg.heading_bin)] = 10;
    h[lay.heading_residuals() + static_cast<std::size_t>(tg.heading_bin)] = tg.heading_residual;
    h[lay.size_scores() + static_cast<std::size_t>(tg.size_class)] = 10;
    for (int i = 0; i < 3; ++i)
      h[lay.size_residuals() + 3 * static_cast<std::size_t>(tg.size_class) + static_cast<std::size_t>(i)] =
          tg.size_residual[i];
    const auto back = coder.decode(h, centroid, tnet, phi);
    for (double d : {back.cx - gt.cx, back.cy - gt.cy, back.cz - gt.cz, back.h - gt.h, back.w - gt.w, back.l - gt.l})
      worst_trip = std::max(worst_trip, std::abs(d));
    worst_heading = std::max(worst_heading, std::abs(geometry::wrap_angle(back.heading - gt.heading)));
  }
  const bool ok = worst_iou <= kMonteCarloTol && worst_trip <= kRoundTripTol && worst_heading <= kRoundTripTol;
  report(3, "geometry oracles", ok,
         fmt("iou3d vs %zu-sample Monte-Carlo on %d pairs (%d overlapping): max |diff| %.4f (<= %.2f); "
             "%d round trips: max center/size err %.1e, heading err %.1e (<= %.0e)",
             kMonteCarloSamples, kMonteCarloPairs, overlapping, worst_iou, kMonteCarloTol, kRoundTrips, worst_trip,
             worst_heading, kRoundTripTol));
}

// Max precision over score thresholds whose recall reaches each level,
// recounting TP/FP from scratch for every threshold.
double brute_ap(const std::vector<eval::MatchFlag>& flags, const std::vector<double>& scores, std::size_t gts) {
  if (gts == 0) return 0.0;
  double total = 0;
  for (int k = 0; k <= 10; ++k) {
    double best = 0;
    for (double thr : scores) {
      std::size_t tp = 0, fp = 0;
      for (std::size_t i = 0; i < flags.size(); ++i) {
        if (scores[i] < thr || flags[i] == eval::MatchFlag::ignored) continue;
        (flags[i] == eval::MatchFlag::tp ? tp : fp) += 1;
      }
      if (tp + fp == 0) continue;
      if (static_cast<double>(tp) / static_cast<double>(gts) >= k / 10.0)
        best = std::max(best, static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    total += best;
  }
  return total / 11;
}

void ap_oracle() {
  using F = eval::MatchFlag;
  const double worked = eval::average_precision({F::tp, F::fp, F::tp}, {0.9, 0.8, 0.7}, 2).ap;
  bool ok = std::abs(worked - 28.0 / 33.0) <= kWorkedExampleTol;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  int mismatches = 0;
  for (int t = 0; t < kApSets; ++t) {
    const std::size_t n = rng() % 21;
    std::vector<F> flags;
    std::vector<double> scores;
    std::size_t tps = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = rng() % 5;
      flags.push_back(k < 2 ? F::tp : (k < 4 ? F::fp : F::ignored));
      tps += flags.back() == F::tp;
      scores.push_back(u(rng));
    }
    const std::size_t gts = tps + rng() % 4;
    if (eval::average_precision(flags, scores, gts).ap != brute_ap(flags, scores, gts)) ++mismatches;
  }
  ok = ok && mismatches == 0;
  report(4, "AP oracle", ok,
         fmt("worked example %.10f (28/33 = %.10f); %d/%d random sets differ from enumeration", worked, 28.0 / 33.0,
             mismatches, kApSets));
}

void temporal_efficacy() {
  bench::TemporalBenchConfig cfg;
  // Unoccluded training frames are subsampled to fit the time budget;
  // occluded frames are always kept.
  cfg.train_stride = 4;
  const auto t0 = Clock::now();
  int wins = 0;
  double sum = 0;
  for (int s = 0; s < kTemporalSeeds; ++s) {
    const auto r = bench::run_temporal_seed(cfg, 1000 + static_cast<std::uint64_t>(s));
    wins += r.improvement() > 0;
    sum += r.improvement();
    std::printf("      seed %llu: %zu occluded test frames, IoU tau=1 %.4f tau=3 %.4f (%+.4f), center err %.3f/%.3f m, "
                "size err %.3f/%.3f, %.0f s\n",
                static_cast<unsigned long long>(r.seed), r.occluded_samples, r.iou[0], r.iou[1], r.improvement(),
                r.center_error[0], r.center_error[1], r.size_error[0], r.size_error[1], r.seconds);
    std::fflush(stdout);
  }
  const double mean = sum / kTemporalSeeds, secs = since(t0);
  const bool ok = wins >= kTemporalWinsNeeded && mean >= kTemporalMeanGain && secs < kTemporalSeconds;
  report(5, "temporal fusion efficacy", ok,
         fmt("tau=3 wins %d/%d seeds (need %d), mean IoU gain %+.4f (need >= %.2f), %.0f s (< %.0f)", wins,
             kTemporalSeeds, kTemporalWinsNeeded, mean, kTemporalMeanGain, secs, kTemporalSeconds));
}

template <class E>
bool throws(const std::function<void()>& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

void ingestion_fidelity() {
  if (const char* root = std::getenv("TFN_DATA_ROOT"); root && *root && fs::exists(root)) {
    const auto split = data::split_train_val(data::list_drives(root));
    data::SplitCounts c[2];
    for (int k = 0; k < 2; ++k)
      for (int id : k == 0 ? split.train : split.val) {
        const auto d = data::count_drive(root, id);
        c[k].frames += d.frames;
        for (std::size_t i = 0; i < 3; ++i) c[k].instances[i] += d.instances[i];
      }
    const bool ok = c[0].frames == 6264 && c[0].instances == std::array<std::size_t, 3>{31886, 8378, 1039} &&
                    c[1].frames == 1239 && c[1].instances == std::array<std::size_t, 3>{6494, 2980, 809};
    report(6, "ingestion fidelity", ok,
           fmt("train %zu frames / %zu / %zu / %zu, val %zu / %zu / %zu / %zu", c[0].frames, c[0].instances[0],
               c[0].instances[1], c[0].instances[2], c[1].frames, c[1].instances[0], c[1].instances[1],
               c[1].instances[2]));
    return;
  }
  // Without the dataset, every parser branch runs on the format fixtures.
  auto open = [](const std::string& name) { return std::ifstream(fixture(name), std::ios::binary); };
  int passed = 0, total = 0;
  auto check = [&](bool b) {
    ++total;
    passed += b;
  };
  {
    auto is = open("labels_basic.txt");
    const auto labels = data::parse_tracking_labels(is);
    check(labels.size() == 4);
  }
  for (const char* bad : {"labels_short_line.txt", "labels_bad_number.txt"})
    check(throws<data::ParseError>([&] {
      auto is = open(bad);
      data::parse_tracking_labels(is);
    }));
  check(throws<Error>([&] {
    auto is = open("labels_duplicate_track.txt");
    data::DriveRecord d;
    d.labels = data::parse_tracking_labels(is);
    d.validate();
  }));
  for (const char* ok_calib : {"calib_identity.txt", "calib_kitti.txt"})
    check(!throws<std::exception>([&] {
      auto is = open(ok_calib);
      data::parse_calibration(is);
    }));
  for (const char* bad : {"calib_missing_p2.txt", "calib_short_rrect.txt"})
    check(throws<data::ParseError>([&] {
      auto is = open(bad);
      data::parse_calibration(is);
    }));
  {
    auto is = open("cloud_one_point.bin");
    check(data::load_point_cloud(is).size() == 1);
  }
  check(throws<data::ParseError>([&] {
    auto is = open("cloud_truncated.bin");
    data::load_point_cloud(is);
  }));
  const std::string mini = fixture("kitti_mini");
  check(data::list_drives(mini) == std::vector<int>{0, 11});
  const auto c0 = data::count_drive(mini, 0), c11 = data::count_drive(mini, 11);
  check(c0.frames == 2 && c0.instances == std::array<std::size_t, 3>{2, 1, 0});
  check(c11.frames == 2 && c11.instances == std::array<std::size_t, 3>{1, 0, 2});
  report(6, "ingestion fidelity", passed == total,
         fmt("TFN_DATA_ROOT not set; format fixtures only: %d/%d parser checks", passed, total));
}

std::vector<double> head_grad(const model::Detector& det, const Tensor& f_t, const Tensor& f_fused, bool wrt_fused,
                              std::size_t begin, std::size_t end) {
  Tensor probe = (wrt_fused ? f_fused : f_t).detach();
  probe.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor head = wrt_fused ? det.head_forward(f_t, probe) : det.head_forward(probe, f_fused);
  std::vector<double> seed(head.numel(), 0.0);
  for (std::size_t i = begin; i < end; ++i) seed[i] = 1.0;
  tape.backward(head, seed);
  return {probe.grad().begin(), probe.grad().end()};
}

void wiring_invariants() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  int ours_ok = 0, tied_ok = 0;
  constexpr int kProbes = 20;
  for (int t = 0; t < kProbes; ++t) {
    std::vector<double> a(16), b(16);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const Tensor f_t = Tensor::vector(a), f_fused = Tensor::vector(b);
    const model::Detector ours(toy_model_config(3, model::Branching::ours, t % 2 == 1), 100 + static_cast<std::uint64_t>(t));
    const auto lay = ours.config().layout();
    const auto g = head_grad(ours, f_t, f_fused, true, 0, lay.size_scores());
    const auto g_size = head_grad(ours, f_t, f_fused, true, lay.size_scores(), lay.total());
    ours_ok += std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; }) &&
               std::any_of(g_size.begin(), g_size.end(), [](double x) { return x != 0.0; });

    model::Detector tb(toy_model_config(3, model::Branching::tb, false), 200 + static_cast<std::uint64_t>(t));
    const model::Detector ob(toy_model_config(3, model::Branching::ob, false), 200 + static_cast<std::uint64_t>(t));
    for (const char* layer : {"fc/W", "fc/b", "out/W", "out/b"}) {
      const auto src = tb.params().get(std::string("head/b/") + layer).values();
      std::copy(src.begin(), src.end(), tb.params().get(std::string("head/a/") + layer).mutable_values().begin());
    }
    const Tensor x = tb.head_forward(f_fused, f_fused), y = ob.head_forward(f_t, f_fused);
    tied_ok += std::ranges::equal(x.values(), y.values());
  }
  report(7, "wiring invariants", ours_ok == kProbes && tied_ok == kProbes,
         fmt("OURS center/heading gradient wrt fused feature is zero in %d/%d probes; tied TB equals OB in %d/%d",
             ours_ok, kProbes, tied_ok, kProbes));
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void determinism() {
  const fs::path base = fs::temp_directory_path() / "tfn_acceptance_determinism";
  fs::remove_all(base);
  auto run = [&](const std::string& name) {
    data::SynthConfig sc;
    sc.num_objects = 4;
    sc.num_frames = 12;
    sc.seed = 99;
    const data::DriveRecord train_drive = data::synth_generate(sc);
    sc.seed = 100;
    sc.drive_id = 1;
    const data::DriveRecord val_drive = data::synth_generate(sc);
    model::ModelConfig cfg = toy_model_config(3, model::Branching::ours, true);
    cfg.anchors = data::class_mean_sizes({&train_drive}, cfg.anchors);
    data::SequenceOptions so;
    so.tau = 3;
    so.num_points = 32;
    so.seed = 5;
    const auto samples = data::build_sequence_samples(train_drive, so, cfg.coder()).samples;
    const auto val = training::make_eval_set({&val_drive}, so, cfg.coder());
    training::TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 8;
    tc.seed = 5;
    tc.loss.weight(training::kCosine) = 0.5;
    tc.loss.weight(training::kCorner) = 0.5;
    tc.out_dir = (base / name).string();
    model::Detector det(cfg, data::derive_seed(5, 1));
    training::train(det, samples, val, tc);
  };
  run("a");
  run("b");
  int same = 0, total = 0;
  for (const auto& entry : fs::directory_iterator(base / "a")) {
    ++total;
    const fs::path other = base / "b" / entry.path().filename();
    same += fs::exists(other) && slurp(entry.path()) == slurp(other);
  }
  fs::remove_all(base);
  report(8, "determinism", total > 0 && same == total,
         fmt("%d/%d checkpoint, config and log files bitwise identical across two runs", same, total));
}

}  // namespace

int main(int argc, char** argv) {
  // `--skip-temporal` leaves out the long benchmark for quick iterations.
  const bool skip_temporal = argc > 1 && std::string(argv[1]) == "--skip-temporal";
  try {
    gradient_fidelity();
    cosine_exactness();
    geometry_oracles();
    ap_oracle();
    if (skip_temporal)
      std::printf("SKIP  5. temporal fusion efficacy\n");
    else
      temporal_efficacy();
    ingestion_fidelity();
    wiring_invariants();
    determinism();
  } catch (const std::exception& e) {
    std::printf("FAIL  acceptance suite aborted: %s\n", e.what());
    return 1 + failures;
  }
  std::printf("%d criteria failed\n", failures);
  return failures;
}
