// SPDX-License-Identifier: Apache-2.0
#include "tfn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace tfn::eval {

std::string_view difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "Easy";
    case Difficulty::moderate: return "Moderate";
    case Difficulty::hard: return "Hard";
  }
  return "Moderate";
}

namespace {

struct Bounds {
  double min_height;
  int max_occlusion;
  double max_truncation;
};

// KITTI object benchmark strata.
constexpr Bounds kBounds[3] = {{40.0, 0, 0.15}, {25.0, 1, 0.30}, {25.0, 2, 0.50}};

bool neighbour_class(ObjectClass cls, const std::string& type) {
  return (cls == ObjectClass::Car && type == "Van") ||
         (cls == ObjectClass::Pedestrian && type == "Person_sitting");
}

}  // namespace

bool in_difficulty(const TrackedObjectRecord& gt, Difficulty d) {
  const Bounds& b = kBounds[static_cast<int>(d)];
  return gt.box2d.height() >= b.min_height && gt.occlusion <= b.max_occlusion &&
         gt.truncation <= b.max_truncation;
}

DifficultyLevel assign_difficulty(const TrackedObjectRecord& gt) {
  if (in_difficulty(gt, Difficulty::easy)) return DifficultyLevel::easy;
  if (in_difficulty(gt, Difficulty::moderate)) return DifficultyLevel::moderate;
  if (in_difficulty(gt, Difficulty::hard)) return DifficultyLevel::hard;
  return DifficultyLevel::ignored;
}

double iou_threshold(ObjectClass cls) { return cls == ObjectClass::Car ? 0.7 : 0.5; }

Interp parse_interp(std::string_view s) {
  if (s == "11" || s == "eleven_point" || s == "r11") return Interp::eleven_point;
  if (s == "40" || s == "forty_point" || s == "r40") return Interp::forty_point;
  throw Error("unknown interpolation '" + std::string(s) + "' (expected 11 or 40)");
}

std::string_view interp_name(Interp m) { return m == Interp::eleven_point ? "eleven_point" : "forty_point"; }

std::vector<int> greedy_assign(const std::vector<std::vector<double>>& iou, double threshold) {
  std::vector<int> out(iou.size(), -1);
  if (iou.empty()) return out;
  std::vector<char> taken(iou.front().size(), 0);
  for (std::size_t d = 0; d < iou.size(); ++d) {
    int best = -1;
    double best_iou = threshold;
    for (std::size_t g = 0; g < iou[d].size(); ++g) {
      if (taken[g] || iou[d][g] < threshold) continue;
      if (best < 0 || iou[d][g] > best_iou) {
        best = static_cast<int>(g);
        best_iou = iou[d][g];
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = 1;
      out[d] = best;
    }
  }
  return out;
}

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                             ObjectClass cls, double threshold, Difficulty difficulty) {
  using Key = std::pair<int, int>;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].cls == cls) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  struct FrameGts {
    std::vector<std::size_t> candidates;  // same class or neighbour class
    std::vector<std::size_t> dont_care;
  };
  std::map<Key, FrameGts> frames;
  MatchResult res;
  std::vector<char> valid(gts.size(), 0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const auto& r = gts[g].record;
    const Key key{gts[g].drive_id, r.frame};
    if (r.cls == ObjectClass::DontCare) {
      frames[key].dont_care.push_back(g);
    } else if (r.cls == cls) {
      frames[key].candidates.push_back(g);
      valid[g] = in_difficulty(r, difficulty) ? 1 : 0;
      ++(valid[g] ? res.num_valid_gt : res.num_ignored_gt);
    } else if (neighbour_class(cls, r.type)) {
      frames[key].candidates.push_back(g);
      ++res.num_ignored_gt;
    }
  }

  std::map<Key, std::vector<std::size_t>> dets_by_frame;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto& d = dets[order[pos]];
    dets_by_frame[{d.drive_id, d.frame}].push_back(pos);
  }
  res.flags.assign(order.size(), MatchFlag::fp);
  res.scores.resize(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) res.scores[pos] = dets[order[pos]].score;

  for (const auto& [key, positions] : dets_by_frame) {
    const auto it = frames.find(key);
    static const FrameGts kEmpty;
    const FrameGts& fg = it == frames.end() ? kEmpty : it->second;
    std::vector<std::vector<double>> iou(positions.size(), std::vector<double>(fg.candidates.size(), 0.0));
    for (std::size_t i = 0; i < positions.size(); ++i)
      for (std::size_t j = 0; j < fg.candidates.size(); ++j)
        iou[i][j] = geometry::iou3d(dets[order[positions[i]]].box, gts[fg.candidates[j]].record.box3d);
    const auto assign = greedy_assign(iou, threshold);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const std::size_t pos = positions[i];
      if (assign[i] >= 0) {
        const std::size_t g = fg.candidates[static_cast<std::size_t>(assign[i])];
        res.flags[pos] = valid[g] ? MatchFlag::tp : MatchFlag::ignored;
        res.pairs.emplace_back(order[pos], g);
        continue;
      }
      for (std::size_t g : fg.dont_care) {
        if (geometry::iou2d(dets[order[pos]].box2d, gts[g].record.box2d) >= 0.5) {
          res.flags[pos] = MatchFlag::ignored;
          break;
        }
      }
    }
  }
  return res;
}

APResult average_precision(const std::vector<MatchFlag>& flags, const std::vector<double>& scores,
                           std::size_t gt_count, Interp mode) {
  if (flags.size() != scores.size()) throw Error("average_precision: flags and scores differ in length");
  std::vector<std::size_t> order(flags.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  APResult r;
  r.no_ground_truth = gt_count == 0;
  for (std::size_t i : order) {
    if (flags[i] == MatchFlag::ignored) {
      ++r.ignored;
      continue;
    }
    (flags[i] == MatchFlag::tp ? r.tp : r.fp) += 1;
    PRPoint p;
    p.score = scores[i];
    p.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
    p.recall = gt_count ? static_cast<double>(r.tp) / static_cast<double>(gt_count) : 0.0;
    r.curve.push_back(p);
  }
  if (r.tp > gt_count) throw Error("average_precision: more true positives than ground truths");
  r.fn = gt_count - r.tp;
  if (r.no_ground_truth) return r;

  const int steps = mode == Interp::eleven_point ? 10 : 40;
  const int first = mode == Interp::eleven_point ? 0 : 1;
  double total = 0.0;
  for (int k = first; k <= steps; ++k) {
    const double level = static_cast<double>(k) / steps;
    double best = 0.0;
    for (const auto& p : r.curve)
      if (p.recall >= level) best = std::max(best, p.precision);
    total += best;
  }
  r.ap = total / (steps - first + 1);
  return r;
}

std::vector<APResult> evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, Interp mode) {
  std::vector<APResult> out;
  for (int k = 0; k < data::kNumClasses; ++k) {
    const ObjectClass cls = data::class_from_index(k);
    for (Difficulty d : kDifficulties) {
      const MatchResult m = match_detections(dets, gts, cls, iou_threshold(cls), d);
      APResult r = average_precision(m.flags, m.scores, m.num_valid_gt, mode);
      r.cls = cls;
      r.difficulty = d;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::optional<double> find_ap(const std::vector<APResult>& results, ObjectClass cls, Difficulty d) {
  for (const auto& r : results)
    if (r.cls == cls && r.difficulty == d && !r.no_ground_truth) return r.ap;
  return std::nullopt;
}

double mean_moderate_ap(const std::vector<APResult>& results) {
  double sum = 0;
  int n = 0;
  for (int k = 0; k < data::kNumClasses; ++k) {
    if (auto ap = find_ap(results, data::class_from_index(k), Difficulty::moderate)) {
      sum += *ap;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

std::string report_table(const std::vector<APResult>& results) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-12s %5s %9s %9s %9s\n", "Class", "IoU", "Easy", "Moderate", "Hard");
  out += buf;
  for (int k = 0; k < data::kNumClasses; ++k) {
    const ObjectClass cls = data::class_from_index(k);
    std::string cells[3];
    for (std::size_t d = 0; d < 3; ++d) {
      const auto ap = find_ap(results, cls, kDifficulties[d]);
      if (ap) {
        std::snprintf(buf, sizeof buf, "%.4f", *ap);
        cells[d] = buf;
      } else {
        cells[d] = "-";
      }
    }
    std::snprintf(buf, sizeof buf, "%-12s %5.2f %9s %9s %9s\n", std::string(data::class_name(cls)).c_str(),
                  iou_threshold(cls), cells[0].c_str(), cells[1].c_str(), cells[2].c_str());
    out += buf;
  }
  return out;
}

std::string report_tsv(const std::vector<APResult>& results) {
  std::string out = "class\tiou\teasy\tmoderate\thard\n";
  char buf[64];
  for (int k = 0; k < data::kNumClasses; ++k) {
    const ObjectClass cls = data::class_from_index(k);
    std::snprintf(buf, sizeof buf, "%.2f", iou_threshold(cls));
    out += std::string(data::class_name(cls)) + '\t' + buf;
    for (Difficulty d : kDifficulties) {
      const auto ap = find_ap(results, cls, d);
      if (ap) {
        std::snprintf(buf, sizeof buf, "%.6f", *ap);
        out += std::string("\t") + buf;
      } else {
        out += "\t-";
      }
    }
    out += '\n';
  }
  return out;
}

std::string format_detection(const Detection& d) {
  TrackedObjectRecord r;
  r.frame = d.frame;
  r.track_id = d.track_id;
  r.cls = d.cls;
  r.type = std::string(data::class_name(d.cls));
  r.truncation = -1;
  r.occlusion = -1;
  r.alpha = geometry::wrap_angle(d.box.heading - std::atan2(d.box.cx, d.box.cz));
  r.box2d = d.box2d;
  r.box3d = d.box;
  return data::format_tracking_label(r, d.score);
}

void write_detections(const std::string& dir, const std::vector<Detection>& dets) {
  std::filesystem::create_directories(dir);
  std::map<int, std::vector<const Detection*>> by_drive;
  for (const auto& d : dets) by_drive[d.drive_id].push_back(&d);
  for (auto& [drive, list] : by_drive) {
    std::stable_sort(list.begin(), list.end(), [](const Detection* a, const Detection* b) {
      return std::tie(a->frame, a->track_id) < std::tie(b->frame, b->track_id);
    });
    char name[32];
    std::snprintf(name, sizeof name, "%04d.txt", drive);
    std::ofstream os(std::filesystem::path(dir) / name);
    if (!os) throw Error("cannot write detections to " + dir);
    for (const auto* d : list) os << format_detection(*d) << '\n';
  }
}

}  // namespace tfn::eval
