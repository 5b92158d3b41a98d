// SPDX-License-Identifier: Apache-2.0
/**
 * @file   evaluation.hpp
 * @brief  KITTI difficulty strata, greedy detection matching and
 *         interpolated average precision.
 */
#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tfn/data.hpp"

namespace tfn::eval {

using data::ObjectClass;
using data::TrackedObjectRecord;

enum class Difficulty { easy, moderate, hard };
inline constexpr std::array<Difficulty, 3> kDifficulties{Difficulty::easy, Difficulty::moderate,
                                                        Difficulty::hard};
std::string_view difficulty_name(Difficulty d);

enum class DifficultyLevel { easy, moderate, hard, ignored };

/// Easiest stratum whose bounds the record meets.
DifficultyLevel assign_difficulty(const TrackedObjectRecord& gt);
/// Cumulative membership: an Easy object also belongs to Moderate and Hard.
bool in_difficulty(const TrackedObjectRecord& gt, Difficulty d);

/// 0.7 for Car, 0.5 for Pedestrian and Cyclist.
double iou_threshold(ObjectClass cls);

enum class Interp { eleven_point, forty_point };
Interp parse_interp(std::string_view s);
std::string_view interp_name(Interp m);

struct Detection {
  int drive_id = 0;
  int frame = 0;
  ObjectClass cls = ObjectClass::Car;
  geometry::Box3D box;
  /// Projected box, used for DontCare suppression.
  geometry::Box2D box2d;
  double score = 0;
  int track_id = -1;
};

struct GroundTruth {
  int drive_id = 0;
  TrackedObjectRecord record;
};

enum class MatchFlag { fp, tp, ignored };

struct MatchResult {
  /// One flag per detection of the evaluated class, in descending-score order.
  std::vector<MatchFlag> flags;
  std::vector<double> scores;
  /// (detection index into `dets`, ground-truth index into `gts`).
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t num_valid_gt = 0;
  std::size_t num_ignored_gt = 0;
};

/// Greedy matching in descending score order; each detection takes the
/// unmatched same-frame, same-class ground truth of highest full-3D IoU at or
/// above the threshold. Ground truths outside `difficulty` (and neighbouring
/// classes such as Van for Car) absorb matches without counting them.
/// Unmatched detections covering a DontCare region (2D IoU >= 0.5) are
/// ignored.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                             ObjectClass cls, double iou_threshold, Difficulty difficulty);

/// Ordering core of match_detections on one frame: detections must already
/// be sorted by descending score. Returns the matched ground-truth index per
/// detection or -1.
std::vector<int> greedy_assign(const std::vector<std::vector<double>>& iou, double threshold);

struct PRPoint {
  double recall = 0;
  double precision = 0;
  double score = 0;
};

struct APResult {
  ObjectClass cls = ObjectClass::Car;
  Difficulty difficulty = Difficulty::moderate;
  std::vector<PRPoint> curve;
  double ap = 0;
  std::size_t tp = 0, fp = 0, fn = 0, ignored = 0;
  /// Set when there were no ground truths; ap is then 0.
  bool no_ground_truth = false;
};

/// `flags` and `scores` run in parallel; ignored flags are skipped.
APResult average_precision(const std::vector<MatchFlag>& flags, const std::vector<double>& scores,
                           std::size_t gt_count, Interp mode = Interp::eleven_point);

/// Every class and difficulty at the class's IoU threshold.
std::vector<APResult> evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                               Interp mode = Interp::eleven_point);

/// Aligned text table, rows Car/Pedestrian/Cyclist, columns Easy/Mod/Hard.
/// Missing cells print "-".
std::string report_table(const std::vector<APResult>& results);
std::string report_tsv(const std::vector<APResult>& results);
std::optional<double> find_ap(const std::vector<APResult>& results, ObjectClass cls, Difficulty d);
/// Mean moderate AP over the classes that have ground truth.
double mean_moderate_ap(const std::vector<APResult>& results);

/// One KITTI tracking-style line per detection with the score appended,
/// written to <dir>/<drive>.txt.
void write_detections(const std::string& dir, const std::vector<Detection>& dets);
std::string format_detection(const Detection& d);

}  // namespace tfn::eval
