// SPDX-License-Identifier: Apache-2.0
/**
 * @file   data.hpp
 * @brief  KITTI tracking ingestion, train/val split, per-track sequence
 *         assembly and the synthetic occlusion-sequence generator.
 */
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tfn/geometry.hpp"

namespace tfn::data {

using geometry::Box2D;
using geometry::Box3D;
using geometry::Calibration;
using geometry::PointCloud;
using geometry::Vec3;

class ParseError : public Error {
 public:
  using Error::Error;
};

enum class ObjectClass { Car, Pedestrian, Cyclist, DontCare, Other };

inline constexpr int kNumClasses = 3;

ObjectClass parse_class(std::string_view type);
std::string_view class_name(ObjectClass c);
/// 0, 1, 2 for Car, Pedestrian, Cyclist; -1 otherwise.
int class_index(ObjectClass c);
ObjectClass class_from_index(int index);

struct TrackedObjectRecord {
  int frame = 0;
  int track_id = 0;
  ObjectClass cls = ObjectClass::Other;
  std::string type;  // raw label type, e.g. "Van"
  double truncation = 0;
  int occlusion = 0;
  double alpha = 0;
  Box2D box2d;
  Box3D box3d;
};

/// Records grouped by frame index; frames without labels are empty.
using FrameLabels = std::vector<std::vector<TrackedObjectRecord>>;

/// Parses KITTI tracking label text: frame, track id, type, truncated,
/// occluded, alpha, bbox (4), dimensions h w l, location x y z, rotation_y
/// and an optional trailing score. Throws ParseError with the line number.
FrameLabels parse_tracking_labels(std::istream& is);
std::string format_tracking_label(const TrackedObjectRecord& r, std::optional<double> score = {});

/// Reads "P2", "R_rect" (3x3) and "Tr_velo_cam" (3x4); keys may carry a
/// trailing colon. Missing keys raise ParseError naming the key.
Calibration parse_calibration(std::istream& is);
std::string format_calibration(const Calibration& calib);

/// Little-endian float32 quadruples (x, y, z, reflectance); reflectance is
/// dropped.
PointCloud load_point_cloud(std::istream& is);
void write_point_cloud(std::ostream& os, const PointCloud& pc);

struct DriveRecord {
  int drive_id = 0;
  Calibration calib;
  FrameLabels labels;
  /// Either paths to velodyne files or in-memory clouds, one per frame.
  std::vector<std::string> cloud_paths;
  std::vector<PointCloud> clouds;
  int image_width = 1242;
  int image_height = 375;

  std::size_t num_frames() const;
  PointCloud cloud(std::size_t frame) const;
  const std::vector<TrackedObjectRecord>& objects(std::size_t frame) const;
  /// Throws when a (frame, track id) pair repeats.
  void validate() const;
};

std::vector<int> list_drives(const std::filesystem::path& root);
DriveRecord load_drive(const std::filesystem::path& root, int drive_id);
/// Writes label_02/<drive>.txt, calib/<drive>.txt and velodyne/<drive>/<frame>.bin.
void export_drive(const std::filesystem::path& root, const DriveRecord& drive);

inline const std::vector<int> kDefaultValDrives{11, 15, 16, 18};

struct Split {
  std::vector<int> train;
  std::vector<int> val;
};

/// Validation drives default to 11, 15, 16, 18; the rest train. An override
/// naming a drive not in `drive_ids` throws.
Split split_train_val(const std::vector<int>& drive_ids,
                      const std::optional<std::vector<int>>& val_override = std::nullopt);

struct SplitCounts {
  std::size_t frames = 0;
  std::array<std::size_t, kNumClasses> instances{};
};

/// Frame and per-class instance counts of a drive without loading clouds.
SplitCounts count_drive(const std::filesystem::path& root, int drive_id);

/// Per-class mean (h, w, l) over the labelled objects of `drives`; classes
/// without instances fall back to `fallback`.
std::vector<Vec3> class_mean_sizes(const std::vector<const DriveRecord*>& drives,
                                   const std::vector<Vec3>& fallback);

// ---------------------------------------------------------------------------
// Temporal sequences

struct FrameSample {
  int frame = 0;
  PointCloud points;  // frustum_rotated, exactly num_points
  double frustum_angle = 0;
  std::vector<int> seg_labels;  // 1 inside the ground-truth box
  Box3D gt_box;                 // rectified camera frame
  Box2D box2d;
  std::size_t raw_frustum_size = 0;
};

struct SequenceSample {
  int drive_id = 0;
  int track_id = 0;
  ObjectClass cls = ObjectClass::Car;
  std::array<double, kNumClasses> one_hot{};
  /// Oldest first; the last entry is the frame being detected.
  std::vector<FrameSample> frames;
  /// Targets of the newest frame with zero centroid and zero T-Net offset,
  /// so center_residual is the box center in the frustum frame.
  geometry::BoxTargets targets;
  TrackedObjectRecord record;

  std::size_t tau_eff() const { return frames.size(); }
  const FrameSample& newest() const { return frames.back(); }
};

struct SequenceOptions {
  int tau = 3;
  std::size_t num_points = 1024;
  std::uint64_t seed = 17;
};

struct SequenceBuildResult {
  std::vector<SequenceSample> samples;
  std::size_t skipped_empty = 0;
};

/// One sample per (frame, Car/Pedestrian/Cyclist object) with a non-empty
/// frustum. History runs backwards while the track exists with a non-empty
/// frustum, stopping at the first gap.
SequenceBuildResult build_sequence_samples(const DriveRecord& drive, const SequenceOptions& opt,
                                           const geometry::BoxCoder& coder);

/// Keeps the newest `tau` frames.
SequenceSample truncate_history(const SequenceSample& s, int tau);

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

// ---------------------------------------------------------------------------
// Synthetic drives

struct OcclusionWindow {
  int track_id = 1;
  int first_frame = 0;
  int last_frame = 0;
  double drop_fraction = 1.0;
};

struct SynthConfig {
  int drive_id = 0;
  int num_objects = 6;
  int num_frames = 40;
  std::array<double, kNumClasses> class_mix{0.6, 0.25, 0.15};
  double speed_min = 0.0;  // m/s
  double speed_max = 6.0;
  double frame_rate = 10.0;
  /// Object surface points per square meter at 1 m range; the count falls
  /// off with the squared distance.
  double point_density = 2500.0;
  double noise_sigma = 0.02;
  /// Per-dimension relative spread of object sizes around the class means.
  double size_jitter = 0.15;
  std::vector<Vec3> class_sizes{{1.53, 1.63, 3.88}, {1.76, 0.66, 0.84}, {1.74, 0.60, 1.76}};
  std::vector<OcclusionWindow> occlusions;
  int ground_points = 0;
  double camera_height = 1.65;
  double focal = 721.0;
  double cu = 621.0;
  double cv = 187.5;
  int image_width = 1242;
  int image_height = 375;
  double min_depth = 6.0;
  double max_depth = 40.0;
  std::uint64_t seed = 17;

  /// Throws Error naming the offending field.
  void validate() const;
};

/// Flat key=value text; unknown keys and malformed values throw ParseError.
/// Occlusion windows use "occlusion = track first last fraction" lines.
SynthConfig parse_synth_config(std::istream& is);

DriveRecord synth_generate(const SynthConfig& cfg);

/// Adds `windows_per_track` random windows per object of `length_min..max`
/// frames dropping a fraction in [fraction_min, fraction_max].
void script_random_occlusions(SynthConfig& cfg, int windows_per_track, int length_min,
                              int length_max, double fraction_min, double fraction_max,
                              std::uint64_t seed);

}  // namespace tfn::data
