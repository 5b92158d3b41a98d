// SPDX-License-Identifier: Apache-2.0
/**
 * @file   geometry.hpp
 * @brief  Camera/lidar transforms, frustum extraction, amodal box coding
 *         and rotated-box IoU.
 *
 * Boxes follow the KITTI label convention: rectified camera frame with
 * x right, y down, z forward; (cx, cy, cz) is the center of the bottom face
 * and the heading rotates about +y.
 */
#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tfn/tensor.hpp"

namespace tfn::geometry {

using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = 3.14159265358979323846;
/// Points closer than this along the optical axis do not project.
inline constexpr double kMinDepth = 0.1;

struct Calibration {
  Eigen::Matrix<double, 3, 4> p2 = Eigen::Matrix<double, 3, 4>::Identity();
  Eigen::Matrix4d r_rect = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d velo_to_cam = Eigen::Matrix4d::Identity();

  /// R_rect * T_velo_to_cam.
  Eigen::Matrix4d velo_to_rect() const { return r_rect * velo_to_cam; }
  /// Throws Error when R_rect is not orthonormal or T has a bad bottom row.
  void validate() const;
};

/// Pinhole calibration with identity rectification and a KITTI-style
/// velodyne frame (x forward, y left, z up) sharing the camera origin.
Calibration pinhole_calibration(double focal, double cu, double cv);

enum class Frame { velodyne, camera_rect, frustum_rotated };

struct PointCloud {
  std::vector<Vec3> points;
  Frame frame = Frame::velodyne;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct Box2D {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

double iou2d(const Box2D& a, const Box2D& b);

struct Box3D {
  double h = 1, w = 1, l = 1;
  double cx = 0, cy = 0, cz = 0;
  double heading = 0;

  Vec3 center() const { return {cx, cy, cz}; }
  bool valid() const { return h > 0 && w > 0 && l > 0; }
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

PointCloud velo_to_rect(const PointCloud& pc, const Calibration& calib);

struct ImageProjection {
  std::vector<Eigen::Vector2d> uv;
  std::vector<std::uint8_t> valid;
};

ImageProjection rect_to_image(const PointCloud& pc, const Calibration& calib);

/// Indices of velodyne points whose projection lies strictly inside `box`
/// with rectified depth above kMinDepth.
std::vector<std::size_t> extract_frustum(const PointCloud& pc, const Box2D& box,
                                         const Calibration& calib);
/// The membership test of extract_frustum on precomputed projections.
std::vector<std::size_t> select_in_box(const ImageProjection& proj, const Box2D& box);

/// Rotation about the camera y axis, KITTI convention:
/// x' = x cos(a) + z sin(a), z' = -x sin(a) + z cos(a).
Vec3 rotate_y(const Vec3& p, double angle);
PointCloud rotate_y(const PointCloud& pc, double angle);

/// Azimuth of the ray through the 2D box center, measured from +z towards +x.
double frustum_angle(const Box2D& box, const Calibration& calib);

struct FrustumRotation {
  PointCloud cloud;
  double angle = 0;
};

/// Rotates camera_rect points by -angle so the frustum axis maps to +z.
/// rotate_y(result.cloud, result.angle) restores the input.
FrustumRotation rotate_to_frustum_axis(const PointCloud& pc, const Box2D& box,
                                       const Calibration& calib);

/// Box expressed in the frustum-rotated frame.
Box3D box_to_frustum(const Box3D& b, double angle);
Box3D box_from_frustum(const Box3D& b, double angle);

/// Exactly n points: without replacement when the cloud has at least n,
/// with replacement otherwise. Throws Error on an empty cloud.
PointCloud resample_points(const PointCloud& pc, std::size_t n, std::uint64_t seed);

struct BoxTargets {
  Vec3 center_residual = Vec3::Zero();
  int heading_bin = 0;
  double heading_residual = 0;
  int size_class = 0;
  Vec3 size_residual = Vec3::Zero();
};

/// Layout of the box head's output vector:
/// [center 3 | heading scores NH | heading residuals NH | size scores NS | size residuals NS*3].
struct HeadLayout {
  int num_heading_bins = 12;
  int num_size_classes = 3;

  std::size_t center() const { return 0; }
  std::size_t heading_scores() const { return 3; }
  std::size_t heading_residuals() const { return 3 + num_heading_bins; }
  std::size_t size_scores() const { return 3 + 2 * static_cast<std::size_t>(num_heading_bins); }
  std::size_t size_residuals() const { return size_scores() + num_size_classes; }
  std::size_t total() const {
    return 3 + 2 * static_cast<std::size_t>(num_heading_bins) +
           4 * static_cast<std::size_t>(num_size_classes);
  }
};

struct DecodeStats {
  std::size_t clamped_sizes = 0;
};

/// Heading bins and size anchors shared by target encoding and decoding.
class BoxCoder {
 public:
  /// Anchors are (h, w, l) per size class.
  BoxCoder(int num_heading_bins, std::vector<Vec3> anchors);

  int num_heading_bins() const { return nh_; }
  int num_size_classes() const { return static_cast<int>(anchors_.size()); }
  const std::vector<Vec3>& anchors() const { return anchors_; }
  HeadLayout layout() const { return {nh_, num_size_classes()}; }

  double bin_width() const { return 2.0 * kPi / nh_; }
  double bin_center(int bin) const { return bin * bin_width(); }

  /// Bin and residual (normalized by half a bin width) of an angle.
  std::pair<int, double> encode_heading(double angle) const;
  double decode_heading(int bin, double normalized_residual) const;

  /// `gt` is in the rectified camera frame; its heading is corrected by
  /// -frustum_angle and its center rotated into the frustum frame before the
  /// residual against mask_centroid + tnet_center is taken.
  BoxTargets encode(const Box3D& gt, int size_class, double frustum_angle,
                    const Vec3& mask_centroid, const Vec3& tnet_center) const;

  /// Inverse of encode on raw head outputs (length layout().total()).
  /// Non-positive decoded sizes are clamped to 0.01 m and counted.
  Box3D decode(std::span<const double> head, const Vec3& mask_centroid, const Vec3& tnet_center,
               double frustum_angle, DecodeStats* stats = nullptr) const;

 private:
  int nh_;
  std::vector<Vec3> anchors_;
};

/// Corner order: 0-3 bottom face (y = cy), 4-7 top face (y = cy - h); in
/// box coordinates the (x, z) footprint cycles through
/// (+l/2, +w/2), (+l/2, -w/2), (-l/2, -w/2), (-l/2, +w/2).
std::array<Vec3, 8> box3d_corners(const Box3D& b);

bool point_in_box(const Vec3& p, const Box3D& b);

/// Convex polygon clipping in the (x, z) plane.
using Polygon2 = std::vector<Eigen::Vector2d>;
Polygon2 clip_convex(const Polygon2& subject, const Polygon2& clip);
double polygon_area(const Polygon2& poly);

enum class IouMode { bev, full3d };
double iou3d(const Box3D& a, const Box3D& b, IouMode mode = IouMode::full3d);

/// Tight 2D box around the projected corners. Sets *ok to false (and
/// returns a default box) when any corner lies within kMinDepth.
Box2D project_box(const Box3D& b, const Calibration& calib, bool* ok = nullptr);

}  // namespace tfn::geometry
