// SPDX-License-Identifier: Apache-2.0
#include "tfn/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

namespace tfn::geometry {

void Calibration::validate() const {
  const Eigen::Matrix3d r = r_rect.topLeftCorner<3, 3>();
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
    throw Error("calibration: R_rect is not orthonormal");
  }
  const Eigen::RowVector4d bottom = velo_to_cam.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error("calibration: Tr_velo_cam bottom row must be (0, 0, 0, 1)");
  }
}

Calibration pinhole_calibration(double focal, double cu, double cv) {
  Calibration c;
  c.p2 << focal, 0, cu, 0,
          0, focal, cv, 0,
          0, 0, 1, 0;
  c.r_rect.setIdentity();
  c.velo_to_cam << 0, -1, 0, 0,
                   0, 0, -1, 0,
                   1, 0, 0, 0,
                   0, 0, 0, 1;
  return c;
}

double iou2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.width() * a.height() + b.width() * b.height() - inter);
}

double wrap_angle(double a) {
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r <= 0) r += 2.0 * kPi;
  return r - kPi;
}

PointCloud velo_to_rect(const PointCloud& pc, const Calibration& calib) {
  if (pc.frame != Frame::velodyne) throw Error("velo_to_rect: input cloud is not in the velodyne frame");
  const Eigen::Matrix4d m = calib.velo_to_rect();
  const Eigen::Matrix3d rot = m.topLeftCorner<3, 3>();
  const Vec3 t = m.topRightCorner<3, 1>();
  PointCloud out;
  out.frame = Frame::camera_rect;
  out.points.reserve(pc.size());
  for (const auto& p : pc.points) out.points.push_back(rot * p + t);
  return out;
}

ImageProjection rect_to_image(const PointCloud& pc, const Calibration& calib) {
  if (pc.frame != Frame::camera_rect) throw Error("rect_to_image: input cloud is not in camera_rect");
  ImageProjection proj;
  proj.uv.reserve(pc.size());
  proj.valid.reserve(pc.size());
  for (const auto& p : pc.points) {
    const Eigen::Vector3d h = calib.p2 * p.homogeneous();
    const bool ok = p.z() > kMinDepth && h.z() != 0.0;
    proj.valid.push_back(ok ? 1 : 0);
    proj.uv.emplace_back(ok ? h.x() / h.z() : 0.0, ok ? h.y() / h.z() : 0.0);
  }
  return proj;
}

std::vector<std::size_t> extract_frustum(const PointCloud& pc, const Box2D& box,
                                         const Calibration& calib) {
  return select_in_box(rect_to_image(velo_to_rect(pc, calib), calib), box);
}

std::vector<std::size_t> select_in_box(const ImageProjection& proj, const Box2D& box) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < proj.uv.size(); ++i) {
    if (!proj.valid[i]) continue;
    const auto& uv = proj.uv[i];
    if (uv.x() > box.x1 && uv.x() < box.x2 && uv.y() > box.y1 && uv.y() < box.y2) idx.push_back(i);
  }
  return idx;
}

Vec3 rotate_y(const Vec3& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {p.x() * c + p.z() * s, p.y(), -p.x() * s + p.z() * c};
}

PointCloud rotate_y(const PointCloud& pc, double angle) {
  PointCloud out;
  out.frame = pc.frame;
  out.points.reserve(pc.size());
  for (const auto& p : pc.points) out.points.push_back(rotate_y(p, angle));
  return out;
}

double frustum_angle(const Box2D& box, const Calibration& calib) {
  // Back-project the 2D box center at a fixed depth and take its azimuth.
  constexpr double kDepth = 20.0;
  const double u = 0.5 * (box.x1 + box.x2);
  const double v = 0.5 * (box.y1 + box.y2);
  const auto& p = calib.p2;
  Eigen::Matrix3d a;
  Eigen::Vector3d rhs;
  a << p(0, 0), p(0, 1), -u,
       p(1, 0), p(1, 1), -v,
       p(2, 0), p(2, 1), -1.0;
  rhs << -(p(0, 2) * kDepth + p(0, 3)), -(p(1, 2) * kDepth + p(1, 3)), -(p(2, 2) * kDepth + p(2, 3));
  const Eigen::Vector3d sol = a.colPivHouseholderQr().solve(rhs);
  return std::atan2(sol.x(), kDepth);
}

FrustumRotation rotate_to_frustum_axis(const PointCloud& pc, const Box2D& box,
                                       const Calibration& calib) {
  if (pc.frame != Frame::camera_rect) {
    throw Error("rotate_to_frustum_axis: input cloud is not in camera_rect");
  }
  FrustumRotation out;
  out.angle = frustum_angle(box, calib);
  out.cloud = rotate_y(pc, -out.angle);
  out.cloud.frame = Frame::frustum_rotated;
  return out;
}

Box3D box_to_frustum(const Box3D& b, double angle) {
  Box3D out = b;
  const Vec3 c = rotate_y(b.center(), -angle);
  out.cx = c.x();
  out.cy = c.y();
  out.cz = c.z();
  out.heading = wrap_angle(b.heading - angle);
  return out;
}

Box3D box_from_frustum(const Box3D& b, double angle) {
  Box3D out = b;
  const Vec3 c = rotate_y(b.center(), angle);
  out.cx = c.x();
  out.cy = c.y();
  out.cz = c.z();
  out.heading = wrap_angle(b.heading + angle);
  return out;
}

PointCloud resample_points(const PointCloud& pc, std::size_t n, std::uint64_t seed) {
  if (pc.empty()) throw Error("resample_points: empty frustum");
  std::mt19937_64 rng(seed);
  PointCloud out;
  out.frame = pc.frame;
  out.points.reserve(n);
  const std::size_t total = pc.size();
  if (total >= n) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.points.push_back(pc.points[idx[i]]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t i = 0; i < n; ++i) out.points.push_back(pc.points[pick(rng)]);
  }
  return out;
}

BoxCoder::BoxCoder(int num_heading_bins, std::vector<Vec3> anchors)
    : nh_(num_heading_bins), anchors_(std::move(anchors)) {
  if (nh_ < 1) throw Error("BoxCoder: need at least one heading bin");
  if (anchors_.empty()) throw Error("BoxCoder: need at least one size anchor");
  for (const auto& a : anchors_) {
    if (!(a.minCoeff() > 0)) throw Error("BoxCoder: anchor sizes must be positive");
  }
}

std::pair<int, double> BoxCoder::encode_heading(double angle) const {
  const double two_pi = 2.0 * kPi;
  const double bw = bin_width();
  double a = std::fmod(angle, two_pi);
  if (a < 0) a += two_pi;
  double shifted = std::fmod(a + 0.5 * bw, two_pi);
  if (shifted < 0) shifted += two_pi;
  int bin = static_cast<int>(std::floor(shifted / bw));
  bin = std::clamp(bin, 0, nh_ - 1);
  const double residual = shifted - (bin * bw + 0.5 * bw);
  return {bin, residual / (0.5 * bw)};
}

double BoxCoder::decode_heading(int bin, double normalized_residual) const {
  return bin_center(bin) + normalized_residual * 0.5 * bin_width();
}

BoxTargets BoxCoder::encode(const Box3D& gt, int size_class, double frustum_angle,
                            const Vec3& mask_centroid, const Vec3& tnet_center) const {
  if (size_class < 0 || size_class >= num_size_classes()) {
    throw Error("BoxCoder::encode: size class " + std::to_string(size_class) + " out of range");
  }
  const Box3D fb = box_to_frustum(gt, frustum_angle);
  BoxTargets t;
  t.center_residual = fb.center() - mask_centroid - tnet_center;
  std::tie(t.heading_bin, t.heading_residual) = encode_heading(fb.heading);
  t.size_class = size_class;
  const Vec3& anchor = anchors_[static_cast<std::size_t>(size_class)];
  t.size_residual = (Vec3(gt.h, gt.w, gt.l) - anchor).cwiseQuotient(anchor);
  return t;
}

Box3D BoxCoder::decode(std::span<const double> head, const Vec3& mask_centroid,
                       const Vec3& tnet_center, double frustum_angle, DecodeStats* stats) const {
  const HeadLayout lay = layout();
  if (head.size() != lay.total()) {
    throw ShapeError("BoxCoder::decode: head output has " + std::to_string(head.size()) +
                     " entries, expected " + std::to_string(lay.total()));
  }
  const Vec3 center = mask_centroid + tnet_center + Vec3(head[0], head[1], head[2]);
  auto argmax = [&](std::size_t off, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
      if (head[off + static_cast<std::size_t>(i)] > head[off + static_cast<std::size_t>(best)]) best = i;
    }
    return best;
  };
  const int bin = argmax(lay.heading_scores(), nh_);
  const double res = head[lay.heading_residuals() + static_cast<std::size_t>(bin)];
  const int cls = argmax(lay.size_scores(), num_size_classes());
  const std::size_t so = lay.size_residuals() + 3 * static_cast<std::size_t>(cls);
  const Vec3& anchor = anchors_[static_cast<std::size_t>(cls)];
  Vec3 size(anchor.x() * (1.0 + head[so]), anchor.y() * (1.0 + head[so + 1]),
            anchor.z() * (1.0 + head[so + 2]));
  bool clamped = false;
  for (int i = 0; i < 3; ++i) {
    if (!(size[i] > 0)) {
      size[i] = 0.01;
      clamped = true;
    }
  }
  if (clamped && stats) ++stats->clamped_sizes;
  Box3D fb;
  fb.h = size.x();
  fb.w = size.y();
  fb.l = size.z();
  fb.cx = center.x();
  fb.cy = center.y();
  fb.cz = center.z();
  fb.heading = decode_heading(bin, res);
  return box_from_frustum(fb, frustum_angle);
}

std::array<Vec3, 8> box3d_corners(const Box3D& b) {
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  const double xs[4] = {hl, hl, -hl, -hl};
  const double zs[4] = {hw, -hw, -hw, hw};
  std::array<Vec3, 8> out;
  for (int face = 0; face < 2; ++face) {
    const double y = face == 0 ? 0.0 : -b.h;
    for (int i = 0; i < 4; ++i) {
      out[static_cast<std::size_t>(face * 4 + i)] = rotate_y(Vec3(xs[i], y, zs[i]), b.heading) + b.center();
    }
  }
  return out;
}

bool point_in_box(const Vec3& p, const Box3D& b) {
  const Vec3 local = rotate_y(p - b.center(), -b.heading);
  return std::abs(local.x()) <= 0.5 * b.l && std::abs(local.z()) <= 0.5 * b.w &&
         local.y() <= 0.0 && local.y() >= -b.h;
}

double polygon_area(const Polygon2& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

Polygon2 clip_convex(const Polygon2& subject, const Polygon2& clip) {
  Polygon2 clip_ccw = clip;
  if (polygon_area(clip_ccw) < 0) std::reverse(clip_ccw.begin(), clip_ccw.end());
  auto cross = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() * b.y() - a.y() * b.x();
  };
  Polygon2 out = subject;
  for (std::size_t e = 0; e < clip_ccw.size() && !out.empty(); ++e) {
    const Eigen::Vector2d a = clip_ccw[e];
    const Eigen::Vector2d b = clip_ccw[(e + 1) % clip_ccw.size()];
    const Eigen::Vector2d edge = b - a;
    Polygon2 input = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Eigen::Vector2d cur = input[i];
      const Eigen::Vector2d prev = input[(i + input.size() - 1) % input.size()];
      const double dc = cross(edge, cur - a);
      const double dp = cross(edge, prev - a);
      const bool cur_in = dc >= 0.0, prev_in = dp >= 0.0;
      if (cur_in != prev_in) {
        const double t = dp / (dp - dc);
        out.push_back(prev + t * (cur - prev));
      }
      if (cur_in) out.push_back(cur);
    }
  }
  return out;
}

namespace {

Polygon2 footprint(const Box3D& b) {
  const auto c = box3d_corners(b);
  Polygon2 poly;
  for (int i = 0; i < 4; ++i) poly.emplace_back(c[static_cast<std::size_t>(i)].x(), c[static_cast<std::size_t>(i)].z());
  return poly;
}

auto key(const Box3D& b) { return std::make_tuple(b.cx, b.cy, b.cz, b.h, b.w, b.l, b.heading); }

}  // namespace

double iou3d(const Box3D& a_in, const Box3D& b_in, IouMode mode) {
  // Canonical operand order makes the result exactly symmetric.
  const bool swap = key(b_in) < key(a_in);
  const Box3D& a = swap ? b_in : a_in;
  const Box3D& b = swap ? a_in : b_in;
  constexpr double kMinArea = 1e-12;
  double inter = std::abs(polygon_area(clip_convex(footprint(a), footprint(b))));
  if (inter < kMinArea) inter = 0.0;
  const double area_a = a.l * a.w, area_b = b.l * b.w;
  double result = 0.0;
  if (mode == IouMode::bev) {
    const double uni = area_a + area_b - inter;
    result = uni > 0 ? inter / uni : 0.0;
  } else {
    const double overlap = std::max(0.0, std::min(a.cy, b.cy) - std::max(a.cy - a.h, b.cy - b.h));
    const double inter3 = inter * overlap;
    const double uni = area_a * a.h + area_b * b.h - inter3;
    result = uni > 0 ? inter3 / uni : 0.0;
  }
  return std::clamp(result, 0.0, 1.0);
}

Box2D project_box(const Box3D& b, const Calibration& calib, bool* ok) {
  PointCloud pc;
  pc.frame = Frame::camera_rect;
  for (const auto& c : box3d_corners(b)) pc.points.push_back(c);
  const ImageProjection proj = rect_to_image(pc, calib);
  bool all = true;
  Box2D out{1e300, 1e300, -1e300, -1e300};
  for (std::size_t i = 0; i < 8; ++i) {
    if (!proj.valid[i]) {
      all = false;
      continue;
    }
    out.x1 = std::min(out.x1, proj.uv[i].x());
    out.y1 = std::min(out.y1, proj.uv[i].y());
    out.x2 = std::max(out.x2, proj.uv[i].x());
    out.y2 = std::max(out.y2, proj.uv[i].y());
  }
  if (ok) *ok = all;
  if (!all) return Box2D{};
  return out;
}

}  // namespace tfn::geometry
