// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Geometry>

#include "oracles.hpp"
#include "tfn/geometry.hpp"

using namespace tfn;
using namespace tfn::geometry;

namespace {

Calibration random_calibration(std::mt19937_64& rng) {
  Calibration c = pinhole_calibration(700.0, 600.0, 180.0);
  const auto a = oracle::uniform(rng, 3, -0.05, 0.05);
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(a[0], Eigen::Vector3d::UnitX()) *
                             Eigen::AngleAxisd(a[1], Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(a[2], Eigen::Vector3d::UnitZ()))
                                .toRotationMatrix();
  c.r_rect.topLeftCorner<3, 3>() = r;
  const auto t = oracle::uniform(rng, 3, -0.5, 0.5);
  for (int i = 0; i < 3; ++i) c.velo_to_cam(i, 3) = t[static_cast<std::size_t>(i)];
  c.p2(0, 3) = 40.0;
  c.p2(1, 3) = -0.3;
  c.p2(2, 3) = 0.002;
  return c;
}

Box3D random_box(std::mt19937_64& rng, double spread = 2.0) {
  std::uniform_real_distribution<double> size(0.5, 3.0), pos(-spread, spread), ang(-kPi, kPi);
  Box3D b;
  b.h = size(rng);
  b.w = size(rng);
  b.l = size(rng);
  b.cx = pos(rng);
  b.cy = pos(rng) * 0.3;
  b.cz = pos(rng);
  b.heading = ang(rng);
  return b;
}

// Point membership from the box definition: inverse-rotate into the box
// frame and compare against the half extents.
bool inside_oracle(const Vec3& p, const Box3D& b) {
  const double dx = p.x() - b.cx, dz = p.z() - b.cz;
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  // Box frame axes: forward (c, 0, -s), lateral (s, 0, c).
  const double along = dx * c - dz * s;
  const double across = dx * s + dz * c;
  return std::abs(along) <= b.l / 2 && std::abs(across) <= b.w / 2 && p.y() <= b.cy && p.y() >= b.cy - b.h;
}

double monte_carlo_iou(const Box3D& a, const Box3D& b, std::size_t samples, std::uint64_t seed) {
  // Sample in an axis-aligned region containing both boxes.
  double lo[3] = {1e9, 1e9, 1e9}, hi[3] = {-1e9, -1e9, -1e9};
  for (const auto& box : {a, b})
    for (const auto& c : box3d_corners(box))
      for (int i = 0; i < 3; ++i) {
        lo[i] = std::min(lo[i], c[i]);
        hi[i] = std::max(hi[i], c[i]);
      }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t in_a = 0, in_b = 0, both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Vec3 p(lo[0] + (hi[0] - lo[0]) * u(rng), lo[1] + (hi[1] - lo[1]) * u(rng), lo[2] + (hi[2] - lo[2]) * u(rng));
    const bool ia = inside_oracle(p, a), ib = inside_oracle(p, b);
    in_a += ia;
    in_b += ib;
    both += ia && ib;
  }
  const double uni = static_cast<double>(in_a + in_b - both);
  return uni > 0 ? static_cast<double>(both) / uni : 0.0;
}

std::vector<double> perfect_head(const BoxTargets& t, const BoxCoder& coder) {
  const HeadLayout lay = coder.layout();
  std::vector<double> h(lay.total(), 0.0);
  for (int i = 0; i < 3; ++i) h[static_cast<std::size_t>(i)] = t.center_residual[i];
  h[lay.heading_scores() + static_cast<std::size_t>(t.heading_bin)] = 10.0;
  h[lay.heading_residuals() + static_cast<std::size_t>(t.heading_bin)] = t.heading_residual;
  h[lay.size_scores() + static_cast<std::size_t>(t.size_class)] = 10.0;
  for (int i = 0; i < 3; ++i) h[lay.size_residuals() + 3 * static_cast<std::size_t>(t.size_class) + static_cast<std::size_t>(i)] = t.size_residual[i];
  return h;
}

const std::vector<Vec3> kAnchors{{1.53, 1.63, 3.88}, {1.76, 0.66, 0.84}, {1.74, 0.60, 1.76}};

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("velo_to_rect equals the explicit matrix chain") {
  PointCloud pc;
  pc.points = {{1, 2, 3}, {-4, 0.5, 9}};
  Calibration id;
  CHECK(velo_to_rect(pc, id).points == pc.points);

  Calibration shift;
  shift.velo_to_cam(0, 3) = 1.0;
  const PointCloud shifted = velo_to_rect(pc, shift);
  for (std::size_t i = 0; i < pc.size(); ++i) CHECK(shifted.points[i].x() == pc.points[i].x() + 1.0);
  CHECK(shifted.frame == Frame::camera_rect);

  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const Calibration c = random_calibration(rng);
    const auto v = oracle::uniform(rng, 3, -20, 20);
    PointCloud one;
    one.points = {{v[0], v[1], v[2]}};
    // Explicit 4x4 products written out by hand.
    double hv[4] = {v[0], v[1], v[2], 1.0}, cam[4] = {0, 0, 0, 0}, rect[4] = {0, 0, 0, 0};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) cam[i] += c.velo_to_cam(i, j) * hv[j];
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) rect[i] += c.r_rect(i, j) * cam[j];
    const Vec3 got = velo_to_rect(one, c).points[0];
    for (int i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(rect[i]).epsilon(1e-12));
  }
}

TEST_CASE("projection onto the image") {
  const Calibration c = pinhole_calibration(721.0, 621.0, 187.5);
  PointCloud pc;
  pc.frame = Frame::camera_rect;
  pc.points = {{0, 0, 10}, {1, 1, 0}, {0.5, -0.2, 0.05}};
  const ImageProjection proj = rect_to_image(pc, c);
  CHECK(proj.valid[0] == 1);
  CHECK(proj.uv[0].x() == doctest::Approx(621.0));
  CHECK(proj.uv[0].y() == doctest::Approx(187.5));
  CHECK(proj.valid[1] == 0);
  CHECK(proj.valid[2] == 0);

  std::mt19937_64 rng(22);
  for (int t = 0; t < 20; ++t) {
    const Calibration rc = random_calibration(rng);
    const auto v = oracle::uniform(rng, 3, -5, 5);
    PointCloud one;
    one.frame = Frame::camera_rect;
    one.points = {{v[0], v[1], 10 + v[2]}};
    const double x = v[0], y = v[1], z = 10 + v[2];
    const double den = rc.p2(2, 0) * x + rc.p2(2, 1) * y + rc.p2(2, 2) * z + rc.p2(2, 3);
    const double u = (rc.p2(0, 0) * x + rc.p2(0, 1) * y + rc.p2(0, 2) * z + rc.p2(0, 3)) / den;
    const double w = (rc.p2(1, 0) * x + rc.p2(1, 1) * y + rc.p2(1, 2) * z + rc.p2(1, 3)) / den;
    const auto p = rect_to_image(one, rc);
    CHECK(p.uv[0].x() == doctest::Approx(u).epsilon(1e-12));
    CHECK(p.uv[0].y() == doctest::Approx(w).epsilon(1e-12));
  }
}

TEST_CASE("frustum extraction matches a per-point scan") {
  std::mt19937_64 rng(23);
  const Calibration c = random_calibration(rng);
  PointCloud pc;
  for (int i = 0; i < 2000; ++i) {
    const auto v = oracle::uniform(rng, 3, -30, 30);
    pc.points.emplace_back(v[0] + 30, v[1], v[2] * 0.1);
  }
  Box2D full{-1e9, -1e9, 1e9, 1e9};
  const auto all = extract_frustum(pc, full, c);
  const PointCloud rect = velo_to_rect(pc, c);
  std::size_t in_front = 0;
  for (const auto& p : rect.points) in_front += p.z() > kMinDepth;
  CHECK(all.size() == in_front);

  CHECK(extract_frustum(pc, Box2D{-5000, -5000, -4999, -4999}, c).empty());

  const Box2D box{500, 120, 700, 260};
  const auto got = extract_frustum(pc, box, c);
  std::vector<std::size_t> want;
  for (std::size_t i = 0; i < rect.size(); ++i) {
    const Vec3& p = rect.points[i];
    if (p.z() <= kMinDepth) continue;
    const Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
    const Eigen::Vector3d q = c.p2 * h;
    const double u = q.x() / q.z(), v = q.y() / q.z();
    if (u > box.x1 && u < box.x2 && v > box.y1 && v < box.y2) want.push_back(i);
  }
  CHECK(got == want);
  CHECK(!want.empty());
}

TEST_CASE("frustum rotation") {
  const Calibration c = pinhole_calibration(721.0, 621.0, 187.5);
  PointCloud pc;
  pc.frame = Frame::camera_rect;
  pc.points = {{1, 2, 3}, {-2, 0.5, 12}};
  const auto aligned = rotate_to_frustum_axis(pc, Box2D{600, 150, 642, 225}, c);
  CHECK(aligned.angle == doctest::Approx(0.0));
  for (std::size_t i = 0; i < pc.size(); ++i) CHECK((aligned.cloud.points[i] - pc.points[i]).norm() < 1e-12);

  std::mt19937_64 rng(24);
  for (int t = 0; t < 50; ++t) {
    const auto v = oracle::uniform(rng, 2, 50, 1150);
    const Box2D box{v[0] - 40, 120, v[0] + 40, 240};
    PointCloud cloud;
    cloud.frame = Frame::camera_rect;
    for (int i = 0; i < 6; ++i) {
      const auto q = oracle::uniform(rng, 3, -10, 10);
      cloud.points.emplace_back(q[0], q[1], q[2] + 20);
    }
    const auto r = rotate_to_frustum_axis(cloud, box, c);
    const PointCloud back = rotate_y(r.cloud, r.angle);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      CHECK((back.points[i] - cloud.points[i]).norm() < 1e-9);
      for (std::size_t j = 0; j < cloud.size(); ++j) {
        const double before = (cloud.points[i] - cloud.points[j]).norm();
        const double after = (r.cloud.points[i] - r.cloud.points[j]).norm();
        CHECK(std::abs(before - after) < 1e-9);
      }
    }
    // A point on the ray through the box center lands on the +z axis.
    const double u = 0.5 * (box.x1 + box.x2);
    PointCloud ray;
    ray.frame = Frame::camera_rect;
    ray.points = {{(u - 621.0) * 15.0 / 721.0, 0.0, 15.0}};
    const Vec3 on_axis = rotate_y(ray, -r.angle).points[0];
    CHECK(std::abs(on_axis.x()) < 1e-9 * on_axis.z());
    CHECK(on_axis.z() > 0);
  }
}

TEST_CASE("resampling") {
  PointCloud pc;
  for (int i = 0; i < 10; ++i) pc.points.emplace_back(i, 0, 0);
  const PointCloud perm = resample_points(pc, 10, 5);
  std::multiset<double> xs;
  for (const auto& p : perm.points) xs.insert(p.x());
  CHECK(xs == std::multiset<double>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

  PointCloud one;
  one.points = {{1, 2, 3}};
  const PointCloud copies = resample_points(one, 7, 5);
  CHECK(copies.size() == 7);
  for (const auto& p : copies.points) CHECK(p == Vec3(1, 2, 3));

  const PointCloud a = resample_points(pc, 4, 99), b = resample_points(pc, 4, 99);
  CHECK(a.points == b.points);
  std::set<double> distinct;
  for (const auto& p : a.points) distinct.insert(p.x());
  CHECK(distinct.size() == 4);
  CHECK_THROWS_AS(resample_points(PointCloud{}, 3, 1), Error);
}

TEST_CASE("heading and box encoding") {
  const BoxCoder coder(12, kAnchors);
  CHECK(coder.encode_heading(0.0) == std::pair<int, double>{0, 0.0});
  const auto [bin, res] = coder.encode_heading(kPi / 2 + 0.1);
  CHECK(bin == 3);
  CHECK(res == doctest::Approx(0.1 / (kPi / 12)).epsilon(1e-12));
  CHECK(coder.decode_heading(3, 0.0) == doctest::Approx(kPi / 2).epsilon(1e-15));

  Box3D gt;
  gt.cx = 1.0;
  gt.cy = 1.5;
  gt.cz = 20.0;
  const Vec3 centroid = rotate_y(gt.center(), -0.2) - Vec3(0.1, 0.0, 0.3);
  const BoxTargets t = coder.encode(gt, 0, 0.2, centroid, Vec3(0.1, 0.0, 0.3));
  CHECK(t.center_residual.norm() < 1e-12);

  BoxTargets bin3;
  bin3.heading_bin = 3;
  const Box3D d = coder.decode(perfect_head(bin3, coder), Vec3::Zero(), Vec3::Zero(), 0.0);
  CHECK(d.heading == doctest::Approx(kPi / 2).epsilon(1e-15));

  BoxTargets shrink;
  shrink.size_residual = Vec3(-1.5, 0.0, 0.0);
  DecodeStats stats;
  const Box3D clamped = coder.decode(perfect_head(shrink, coder), Vec3::Zero(), Vec3::Zero(), 0.0, &stats);
  CHECK(clamped.h == 0.01);
  CHECK(stats.clamped_sizes == 1);
  CHECK_THROWS_AS(coder.decode(std::vector<double>(5, 0.0), Vec3::Zero(), Vec3::Zero(), 0.0), ShapeError);
}

TEST_CASE("decode inverts encode on random boxes") {
  const BoxCoder coder(12, kAnchors);
  std::mt19937_64 rng(25);
  for (int t = 0; t < 1000; ++t) {
    Box3D gt = random_box(rng, 20.0);
    gt.heading = oracle::uniform(rng, 1, -3 * kPi, 3 * kPi)[0];
    const int cls = t % 3;
    const double angle = oracle::uniform(rng, 1, -0.7, 0.7)[0];
    const auto cv = oracle::uniform(rng, 3, -2, 2), tv = oracle::uniform(rng, 3, -1, 1);
    const Vec3 centroid(cv[0], cv[1], cv[2]), tnet(tv[0], tv[1], tv[2]);
    const BoxTargets targets = coder.encode(gt, cls, angle, centroid, tnet);
    CHECK(targets.size_class == cls);
    CHECK(std::abs(targets.heading_residual) <= 1.0 + 1e-12);
    const Box3D back = coder.decode(perfect_head(targets, coder), centroid, tnet, angle);
    CHECK(std::abs(back.cx - gt.cx) < 1e-9);
    CHECK(std::abs(back.cy - gt.cy) < 1e-9);
    CHECK(std::abs(back.cz - gt.cz) < 1e-9);
    CHECK(std::abs(back.h - gt.h) < 1e-9);
    CHECK(std::abs(back.w - gt.w) < 1e-9);
    CHECK(std::abs(back.l - gt.l) < 1e-9);
    CHECK(std::abs(wrap_angle(back.heading - gt.heading)) < 1e-9);
  }
}

TEST_CASE("box corners") {
  Box3D cube;
  cube.h = cube.w = cube.l = 2.0;
  for (const auto& c : box3d_corners(cube)) {
    CHECK(std::abs(std::abs(c.x()) - 1.0) < 1e-15);
    CHECK(std::abs(std::abs(c.z()) - 1.0) < 1e-15);
    CHECK((c.y() == 0.0 || c.y() == -2.0));
  }

  Box3D b;
  b.l = 4.0;
  b.w = 1.0;
  b.heading = kPi / 2;
  double xspan = 0, zspan = 0;
  for (const auto& c : box3d_corners(b)) {
    xspan = std::max(xspan, std::abs(c.x()));
    zspan = std::max(zspan, std::abs(c.z()));
  }
  CHECK(xspan == doctest::Approx(0.5));
  CHECK(zspan == doctest::Approx(2.0));

  std::mt19937_64 rng(26);
  for (int t = 0; t < 200; ++t) {
    const Box3D r = random_box(rng, 10.0);
    const auto c = box3d_corners(r);
    Vec3 mean = Vec3::Zero();
    for (const auto& p : c) mean += p / 8.0;
    CHECK((mean - Vec3(r.cx, r.cy - r.h / 2, r.cz)).norm() < 1e-9);
    CHECK(std::abs((c[0] - c[3]).norm() - r.l) < 1e-9);
    CHECK(std::abs((c[0] - c[1]).norm() - r.w) < 1e-9);
    CHECK(std::abs((c[0] - c[4]).norm() - r.h) < 1e-9);
    for (const auto& p : c) CHECK(point_in_box(r.center() + 0.999 * (p - r.center()), r));
  }
}

TEST_CASE("point_in_box agrees with the inverse-rotation oracle") {
  std::mt19937_64 rng(27);
  for (int t = 0; t < 50; ++t) {
    const Box3D b = random_box(rng);
    for (int i = 0; i < 200; ++i) {
      const auto v = oracle::uniform(rng, 3, -4, 4);
      const Vec3 p(v[0], v[1], v[2]);
      CHECK(point_in_box(p, b) == inside_oracle(p, b));
    }
  }
}

TEST_CASE("iou3d fixed cases") {
  std::mt19937_64 rng(28);
  const Box3D a = random_box(rng);
  CHECK(iou3d(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  Box3D far = a;
  far.cx += 100;
  CHECK(iou3d(a, far) == 0.0);
  Box3D u1, u2;
  u2.cx = 0.5;
  CHECK(iou3d(u1, u2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // Stacked vertically with no overlap in y.
  Box3D above = u1;
  above.cy = -1.0;
  CHECK(iou3d(u1, above) == 0.0);
  CHECK(iou3d(u1, above, IouMode::bev) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("iou3d properties and Monte-Carlo agreement") {
  std::mt19937_64 rng(29);
  for (int t = 0; t < 300; ++t) {
    const Box3D a = random_box(rng, 1.0), b = random_box(rng, 1.0);
    const double ab = iou3d(a, b), ba = iou3d(b, a);
    CHECK(std::abs(ab - ba) <= 1e-12);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
  }
  for (int t = 0; t < 8; ++t) {
    const Box3D a = random_box(rng, 0.8), b = random_box(rng, 0.8);
    CHECK(std::abs(iou3d(a, b) - monte_carlo_iou(a, b, 200000, 100 + static_cast<std::uint64_t>(t))) < 0.02);
  }
}

TEST_CASE("polygon clipping") {
  const Polygon2 sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const Polygon2 shifted{{0.5, 0.5}, {1.5, 0.5}, {1.5, 1.5}, {0.5, 1.5}};
  CHECK(polygon_area(clip_convex(sq, shifted)) == doctest::Approx(0.25));
  CHECK(std::abs(polygon_area(sq)) == doctest::Approx(1.0));
  const Polygon2 away{{5, 5}, {6, 5}, {6, 6}, {5, 6}};
  CHECK(polygon_area(clip_convex(sq, away)) == 0.0);
}

TEST_CASE("projected boxes bound the projected corners") {
  const Calibration c = pinhole_calibration(721.0, 621.0, 187.5);
  Box3D b;
  b.h = 1.5;
  b.w = 1.6;
  b.l = 3.9;
  b.cx = 2.0;
  b.cy = 1.6;
  b.cz = 15.0;
  b.heading = 0.4;
  bool ok = false;
  const Box2D box = project_box(b, c, &ok);
  CHECK(ok);
  for (const auto& p : box3d_corners(b)) {
    const double u = 721.0 * p.x() / p.z() + 621.0, v = 721.0 * p.y() / p.z() + 187.5;
    CHECK(u >= box.x1 - 1e-9);
    CHECK(u <= box.x2 + 1e-9);
    CHECK(v >= box.y1 - 1e-9);
    CHECK(v <= box.y2 + 1e-9);
  }
  b.cz = 0.0;
  (void)project_box(b, c, &ok);
  CHECK(!ok);
}

TEST_CASE("wrap_angle range") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  std::mt19937_64 rng(30);
  for (double a : oracle::uniform(rng, 500, -50, 50)) {
    const double w = wrap_angle(a);
    CHECK(w > -kPi);
    CHECK(w <= kPi);
    CHECK(std::abs(std::remainder(w - a, 2 * kPi)) < 1e-9);
  }
}

}  // TEST_SUITE
