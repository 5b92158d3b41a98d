// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "tfn/data.hpp"

namespace tfn::data {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_numbers(const std::string& text, std::size_t line_no, const std::string& key) {
  std::istringstream is(text);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    double d;
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, d);
    if (ec != std::errc() || ptr != end) {
      throw ParseError("synth config line " + std::to_string(line_no) + ": bad value '" + tok + "' for " + key);
    }
    out.push_back(d);
  }
  return out;
}

// Occlusion level as labelled in KITTI: 0 visible, 1 partly, 2 largely occluded.
int occlusion_level(double fraction) {
  if (fraction < 0.1) return 0;
  if (fraction < 0.5) return 1;
  return 2;
}

struct Track {
  int id = 0;
  ObjectClass cls = ObjectClass::Car;
  Box3D box;  // at frame 0
  Vec3 velocity = Vec3::Zero();  // per frame
};

Box3D at_frame(const Track& t, int f) {
  Box3D b = t.box;
  b.cx += t.velocity.x() * f;
  b.cz += t.velocity.z() * f;
  return b;
}

bool fully_visible(const Box3D& b, const SynthConfig& cfg, const Calibration& calib) {
  bool ok = false;
  const Box2D bb = geometry::project_box(b, calib, &ok);
  return ok && bb.x1 >= 0 && bb.y1 >= 0 && bb.x2 <= cfg.image_width && bb.y2 <= cfg.image_height;
}

Box3D inflated(Box3D b, double margin) {
  b.l += 2 * margin;
  b.w += 2 * margin;
  return b;
}

void sample_surface(const Box3D& b, double density, double noise, std::mt19937_64& rng,
                    std::vector<Vec3>& out) {
  static constexpr int kFaces[6][4] = {{0, 1, 2, 3}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                       {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};
  const auto c = geometry::box3d_corners(b);
  const Vec3 mid = b.center() - Vec3(0, 0.5 * b.h, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, noise);
  for (const auto& f : kFaces) {
    const Vec3& a = c[f[0]];
    const Vec3 e1 = c[f[1]] - a;
    const Vec3 e2 = c[f[3]] - a;
    Vec3 n = e1.cross(e2);
    const double area = n.norm();
    n /= area;
    const Vec3 fc = a + 0.5 * (e1 + e2);
    if (n.dot(fc - mid) < 0) n = -n;
    const double facing = -n.dot(fc) / fc.norm();
    if (facing <= 0) continue;
    const double expected = density * area * facing / fc.squaredNorm();
    std::poisson_distribution<int> count(expected);
    const int k = expected > 0 ? count(rng) : 0;
    for (int i = 0; i < k; ++i) {
      Vec3 p = a + unit(rng) * e1 + unit(rng) * e2;
      if (noise > 0) p += Vec3(gauss(rng), gauss(rng), gauss(rng));
      out.push_back(p);
    }
  }
}

}  // namespace

void SynthConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw Error("synth config: " + field + " " + why);
  };
  if (num_objects < 0) bad("num_objects", "must be non-negative");
  if (num_frames < 1) bad("num_frames", "must be at least 1");
  double mix = 0;
  for (double m : class_mix) {
    if (!(m >= 0)) bad("class_mix", "entries must be non-negative");
    mix += m;
  }
  if (!(mix > 0)) bad("class_mix", "must have a positive entry");
  if (!(speed_min >= 0) || !(speed_max >= speed_min)) bad("speed_min/speed_max", "must satisfy 0 <= min <= max");
  if (!(frame_rate > 0)) bad("frame_rate", "must be positive");
  if (!(point_density >= 0)) bad("point_density", "must be non-negative");
  if (!(noise_sigma >= 0)) bad("noise_sigma", "must be non-negative");
  if (!(size_jitter >= 0 && size_jitter < 1)) bad("size_jitter", "must lie in [0, 1)");
  if (class_sizes.size() != static_cast<std::size_t>(kNumClasses)) bad("class_sizes", "needs one entry per class");
  for (const auto& s : class_sizes)
    if (!(s.minCoeff() > 0)) bad("class_sizes", "must be positive");
  if (ground_points < 0) bad("ground_points", "must be non-negative");
  if (!(camera_height > 0)) bad("camera_height", "must be positive");
  if (!(focal > 0)) bad("focal", "must be positive");
  if (image_width < 1 || image_height < 1) bad("image size", "must be positive");
  if (!(min_depth > geometry::kMinDepth)) bad("min_depth", "must exceed the projection cutoff");
  if (!(max_depth > min_depth)) bad("max_depth", "must exceed min_depth");
  for (const auto& w : occlusions) {
    if (w.track_id < 0 || w.track_id >= num_objects) bad("occlusion", "names unknown track " + std::to_string(w.track_id));
    if (w.first_frame < 0 || w.last_frame < w.first_frame) bad("occlusion", "has an empty frame range");
    if (!(w.drop_fraction >= 0 && w.drop_fraction <= 1)) bad("occlusion", "fraction must lie in [0, 1]");
  }
}

SynthConfig parse_synth_config(std::istream& is) {
  SynthConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("synth config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const auto v = parse_numbers(line.substr(eq + 1), line_no, key);
    auto need = [&](std::size_t n) {
      if (v.size() != n) {
        throw ParseError("synth config line " + std::to_string(line_no) + ": " + key + " takes " +
                         std::to_string(n) + " value(s)");
      }
    };
    auto as_int = [&](double d) {
      if (d != std::floor(d)) {
        throw ParseError("synth config line " + std::to_string(line_no) + ": " + key + " must be an integer");
      }
      return static_cast<int>(d);
    };
    if (key == "occlusion") {
      need(4);
      cfg.occlusions.push_back({as_int(v[0]), as_int(v[1]), as_int(v[2]), v[3]});
    } else if (key == "class_mix") {
      need(3);
      for (std::size_t i = 0; i < 3; ++i) cfg.class_mix[i] = v[i];
    } else if (key == "car_size" || key == "pedestrian_size" || key == "cyclist_size") {
      need(3);
      const std::size_t k = key == "car_size" ? 0 : key == "pedestrian_size" ? 1 : 2;
      cfg.class_sizes[k] = Vec3(v[0], v[1], v[2]);
    } else {
      need(1);
      const double d = v[0];
      if (key == "drive_id") cfg.drive_id = as_int(d);
      else if (key == "num_objects") cfg.num_objects = as_int(d);
      else if (key == "num_frames") cfg.num_frames = as_int(d);
      else if (key == "speed_min") cfg.speed_min = d;
      else if (key == "speed_max") cfg.speed_max = d;
      else if (key == "frame_rate") cfg.frame_rate = d;
      else if (key == "point_density") cfg.point_density = d;
      else if (key == "noise_sigma") cfg.noise_sigma = d;
      else if (key == "size_jitter") cfg.size_jitter = d;
      else if (key == "ground_points") cfg.ground_points = as_int(d);
      else if (key == "camera_height") cfg.camera_height = d;
      else if (key == "focal") cfg.focal = d;
      else if (key == "cu") cfg.cu = d;
      else if (key == "cv") cfg.cv = d;
      else if (key == "image_width") cfg.image_width = as_int(d);
      else if (key == "image_height") cfg.image_height = as_int(d);
      else if (key == "min_depth") cfg.min_depth = d;
      else if (key == "max_depth") cfg.max_depth = d;
      else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(as_int(d));
      else throw ParseError("synth config line " + std::to_string(line_no) + ": unknown key " + key);
    }
  }
  cfg.validate();
  return cfg;
}

DriveRecord synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::discrete_distribution<int> pick_class(cfg.class_mix.begin(), cfg.class_mix.end());

  DriveRecord drive;
  drive.drive_id = cfg.drive_id;
  drive.calib = geometry::pinhole_calibration(cfg.focal, cfg.cu, cfg.cv);
  drive.image_width = cfg.image_width;
  drive.image_height = cfg.image_height;

  const double mid = 0.5 * (cfg.num_frames - 1);
  std::vector<Track> tracks;
  for (int i = 0; i < cfg.num_objects; ++i) {
    Track t;
    t.id = i;
    const int k = pick_class(rng);
    t.cls = class_from_index(k);
    const Vec3& base = cfg.class_sizes[static_cast<std::size_t>(k)];
    auto jitter = [&] { return 1.0 + cfg.size_jitter * (2.0 * unit(rng) - 1.0); };
    t.box.h = base.x() * jitter();
    t.box.w = base.y() * jitter();
    t.box.l = base.z() * jitter();
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      // Later attempts fall back to slower objects, which fit more easily.
      const double speed_scale = attempt < 1000 ? 1.0 : 0.0;
      const double speed = speed_scale * (cfg.speed_min + (cfg.speed_max - cfg.speed_min) * unit(rng));
      const double heading = geometry::wrap_angle(geometry::kPi * (2.0 * unit(rng) - 1.0));
      const double z = cfg.min_depth + (cfg.max_depth - cfg.min_depth) * unit(rng);
      const double u = cfg.image_width * unit(rng);
      const double x = (u - cfg.cu) * z / cfg.focal;
      const Vec3 vel = speed / cfg.frame_rate * Vec3(std::cos(heading), 0.0, -std::sin(heading));
      t.box.heading = heading;
      t.box.cx = x - vel.x() * mid;
      t.box.cy = cfg.camera_height;
      t.box.cz = z - vel.z() * mid;
      t.velocity = vel;
      placed = true;
      for (int f = 0; f < cfg.num_frames && placed; ++f) {
        const Box3D b = at_frame(t, f);
        if (b.cz < cfg.min_depth || b.cz > cfg.max_depth || !fully_visible(b, cfg, drive.calib)) placed = false;
        for (const auto& o : tracks) {
          if (!placed) break;
          if (geometry::iou3d(inflated(b, 0.5), inflated(at_frame(o, f), 0.5), geometry::IouMode::bev) > 0) {
            placed = false;
          }
        }
      }
    }
    if (!placed) throw Error("synth: could not place object " + std::to_string(i) + " without overlap");
    tracks.push_back(t);
  }

  const Eigen::Matrix4d to_rect = drive.calib.velo_to_rect();
  const Eigen::Matrix4d to_velo = to_rect.inverse();
  drive.labels.resize(static_cast<std::size_t>(cfg.num_frames));
  drive.clouds.resize(static_cast<std::size_t>(cfg.num_frames));
  for (int f = 0; f < cfg.num_frames; ++f) {
    std::vector<Vec3> rect_points;
    std::vector<Box3D> boxes;
    for (const auto& t : tracks) {
      const Box3D b = at_frame(t, f);
      boxes.push_back(b);
      std::vector<Vec3> pts;
      sample_surface(b, cfg.point_density, cfg.noise_sigma, rng, pts);

      double drop = 0.0;
      for (const auto& w : cfg.occlusions)
        if (w.track_id == t.id && f >= w.first_frame && f <= w.last_frame) drop = std::max(drop, w.drop_fraction);
      if (drop > 0 && !pts.empty()) {
        // An occluder covers the object from the left image edge inwards.
        std::sort(pts.begin(), pts.end(), [](const Vec3& a, const Vec3& b) { return a.x() / a.z() < b.x() / b.z(); });
        const auto n_drop = static_cast<std::size_t>(std::llround(drop * static_cast<double>(pts.size())));
        pts.erase(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(std::min(n_drop, pts.size())));
      }
      rect_points.insert(rect_points.end(), pts.begin(), pts.end());

      TrackedObjectRecord r;
      r.frame = f;
      r.track_id = t.id;
      r.cls = t.cls;
      r.type = std::string(class_name(t.cls));
      r.occlusion = occlusion_level(drop);
      r.alpha = geometry::wrap_angle(b.heading - std::atan2(b.cx, b.cz));
      r.box2d = geometry::project_box(b, drive.calib);
      r.box3d = b;
      drive.labels[static_cast<std::size_t>(f)].push_back(r);
    }
    std::normal_distribution<double> gauss(0.0, cfg.noise_sigma);
    for (int g = 0; g < cfg.ground_points; ++g) {
      const double z = cfg.min_depth + (cfg.max_depth - cfg.min_depth) * unit(rng);
      const double x = (cfg.image_width * unit(rng) - cfg.cu) * z / cfg.focal;
      const Vec3 p(x, cfg.camera_height + (cfg.noise_sigma > 0 ? gauss(rng) : 0.0), z);
      bool inside = false;
      for (const auto& b : boxes) inside = inside || geometry::point_in_box(p, inflated(b, 0.05));
      if (!inside) rect_points.push_back(p);
    }
    PointCloud& pc = drive.clouds[static_cast<std::size_t>(f)];
    pc.frame = geometry::Frame::velodyne;
    pc.points.reserve(rect_points.size());
    for (const auto& p : rect_points) pc.points.push_back((to_velo * p.homogeneous()).head<3>());
  }
  return drive;
}

void script_random_occlusions(SynthConfig& cfg, int windows_per_track, int length_min, int length_max,
                              double fraction_min, double fraction_max, std::uint64_t seed) {
  if (windows_per_track < 0) throw Error("occlusion script: windows_per_track must be non-negative");
  if (length_min < 1 || length_max < length_min || length_max > cfg.num_frames) {
    throw Error("occlusion script: window length range is invalid for " + std::to_string(cfg.num_frames) + " frames");
  }
  if (!(fraction_min >= 0 && fraction_max >= fraction_min && fraction_max <= 1)) {
    throw Error("occlusion script: fraction range must lie in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(length_min, length_max);
  std::uniform_real_distribution<double> frac(fraction_min, fraction_max);
  for (int t = 0; t < cfg.num_objects; ++t) {
    for (int w = 0; w < windows_per_track; ++w) {
      const int n = len(rng);
      std::uniform_int_distribution<int> start(0, cfg.num_frames - n);
      const int first = start(rng);
      cfg.occlusions.push_back({t, first, first + n - 1, frac(rng)});
    }
  }
}

}  // namespace tfn::data
