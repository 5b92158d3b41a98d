// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "tfn/data.hpp"

namespace tfn::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <class T>
bool parse_number(std::string_view tok, T& out) {
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string drive_name(int drive_id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", drive_id);
  return buf;
}

std::string frame_name(std::size_t frame) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", frame);
  return buf;
}

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

ObjectClass parse_class(std::string_view type) {
  if (type == "Car") return ObjectClass::Car;
  if (type == "Pedestrian") return ObjectClass::Pedestrian;
  if (type == "Cyclist") return ObjectClass::Cyclist;
  if (type == "DontCare") return ObjectClass::DontCare;
  return ObjectClass::Other;
}

std::string_view class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::Car: return "Car";
    case ObjectClass::Pedestrian: return "Pedestrian";
    case ObjectClass::Cyclist: return "Cyclist";
    case ObjectClass::DontCare: return "DontCare";
    case ObjectClass::Other: return "Other";
  }
  return "Other";
}

int class_index(ObjectClass c) {
  switch (c) {
    case ObjectClass::Car: return 0;
    case ObjectClass::Pedestrian: return 1;
    case ObjectClass::Cyclist: return 2;
    default: return -1;
  }
}

ObjectClass class_from_index(int index) {
  switch (index) {
    case 0: return ObjectClass::Car;
    case 1: return ObjectClass::Pedestrian;
    case 2: return ObjectClass::Cyclist;
    default: throw Error("class index " + std::to_string(index) + " out of range");
  }
}

FrameLabels parse_tracking_labels(std::istream& is) {
  FrameLabels frames;
  std::set<std::pair<int, int>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw ParseError("label line " + std::to_string(line_no) + ": " + why);
    };
    if (tok.size() != 17 && tok.size() != 18) {
      fail("expected 17 or 18 fields, got " + std::to_string(tok.size()));
    }
    TrackedObjectRecord r;
    double v[15];
    if (!parse_number(tok[0], r.frame) || r.frame < 0) fail("bad frame index");
    if (!parse_number(tok[1], r.track_id)) fail("bad track id");
    r.type = std::string(tok[2]);
    r.cls = parse_class(tok[2]);
    for (std::size_t i = 3; i < 17; ++i) {
      if (!parse_number(tok[i], v[i - 3])) fail("bad number in field " + std::to_string(i + 1));
    }
    if (tok.size() == 18) {
      double score;
      if (!parse_number(tok[17], score)) fail("bad score");
    }
    r.truncation = v[0];
    r.occlusion = static_cast<int>(std::lround(v[1]));
    r.alpha = v[2];
    r.box2d = Box2D{v[3], v[4], v[5], v[6]};
    r.box3d.h = v[7];
    r.box3d.w = v[8];
    r.box3d.l = v[9];
    r.box3d.cx = v[10];
    r.box3d.cy = v[11];
    r.box3d.cz = v[12];
    r.box3d.heading = v[13];
    if (r.cls != ObjectClass::DontCare && !seen.insert({r.frame, r.track_id}).second) {
      fail("duplicate track " + std::to_string(r.track_id) + " in frame " + std::to_string(r.frame));
    }
    if (frames.size() <= static_cast<std::size_t>(r.frame)) frames.resize(static_cast<std::size_t>(r.frame) + 1);
    frames[static_cast<std::size_t>(r.frame)].push_back(std::move(r));
  }
  return frames;
}

std::string format_tracking_label(const TrackedObjectRecord& r, std::optional<double> score) {
  char buf[512];
  int n = std::snprintf(buf, sizeof buf,
                        "%d %d %s %.6f %d %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f",
                        r.frame, r.track_id, r.type.empty() ? std::string(class_name(r.cls)).c_str() : r.type.c_str(),
                        r.truncation, r.occlusion, r.alpha, r.box2d.x1, r.box2d.y1, r.box2d.x2, r.box2d.y2,
                        r.box3d.h, r.box3d.w, r.box3d.l, r.box3d.cx, r.box3d.cy, r.box3d.cz,
                        r.box3d.heading);
  std::string out(buf, static_cast<std::size_t>(n));
  if (score) {
    std::snprintf(buf, sizeof buf, " %.6f", *score);
    out += buf;
  }
  return out;
}

Calibration parse_calibration(std::istream& is) {
  std::map<std::string, std::vector<double>> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    std::string key(tok[0]);
    if (!key.empty() && key.back() == ':') key.pop_back();
    std::vector<double> nums;
    for (std::size_t i = 1; i < tok.size(); ++i) {
      double d;
      if (!parse_number(tok[i], d)) {
        throw ParseError("calibration line " + std::to_string(line_no) + ": bad number for " + key);
      }
      nums.push_back(d);
    }
    values[key] = std::move(nums);
  }
  auto fetch = [&](std::initializer_list<const char*> keys, std::size_t count) {
    for (const char* k : keys) {
      auto it = values.find(k);
      if (it == values.end()) continue;
      if (it->second.size() != count) {
        throw ParseError(std::string("calibration key ") + k + " needs " + std::to_string(count) +
                         " values, got " + std::to_string(it->second.size()));
      }
      return it->second;
    }
    throw ParseError(std::string("calibration is missing key ") + *keys.begin());
  };
  Calibration c;
  const auto p2 = fetch({"P2"}, 12);
  const auto rr = fetch({"R_rect", "R0_rect"}, 9);
  const auto tr = fetch({"Tr_velo_cam", "Tr_velo_to_cam"}, 12);
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 4; ++col) {
      c.p2(r, col) = p2[static_cast<std::size_t>(r * 4 + col)];
      c.velo_to_cam(r, col) = tr[static_cast<std::size_t>(r * 4 + col)];
    }
    for (int col = 0; col < 3; ++col) c.r_rect(r, col) = rr[static_cast<std::size_t>(r * 3 + col)];
  }
  return c;
}

std::string format_calibration(const Calibration& calib) {
  std::ostringstream os;
  os.precision(12);
  auto row_major = [&](const char* key, auto&& m, int rows, int cols) {
    os << key;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) os << ' ' << m(r, c);
    os << '\n';
  };
  for (const char* p : {"P0:", "P1:", "P2:", "P3:"}) row_major(p, calib.p2, 3, 4);
  row_major("R_rect", calib.r_rect, 3, 3);
  row_major("Tr_velo_cam", calib.velo_to_cam, 3, 4);
  row_major("Tr_imu_velo", Eigen::Matrix4d::Identity(), 3, 4);
  return os.str();
}

PointCloud load_point_cloud(std::istream& is) {
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0) {
    throw ParseError("point cloud truncated: " + std::to_string(bytes.size()) +
                     " bytes, partial record at byte offset " +
                     std::to_string(bytes.size() - bytes.size() % 16));
  }
  PointCloud pc;
  pc.frame = geometry::Frame::velodyne;
  pc.points.reserve(bytes.size() / 16);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    float xyz[3];
    for (int k = 0; k < 3; ++k) {
      const std::uint32_t bits = read_u32_le(p + off + 4 * static_cast<std::size_t>(k));
      std::memcpy(&xyz[k], &bits, 4);
    }
    pc.points.emplace_back(xyz[0], xyz[1], xyz[2]);
  }
  return pc;
}

void write_point_cloud(std::ostream& os, const PointCloud& pc) {
  for (const auto& pt : pc.points) {
    const float vals[4] = {static_cast<float>(pt.x()), static_cast<float>(pt.y()),
                           static_cast<float>(pt.z()), 0.0f};
    for (float f : vals) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      const char b[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                         static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
      os.write(b, 4);
    }
  }
}

std::size_t DriveRecord::num_frames() const {
  return std::max({labels.size(), cloud_paths.size(), clouds.size()});
}

PointCloud DriveRecord::cloud(std::size_t frame) const {
  if (frame < clouds.size()) return clouds[frame];
  if (frame < cloud_paths.size() && !cloud_paths[frame].empty()) {
    std::ifstream is(cloud_paths[frame], std::ios::binary);
    if (!is) throw Error("cannot open point cloud " + cloud_paths[frame]);
    return load_point_cloud(is);
  }
  return PointCloud{};
}

const std::vector<TrackedObjectRecord>& DriveRecord::objects(std::size_t frame) const {
  static const std::vector<TrackedObjectRecord> kNone;
  return frame < labels.size() ? labels[frame] : kNone;
}

void DriveRecord::validate() const {
  for (std::size_t f = 0; f < labels.size(); ++f) {
    std::set<int> ids;
    for (const auto& r : labels[f]) {
      if (r.frame != static_cast<int>(f)) throw Error("drive " + std::to_string(drive_id) + ": record frame mismatch");
      if (r.cls == ObjectClass::DontCare) continue;
      if (!ids.insert(r.track_id).second) {
        throw Error("drive " + std::to_string(drive_id) + ": track " + std::to_string(r.track_id) +
                    " repeated in frame " + std::to_string(f));
      }
    }
  }
}

std::vector<int> list_drives(const fs::path& root) {
  std::vector<int> ids;
  const fs::path dir = root / "label_02";
  if (!fs::is_directory(dir)) throw Error("no label_02 directory under " + root.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".txt") continue;
    int id;
    const std::string stem = e.path().stem().string();
    if (parse_number(std::string_view(stem), id)) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

DriveRecord load_drive(const fs::path& root, int drive_id) {
  DriveRecord d;
  d.drive_id = drive_id;
  const std::string name = drive_name(drive_id);
  {
    std::ifstream is(root / "label_02" / (name + ".txt"));
    if (!is) throw Error("missing label file for drive " + name);
    d.labels = parse_tracking_labels(is);
  }
  {
    std::ifstream is(root / "calib" / (name + ".txt"));
    if (!is) throw Error("missing calibration file for drive " + name);
    d.calib = parse_calibration(is);
  }
  const fs::path vdir = root / "velodyne" / name;
  if (fs::is_directory(vdir)) {
    for (const auto& e : fs::directory_iterator(vdir)) {
      if (e.path().extension() != ".bin") continue;
      std::size_t frame;
      const std::string stem = e.path().stem().string();
      if (!parse_number(std::string_view(stem), frame)) continue;
      if (d.cloud_paths.size() <= frame) d.cloud_paths.resize(frame + 1);
      d.cloud_paths[frame] = e.path().string();
    }
  }
  if (d.labels.size() < d.num_frames()) d.labels.resize(d.num_frames());
  return d;
}

void export_drive(const fs::path& root, const DriveRecord& drive) {
  const std::string name = drive_name(drive.drive_id);
  fs::create_directories(root / "label_02");
  fs::create_directories(root / "calib");
  fs::create_directories(root / "velodyne" / name);
  {
    std::ofstream os(root / "label_02" / (name + ".txt"));
    for (const auto& frame : drive.labels)
      for (const auto& r : frame) os << format_tracking_label(r) << '\n';
  }
  {
    std::ofstream os(root / "calib" / (name + ".txt"));
    os << format_calibration(drive.calib);
  }
  for (std::size_t f = 0; f < drive.num_frames(); ++f) {
    std::ofstream os(root / "velodyne" / name / (frame_name(f) + ".bin"), std::ios::binary);
    write_point_cloud(os, drive.cloud(f));
  }
}

Split split_train_val(const std::vector<int>& drive_ids, const std::optional<std::vector<int>>& val_override) {
  const std::set<int> known(drive_ids.begin(), drive_ids.end());
  std::set<int> val;
  if (val_override) {
    for (int id : *val_override) {
      if (!known.count(id)) throw Error("validation override names unknown drive " + std::to_string(id));
      val.insert(id);
    }
  } else {
    for (int id : kDefaultValDrives)
      if (known.count(id)) val.insert(id);
  }
  Split s;
  for (int id : known) (val.count(id) ? s.val : s.train).push_back(id);
  return s;
}

SplitCounts count_drive(const fs::path& root, int drive_id) {
  const std::string name = drive_name(drive_id);
  std::ifstream is(root / "label_02" / (name + ".txt"));
  if (!is) throw Error("missing label file for drive " + name);
  const FrameLabels labels = parse_tracking_labels(is);
  SplitCounts c;
  std::size_t clouds = 0;
  const fs::path vdir = root / "velodyne" / name;
  if (fs::is_directory(vdir)) {
    for (const auto& e : fs::directory_iterator(vdir))
      if (e.path().extension() == ".bin") ++clouds;
  }
  c.frames = clouds > 0 ? clouds : labels.size();
  for (const auto& frame : labels)
    for (const auto& r : frame) {
      const int k = class_index(r.cls);
      if (k >= 0) ++c.instances[static_cast<std::size_t>(k)];
    }
  return c;
}

std::vector<Vec3> class_mean_sizes(const std::vector<const DriveRecord*>& drives,
                                   const std::vector<Vec3>& fallback) {
  std::vector<Vec3> sum(kNumClasses, Vec3::Zero());
  std::vector<std::size_t> count(kNumClasses, 0);
  for (const auto* d : drives)
    for (const auto& frame : d->labels)
      for (const auto& r : frame) {
        const int k = class_index(r.cls);
        if (k < 0) continue;
        sum[static_cast<std::size_t>(k)] += Vec3(r.box3d.h, r.box3d.w, r.box3d.l);
        ++count[static_cast<std::size_t>(k)];
      }
  std::vector<Vec3> out(kNumClasses);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    out[k] = count[k] ? Vec3(sum[k] / static_cast<double>(count[k])) : fallback.at(k);
  }
  return out;
}

}  // namespace tfn::data
