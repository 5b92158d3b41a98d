// SPDX-License-Identifier: Apache-2.0
#include <limits>
#include <map>
#include <optional>

#include "tfn/data.hpp"

namespace tfn::data {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct FrameCache {
  PointCloud rect;
  geometry::ImageProjection proj;
};

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t s = splitmix64(root);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ b);
  return splitmix64(s ^ c);
}

SequenceBuildResult build_sequence_samples(const DriveRecord& drive, const SequenceOptions& opt,
                                           const geometry::BoxCoder& coder) {
  if (opt.tau < 1) throw Error("sequence tau must be at least 1");
  if (opt.num_points == 0) throw Error("sequence num_points must be positive");

  std::map<std::size_t, FrameCache> frames;
  auto frame_cache = [&](std::size_t f) -> const FrameCache& {
    auto it = frames.find(f);
    if (it != frames.end()) return it->second;
    FrameCache fc;
    fc.rect = geometry::velo_to_rect(drive.cloud(f), drive.calib);
    fc.proj = geometry::rect_to_image(fc.rect, drive.calib);
    return frames.emplace(f, std::move(fc)).first->second;
  };

  std::map<std::pair<std::size_t, int>, std::optional<FrameSample>> samples;
  auto frame_sample = [&](std::size_t f, const TrackedObjectRecord& rec) -> const std::optional<FrameSample>& {
    const auto key = std::make_pair(f, rec.track_id);
    auto it = samples.find(key);
    if (it != samples.end()) return it->second;
    std::optional<FrameSample> out;
    const FrameCache& fc = frame_cache(f);
    const auto idx = geometry::select_in_box(fc.proj, rec.box2d);
    if (!idx.empty()) {
      PointCloud sub;
      sub.frame = geometry::Frame::camera_rect;
      sub.points.reserve(idx.size());
      for (std::size_t i : idx) sub.points.push_back(fc.rect.points[i]);
      const auto rot = geometry::rotate_to_frustum_axis(sub, rec.box2d, drive.calib);
      FrameSample s;
      s.frame = static_cast<int>(f);
      s.frustum_angle = rot.angle;
      s.raw_frustum_size = idx.size();
      s.points = geometry::resample_points(
          rot.cloud, opt.num_points,
          derive_seed(opt.seed, static_cast<std::uint64_t>(drive.drive_id), f,
                      static_cast<std::uint64_t>(static_cast<std::int64_t>(rec.track_id))));
      s.gt_box = rec.box3d;
      s.box2d = rec.box2d;
      const Box3D local = geometry::box_to_frustum(rec.box3d, rot.angle);
      s.seg_labels.reserve(s.points.size());
      for (const auto& p : s.points.points) s.seg_labels.push_back(geometry::point_in_box(p, local) ? 1 : 0);
      out = std::move(s);
    }
    return samples.emplace(key, std::move(out)).first->second;
  };

  auto find_track = [&](std::size_t f, int track_id) -> const TrackedObjectRecord* {
    for (const auto& r : drive.objects(f))
      if (r.track_id == track_id && class_index(r.cls) >= 0) return &r;
    return nullptr;
  };

  SequenceBuildResult result;
  for (std::size_t t = 0; t < drive.num_frames(); ++t) {
    for (const auto& rec : drive.objects(t)) {
      const int k = class_index(rec.cls);
      if (k < 0) continue;
      if (!rec.box2d.valid()) {
        ++result.skipped_empty;
        continue;
      }
      const auto& newest = frame_sample(t, rec);
      if (!newest) {
        ++result.skipped_empty;
        continue;
      }
      SequenceSample s;
      s.drive_id = drive.drive_id;
      s.track_id = rec.track_id;
      s.cls = rec.cls;
      s.one_hot[static_cast<std::size_t>(k)] = 1.0;
      s.record = rec;
      s.frames.push_back(*newest);
      for (int back = 1; back < opt.tau && static_cast<std::size_t>(back) <= t; ++back) {
        const std::size_t f = t - static_cast<std::size_t>(back);
        const TrackedObjectRecord* prev = find_track(f, rec.track_id);
        if (!prev || !prev->box2d.valid()) break;
        const auto& fs = frame_sample(f, *prev);
        if (!fs) break;
        s.frames.insert(s.frames.begin(), *fs);
      }
      s.targets = coder.encode(rec.box3d, k, newest->frustum_angle, Vec3::Zero(), Vec3::Zero());
      result.samples.push_back(std::move(s));
    }
    // Frames older than the history window are no longer needed.
    if (t + 1 >= static_cast<std::size_t>(opt.tau)) {
      const std::size_t keep_from = t + 2 - static_cast<std::size_t>(opt.tau);
      frames.erase(frames.begin(), frames.lower_bound(keep_from));
      samples.erase(samples.begin(), samples.lower_bound({keep_from, std::numeric_limits<int>::min()}));
    }
  }
  return result;
}

SequenceSample truncate_history(const SequenceSample& s, int tau) {
  if (tau < 1) throw Error("truncate_history: tau must be at least 1");
  SequenceSample out = s;
  if (out.frames.size() > static_cast<std::size_t>(tau)) {
    out.frames.erase(out.frames.begin(), out.frames.end() - tau);
  }
  return out;
}

}  // namespace tfn::data
