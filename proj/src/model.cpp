// SPDX-License-Identifier: Apache-2.0
#include "tfn/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <random>
#include <sstream>

#include "tfn/ops.hpp"

namespace tfn::model {

Branching parse_branching(std::string_view s) {
  if (s == "ob" || s == "OB") return Branching::ob;
  if (s == "tb" || s == "TB") return Branching::tb;
  if (s == "ours" || s == "OURS") return Branching::ours;
  throw Error("unknown branching '" + std::string(s) + "' (expected ob, tb or ours)");
}

std::string_view branching_name(Branching b) {
  switch (b) {
    case Branching::ob: return "ob";
    case Branching::tb: return "tb";
    case Branching::ours: return "ours";
  }
  return "ours";
}

Widths Widths::toy() {
  Widths w;
  w.seg_point = {8, 8, 8, 16, 16};
  w.seg_head = {16, 16, 8, 8};
  w.tnet_point = {8, 8, 16};
  w.tnet_fc = {16, 8};
  w.box_point = {8, 8, 8, 16};
  w.head_hidden = 16;
  return w;
}

void ModelConfig::validate() const {
  if (tau < 1) throw Error("model config: tau must be at least 1");
  if (num_heading_bins < 1) throw Error("model config: num_heading_bins must be at least 1");
  if (anchors.empty()) throw Error("model config: at least one size anchor is required");
  for (const auto& a : anchors)
    if (!(a.minCoeff() > 0)) throw Error("model config: anchors must be positive");
  if (feature_dim == 0) throw Error("model config: feature_dim must be positive");
  const auto nonempty = [](const std::vector<std::size_t>& v, const char* name) {
    if (v.empty()) throw Error(std::string("model config: ") + name + " needs at least one layer");
    for (auto x : v)
      if (x == 0) throw Error(std::string("model config: ") + name + " has a zero width");
  };
  nonempty(widths.seg_point, "seg_point");
  nonempty(widths.seg_head, "seg_head");
  nonempty(widths.tnet_point, "tnet_point");
  nonempty(widths.tnet_fc, "tnet_fc");
  nonempty(widths.box_point, "box_point");
  if (widths.head_hidden == 0) throw Error("model config: head_hidden must be positive");
  if (widths.seg_skip_layer >= widths.seg_point.size()) {
    throw Error("model config: seg_skip_layer must index a seg_point layer");
  }
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string exact(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

std::vector<std::size_t> parse_widths(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) throw Error("model config: bad width list for " + key);
    out.push_back(v);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "tau = " << tau << '\n'
     << "branching = " << branching_name(branching) << '\n'
     << "with_center_concat = " << (with_center_concat ? 1 : 0) << '\n'
     << "num_heading_bins = " << num_heading_bins << '\n'
     << "feature_dim = " << feature_dim << '\n'
     << "normalization = " << (normalization ? 1 : 0) << '\n'
     << "seg_point = " << join(widths.seg_point) << '\n'
     << "seg_head = " << join(widths.seg_head) << '\n'
     << "seg_skip_layer = " << widths.seg_skip_layer << '\n'
     << "tnet_point = " << join(widths.tnet_point) << '\n'
     << "tnet_fc = " << join(widths.tnet_fc) << '\n'
     << "box_point = " << join(widths.box_point) << '\n'
     << "head_hidden = " << widths.head_hidden << '\n'
     << "num_size_classes = " << anchors.size() << '\n';
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    os << "anchor" << i << " = " << exact(anchors[i].x()) << ' ' << exact(anchors[i].y()) << ' '
       << exact(anchors[i].z()) << '\n';
  }
  return os.str();
}

ModelConfig ModelConfig::from_text(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("model config: expected key = value, got '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error("model config: missing key " + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto to_int = [](const std::string& s, const std::string& key) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw Error("model config: bad integer for " + key);
    return v;
  };
  ModelConfig c;
  c.tau = static_cast<int>(to_int(take("tau"), "tau"));
  c.branching = parse_branching(take("branching"));
  c.with_center_concat = to_int(take("with_center_concat"), "with_center_concat") != 0;
  c.num_heading_bins = static_cast<int>(to_int(take("num_heading_bins"), "num_heading_bins"));
  c.feature_dim = static_cast<std::size_t>(to_int(take("feature_dim"), "feature_dim"));
  c.normalization = to_int(take("normalization"), "normalization") != 0;
  c.widths.seg_point = parse_widths(take("seg_point"), "seg_point");
  c.widths.seg_head = parse_widths(take("seg_head"), "seg_head");
  c.widths.seg_skip_layer = static_cast<std::size_t>(to_int(take("seg_skip_layer"), "seg_skip_layer"));
  c.widths.tnet_point = parse_widths(take("tnet_point"), "tnet_point");
  c.widths.tnet_fc = parse_widths(take("tnet_fc"), "tnet_fc");
  c.widths.box_point = parse_widths(take("box_point"), "box_point");
  c.widths.head_hidden = static_cast<std::size_t>(to_int(take("head_hidden"), "head_hidden"));
  const auto ns = to_int(take("num_size_classes"), "num_size_classes");
  c.anchors.clear();
  for (long long i = 0; i < ns; ++i) {
    const std::string key = "anchor" + std::to_string(i);
    std::istringstream vs(take(key));
    Vec3 a;
    if (!(vs >> a.x() >> a.y() >> a.z())) throw Error("model config: bad " + key);
    c.anchors.push_back(a);
  }
  if (!kv.empty()) throw Error("model config: unknown key " + kv.begin()->first);
  c.validate();
  return c;
}

Tensor points_tensor(const geometry::PointCloud& pc) {
  std::vector<double> v;
  v.reserve(pc.size() * 3);
  for (const auto& p : pc.points) {
    v.push_back(p.x());
    v.push_back(p.y());
    v.push_back(p.z());
  }
  return Tensor({pc.size(), 3}, std::move(v));
}

Detector::Detector(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const auto& w = cfg_.widths;
  auto layer = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    params_.create(prefix + "/W", {in, out}, Init::xavier_uniform, rng);
    params_.create(prefix + "/b", {out}, Init::zeros, rng);
  };
  const std::size_t nc = data::kNumClasses;

  std::size_t in = 3;
  for (std::size_t i = 0; i < w.seg_point.size(); ++i) {
    layer("seg/point" + std::to_string(i), in, w.seg_point[i]);
    in = w.seg_point[i];
  }
  in = w.seg_point[w.seg_skip_layer] + w.seg_point.back() + nc;
  for (std::size_t i = 0; i < w.seg_head.size(); ++i) {
    layer("seg/head" + std::to_string(i), in, w.seg_head[i]);
    in = w.seg_head[i];
  }
  layer("seg/out", in, 2);

  in = 3;
  for (std::size_t i = 0; i < w.tnet_point.size(); ++i) {
    layer("tnet/point" + std::to_string(i), in, w.tnet_point[i]);
    in = w.tnet_point[i];
  }
  for (std::size_t i = 0; i < w.tnet_fc.size(); ++i) {
    layer("tnet/fc" + std::to_string(i), in, w.tnet_fc[i]);
    in = w.tnet_fc[i];
  }
  layer("tnet/out", in, 3);

  in = 3;
  for (std::size_t i = 0; i < w.box_point.size(); ++i) {
    layer("box/point" + std::to_string(i), in, w.box_point[i]);
    in = w.box_point[i];
  }
  layer("box/fc", in + nc, cfg_.feature_dim);

  const std::size_t hid = cfg_.feature_dim;
  const std::size_t gin = hid + (cfg_.with_center_concat ? 3 : 0);
  gru_.w_z = params_.create("tfm/gru/W_z", {hid, gin}, Init::xavier_uniform, rng);
  gru_.w_r = params_.create("tfm/gru/W_r", {hid, gin}, Init::xavier_uniform, rng);
  gru_.w_h = params_.create("tfm/gru/W_h", {hid, gin}, Init::xavier_uniform, rng);
  gru_.u_z = params_.create("tfm/gru/U_z", {hid, hid}, Init::xavier_uniform, rng);
  gru_.u_r = params_.create("tfm/gru/U_r", {hid, hid}, Init::xavier_uniform, rng);
  gru_.u_h = params_.create("tfm/gru/U_h", {hid, hid}, Init::xavier_uniform, rng);
  gru_.b_z = params_.create("tfm/gru/b_z", {hid}, Init::zeros, rng);
  gru_.b_r = params_.create("tfm/gru/b_r", {hid}, Init::zeros, rng);
  gru_.b_h = params_.create("tfm/gru/b_h", {hid}, Init::zeros, rng);
  layer("tfm/fc", hid, hid);

  const std::size_t out = cfg_.layout().total();
  for (const char* br : {"head/a", "head/b"}) {
    layer(std::string(br) + "/fc", cfg_.feature_dim, w.head_hidden);
    layer(std::string(br) + "/out", w.head_hidden, out);
  }
}

void Detector::set_tau(int tau) {
  if (tau < 1) throw Error("tau must be at least 1, got " + std::to_string(tau));
  cfg_.tau = tau;
}

Tensor Detector::normalize(const Tensor& x) const {
  const Tensor centered = add_row_vector(x, scale(mean_rows(x), -1.0));
  const Tensor var = mean_rows(mul(centered, centered));
  return mul_row_vector(centered, pow_scalar(add_scalar(var, 1e-5), -0.5));
}

Tensor Detector::shared_mlp(const Tensor& x, const std::string& prefix, std::size_t layers) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string name = prefix + std::to_string(i);
    h = dense_rows(h, p(name + "/W"), p(name + "/b"));
    if (cfg_.normalization) h = normalize(h);
    h = relu(h);
  }
  return h;
}

Tensor Detector::segmentation_forward(const Tensor& points, const Tensor& one_hot) const {
  if (points.rank() != 2 || points.dim(1) != 3 || points.dim(0) == 0) {
    throw ShapeError("segmentation_forward: expected [n x 3] points, got " + shape_str(points.shape()));
  }
  const auto& w = cfg_.widths;
  const std::size_t n = points.dim(0);
  Tensor h = points;
  Tensor skip;
  for (std::size_t i = 0; i < w.seg_point.size(); ++i) {
    const std::string name = "seg/point" + std::to_string(i);
    h = dense_rows(h, p(name + "/W"), p(name + "/b"));
    if (cfg_.normalization) h = normalize(h);
    h = relu(h);
    if (i == w.seg_skip_layer) skip = h;
  }
  const Tensor global = concat({reduce_max_over_points(h), one_hot});
  Tensor x = concat_cols(skip, tile_rows(global, n));
  x = shared_mlp(x, "seg/head", w.seg_head.size());
  return dense_rows(x, p("seg/out/W"), p("seg/out/b"));
}

MaskResult Detector::mask_center_points(const Tensor& points, const Tensor& logits) const {
  const std::size_t n = points.dim(0);
  if (logits.rank() != 2 || logits.dim(0) != n || logits.dim(1) != 2) {
    throw ShapeError("mask_center_points: logits " + shape_str(logits.shape()) + " do not match points " +
                     shape_str(points.shape()));
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (logits.at(i, 1) > logits.at(i, 0)) keep.push_back(i);
  MaskResult r;
  if (keep.empty()) {
    r.fallback = true;
    ++fallbacks_;
    for (std::size_t i = 0; i < n; ++i) keep.push_back(i);
  }
  r.selected = keep.size();
  for (std::size_t i : keep) r.centroid += Vec3(points.at(i, 0), points.at(i, 1), points.at(i, 2));
  r.centroid /= static_cast<double>(keep.size());
  std::vector<double> v;
  v.reserve(keep.size() * 3);
  for (std::size_t i : keep)
    for (std::size_t c = 0; c < 3; ++c) v.push_back(points.at(i, c) - r.centroid[static_cast<Eigen::Index>(c)]);
  r.centered = Tensor({keep.size(), 3}, std::move(v));
  return r;
}

Tensor Detector::tnet_forward(const Tensor& centered) const {
  if (centered.rank() != 2 || centered.dim(1) != 3 || centered.dim(0) == 0) {
    throw ShapeError("tnet_forward: expected non-empty [n x 3] points, got " + shape_str(centered.shape()));
  }
  Tensor g = reduce_max_over_points(shared_mlp(centered, "tnet/point", cfg_.widths.tnet_point.size()));
  for (std::size_t i = 0; i < cfg_.widths.tnet_fc.size(); ++i) {
    const std::string name = "tnet/fc" + std::to_string(i);
    g = relu(dense(g, p(name + "/W"), p(name + "/b")));
  }
  return dense(g, p("tnet/out/W"), p("tnet/out/b"));
}

Tensor Detector::backbone_forward(const Tensor& points, const Tensor& one_hot) const {
  if (points.rank() != 2 || points.dim(1) != 3 || points.dim(0) == 0) {
    throw ShapeError("backbone_forward: expected non-empty [n x 3] points, got " + shape_str(points.shape()));
  }
  const Tensor g = reduce_max_over_points(shared_mlp(points, "box/point", cfg_.widths.box_point.size()));
  return relu(dense(concat({g, one_hot}), p("box/fc/W"), p("box/fc/b")));
}

Tensor Detector::tfm_forward(const std::vector<Tensor>& features, const std::vector<Tensor>& deltas) const {
  if (features.empty()) throw Error("tfm_forward: empty feature sequence");
  if (features.size() > static_cast<std::size_t>(cfg_.tau)) {
    throw Error("tfm_forward: " + std::to_string(features.size()) + " frames exceed tau " + std::to_string(cfg_.tau));
  }
  if (cfg_.with_center_concat && deltas.size() != features.size()) {
    throw Error("tfm_forward: center concatenation needs one T-Net output per frame");
  }
  Tensor h = Tensor::zeros({cfg_.feature_dim});
  for (std::size_t k = 0; k < features.size(); ++k) {
    const Tensor x = cfg_.with_center_concat ? concat({features[k], deltas[k]}) : features[k];
    h = gru_cell(x, h, gru_);
  }
  return relu(dense(h, p("tfm/fc/W"), p("tfm/fc/b")));
}

Tensor Detector::branch_forward(const Tensor& feature, char branch) const {
  if (branch != 'a' && branch != 'b') throw Error("branch_forward: branch must be 'a' or 'b'");
  const std::string pre = std::string("head/") + branch;
  const Tensor h = relu(dense(feature, p(pre + "/fc/W"), p(pre + "/fc/b")));
  return dense(h, p(pre + "/out/W"), p(pre + "/out/b"));
}

Tensor Detector::head_forward(const Tensor& f_t, const Tensor& f_fused) const {
  switch (cfg_.branching) {
    case Branching::ob:
      return branch_forward(f_fused, 'b');
    case Branching::tb:
      return scale(add(branch_forward(f_t, 'a'), branch_forward(f_fused, 'b')), 0.5);
    case Branching::ours: {
      const auto lay = cfg_.layout();
      const std::size_t split = lay.size_scores();
      const Tensor a = branch_forward(f_t, 'a');
      const Tensor b = branch_forward(f_fused, 'b');
      return concat({slice(a, 0, split), slice(b, split, lay.total() - split)});
    }
  }
  throw Error("head_forward: unknown branching");
}

ModelOutput Detector::full_forward(const data::SequenceSample& sample) const {
  if (sample.frames.empty()) throw Error("full_forward: sample has no frames");
  const Tensor one_hot = Tensor::vector({sample.one_hot.begin(), sample.one_hot.end()});
  ModelOutput out;
  for (const auto& frame : sample.frames) {
    const Tensor pts = points_tensor(frame.points);
    Tensor logits = segmentation_forward(pts, one_hot);
    const MaskResult mask = mask_center_points(pts, logits);
    if (mask.fallback) ++out.mask_fallbacks;
    Tensor dc = tnet_forward(mask.centered);
    const Tensor shifted = add_row_vector(mask.centered, scale(dc, -1.0));
    out.features.push_back(backbone_forward(shifted, one_hot));
    out.seg_logits.push_back(std::move(logits));
    out.tnet_center.push_back(std::move(dc));
    out.mask_centroids.push_back(mask.centroid);
  }
  out.fused = tfm_forward(out.features, out.tnet_center);
  out.head = head_forward(out.features.back(), out.fused);
  return out;
}

geometry::Box3D Detector::decode(const ModelOutput& out, const data::SequenceSample& sample,
                                 geometry::DecodeStats* stats) const {
  const auto dc = out.tnet_center.back().values();
  return cfg_.coder().decode(out.head.values(), out.mask_centroids.back(), Vec3(dc[0], dc[1], dc[2]),
                             sample.newest().frustum_angle, stats);
}

double Detector::confidence(const ModelOutput& out) const {
  const auto lay = cfg_.layout();
  const auto h = out.head.values();
  auto max_prob = [&](std::size_t off, std::size_t n) {
    double m = h[off];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, h[off + i]);
    double z = 0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(h[off + i] - m);
    return 1.0 / z;
  };
  return max_prob(lay.heading_scores(), static_cast<std::size_t>(cfg_.num_heading_bins)) *
         max_prob(lay.size_scores(), static_cast<std::size_t>(cfg_.num_size_classes()));
}

}  // namespace tfn::model
