// SPDX-License-Identifier: Apache-2.0
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "tfn/cli.hpp"
#include "tfn/evaluation.hpp"
#include "tfn/gradcheck_suite.hpp"
#include "tfn/ops.hpp"

namespace py = pybind11;
using namespace tfn;

namespace {

eval::MatchFlag parse_flag(const std::string& s) {
  if (s == "tp") return eval::MatchFlag::tp;
  if (s == "fp") return eval::MatchFlag::fp;
  if (s == "ignored") return eval::MatchFlag::ignored;
  throw py::value_error("flag must be 'tp', 'fp' or 'ignored', got '" + s + "'");
}

py::dict label_dict(const data::TrackedObjectRecord& r) {
  py::dict d;
  d["frame"] = r.frame;
  d["track_id"] = r.track_id;
  d["type"] = r.type;
  d["truncation"] = r.truncation;
  d["occlusion"] = r.occlusion;
  d["box2d"] = py::make_tuple(r.box2d.x1, r.box2d.y1, r.box2d.x2, r.box2d.y2);
  d["box3d"] = r.box3d;
  return d;
}

}  // namespace

PYBIND11_MODULE(_tfn, m) {
  m.doc() = "Temporal frustum detector core";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::class_<geometry::Box3D>(m, "Box3D")
      .def(py::init([](double h, double w, double l, double cx, double cy, double cz, double heading) {
             geometry::Box3D b;
             b.h = h;
             b.w = w;
             b.l = l;
             b.cx = cx;
             b.cy = cy;
             b.cz = cz;
             b.heading = heading;
             return b;
           }),
           py::arg("h") = 1.0, py::arg("w") = 1.0, py::arg("l") = 1.0, py::arg("cx") = 0.0, py::arg("cy") = 0.0,
           py::arg("cz") = 0.0, py::arg("heading") = 0.0)
      .def_readwrite("h", &geometry::Box3D::h)
      .def_readwrite("w", &geometry::Box3D::w)
      .def_readwrite("l", &geometry::Box3D::l)
      .def_readwrite("cx", &geometry::Box3D::cx)
      .def_readwrite("cy", &geometry::Box3D::cy)
      .def_readwrite("cz", &geometry::Box3D::cz)
      .def_readwrite("heading", &geometry::Box3D::heading)
      .def("corners", [](const geometry::Box3D& b) {
        std::vector<std::array<double, 3>> out;
        for (const auto& c : geometry::box3d_corners(b)) out.push_back({c.x(), c.y(), c.z()});
        return out;
      })
      .def("__repr__", [](const geometry::Box3D& b) {
        std::ostringstream os;
        os << "Box3D(h=" << b.h << ", w=" << b.w << ", l=" << b.l << ", cx=" << b.cx << ", cy=" << b.cy
           << ", cz=" << b.cz << ", heading=" << b.heading << ")";
        return os.str();
      });

  m.def(
      "iou3d",
      [](const geometry::Box3D& a, const geometry::Box3D& b, bool bev) {
        return geometry::iou3d(a, b, bev ? geometry::IouMode::bev : geometry::IouMode::full3d);
      },
      py::arg("a"), py::arg("b"), py::arg("bev") = false);
  m.def("wrap_angle", &geometry::wrap_angle);

  m.def(
      "cosine_distance",
      [](std::vector<double> a, std::vector<double> b) {
        return cosine_distance(Tensor::vector(std::move(a)), Tensor::vector(std::move(b))).item();
      },
      "1 - cos(a, b); 0 when either vector is zero");

  m.def(
      "average_precision",
      [](const std::vector<std::string>& flags, const std::vector<double>& scores, std::size_t gt_count,
         const std::string& interp) {
        std::vector<eval::MatchFlag> f;
        for (const auto& s : flags) f.push_back(parse_flag(s));
        return eval::average_precision(f, scores, gt_count, eval::parse_interp(interp)).ap;
      },
      py::arg("flags"), py::arg("scores"), py::arg("gt_count"), py::arg("interp") = "11");

  m.def(
      "parse_labels",
      [](const std::string& text) {
        std::istringstream is(text);
        py::list frames;
        for (const auto& frame : data::parse_tracking_labels(is)) {
          py::list objs;
          for (const auto& r : frame) objs.append(label_dict(r));
          frames.append(objs);
        }
        return frames;
      },
      "KITTI tracking label text to a list of frames, each a list of dicts");

  m.def(
      "synth_drive_summary",
      [](int num_objects, int num_frames, std::uint64_t seed) {
        data::SynthConfig cfg;
        cfg.num_objects = num_objects;
        cfg.num_frames = num_frames;
        cfg.seed = seed;
        const data::DriveRecord d = data::synth_generate(cfg);
        py::dict out;
        out["frames"] = d.num_frames();
        std::size_t points = 0, objects = 0;
        for (std::size_t f = 0; f < d.num_frames(); ++f) {
          points += d.cloud(f).size();
          objects += d.objects(f).size();
        }
        out["points"] = points;
        out["objects"] = objects;
        return out;
      },
      py::arg("num_objects") = 6, py::arg("num_frames") = 40, py::arg("seed") = 17);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int configs) {
        std::vector<std::tuple<std::string, double, double>> out;
        for (const auto& e : run_gradcheck_suite(seed, configs)) out.emplace_back(e.name, e.error, e.tolerance);
        return out;
      },
      py::arg("seed") = 17, py::arg("configs") = 1, "(name, relative error, tolerance) per checked op or model");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"tfn"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs the command-line tool in-process; returns (exit code, stdout, stderr)");
}
