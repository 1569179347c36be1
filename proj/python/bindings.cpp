#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "scanfill/config.hpp"
#include "scanfill/encodings.hpp"
#include "scanfill/errors.hpp"
#include "scanfill/gradsuite.hpp"
#include "scanfill/image_io.hpp"
#include "scanfill/inference.hpp"
#include "scanfill/knn.hpp"
#include "scanfill/losses.hpp"
#include "scanfill/ply.hpp"
#include "scanfill/renderer.hpp"
#include "scanfill/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace scanfill;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointCloud to_cloud(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw ShapeError("expected an (N, 3) array");
  PointCloud c;
  const auto v = a.unchecked<2>();
  for (py::ssize_t i = 0; i < v.shape(0); ++i) c.positions.emplace_back(v(i, 0), v(i, 1), v(i, 2));
  return c;
}

Array to_array(const std::vector<Vec3>& pts) {
  Array a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
  auto v = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int d = 0; d < 3; ++d) v(i, d) = pts[i][d];
  return a;
}

Array to_array(const std::vector<double>& values) {
  Array a(static_cast<py::ssize_t>(values.size()));
  std::copy(values.begin(), values.end(), a.mutable_data());
  return a;
}

Array to_array(const Image& img) {
  Array a({static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width)});
  std::copy(img.data.begin(), img.data.end(), a.mutable_data());
  return a;
}

py::dict to_dict(const MetricReport& r) {
  py::dict d;
  d["cd_l2"] = r.cd_l2;
  d["precision"] = r.precision;
  d["coverage"] = r.coverage;
  d["ucd"] = r.ucd;
  d["uhd"] = r.uhd;
  return d;
}

// Flat dotted-key configuration from a JSON string, finalized.
RunConfig run_config(const std::string& json) {
  RunConfig c;
  apply_json(c, nlohmann::json::parse(json));
  c.finalize();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of scanfill";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Camera>(m, "Camera")
      .def(py::init<>())
      .def_readwrite("focal", &Camera::focal)
      .def_readwrite("cx", &Camera::cx)
      .def_readwrite("cy", &Camera::cy)
      .def_readwrite("rotation", &Camera::rotation)
      .def_readwrite("translation", &Camera::translation)
      .def_readwrite("width", &Camera::width)
      .def_readwrite("height", &Camera::height)
      .def("center", &Camera::center)
      .def("to_camera", &Camera::to_camera);

  m.def("look_at", &look_at, py::arg("eye"), py::arg("target"), py::arg("up"), py::arg("focal"), py::arg("width"),
        py::arg("height"));
  m.def("viewpoint_eye", &viewpoint_eye, py::arg("elevation_deg"), py::arg("azimuth_deg"), py::arg("distance") = 2.0);
  m.def("read_camera", &read_camera);
  m.def("write_camera", &write_camera);

  m.def("read_ply", [](const fs::path& p) { return to_array(read_ply(p).positions); });
  m.def("write_ply", [](const fs::path& p, const Array& a) { write_ply(p, to_cloud(a)); });
  m.def("read_pfm", [](const fs::path& p) { return to_array(read_pfm(p)); });

  m.def(
      "knn",
      [](const Array& points, const Array& queries, std::size_t k) {
        const auto cloud = to_cloud(points);
        const auto q = to_cloud(queries);
        const KnnIndex index(cloud);
        py::array_t<std::int64_t> idx({static_cast<py::ssize_t>(q.size()), static_cast<py::ssize_t>(k)});
        Array dist({static_cast<py::ssize_t>(q.size()), static_cast<py::ssize_t>(k)});
        auto iv = idx.mutable_unchecked<2>();
        auto dv = dist.mutable_unchecked<2>();
        for (std::size_t i = 0; i < q.size(); ++i) {
          const auto nb = index.query(q.positions[i], k);
          if (nb.size() < k) throw InvalidInput("k exceeds the number of points");
          for (std::size_t j = 0; j < k; ++j) {
            iv(i, j) = static_cast<std::int64_t>(nb[j].index);
            dv(i, j) = nb[j].distance;
          }
        }
        return py::make_tuple(idx, dist);
      },
      py::arg("points"), py::arg("queries"), py::arg("k"), "Exact k nearest neighbours: (indices, distances).");

  m.def(
      "estimate_normals",
      [](const Array& points, std::size_t k, std::optional<Vec3> viewpoint) {
        return to_array(estimate_normals(to_cloud(points), k, NormalOrientation{viewpoint}));
      },
      py::arg("points"), py::arg("k") = 24, py::arg("viewpoint") = py::none());
  m.def(
      "position_encoding", [](const Array& points, std::size_t k) { return to_array(position_encoding(to_cloud(points), k).values); },
      py::arg("points"), py::arg("k") = 16);
  m.def(
      "curvature_encoding",
      [](const Array& points, const Array& normals, std::size_t k, double eps) {
        auto cloud = to_cloud(points);
        cloud.normals = to_cloud(normals).positions;
        return to_array(curvature_encoding(cloud, k, eps).values);
      },
      py::arg("points"), py::arg("normals"), py::arg("k") = 24, py::arg("eps") = 1e-8);

  m.def(
      "ucd",
      [](const Array& a, const Array& b, bool squared) {
        return ucd(to_tensor<double>(to_cloud(a)), to_tensor<double>(to_cloud(b)), squared).item();
      },
      py::arg("a"), py::arg("b"), py::arg("squared") = false);
  m.def(
      "evaluate", [](const Array& out, const Array& gt) { return to_dict(evaluate(to_cloud(out), to_cloud(gt))); },
      py::arg("prediction"), py::arg("ground_truth"));

  m.def(
      "render_depth",
      [](const Array& points, const Camera& camera, double radius, std::optional<double> eta) -> py::tuple {
        SplatConfig splat;
        splat.radius = radius;
        ad::NoGradGuard no_grad;
        const auto t = to_tensor<double>(to_cloud(points));
        if (!eta) return py::make_tuple(to_array(to_image(render_depth(t, camera, splat))), radius);
        const auto r = render_dare(t, camera, splat, *eta);
        return py::make_tuple(to_array(to_image(r.depth)), r.radius);
      },
      py::arg("points"), py::arg("camera"), py::arg("radius") = 0.03, py::arg("eta") = py::none(),
      "Depth map and the splat radius used; with eta the radius is density-adaptive.");
  m.def(
      "compare_dare",
      [](const Array& points, const Camera& camera, double radius, std::optional<double> eta, std::uint64_t seed) {
        SplatConfig splat;
        splat.radius = radius;
        std::mt19937_64 rng(seed);
        const auto c = compare_dare(to_cloud(points), camera, splat, eta, rng);
        py::dict d;
        d["eta"] = c.eta;
        d["first_pass_foreground"] = c.first_pass_foreground;
        d["dare_radius"] = c.dare_radius;
        d["fixed_holes"] = c.fixed_holes;
        d["dare_holes"] = c.dare_holes;
        return d;
      },
      py::arg("points"), py::arg("camera"), py::arg("radius") = 0.03, py::arg("eta") = py::none(), py::arg("seed") = 1);
  m.def(
      "backproject", [](const Array& depth, const Camera& camera) {
        if (depth.ndim() != 2) throw ShapeError("expected an (H, W) depth map");
        Image img(depth.shape(1), depth.shape(0));
        std::copy(depth.data(), depth.data() + depth.size(), img.data.begin());
        return to_array(backproject(img, camera).positions);
      },
      py::arg("depth"), py::arg("camera"));

  m.def("config_defaults", [] { return to_json(RunConfig{}).dump(); });
  m.def(
      "gen_data",
      [](const std::string& config) {
        const auto summary = build_dataset(run_config(config).data);
        py::dict d;
        d["samples"] = summary.samples;
        d["eta"] = summary.eta;
        d["scan_eta"] = summary.scan_eta;
        return d;
      },
      py::arg("config_json"));
  m.def(
      "train",
      [](const std::string& config, const std::string& category,
         const std::function<void(py::dict)>& on_epoch) {
        const RunConfig run = run_config(config);
        const auto tc = train_config(run, parse_category(category));
        std::vector<py::dict> out;
        Trainer t(tc);
        for (const auto& r : t.train([&](const EpochRecord& r) {
               if (!on_epoch) return;
               py::dict d;
               d["epoch"] = r.epoch;
               d["ucd_out"] = r.ucd_out;
               on_epoch(d);
             })) {
          py::dict d;
          d["epoch"] = r.epoch;
          d["l_part"] = r.l_part;
          d["l_rend"] = r.l_rend;
          d["l_dens"] = r.l_dens;
          d["l_gen"] = r.l_gen;
          d["l_disc"] = r.l_disc;
          d["ucd_out"] = r.ucd_out;
          d["seconds"] = r.seconds;
          out.push_back(d);
        }
        return py::make_tuple(final_checkpoint_path(tc.out_dir), out);
      },
      py::arg("config_json"), py::arg("category"), py::arg("on_epoch") = nullptr);
  m.def(
      "complete",
      [](const std::string& config, const fs::path& checkpoint, const Array& partial, std::optional<Vec3> viewpoint) {
        Prn<float> g(run_config(config).prn, 0);
        load_generator(g, checkpoint);
        return to_array(complete(g, to_cloud(partial), viewpoint).positions);
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("partial"), py::arg("viewpoint") = py::none());
  m.def(
      "evaluate_split",
      [](const std::string& config, const fs::path& checkpoint, const std::string& category, const std::string& split) {
        const RunConfig run = run_config(config);
        Prn<float> g(run.prn, 0);
        load_generator(g, checkpoint);
        py::list rows;
        for (const auto& r : evaluate_split(g, run.data.root, category, split)) {
          auto d = to_dict(r.report);
          d["sample_id"] = r.sample_id;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("category"), py::arg("split") = "test");

  m.def("gradient_suite_names", &gradient_suite_names);
  m.def(
      "run_gradient_suite",
      [](const std::string& corrupt) {
        py::list rows;
        for (const auto& r : run_gradient_suite(corrupt)) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_error"] = r.max_rel_error;
          d["tolerance"] = r.tolerance;
          d["passed"] = r.passed;
          rows.append(d);
        }
        return rows;
      },
      py::arg("corrupt") = "");
}
