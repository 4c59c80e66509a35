#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "partfield/analysis.hpp"
#include "partfield/clustering.hpp"
#include "partfield/fixtures.hpp"
#include "partfield/loss.hpp"
#include "partfield/pipeline.hpp"

namespace py = pybind11;
using namespace partfield;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Array<double>& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error("expected an (n, 3) array of points");
  std::vector<Vec3> out(static_cast<std::size_t>(a.shape(0)));
  const double* p = a.data();
  for (auto& v : out) {
    v = {p[0], p[1], p[2]};
    p += 3;
  }
  return out;
}

TriMesh to_mesh(const Array<double>& vertices, const Array<std::int64_t>& faces) {
  if (faces.ndim() != 2 || faces.shape(1) != 3) throw py::value_error("expected an (m, 3) array of faces");
  std::vector<Face> f(static_cast<std::size_t>(faces.shape(0)));
  const std::int64_t* p = faces.data();
  for (auto& face : f) {
    for (int k = 0; k < 3; ++k) {
      if (p[k] < 0 || p[k] > 0xffffffffLL) throw py::value_error("face index out of range");
      face[k] = static_cast<std::uint32_t>(p[k]);
    }
    p += 3;
  }
  return make_mesh(to_points(vertices), std::move(f));
}

py::array_t<double> from_points(const std::vector<Vec3>& points) {
  py::array_t<double> out({static_cast<py::ssize_t>(points.size()), py::ssize_t{3}});
  auto* p = out.mutable_data();
  for (const auto& v : points) {
    *p++ = v.x;
    *p++ = v.y;
    *p++ = v.z;
  }
  return out;
}

py::array_t<std::uint32_t> from_faces(const std::vector<Face>& faces) {
  py::array_t<std::uint32_t> out({static_cast<py::ssize_t>(faces.size()), py::ssize_t{3}});
  std::memcpy(out.mutable_data(), faces.data(), faces.size() * sizeof(Face));
  return out;
}

py::array_t<float> from_features(const FeatureSet& f) {
  py::array_t<float> out({static_cast<py::ssize_t>(f.count), static_cast<py::ssize_t>(f.dim)});
  std::memcpy(out.mutable_data(), f.data.data(), f.data.size() * sizeof(float));
  return out;
}

FeatureSet to_features(const Array<float>& a, ElementKind kind = ElementKind::face) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D feature array");
  FeatureSet f{kind, static_cast<std::uint32_t>(a.shape(0)), static_cast<std::uint32_t>(a.shape(1)), {}};
  f.data.assign(a.data(), a.data() + a.size());
  return f;
}

std::vector<int> to_labels(const Array<std::int64_t>& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D label array");
  return {a.data(), a.data() + a.size()};
}

py::array_t<std::int32_t> from_labels(const std::vector<int>& labels) {
  return py::array_t<std::int32_t>(static_cast<py::ssize_t>(labels.size()), labels.data());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Triplane part feature fields: fitting, querying and hierarchical segmentation.";

  py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
  py::register_exception<FieldError>(m, "FieldError", PyExc_ValueError);
  py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);
  py::register_exception<ProposalError>(m, "ProposalError", PyExc_ValueError);
  py::register_exception<SamplerError>(m, "SamplerError", PyExc_ValueError);
  py::register_exception<ClusteringError>(m, "ClusteringError", PyExc_ValueError);
  py::register_exception<AnalysisError>(m, "AnalysisError", PyExc_ValueError);

  py::class_<TriplaneField>(m, "Field")
      .def(py::init([](std::uint32_t resolution, std::uint32_t channels, double init_scale, std::uint64_t seed) {
             return new_triplane(resolution, channels, init_scale, seed);
           }),
           py::arg("resolution"), py::arg("channels"), py::arg("init_scale") = 0.1, py::arg("seed") = 0)
      .def_readonly("resolution", &TriplaneField::resolution)
      .def_readonly("channels", &TriplaneField::channels)
      .def_property_readonly("temperature", &TriplaneField::temperature)
      .def_property_readonly("params",
                             [](const TriplaneField& f) {
                               return py::array_t<float>({py::ssize_t{3}, static_cast<py::ssize_t>(f.resolution),
                                                          static_cast<py::ssize_t>(f.resolution),
                                                          static_cast<py::ssize_t>(f.channels)},
                                                         f.params.data());
                             })
      .def(
          "query",
          [](const TriplaneField& f, const Array<double>& points) {
            const auto pts = to_points(points);
            FeatureSet features;
            {
              py::gil_scoped_release release;
              features = query(f, pts);
            }
            return from_features(features);
          },
          py::arg("points"), "Features at points in the normalized frame, shape (n, channels).")
      .def(
          "face_features",
          [](const TriplaneField& f, const Array<double>& vertices, const Array<std::int64_t>& faces,
             std::uint32_t samples_per_face, std::uint64_t seed) {
            const auto mesh = normalize_unit_cube(to_mesh(vertices, faces)).first;
            return from_features(face_features(f, mesh, samples_per_face, seed));
          },
          py::arg("vertices"), py::arg("faces"), py::arg("samples_per_face") = 11, py::arg("seed") = 0,
          "Per-face features of a mesh given in its own frame (normalized internally).")
      .def("save", [](const TriplaneField& f, const std::string& path) { save_field(f, path); }, py::arg("path"))
      .def_static("load", [](const std::string& path) { return load_field(path); }, py::arg("path"))
      .def("to_bytes", [](const TriplaneField& f) { return py::bytes(encode_field(f)); })
      .def_static("from_bytes", [](const py::bytes& b) { return decode_field(std::string(b)); }, py::arg("data"))
      .def("__repr__", [](const TriplaneField& f) {
        return "<Field R=" + std::to_string(f.resolution) + " C=" + std::to_string(f.channels) + ">";
      });

  m.def(
      "dumbbell",
      [] {
        const auto fx = fixtures::make_dumbbell();
        return py::make_tuple(from_points(fx.mesh.vertices), from_faces(fx.mesh.faces), from_labels(fx.face_labels));
      },
      "Three-part dumbbell fixture as (vertices, faces, face_labels).");

  m.def(
      "load_mesh",
      [](const std::string& path) {
        const auto mesh = load_mesh(path);
        return py::make_tuple(from_points(mesh.vertices), from_faces(mesh.faces));
      },
      py::arg("path"));

  m.def(
      "fit",
      [](const Array<double>& vertices, const Array<std::int64_t>& faces, const Array<std::int64_t>& face_labels,
         const std::string& config_json, std::size_t points) {
        const auto config = Json::parse(config_json).get<FitConfig>();
        const auto shape = prepare_shape(to_mesh(vertices, faces), points, derive_seed(config.seed, 3));
        const auto proposals = proposals_from_labels(LabelSet{{"parts"}, {to_labels(face_labels)}}, shape);
        FitResult result;
        {
          py::gil_scoped_release release;
          result = fit_field(shape.points, proposals, config);
        }
        return py::make_tuple(std::move(result.field), Json(result.report).dump());
      },
      py::arg("vertices"), py::arg("faces"), py::arg("face_labels"), py::arg("config_json") = "{}",
      py::arg("points") = kDefaultCanonicalPoints,
      "Fits a field under per-face part labels; returns (field, report JSON).");

  m.def(
      "segment",
      [](const Array<float>& features, const Array<std::int64_t>& faces, const std::vector<std::uint32_t>& ks) {
        const auto f = to_features(features);
        std::vector<Face> mesh_faces(static_cast<std::size_t>(faces.shape(0)));
        if (faces.ndim() != 2 || faces.shape(1) != 3) throw py::value_error("expected an (m, 3) array of faces");
        for (std::size_t i = 0; i < mesh_faces.size(); ++i) {
          for (int k = 0; k < 3; ++k) mesh_faces[i][k] = static_cast<std::uint32_t>(faces.at(i, k));
        }
        if (f.count != mesh_faces.size()) throw py::value_error("features and faces differ in count");
        const auto tree = agglomerate(f, build_face_adjacency(mesh_faces));
        py::list out;
        for (const auto& seg : multi_scale(tree, ks)) out.append(from_labels(seg.labels));
        return out;
      },
      py::arg("features"), py::arg("faces"), py::arg("ks") = std::vector<std::uint32_t>{},
      "Agglomerative cuts of per-face features; one label array per k (default 2..21).");

  m.def(
      "kmeans",
      [](const Array<float>& features, std::uint32_t k, std::uint64_t seed) {
        return from_labels(kmeans(to_features(features), k, KMeansInit::random, seed).segmentation.labels);
      },
      py::arg("features"), py::arg("k"), py::arg("seed") = 0);

  m.def(
      "miou",
      [](const Array<std::int64_t>& gt, const Array<std::int64_t>& pred) {
        return miou(to_labels(gt), to_labels(pred)).miou;
      },
      py::arg("gt"), py::arg("pred"));

  m.def(
      "cosegment",
      [](const Array<std::int64_t>& source_labels, const Array<float>& source, const Array<float>& target) {
        const auto seg = make_segmentation(to_labels(source_labels));
        return from_labels(cosegment(seg, to_features(source), to_features(target)).labels);
      },
      py::arg("source_labels"), py::arg("source_features"), py::arg("target_features"));

  m.def(
      "nn_correspondence",
      [](const Array<float>& source, const Array<float>& target) {
        const auto map = nn_correspondence(to_features(source), to_features(target));
        return py::array_t<std::uint32_t>(static_cast<py::ssize_t>(map.size()), map.data());
      },
      py::arg("source_features"), py::arg("target_features"));

  m.def(
      "similarity",
      [](const Array<float>& features, std::uint32_t anchor) {
        const auto values = similarity_map(to_features(features), anchor);
        return py::array_t<float>(static_cast<py::ssize_t>(values.size()), values.data());
      },
      py::arg("features"), py::arg("anchor"));
}
