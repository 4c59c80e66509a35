#include "partfield/pipeline.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace partfield {

PreparedShape prepare_shape(const TriMesh& raw, std::size_t point_count, std::uint64_t seed) {
  PreparedShape shape;
  auto [mesh, transform] = normalize_unit_cube(raw);
  shape.mesh = std::move(mesh);
  shape.transform = transform;
  shape.points = sample_surface(shape.mesh, point_count, seed);
  return shape;
}

std::vector<PartProposal> proposals_from_labels(const LabelSet& labels, const PreparedShape& shape,
                                                const std::string& shape_id) {
  if (labels.levels.empty()) throw ProposalError("label file has no levels");
  const std::size_t n = labels.element_count();
  if (n == shape.mesh.num_faces()) {
    validate_label_set(labels, n);
    return ingest_labels(face_labels_to_elements(labels, shape.points), shape_id);
  }
  if (n == shape.points.size()) {
    validate_label_set(labels, n);
    return ingest_labels(labels, shape_id);
  }
  throw ProposalError("label count " + std::to_string(n) + " matches neither the face count (" +
                      std::to_string(shape.mesh.num_faces()) + ") nor the element count (" +
                      std::to_string(shape.points.size()) + ")");
}

std::vector<PartProposal> proposals_from_masks(const std::vector<MaskEntry>& masks, const PreparedShape& shape,
                                               const std::string& shape_id) {
  const Bvh bvh(shape.mesh);
  const double radius = matching_radius(shape.points);
  std::vector<PartProposal> out;
  for (std::uint32_t v = 0; v < masks.size(); ++v) {
    const auto mask = load_mask(masks[v].mask);
    const auto& camera = masks[v].camera;
    if (mask.rows != camera.rows || mask.cols != camera.cols) {
      throw ProposalError(masks[v].mask.string() + ": mask is " + std::to_string(mask.rows) + "x" +
                          std::to_string(mask.cols) + " but the camera renders " + std::to_string(camera.rows) +
                          "x" + std::to_string(camera.cols));
    }
    const auto view = render_depth_ids(bvh, camera);
    auto proposal = project_mask(mask, view, camera, shape.points, radius, v);
    proposal.shape_id = shape_id;
    proposal.label = -1;
    if (proposal.members.size() < kMinProposalSize) continue;
    out.push_back(std::move(proposal));
  }
  return out;
}

std::vector<PartProposal> synthetic_mask_proposals(const PreparedShape& shape, const std::vector<int>& face_labels,
                                                   std::uint32_t views, std::uint32_t resolution) {
  auto cameras = default_camera_rig(resolution, resolution);
  if (views == 0 || views > cameras.size()) {
    throw ProposalError("views must be in [1, " + std::to_string(cameras.size()) + "]");
  }
  cameras.resize(views);
  return synth_mask_proposals(shape.mesh, face_labels, cameras, shape.points, matching_radius(shape.points));
}

std::vector<PartProposal> proposals_from_manifest(const Json& manifest, const std::filesystem::path& base,
                                                  const PreparedShape& shape, const std::string& shape_id) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() ? base / path : path;
  };
  std::vector<PartProposal> out;
  auto append = [&](std::vector<PartProposal> more) {
    for (auto& p : more) out.push_back(std::move(p));
  };
  if (manifest.contains("labels3d")) {
    append(proposals_from_labels(load_label_set(resolve(manifest.at("labels3d").get<std::string>())), shape,
                                 shape_id));
  }
  if (manifest.contains("masks")) {
    const auto path = resolve(manifest.at("masks").get<std::string>());
    append(proposals_from_masks(parse_mask_manifest(read_json(path), path.parent_path()), shape, shape_id));
  }
  if (manifest.contains("synthetic_masks")) {
    const auto& synth = manifest.at("synthetic_masks");
    const auto labels = load_label_set(resolve(synth.at("labels").get<std::string>()));
    const auto level = synth.value("level", 0u);
    if (level >= labels.levels.size()) throw ProposalError("synthetic_masks level out of range");
    const auto& face_labels = labels.levels[level];
    if (face_labels.size() != shape.mesh.num_faces()) {
      throw ProposalError("synthetic_masks labels must be per face");
    }
    auto more = synthetic_mask_proposals(shape, face_labels, synth.value("views", 6u), synth.value("resolution", 128u));
    for (auto& p : more) p.shape_id = shape_id;
    append(std::move(more));
  }
  if (out.empty()) throw ProposalError("proposals manifest yields no proposals");
  return out;
}

FeatureSet face_features_from_points(const TriMesh& mesh, const PointSet& points, const FeatureSet& point_features) {
  if (point_features.count != points.size()) throw FieldError("point feature count does not match the point set");
  const PointIndex index(points.points);
  FeatureSet out;
  out.kind = ElementKind::face;
  out.count = static_cast<std::uint32_t>(mesh.num_faces());
  out.dim = point_features.dim;
  out.data.resize(static_cast<std::size_t>(out.count) * out.dim);
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const auto src = point_features.row(index.nearest(mesh.centroid(f)).first);
    std::copy(src.begin(), src.end(), out.row(f).begin());
  }
  return out;
}

FeatureSet face_features_from_bytes(std::string_view bytes, const PreparedShape& shape,
                                    std::uint32_t samples_per_face, std::uint64_t seed) {
  if (bytes.substr(0, 4) == "PFLD") return face_features(decode_field(bytes), shape.mesh, samples_per_face, seed);
  if (bytes.substr(0, 4) != "PFTS") throw FieldError("payload is neither a PFLD field nor a PFTS feature file");
  auto features = decode_features(bytes, ElementKind::face);
  if (features.count == shape.mesh.num_faces()) return features;
  if (features.count == shape.points.size()) {
    features.kind = ElementKind::point;
    return face_features_from_points(shape.mesh, shape.points, features);
  }
  throw FieldError("feature count " + std::to_string(features.count) + " matches neither the face count (" +
                   std::to_string(shape.mesh.num_faces()) + ") nor the element count (" +
                   std::to_string(shape.points.size()) + ")");
}

FeatureSet load_face_features(const std::filesystem::path& path, const PreparedShape& shape,
                              std::uint32_t samples_per_face, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FieldError("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return face_features_from_bytes(bytes, shape, samples_per_face, seed);
  } catch (const FieldError& e) {
    throw FieldError(path.string() + ": " + e.what());
  }
}

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

std::string encode_mesh(const TriMesh& mesh) {
  std::string out;
  out.reserve(8 + mesh.num_vertices() * 12 + mesh.num_faces() * 12);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(mesh.num_vertices()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(mesh.num_faces()));
  for (const auto& v : mesh.vertices) {
    put_le<float>(out, static_cast<float>(v.x));
    put_le<float>(out, static_cast<float>(v.y));
    put_le<float>(out, static_cast<float>(v.z));
  }
  for (const auto& f : mesh.faces) {
    for (auto idx : f) put_le<std::uint32_t>(out, idx);
  }
  return out;
}

}  // namespace partfield
