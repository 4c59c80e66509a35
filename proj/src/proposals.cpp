#include "partfield/proposals.hpp"

#include <png.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

namespace partfield {

std::vector<std::uint32_t> PartProposal::negative_domain() const {
  std::vector<std::uint32_t> out;
  out.reserve(visible.size() - std::min(visible.size(), members.size()));
  std::set_difference(visible.begin(), visible.end(), members.begin(), members.end(), std::back_inserter(out));
  return out;
}

void from_json(const nlohmann::json& j, LabelSet& out) {
  out = LabelSet{};
  if (!j.is_object() || !j.contains("levels") || !j["levels"].is_array()) {
    throw ProposalError("expected a 'levels' array");
  }
  for (const auto& level : j["levels"]) {
    out.level_names.push_back(level.value("name", std::string{}));
    out.levels.push_back(level.at("labels").get<std::vector<int>>());
  }
}

void to_json(nlohmann::json& j, const LabelSet& labels) {
  j = nlohmann::json::object();
  j["levels"] = nlohmann::json::array();
  for (std::size_t l = 0; l < labels.levels.size(); ++l) {
    const std::string name = l < labels.level_names.size() ? labels.level_names[l] : "level" + std::to_string(l);
    j["levels"].push_back({{"name", name}, {"labels", labels.levels[l]}});
  }
}

LabelSet load_label_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ProposalError("cannot open label file: " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j.get<LabelSet>();
  } catch (const nlohmann::json::exception& e) {
    throw ProposalError(path.string() + ": " + e.what());
  } catch (const ProposalError& e) {
    throw ProposalError(path.string() + ": " + e.what());
  }
}

void save_label_set(const LabelSet& labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ProposalError("cannot write label file: " + path.string());
  out << nlohmann::json(labels).dump() << '\n';
}

void validate_label_set(const LabelSet& labels, std::size_t element_count) {
  if (labels.levels.empty()) throw ProposalError("label set has no levels");
  for (std::size_t l = 0; l < labels.levels.size(); ++l) {
    const auto& level = labels.levels[l];
    if (level.empty()) throw ProposalError("label level " + std::to_string(l) + " is empty");
    if (level.size() != element_count) {
      throw ProposalError("label level " + std::to_string(l) + " has " + std::to_string(level.size()) +
                          " labels for " + std::to_string(element_count) + " elements");
    }
    std::set<int> ids;
    for (int v : level) {
      if (v < 0) throw ProposalError("label level " + std::to_string(l) + " has a missing (negative) label");
      ids.insert(v);
    }
    if (*ids.rbegin() != static_cast<int>(ids.size()) - 1) {
      throw ProposalError("label ids at level " + std::to_string(l) + " are not dense");
    }
  }
}

LabelSet face_labels_to_elements(const LabelSet& face_labels, const PointSet& elements) {
  if (elements.source_face.size() != elements.size()) {
    throw ProposalError("elements lack source faces; cannot map face labels");
  }
  LabelSet out;
  out.level_names = face_labels.level_names;
  for (const auto& level : face_labels.levels) {
    std::vector<int> mapped(elements.size());
    for (std::size_t i = 0; i < elements.size(); ++i) {
      const auto f = elements.source_face[i];
      if (f >= level.size()) throw ProposalError("element source face outside label range");
      mapped[i] = level[f];
    }
    // sampling can miss small parts; re-densify ids
    std::map<int, int> remap;
    for (int v : mapped) remap.emplace(v, 0);
    int next = 0;
    for (auto& [k, v] : remap) v = next++;
    for (int& v : mapped) v = remap[v];
    out.levels.push_back(std::move(mapped));
  }
  return out;
}

std::vector<PartProposal> ingest_labels(const LabelSet& labels, const std::string& shape_id) {
  const std::size_t n = labels.element_count();
  validate_label_set(labels, n);
  std::vector<std::uint32_t> all(n);
  for (std::uint32_t i = 0; i < n; ++i) all[i] = i;
  std::vector<PartProposal> out;
  for (std::size_t l = 0; l < labels.levels.size(); ++l) {
    const auto& level = labels.levels[l];
    const int count = *std::max_element(level.begin(), level.end()) + 1;
    std::vector<std::vector<std::uint32_t>> members(count);
    for (std::uint32_t i = 0; i < n; ++i) members[level[i]].push_back(i);
    for (int id = 0; id < count; ++id) {
      PartProposal p;
      p.shape_id = shape_id;
      p.source = ProposalSource::label3d;
      p.level = static_cast<int>(l);
      p.label = id;
      p.members = std::move(members[id]);
      p.visible = all;
      p.degenerate = p.members.size() == p.visible.size();
      out.push_back(std::move(p));
    }
  }
  return out;
}

double matching_radius(const PointSet& elements) { return 2.0 * median_nn_spacing(elements.points); }

PartProposal project_mask(const MaskImage& mask, const DepthIdImage& view, const Camera& camera,
                          const PointSet& elements, double radius, std::uint32_t view_id) {
  if (mask.rows != view.rows || mask.cols != view.cols) {
    throw ProposalError("mask resolution " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                        " differs from view " + std::to_string(view.rows) + "x" + std::to_string(view.cols));
  }
  // Unprojected hit pixels with their surface footprint: the largest gap to
  // an adjacent hit pixel, capped at a few head-on pixel widths so depth
  // discontinuities do not inflate it.
  const double pixel_angle = 2.0 * std::tan(camera.fov_y / 2.0) / camera.rows;
  std::vector<Vec3> unprojected(view.hit.size());
  for (std::uint32_t r = 0; r < view.rows; ++r) {
    for (std::uint32_t c = 0; c < view.cols; ++c) {
      const auto i = view.index(r, c);
      if (view.hit[i]) unprojected[i] = camera.position + camera.pixel_direction(r, c) * view.depth[i];
    }
  }
  std::vector<Vec3> pixel_points;
  std::vector<std::uint8_t> pixel_masked;
  std::vector<double> pixel_reach;
  for (std::uint32_t r = 0; r < view.rows; ++r) {
    for (std::uint32_t c = 0; c < view.cols; ++c) {
      const auto i = view.index(r, c);
      if (!view.hit[i]) continue;
      double gap = 0.0;
      auto consider = [&](std::uint32_t rr, std::uint32_t cc) {
        const auto j = view.index(rr, cc);
        if (view.hit[j]) gap = std::max(gap, distance(unprojected[i], unprojected[j]));
      };
      if (r > 0) consider(r - 1, c);
      if (r + 1 < view.rows) consider(r + 1, c);
      if (c > 0) consider(r, c - 1);
      if (c + 1 < view.cols) consider(r, c + 1);
      const double cap = kMaxFootprintPixels * view.depth[i] * pixel_angle;
      pixel_points.push_back(unprojected[i]);
      pixel_masked.push_back(mask.masked(r, c) ? 1 : 0);
      pixel_reach.push_back(std::max(radius, std::min(gap, cap)));
    }
  }
  if (std::find(pixel_masked.begin(), pixel_masked.end(), 1) == pixel_masked.end()) {
    throw ProposalError("mask covers no visible pixel in view " + std::to_string(view_id));
  }
  const PointIndex index(std::move(pixel_points));
  PartProposal p;
  p.source = ProposalSource::mask2d;
  p.view = view_id;
  p.label = -1;
  for (std::uint32_t e = 0; e < elements.size(); ++e) {
    const auto [pixel, d2] = index.nearest(elements.points[e]);
    if (pixel == PointIndex::npos || d2 > pixel_reach[pixel] * pixel_reach[pixel]) continue;
    p.visible.push_back(e);
    if (pixel_masked[pixel]) p.members.push_back(e);
  }
  p.degenerate = p.members.size() == p.visible.size();
  return p;
}

std::vector<PartProposal> synth_mask_proposals(const TriMesh& mesh, const std::vector<int>& face_labels,
                                               const std::vector<Camera>& cameras, const PointSet& elements,
                                               double radius) {
  if (face_labels.size() != mesh.num_faces()) {
    throw ProposalError("face label count " + std::to_string(face_labels.size()) + " differs from face count " +
                        std::to_string(mesh.num_faces()));
  }
  const Bvh bvh(mesh);
  std::vector<PartProposal> out;
  for (std::uint32_t v = 0; v < cameras.size(); ++v) {
    const auto view = render_depth_ids(bvh, cameras[v]);
    std::map<int, std::size_t> pixel_count;
    for (std::size_t i = 0; i < view.hit.size(); ++i) {
      if (view.hit[i]) ++pixel_count[face_labels[view.face[i]]];
    }
    for (const auto& [label, count] : pixel_count) {
      if (count < kMinMaskPixels) continue;
      MaskImage mask{view.rows, view.cols, std::vector<std::uint8_t>(view.hit.size(), 0)};
      for (std::size_t i = 0; i < view.hit.size(); ++i) {
        if (view.hit[i] && face_labels[view.face[i]] == label) mask.data[i] = 255;
      }
      auto proposal = project_mask(mask, view, cameras[v], elements, radius, v);
      if (proposal.members.size() < kMinProposalSize) continue;
      proposal.label = label;
      out.push_back(std::move(proposal));
    }
  }
  return out;
}

// ---- mask files ---------------------------------------------------------

namespace {

MaskImage load_pgm(std::istream& in, const std::string& name) {
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return t;
    }
    throw ProposalError(name + ": truncated PGM header");
  };
  if (token() != "P5") throw ProposalError(name + ": not a binary PGM (P5)");
  MaskImage m;
  int maxval = 0;
  try {
    m.cols = static_cast<std::uint32_t>(std::stoul(token()));
    m.rows = static_cast<std::uint32_t>(std::stoul(token()));
    maxval = std::stoi(token());
  } catch (const std::logic_error&) {
    throw ProposalError(name + ": bad PGM header");
  }
  if (maxval <= 0 || maxval > 65535) throw ProposalError(name + ": bad PGM maxval");
  in.get();
  const std::size_t n = static_cast<std::size_t>(m.rows) * m.cols;
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  std::vector<std::uint8_t> raw(n * bytes);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw ProposalError(name + ": truncated PGM data");
  }
  m.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool on = bytes == 1 ? raw[i] != 0 : (raw[2 * i] | raw[2 * i + 1]) != 0;
    m.data[i] = on ? 255 : 0;
  }
  return m;
}

MaskImage load_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw ProposalError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  MaskImage m;
  m.rows = image.height;
  m.cols = image.width;
  m.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, m.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ProposalError(path.string() + ": " + image.message);
  }
  for (auto& v : m.data) v = v ? 255 : 0;
  return m;
}

}  // namespace

MaskImage load_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ProposalError("cannot open mask file: " + path.string());
  char sig[4] = {};
  in.read(sig, 4);
  in.clear();
  in.seekg(0);
  if (static_cast<unsigned char>(sig[0]) == 0x89 && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G') {
    return load_png(path);
  }
  return load_pgm(in, path.string());
}

void save_mask_pgm(const MaskImage& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ProposalError("cannot write mask file: " + path.string());
  out << "P5\n" << mask.cols << ' ' << mask.rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.data.data()), static_cast<std::streamsize>(mask.data.size()));
}

}  // namespace partfield
