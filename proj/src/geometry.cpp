#include "partfield/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "partfield/random.hpp"

namespace partfield {

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec3 TriMesh::centroid(std::size_t face) const {
  return (corner(face, 0) + corner(face, 1) + corner(face, 2)) * (1.0 / 3.0);
}

double TriMesh::face_area(std::size_t face) const {
  const Vec3 a = corner(face, 0);
  return 0.5 * norm(cross(corner(face, 1) - a, corner(face, 2) - a));
}

std::vector<std::vector<std::uint32_t>> build_face_adjacency(std::span<const Face> faces) {
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> edge_faces;
  edge_faces.reserve(faces.size() * 2);
  for (std::uint32_t f = 0; f < faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      std::uint32_t a = faces[f][k];
      std::uint32_t b = faces[f][(k + 1) % 3];
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      edge_faces[(static_cast<std::uint64_t>(a) << 32) | b].push_back(f);
    }
  }
  std::vector<std::vector<std::uint32_t>> adjacency(faces.size());
  for (const auto& [edge, incident] : edge_faces) {
    for (std::size_t i = 0; i < incident.size(); ++i) {
      for (std::size_t j = i + 1; j < incident.size(); ++j) {
        if (incident[i] == incident[j]) continue;
        adjacency[incident[i]].push_back(incident[j]);
        adjacency[incident[j]].push_back(incident[i]);
      }
    }
  }
  for (auto& list : adjacency) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adjacency;
}

TriMesh make_mesh(std::vector<Vec3> vertices, std::vector<Face> faces) {
  if (faces.empty()) throw GeometryError("mesh has no faces");
  for (std::size_t v = 0; v < vertices.size(); ++v) {
    if (!is_finite(vertices[v])) {
      throw GeometryError("non-finite coordinate at vertex " + std::to_string(v));
    }
  }
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (auto idx : faces[f]) {
      if (idx >= vertices.size()) {
        throw GeometryError("face " + std::to_string(f) + " references vertex " +
                            std::to_string(idx) + " of " + std::to_string(vertices.size()));
      }
    }
  }
  TriMesh mesh;
  mesh.vertices = std::move(vertices);
  mesh.faces = std::move(faces);
  mesh.face_adjacency = build_face_adjacency(mesh.faces);
  return mesh;
}

// ---- OBJ ----------------------------------------------------------------

namespace {

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
  throw GeometryError("line " + std::to_string(line) + ": " + what);
}

std::int64_t parse_obj_index(const std::string& token, std::size_t vertex_count, std::size_t line) {
  const auto slash = token.find('/');
  const std::string head = token.substr(0, slash);
  std::int64_t idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stoll(head, &used);
    if (used != head.size()) parse_fail(line, "bad face index '" + token + "'");
  } catch (const std::logic_error&) {
    parse_fail(line, "bad face index '" + token + "'");
  }
  if (idx < 0) idx = static_cast<std::int64_t>(vertex_count) + idx;  // relative
  else idx -= 1;
  if (idx < 0 || idx >= static_cast<std::int64_t>(vertex_count)) {
    parse_fail(line, "face index '" + token + "' out of range");
  }
  return idx;
}

}  // namespace

TriMesh parse_obj(std::istream& in) {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    std::istringstream ls(raw);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x >> p.y >> p.z)) parse_fail(line_no, "expected three vertex coordinates");
      if (!is_finite(p)) parse_fail(line_no, "non-finite vertex coordinate");
      vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<std::uint32_t> poly;
      std::string token;
      while (ls >> token) {
        poly.push_back(static_cast<std::uint32_t>(parse_obj_index(token, vertices.size(), line_no)));
      }
      if (poly.size() < 3) parse_fail(line_no, "face with fewer than 3 vertices");
      // fan from the first vertex
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        faces.push_back({poly[0], poly[k], poly[k + 1]});
      }
    }
  }
  if (vertices.empty() || faces.empty()) throw GeometryError("empty mesh");
  return make_mesh(std::move(vertices), std::move(faces));
}

TriMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GeometryError("cannot open mesh file: " + path.string());
  try {
    return parse_obj(in);
  } catch (const GeometryError& e) {
    throw GeometryError(path.string() + ": " + e.what());
  }
}

void save_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw GeometryError("cannot write mesh file: " + path.string());
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

// ---- PLY / XYZ ----------------------------------------------------------

namespace {

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

PlyType ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::i8;
  if (name == "uchar" || name == "uint8") return PlyType::u8;
  if (name == "short" || name == "int16") return PlyType::i16;
  if (name == "ushort" || name == "uint16") return PlyType::u16;
  if (name == "int" || name == "int32") return PlyType::i32;
  if (name == "uint" || name == "uint32") return PlyType::u32;
  if (name == "float" || name == "float32") return PlyType::f32;
  if (name == "double" || name == "float64") return PlyType::f64;
  throw GeometryError("malformed PLY header: unknown property type '" + name + "'");
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> buf{};
  if (!in.read(buf.data(), sizeof(T))) throw GeometryError("PLY binary body truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  T value;
  std::memcpy(&value, buf.data(), sizeof(T));
  return value;
}

double read_binary(std::istream& in, PlyType t) {
  switch (t) {
    case PlyType::i8: return read_le<std::int8_t>(in);
    case PlyType::u8: return read_le<std::uint8_t>(in);
    case PlyType::i16: return read_le<std::int16_t>(in);
    case PlyType::u16: return read_le<std::uint16_t>(in);
    case PlyType::i32: return read_le<std::int32_t>(in);
    case PlyType::u32: return read_le<std::uint32_t>(in);
    case PlyType::f32: return read_le<float>(in);
    case PlyType::f64: return read_le<double>(in);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

double parse_ascii_number(const std::string& token) {
  if (token == "nan" || token == "NaN" || token == "-nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    return std::stod(token);
  } catch (const std::logic_error&) {
    throw GeometryError("PLY ascii body: bad number '" + token + "'");
  }
}

}  // namespace

PointSet parse_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
    throw GeometryError("malformed PLY header: missing 'ply' magic");
  }
  bool binary = false;
  bool saw_format = false;
  std::vector<PlyElement> elements;
  while (true) {
    if (!std::getline(in, line)) throw GeometryError("malformed PLY header: missing end_header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "end_header") break;
    if (tag == "comment" || tag == "obj_info") continue;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw GeometryError("malformed PLY header: unsupported format '" + fmt + "'");
      saw_format = true;
    } else if (tag == "element") {
      PlyElement e;
      if (!(ls >> e.name >> e.count)) throw GeometryError("malformed PLY header: bad element line");
      elements.push_back(std::move(e));
    } else if (tag == "property") {
      if (elements.empty()) throw GeometryError("malformed PLY header: property before element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type;
        std::string item_type;
        ls >> count_type >> item_type;
        p.is_list = true;
        p.count_type = ply_type(count_type);
        p.type = ply_type(item_type);
      } else {
        p.type = ply_type(type);
      }
      if (!(ls >> p.name)) throw GeometryError("malformed PLY header: property without name");
      elements.back().properties.push_back(std::move(p));
    } else {
      throw GeometryError("malformed PLY header: unexpected '" + tag + "'");
    }
  }
  if (!saw_format) throw GeometryError("malformed PLY header: missing format line");

  PointSet out;
  bool found_vertex = false;
  for (const auto& element : elements) {
    const bool is_vertex = element.name == "vertex";
    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
    if (is_vertex) {
      found_vertex = true;
      for (int k = 0; k < static_cast<int>(element.properties.size()); ++k) {
        const auto& n = element.properties[k].name;
        if (n == "x") ix = k;
        if (n == "y") iy = k;
        if (n == "z") iz = k;
        if (n == "nx") inx = k;
        if (n == "ny") iny = k;
        if (n == "nz") inz = k;
      }
      if (ix < 0 || iy < 0 || iz < 0) throw GeometryError("malformed PLY header: vertex lacks x/y/z");
      out.points.reserve(element.count);
    }
    const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;
    std::vector<double> values(element.properties.size());
    for (std::size_t i = 0; i < element.count; ++i) {
      if (binary) {
        for (std::size_t k = 0; k < element.properties.size(); ++k) {
          const auto& p = element.properties[k];
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(read_binary(in, p.count_type));
            for (std::size_t j = 0; j < n; ++j) read_binary(in, p.type);
            values[k] = 0.0;
          } else {
            values[k] = read_binary(in, p.type);
          }
        }
      } else {
        if (!std::getline(in, line)) throw GeometryError("PLY ascii body truncated");
        std::istringstream ls(line);
        std::string token;
        for (std::size_t k = 0; k < element.properties.size(); ++k) {
          const auto& p = element.properties[k];
          if (!(ls >> token)) throw GeometryError("PLY ascii body: short row in element " + element.name);
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(parse_ascii_number(token));
            for (std::size_t j = 0; j < n; ++j) ls >> token;
            values[k] = 0.0;
          } else {
            values[k] = parse_ascii_number(token);
          }
        }
      }
      if (!is_vertex) continue;
      const Vec3 p{values[ix], values[iy], values[iz]};
      if (!is_finite(p)) throw GeometryError("non-finite coordinate at vertex " + std::to_string(i));
      out.points.push_back(p);
      if (has_normals) out.normals.push_back({values[inx], values[iny], values[inz]});
    }
  }
  if (!found_vertex) throw GeometryError("malformed PLY header: no vertex element");
  return out;
}

PointSet parse_xyz(std::istream& in) {
  PointSet out;
  std::string line;
  std::size_t line_no = 0;
  bool normals = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<double> v;
    std::string token;
    while (ls >> token) {
      try {
        v.push_back(std::stod(token));
      } catch (const std::logic_error&) {
        parse_fail(line_no, "bad number '" + token + "'");
      }
    }
    if (v.empty()) continue;
    if (v.size() != 3 && v.size() != 6) parse_fail(line_no, "expected 3 or 6 values");
    if (out.points.empty()) normals = v.size() == 6;
    const Vec3 p{v[0], v[1], v[2]};
    if (!is_finite(p)) {
      throw GeometryError("non-finite coordinate at point " + std::to_string(out.points.size()));
    }
    out.points.push_back(p);
    if (normals && v.size() == 6) out.normals.push_back({v[3], v[4], v[5]});
  }
  if (normals && out.normals.size() != out.points.size()) out.normals.clear();
  return out;
}

PointSet load_point_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GeometryError("cannot open point file: " + path.string());
  char magic[3] = {};
  in.read(magic, 3);
  in.clear();
  in.seekg(0);
  try {
    if (std::string(magic, 3) == "ply") return parse_ply(in);
    return parse_xyz(in);
  } catch (const GeometryError& e) {
    throw GeometryError(path.string() + ": " + e.what());
  }
}

// ---- normalization ------------------------------------------------------

NormalizationTransform fit_unit_cube(std::span<const Vec3> points) {
  if (points.empty()) throw GeometryError("cannot normalize an empty shape");
  Vec3 lo = points[0];
  Vec3 hi = points[0];
  for (const auto& p : points) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
  if (!(extent > 0.0)) throw GeometryError("degenerate shape: zero bounding-box extent");
  return {(lo + hi) * 0.5, 2.0 / extent};
}

TriMesh apply_transform(const TriMesh& mesh, const NormalizationTransform& t) {
  TriMesh out = mesh;
  for (auto& v : out.vertices) v = t.apply(v);
  return out;
}

PointSet apply_transform(const PointSet& points, const NormalizationTransform& t) {
  PointSet out = points;
  for (auto& p : out.points) p = t.apply(p);
  return out;
}

std::pair<TriMesh, NormalizationTransform> normalize_unit_cube(const TriMesh& mesh) {
  const auto t = fit_unit_cube(mesh.vertices);
  return {apply_transform(mesh, t), t};
}

std::pair<PointSet, NormalizationTransform> normalize_unit_cube(const PointSet& points) {
  const auto t = fit_unit_cube(points.points);
  return {apply_transform(points, t), t};
}

// ---- ray casting --------------------------------------------------------

std::optional<RayHit> intersect_triangle(const Vec3& a, const Vec3& b, const Vec3& c,
                                         const Vec3& origin, const Vec3& dir, double t_min) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 pvec = cross(dir, e2);
  const double det = dot(e1, pvec);
  const double scale = norm(e1) * norm(e2) * norm(dir);
  if (std::abs(det) <= 1e-14 * scale) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tvec = origin - a;
  const double u = dot(tvec, pvec) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qvec = cross(tvec, e1);
  const double v = dot(dir, qvec) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = dot(e2, qvec) * inv;
  if (!(t > t_min)) return std::nullopt;
  return RayHit{0, t, {1.0 - u - v, u, v}};
}

namespace {

std::array<double, 6> empty_box() {
  constexpr double inf = std::numeric_limits<double>::infinity();
  return {inf, inf, inf, -inf, -inf, -inf};
}

void grow(std::array<double, 6>& box, const Vec3& p) {
  for (int a = 0; a < 3; ++a) {
    box[a] = std::min(box[a], p[a]);
    box[a + 3] = std::max(box[a + 3], p[a]);
  }
}

bool slab_hit(const std::array<double, 6>& box, const Vec3& origin, const Vec3& inv_dir,
              double t_max) {
  double t0 = 0.0;
  double t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    double lo = (box[a] - origin[a]) * inv_dir[a];
    double hi = (box[a + 3] - origin[a]) * inv_dir[a];
    if (std::isnan(lo) || std::isnan(hi)) {
      // ray parallel to the slab and starting on its plane
      if (origin[a] < box[a] || origin[a] > box[a + 3]) return false;
      continue;
    }
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi * (1.0 + 4e-16));
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

Bvh::Bvh(const TriMesh& mesh) {
  tris_.reserve(mesh.num_faces());
  std::vector<Vec3> centroids;
  centroids.reserve(mesh.num_faces());
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    tris_.push_back({mesh.corner(f, 0), mesh.corner(f, 1), mesh.corner(f, 2)});
    centroids.push_back(mesh.centroid(f));
  }
  order_.resize(tris_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * tris_.size());
  if (!tris_.empty()) build(0, static_cast<std::uint32_t>(tris_.size()), centroids);
  root_bounds_ = nodes_.empty() ? empty_box() : nodes_[0].box;
}

std::uint32_t Bvh::build(std::uint32_t begin, std::uint32_t end, std::vector<Vec3>& centroids) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({});
  auto box = empty_box();
  auto cbox = empty_box();
  for (std::uint32_t i = begin; i < end; ++i) {
    for (const auto& p : tris_[order_[i]]) grow(box, p);
    grow(cbox, centroids[order_[i]]);
  }
  nodes_[index].box = box;
  if (end - begin <= 4) {
    nodes_[index].first = begin;
    nodes_[index].count = end - begin;
    return index;
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a) {
    if (cbox[a + 3] - cbox[a] > cbox[axis + 3] - cbox[axis]) axis = a;
  }
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t l, std::uint32_t r) {
                     if (centroids[l][axis] != centroids[r][axis]) return centroids[l][axis] < centroids[r][axis];
                     return l < r;
                   });
  build(begin, mid, centroids);
  const std::uint32_t right = build(mid, end, centroids);
  nodes_[index].first = right;
  nodes_[index].count = 0;
  return index;
}

template <typename Visitor>
void Bvh::traverse(const Vec3& origin, const Vec3& dir, double& t_max, Visitor&& visit) const {
  if (nodes_.empty()) return;
  const Vec3 inv{1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z};
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (!slab_hit(node.box, origin, inv, t_max)) continue;
    if (node.count > 0) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) visit(order_[i]);
    } else {
      const auto self = static_cast<std::uint32_t>(&node - nodes_.data());
      stack[top++] = node.first;
      stack[top++] = self + 1;
    }
  }
}

std::optional<RayHit> Bvh::cast(const Vec3& origin, const Vec3& dir) const {
  std::optional<RayHit> best;
  double t_max = std::numeric_limits<double>::infinity();
  traverse(origin, dir, t_max, [&](std::uint32_t tri) {
    const auto& t = tris_[tri];
    auto hit = intersect_triangle(t[0], t[1], t[2], origin, dir);
    if (hit && (hit->t < t_max || (hit->t == t_max && best && tri < best->face))) {
      hit->face = tri;
      t_max = hit->t;
      best = hit;
    }
  });
  return best;
}

int Bvh::count_crossings(const Vec3& origin, const Vec3& dir, bool& degenerate) const {
  int crossings = 0;
  degenerate = false;
  double t_max = std::numeric_limits<double>::infinity();
  traverse(origin, dir, t_max, [&](std::uint32_t tri) {
    const auto& t = tris_[tri];
    auto hit = intersect_triangle(t[0], t[1], t[2], origin, dir, 1e-12);
    if (!hit) return;
    ++crossings;
    if (*std::min_element(hit->bary.begin(), hit->bary.end()) < 1e-9) degenerate = true;
  });
  return crossings;
}

bool point_inside(const Bvh& bvh, const Vec3& p, std::uint64_t jitter_seed) {
  Vec3 dir{1.0, 0.0, 0.0};
  Rng rng(jitter_seed);
  for (int attempt = 0; attempt < 16; ++attempt) {
    bool degenerate = false;
    const int n = bvh.count_crossings(p, dir, degenerate);
    if (!degenerate) return (n % 2) == 1;
    dir = normalized(Vec3{1.0, 0.2 * (uniform01(rng) - 0.5), 0.2 * (uniform01(rng) - 0.5)});
  }
  return false;
}

// ---- sampling -----------------------------------------------------------

Vec3 sample_triangle(const Vec3& a, const Vec3& b, const Vec3& c, double u1, double u2) {
  const double s = std::sqrt(u1);
  return a * (1.0 - s) + b * (s * (1.0 - u2)) + c * (s * u2);
}

PointSet sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw GeometryError("sample count must be at least 1");
  if (mesh.num_faces() == 0) throw GeometryError("cannot sample an empty mesh");
  std::vector<double> cdf(mesh.num_faces());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    total += mesh.face_area(f);
    cdf[f] = total;
  }
  if (!(total > 0.0)) throw GeometryError("mesh has zero surface area");
  Rng rng(seed);
  PointSet out;
  out.points.reserve(n);
  out.normals.reserve(n);
  out.source_face.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = uniform01(rng) * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
    if (it == cdf.end()) --it;
    const auto f = static_cast<std::uint32_t>(it - cdf.begin());
    const double u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    const Vec3 a = mesh.corner(f, 0), b = mesh.corner(f, 1), c = mesh.corner(f, 2);
    out.points.push_back(sample_triangle(a, b, c, u1, u2));
    out.normals.push_back(normalized(cross(b - a, c - a)));
    out.source_face.push_back(f);
  }
  return out;
}

PointSet sample_interior(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw GeometryError("sample count must be at least 1");
  const Bvh bvh(mesh);
  const auto& box = bvh.bounds();
  Rng rng(seed);
  PointSet out;
  out.points.reserve(n);
  std::size_t attempts = 0;
  while (out.size() < n) {
    const Vec3 p{box[0] + (box[3] - box[0]) * uniform01(rng), box[1] + (box[4] - box[1]) * uniform01(rng),
                 box[2] + (box[5] - box[2]) * uniform01(rng)};
    ++attempts;
    if (point_inside(bvh, p, derive_seed(seed, attempts))) out.points.push_back(p);
    if (attempts >= 10000 && out.size() * 1000 < attempts) {
      throw GeometryError("interior sampling rejected " + std::to_string(attempts - out.size()) + " of " +
                          std::to_string(attempts) +
                          " candidates; mesh is likely not watertight or too thin");
    }
  }
  return out;
}

// ---- nearest neighbours -------------------------------------------------

PointIndex::PointIndex(std::vector<Vec3> points) : points_(std::move(points)) {
  std::vector<std::uint32_t> ids(points_.size());
  std::iota(ids.begin(), ids.end(), 0u);
  nodes_.reserve(points_.size());
  root_ = build(ids, 0);
}

std::uint32_t PointIndex::build(std::span<std::uint32_t> ids, int depth) {
  if (ids.empty()) return npos;
  const int axis = depth % 3;
  const std::size_t mid = ids.size() / 2;
  std::nth_element(ids.begin(), ids.begin() + mid, ids.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
    return a < b;
  });
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({ids[mid], npos, npos, axis});
  const auto left = build(ids.subspan(0, mid), depth + 1);
  const auto right = build(ids.subspan(mid + 1), depth + 1);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

void PointIndex::search(std::uint32_t node, const Vec3& q, std::uint32_t exclude, std::uint32_t& best,
                        double& best_d2) const {
  while (node != npos) {
    const Node& n = nodes_[node];
    const Vec3& p = points_[n.point];
    if (n.point != exclude) {
      const Vec3 d = p - q;
      const double d2 = dot(d, d);
      if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
        best_d2 = d2;
        best = n.point;
      }
    }
    const double diff = q[n.axis] - p[n.axis];
    const std::uint32_t near = diff < 0.0 ? n.left : n.right;
    const std::uint32_t far = diff < 0.0 ? n.right : n.left;
    if (far != npos && diff * diff <= best_d2) search(far, q, exclude, best, best_d2);
    node = near;
  }
}

std::pair<std::uint32_t, double> PointIndex::nearest(const Vec3& q, std::uint32_t exclude) const {
  std::uint32_t best = npos;
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, q, exclude, best, best_d2);
  return {best, best_d2};
}

double median_nn_spacing(std::span<const Vec3> points) {
  if (points.size() < 2) throw GeometryError("spacing needs at least two points");
  const PointIndex index(std::vector<Vec3>(points.begin(), points.end()));
  std::vector<double> d(points.size());
  for (std::uint32_t i = 0; i < points.size(); ++i) d[i] = std::sqrt(index.nearest(points[i], i).second);
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

// ---- cameras and rendering ----------------------------------------------

void Camera::validate() const {
  if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) throw GeometryError("camera fov must lie in (0, pi)");
  if (rows == 0 || cols == 0) throw GeometryError("camera resolution must be nonzero");
  const Vec3 forward = target - position;
  if (!(norm(forward) > 0.0)) throw GeometryError("camera position equals its target");
  if (norm(cross(normalized(forward), normalized(up))) < 1e-9) {
    throw GeometryError("camera up vector is parallel to the view direction");
  }
}

Vec3 Camera::pixel_direction(std::uint32_t row, std::uint32_t col) const {
  const Vec3 forward = normalized(target - position);
  const Vec3 right = normalized(cross(forward, up));
  const Vec3 true_up = cross(right, forward);
  const double half = std::tan(0.5 * fov_y);
  const double aspect = static_cast<double>(cols) / static_cast<double>(rows);
  const double sx = ((col + 0.5) / cols * 2.0 - 1.0) * half * aspect;
  const double sy = (1.0 - (row + 0.5) / rows * 2.0) * half;
  return normalized(forward + right * sx + true_up * sy);
}

std::size_t DepthIdImage::hit_count() const {
  return static_cast<std::size_t>(std::count(hit.begin(), hit.end(), std::uint8_t{1}));
}

DepthIdImage render_depth_ids(const Bvh& bvh, const Camera& camera) {
  camera.validate();
  DepthIdImage img;
  img.rows = camera.rows;
  img.cols = camera.cols;
  const std::size_t n = static_cast<std::size_t>(camera.rows) * camera.cols;
  img.hit.assign(n, 0);
  img.depth.assign(n, 0.0);
  img.face.assign(n, 0);
  img.bary.assign(n, {0.0, 0.0, 0.0});
  for (std::uint32_t r = 0; r < camera.rows; ++r) {
    for (std::uint32_t c = 0; c < camera.cols; ++c) {
      const auto hit = bvh.cast(camera.position, camera.pixel_direction(r, c));
      if (!hit) continue;
      const std::size_t i = img.index(r, c);
      img.hit[i] = 1;
      img.depth[i] = hit->t;
      img.face[i] = hit->face;
      img.bary[i] = hit->bary;
    }
  }
  return img;
}

DepthIdImage render_depth_ids(const TriMesh& mesh, const Camera& camera) {
  return render_depth_ids(Bvh(mesh), camera);
}

std::vector<Camera> default_camera_rig(std::uint32_t rows, std::uint32_t cols, double distance, double fov_y) {
  constexpr double phi = std::numbers::phi;
  // One icosahedron vertex per antipodal pair, signs chosen so every
  // coordinate half-axis faces at least one camera.
  const std::array<Vec3, 6> dirs{{{0.0, 1.0, phi},
                                  {0.0, 1.0, -phi},
                                  {-1.0, -phi, 0.0},
                                  {1.0, -phi, 0.0},
                                  {phi, 0.0, 1.0},
                                  {-phi, 0.0, 1.0}}};
  std::vector<Camera> rig;
  for (const auto& d : dirs) {
    Camera cam;
    cam.position = normalized(d) * distance;
    cam.target = {0.0, 0.0, 0.0};
    cam.up = {0.0, 1.0, 0.0};
    cam.fov_y = fov_y;
    cam.rows = rows;
    cam.cols = cols;
    rig.push_back(cam);
  }
  return rig;
}

}  // namespace partfield
