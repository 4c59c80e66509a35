#include "partfield/fixtures.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <functional>
#include <map>
#include <numbers>

namespace partfield::fixtures {

namespace {

using Lattice = std::array<int, 3>;

// Welds vertices on an integer lattice and collects oriented triangles.
class LatticeBuilder {
 public:
  explicit LatticeBuilder(double unit) : unit_(unit) {}

  std::uint32_t vertex(const Lattice& p) {
    auto [it, inserted] = index_.try_emplace(p, static_cast<std::uint32_t>(vertices_.size()));
    if (inserted) vertices_.push_back({p[0] * unit_, p[1] * unit_, p[2] * unit_});
    return it->second;
  }

  // Quad (p, p+du, p+du+dv, p+dv); normal along cross(du, dv).
  void quad(const Lattice& p, const Lattice& du, const Lattice& dv, int label) {
    const Lattice p10{p[0] + du[0], p[1] + du[1], p[2] + du[2]};
    const Lattice p11{p10[0] + dv[0], p10[1] + dv[1], p10[2] + dv[2]};
    const Lattice p01{p[0] + dv[0], p[1] + dv[1], p[2] + dv[2]};
    const auto a = vertex(p), b = vertex(p10), c = vertex(p11), d = vertex(p01);
    faces_.push_back({a, b, c});
    faces_.push_back({a, c, d});
    labels_.push_back(label);
    labels_.push_back(label);
  }

  // Axis-aligned rectangle at coordinate `level` on `axis`, spanning
  // [lo, hi] on the other two axes in steps of `step`; `outward` = ±1.
  void face(int axis, int level, int outward, const Lattice& lo, const Lattice& hi, int step, int label,
            const std::function<bool(int, int)>& skip = {}) {
    int u = (axis + 1) % 3;
    int v = (axis + 2) % 3;
    // cross(e_u, e_v) = +e_axis for the cyclic order; swap for inward normals
    if (outward < 0) std::swap(u, v);
    for (int a = lo[u]; a < hi[u]; a += step) {
      for (int b = lo[v]; b < hi[v]; b += step) {
        if (skip && skip(outward < 0 ? b : a, outward < 0 ? a : b)) continue;
        Lattice p{};
        p[axis] = level;
        p[u] = a;
        p[v] = b;
        Lattice du{}, dv{};
        du[u] = step;
        dv[v] = step;
        quad(p, du, dv, label);
      }
    }
  }

  void box(const Lattice& lo, const Lattice& hi, int step, int label,
           const std::function<bool(int axis, int sign, int a, int b)>& skip = {}) {
    for (int axis = 0; axis < 3; ++axis) {
      for (int sign : {-1, 1}) {
        const int level = sign < 0 ? lo[axis] : hi[axis];
        std::function<bool(int, int)> s;
        if (skip) s = [&, axis, sign](int a, int b) { return skip(axis, sign, a, b); };
        face(axis, level, sign, lo, hi, step, label, s);
      }
    }
  }

  LabeledMesh finish() {
    LabeledMesh out{make_mesh(std::move(vertices_), std::move(faces_)), std::move(labels_)};
    return out;
  }

 private:
  double unit_;
  std::map<Lattice, std::uint32_t> index_;
  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<int> labels_;
};

}  // namespace

TriMesh make_box(const Vec3& lo, const Vec3& hi, int cells) {
  LatticeBuilder builder(1.0);
  builder.box({0, 0, 0}, {cells, cells, cells}, 1, 0);
  auto mesh = builder.finish().mesh;
  for (auto& v : mesh.vertices) {
    for (int a = 0; a < 3; ++a) v[a] = lo[a] + (hi[a] - lo[a]) * v[a] / cells;
  }
  return mesh;
}

TriMesh make_quad(double half, double z0, int cells) {
  LatticeBuilder builder(1.0);
  builder.face(2, 0, 1, {0, 0, 0}, {cells, cells, 0}, 1, 0);
  auto mesh = builder.finish().mesh;
  for (auto& v : mesh.vertices) {
    v.x = -half + 2.0 * half * v.x / cells;
    v.y = -half + 2.0 * half * v.y / cells;
    v.z = z0;
  }
  return mesh;
}

TriMesh make_grid(int cols, int rows) {
  LatticeBuilder builder(1.0);
  builder.face(2, 0, 1, {0, 0, 0}, {cols, rows, 0}, 1, 0);
  return builder.finish().mesh;
}

TriMesh make_icosphere(double radius, int subdivisions) {
  constexpr double phi = std::numbers::phi;
  std::vector<Vec3> verts{{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                          {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                          {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  std::vector<Face> faces{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                          {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                          {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                          {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& v : verts) v = normalized(v);
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
    auto mid = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto [it, inserted] = midpoint.try_emplace(key, static_cast<std::uint32_t>(verts.size()));
      if (inserted) verts.push_back(normalized((verts[a] + verts[b]) * 0.5));
      return it->second;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const auto ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  for (auto& v : verts) v = v * radius;
  return make_mesh(std::move(verts), std::move(faces));
}

LabeledMesh make_dumbbell() {
  // Lattice unit 1/30: cubes of side 18 units (0.6) at x in [-27,-9] and
  // [9,27]; bar cross-section 6 units (0.2) spanning x in [-9,9].
  LatticeBuilder builder(1.0 / 30.0);
  auto in_bar_section = [](int a, int b) { return a >= -3 && a < 3 && b >= -3 && b < 3; };
  builder.box({-27, -9, -9}, {-9, 9, 9}, 2, 0, [&](int axis, int sign, int a, int b) {
    return axis == 0 && sign > 0 && in_bar_section(a, b);
  });
  builder.box({9, -9, -9}, {27, 9, 9}, 2, 2, [&](int axis, int sign, int a, int b) {
    return axis == 0 && sign < 0 && in_bar_section(a, b);
  });
  const std::array<int, 3> lo{-9, -3, -3};
  const std::array<int, 3> hi{9, 3, 3};
  builder.face(1, -3, -1, lo, hi, 2, 1);
  builder.face(1, 3, 1, lo, hi, 2, 1);
  builder.face(2, -3, -1, lo, hi, 2, 1);
  builder.face(2, 3, 1, lo, hi, 2, 1);
  return builder.finish();
}

LabeledMesh make_segmented_rod(int segments) {
  if (segments < 1) throw std::invalid_argument("segmented rod needs at least one segment");
  constexpr int kSide = 6;
  LatticeBuilder builder(1.0 / (kSide * segments));
  builder.box({0, 0, 0}, {kSide * segments, kSide, kSide}, 1, 0);
  auto out = builder.finish();
  for (std::size_t f = 0; f < out.mesh.num_faces(); ++f) {
    const double x = out.mesh.centroid(f).x * segments;
    out.face_labels[f] = std::clamp(static_cast<int>(x), 0, segments - 1);
  }
  return out;
}

TriMesh subdivide_midpoint(const TriMesh& mesh) {
  std::vector<Vec3> verts = mesh.vertices;
  std::vector<Face> faces;
  faces.reserve(mesh.num_faces() * 4);
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
  auto mid = [&](std::uint32_t a, std::uint32_t b) {
    const auto key = std::minmax(a, b);
    auto [it, inserted] = midpoint.try_emplace(key, static_cast<std::uint32_t>(verts.size()));
    if (inserted) verts.push_back((verts[a] + verts[b]) * 0.5);
    return it->second;
  };
  for (const auto& f : mesh.faces) {
    const auto ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
    faces.push_back({f[0], ab, ca});
    faces.push_back({f[1], bc, ab});
    faces.push_back({f[2], ca, bc});
    faces.push_back({ab, bc, ca});
  }
  return make_mesh(std::move(verts), std::move(faces));
}

}  // namespace partfield::fixtures
