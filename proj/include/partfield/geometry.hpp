#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace partfield {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  friend Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return n > 0.0 ? a * (1.0 / n) : a;
}
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

using Face = std::array<std::uint32_t, 3>;

/// Indexed triangle mesh. `face_adjacency[f]` lists faces sharing an edge with f.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<std::vector<std::uint32_t>> face_adjacency;

  std::size_t num_faces() const { return faces.size(); }
  std::size_t num_vertices() const { return vertices.size(); }
  Vec3 corner(std::size_t face, int k) const { return vertices[faces[face][k]]; }
  Vec3 centroid(std::size_t face) const;
  double face_area(std::size_t face) const;
};

/// Validates indices and builds edge adjacency. Throws GeometryError on bad input.
TriMesh make_mesh(std::vector<Vec3> vertices, std::vector<Face> faces);

/// Faces sharing an edge are adjacent; non-manifold edges connect all incident faces.
std::vector<std::vector<std::uint32_t>> build_face_adjacency(std::span<const Face> faces);

struct PixelRef {
  std::uint32_t view = 0;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
};

struct PointSet {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;               // empty or one per point
  std::vector<std::uint32_t> source_face;  // empty or one per point
  std::vector<PixelRef> source_pixel;      // empty or one per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Maps p to (p - center) * scale.
struct NormalizationTransform {
  Vec3 center;
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
  Vec3 invert(const Vec3& q) const { return q * (1.0 / scale) + center; }
};

// ---- file loading -------------------------------------------------------

TriMesh parse_obj(std::istream& in);
TriMesh load_mesh(const std::filesystem::path& path);
void save_obj(const TriMesh& mesh, const std::filesystem::path& path);

PointSet parse_ply(std::istream& in);
PointSet parse_xyz(std::istream& in);
/// PLY (ascii / binary_little_endian) or whitespace XYZ, chosen by extension then header sniffing.
PointSet load_point_set(const std::filesystem::path& path);

// ---- normalization ------------------------------------------------------

/// Tight bounding box mapped so the longest axis spans [-1,1]. Throws on zero extent.
NormalizationTransform fit_unit_cube(std::span<const Vec3> points);
TriMesh apply_transform(const TriMesh& mesh, const NormalizationTransform& t);
PointSet apply_transform(const PointSet& points, const NormalizationTransform& t);
std::pair<TriMesh, NormalizationTransform> normalize_unit_cube(const TriMesh& mesh);
std::pair<PointSet, NormalizationTransform> normalize_unit_cube(const PointSet& points);

// ---- ray casting --------------------------------------------------------

struct RayHit {
  std::uint32_t face = 0;
  double t = 0.0;
  // Barycentric weights of the face's three corners.
  std::array<double, 3> bary{};
};

inline constexpr double kRayEpsilon = 1e-6;

/// Möller–Trumbore; returns a hit only for t > t_min.
std::optional<RayHit> intersect_triangle(const Vec3& a, const Vec3& b, const Vec3& c,
                                         const Vec3& origin, const Vec3& dir,
                                         double t_min = kRayEpsilon);

/// Binary bounding volume hierarchy over a mesh's triangles. Owns a copy of
/// the triangle corners so it can outlive the mesh.
class Bvh {
 public:
  explicit Bvh(const TriMesh& mesh);

  std::optional<RayHit> cast(const Vec3& origin, const Vec3& dir) const;

  /// Number of surface crossings along the ray; sets `degenerate` when a
  /// crossing grazes an edge or vertex and the parity is unreliable.
  int count_crossings(const Vec3& origin, const Vec3& dir, bool& degenerate) const;

  std::size_t num_triangles() const { return tris_.size(); }
  const std::array<double, 6>& bounds() const { return root_bounds_; }

 private:
  struct Node {
    std::array<double, 6> box;  // min xyz, max xyz
    std::uint32_t first = 0;    // leaf: first index into order_; inner: right child
    std::uint32_t count = 0;    // 0 for inner nodes
  };

  template <typename Visitor>
  void traverse(const Vec3& origin, const Vec3& dir, double& t_max, Visitor&& visit) const;
  std::uint32_t build(std::uint32_t begin, std::uint32_t end, std::vector<Vec3>& centroids);

  std::vector<std::array<Vec3, 3>> tris_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::array<double, 6> root_bounds_{};
};

/// Point-in-mesh by +x ray parity, jittering the direction on grazing hits.
bool point_inside(const Bvh& bvh, const Vec3& p, std::uint64_t jitter_seed = 0);

// ---- sampling -----------------------------------------------------------

/// Area-weighted uniform surface samples with source_face and face normals.
PointSet sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed);

/// Rejection sampling inside the mesh bounding box with a parity test.
/// Throws GeometryError when more than 99.9% of candidates are rejected.
PointSet sample_interior(const TriMesh& mesh, std::size_t n, std::uint64_t seed);

/// Uniform point on triangle (a,b,c) from two uniforms in [0,1).
Vec3 sample_triangle(const Vec3& a, const Vec3& b, const Vec3& c, double u1, double u2);

// ---- nearest neighbours -------------------------------------------------

/// Static kd-tree for nearest-neighbour queries over a point cloud.
class PointIndex {
 public:
  static constexpr std::uint32_t npos = std::numeric_limits<std::uint32_t>::max();

  PointIndex() = default;
  explicit PointIndex(std::vector<Vec3> points);

  /// Returns (index, squared distance); index == npos when empty.
  std::pair<std::uint32_t, double> nearest(const Vec3& q, std::uint32_t exclude = npos) const;
  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::uint32_t i) const { return points_[i]; }

 private:
  struct Node {
    std::uint32_t point;
    std::uint32_t left = npos;
    std::uint32_t right = npos;
    int axis = 0;
  };
  std::uint32_t build(std::span<std::uint32_t> ids, int depth);
  void search(std::uint32_t node, const Vec3& q, std::uint32_t exclude, std::uint32_t& best,
              double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  std::uint32_t root_ = npos;
};

/// Median over points of the distance to the nearest other point.
double median_nn_spacing(std::span<const Vec3> points);

// ---- cameras and rendering ----------------------------------------------

struct Camera {
  Vec3 position{0.0, 0.0, 3.0};
  Vec3 target{0.0, 0.0, 0.0};
  Vec3 up{0.0, 1.0, 0.0};
  double fov_y = 0.7;  // radians
  std::uint32_t rows = 128;
  std::uint32_t cols = 128;

  void validate() const;
  /// Unit direction of the primary ray through the centre of pixel (row, col).
  Vec3 pixel_direction(std::uint32_t row, std::uint32_t col) const;
};

struct DepthIdImage {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> hit;
  std::vector<double> depth;
  std::vector<std::uint32_t> face;
  std::vector<std::array<double, 3>> bary;

  std::size_t index(std::uint32_t row, std::uint32_t col) const {
    return static_cast<std::size_t>(row) * cols + col;
  }
  std::size_t hit_count() const;
};

DepthIdImage render_depth_ids(const Bvh& bvh, const Camera& camera);
DepthIdImage render_depth_ids(const TriMesh& mesh, const Camera& camera);

/// Six views looking at the origin from one vertex of each antipodal pair of
/// an icosahedron (a ring around the shape).
std::vector<Camera> default_camera_rig(std::uint32_t rows = 128, std::uint32_t cols = 128,
                                       double distance = 3.5, double fov_y = 1.05);

}  // namespace partfield
