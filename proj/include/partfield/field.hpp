#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "partfield/geometry.hpp"

namespace partfield {

class FieldError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Three axis-aligned R x R x C feature grids (XY, XZ, YZ) summed under
/// bilinear interpolation, plus a log-temperature.
///
/// Plane p stores node (row, col, ch) at
///   params[((p * R + row) * R + col) * C + ch]
/// where the plane's first axis addresses columns and its second axis rows.
/// Coordinates map -1 -> node 0 and +1 -> node R-1; points outside [-1,1]^3
/// are clamped to the boundary.
struct TriplaneField {
  std::uint32_t resolution = 0;
  std::uint32_t channels = 0;
  std::vector<float> params;
  float log_temperature = 0.0f;

  static constexpr double kMinTemperature = 0.01;
  static constexpr double kMaxTemperature = 1.0;
  static constexpr double kInitialTemperature = 0.07;

  double temperature() const { return std::exp(static_cast<double>(log_temperature)); }
  std::size_t plane_size() const { return static_cast<std::size_t>(resolution) * resolution * channels; }
  std::size_t parameter_count() const { return 3 * plane_size(); }
  void clamp_temperature();
};

enum class ElementKind : std::uint8_t { point = 0, face = 1 };

/// Per-element feature vectors, row-major count x dim.
struct FeatureSet {
  ElementKind kind = ElementKind::point;
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;

  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * dim, dim}; }
};

/// Gradient with respect to every triplane parameter and the log-temperature.
struct FieldGradient {
  std::vector<double> params;
  double log_temperature = 0.0;
};

/// Parameters i.i.d. N(0, init_scale^2); temperature starts at 0.07.
TriplaneField new_triplane(std::uint32_t resolution, std::uint32_t channels, double init_scale, std::uint64_t seed);

/// Feature at one point, written to `out` (size C) in double precision.
void query_point(const TriplaneField& field, const Vec3& p, std::span<double> out);

FeatureSet query(const TriplaneField& field, std::span<const Vec3> points);
inline FeatureSet query(const TriplaneField& field, const PointSet& points) { return query(field, points.points); }

/// Adds the adjoint of query_point at `p` applied to `upstream` into `grad` (size 3 R^2 C).
void accumulate_query_grad(const TriplaneField& field, const Vec3& p, std::span<const double> upstream,
                           std::span<double> grad);

/// Adjoint of `query`: upstream is row-major (points x C). θ receives no gradient.
FieldGradient query_grad(const TriplaneField& field, std::span<const Vec3> points, std::span<const double> upstream);

/// Mean of the field over `samples_per_face` points per face: the centroid
/// plus samples_per_face - 1 uniform samples drawn as corner-cycled triples.
/// When samples_per_face - 1 is a multiple of 3 the mean of a field that is
/// linear over the face equals its value at the centroid.
FeatureSet face_features(const TriplaneField& field, const TriMesh& mesh, std::uint32_t samples_per_face = 11,
                         std::uint64_t seed = 0);

/// Scales every row to unit length (rows with norm <= 1e-12 are left as is).
FeatureSet unit_normalized(FeatureSet features);

// ---- binary formats -----------------------------------------------------
// PFLD: "PFLD", u32 version, u32 R, u32 C, f32 θ, 3 planes of f32 (LE).
// PFTS: "PFTS", u32 count, u32 dim, f32 data (LE).

inline constexpr std::uint32_t kFieldFormatVersion = 1;

void save_field(const TriplaneField& field, const std::filesystem::path& path);
TriplaneField load_field(const std::filesystem::path& path);
std::string encode_field(const TriplaneField& field);
TriplaneField decode_field(std::string_view bytes);

void save_features(const FeatureSet& features, const std::filesystem::path& path);
FeatureSet load_features(const std::filesystem::path& path, ElementKind kind = ElementKind::point);
std::string encode_features(const FeatureSet& features);
FeatureSet decode_features(std::string_view bytes, ElementKind kind = ElementKind::point);

/// Loads a PFTS file and checks its row count against `expected_count`.
FeatureSet ingest_external_features(const std::filesystem::path& path, ElementKind kind, std::size_t expected_count);

}  // namespace partfield
