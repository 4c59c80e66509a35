#include "partfield/field.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "partfield/random.hpp"

namespace partfield {

void TriplaneField::clamp_temperature() {
  const double lo = std::log(kMinTemperature);
  const double hi = std::log(kMaxTemperature);
  log_temperature = static_cast<float>(std::clamp(static_cast<double>(log_temperature), lo, hi));
}

TriplaneField new_triplane(std::uint32_t resolution, std::uint32_t channels, double init_scale, std::uint64_t seed) {
  if (resolution < 2) throw FieldError("triplane resolution must be at least 2");
  if (channels < 1) throw FieldError("triplane needs at least one channel");
  TriplaneField field;
  field.resolution = resolution;
  field.channels = channels;
  field.params.resize(field.parameter_count());
  Rng rng(seed);
  for (auto& v : field.params) v = static_cast<float>(init_scale * standard_normal(rng));
  field.log_temperature = static_cast<float>(std::log(TriplaneField::kInitialTemperature));
  return field;
}

namespace {

struct Bilinear {
  std::size_t offset[4];  // element offsets of the four corner channel rows
  double weight[4];
};

// Corner offsets (into the full parameter vector) and weights for plane
// `plane` at coordinates (u -> column, v -> row).
Bilinear bilinear(const TriplaneField& f, int plane, double u, double v) {
  const std::uint32_t R = f.resolution;
  auto split = [R](double c, std::uint32_t& i0, double& frac) {
    const double t = (std::clamp(c, -1.0, 1.0) + 1.0) * 0.5 * (R - 1);
    i0 = std::min(static_cast<std::uint32_t>(t), R - 2);
    frac = t - i0;
  };
  std::uint32_t col = 0, row = 0;
  double fu = 0.0, fv = 0.0;
  split(u, col, fu);
  split(v, row, fv);
  const std::size_t C = f.channels;
  const std::size_t base = (static_cast<std::size_t>(plane) * R + row) * R + col;
  Bilinear b;
  b.offset[0] = base * C;
  b.offset[1] = (base + 1) * C;
  b.offset[2] = (base + R) * C;
  b.offset[3] = (base + R + 1) * C;
  b.weight[0] = (1.0 - fu) * (1.0 - fv);
  b.weight[1] = fu * (1.0 - fv);
  b.weight[2] = (1.0 - fu) * fv;
  b.weight[3] = fu * fv;
  return b;
}

std::array<Bilinear, 3> corners(const TriplaneField& f, const Vec3& p) {
  return {bilinear(f, 0, p.x, p.y), bilinear(f, 1, p.x, p.z), bilinear(f, 2, p.y, p.z)};
}

}  // namespace

void query_point(const TriplaneField& field, const Vec3& p, std::span<double> out) {
  const std::size_t C = field.channels;
  std::fill(out.begin(), out.end(), 0.0);
  const float* data = field.params.data();
  for (const auto& b : corners(field, p)) {
    for (int k = 0; k < 4; ++k) {
      const double w = b.weight[k];
      const float* src = data + b.offset[k];
      for (std::size_t c = 0; c < C; ++c) out[c] += w * src[c];
    }
  }
}

FeatureSet query(const TriplaneField& field, std::span<const Vec3> points) {
  FeatureSet out;
  out.kind = ElementKind::point;
  out.count = static_cast<std::uint32_t>(points.size());
  out.dim = field.channels;
  out.data.resize(points.size() * field.channels);
  std::vector<double> buf(field.channels);
  for (std::size_t i = 0; i < points.size(); ++i) {
    query_point(field, points[i], buf);
    std::copy(buf.begin(), buf.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * field.channels));
  }
  return out;
}

void accumulate_query_grad(const TriplaneField& field, const Vec3& p, std::span<const double> upstream,
                           std::span<double> grad) {
  const std::size_t C = field.channels;
  for (const auto& b : corners(field, p)) {
    for (int k = 0; k < 4; ++k) {
      const double w = b.weight[k];
      if (w == 0.0) continue;
      double* dst = grad.data() + b.offset[k];
      for (std::size_t c = 0; c < C; ++c) dst[c] += w * upstream[c];
    }
  }
}

FieldGradient query_grad(const TriplaneField& field, std::span<const Vec3> points, std::span<const double> upstream) {
  if (upstream.size() != points.size() * field.channels) {
    throw FieldError("upstream size " + std::to_string(upstream.size()) + " does not match points x channels");
  }
  FieldGradient g;
  g.params.assign(field.parameter_count(), 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    accumulate_query_grad(field, points[i], upstream.subspan(i * field.channels, field.channels), g.params);
  }
  return g;
}

FeatureSet face_features(const TriplaneField& field, const TriMesh& mesh, std::uint32_t samples_per_face,
                         std::uint64_t seed) {
  if (samples_per_face < 1) throw FieldError("samples_per_face must be at least 1");
  const std::size_t C = field.channels;
  FeatureSet out;
  out.kind = ElementKind::face;
  out.count = static_cast<std::uint32_t>(mesh.num_faces());
  out.dim = field.channels;
  out.data.resize(mesh.num_faces() * C);
  Rng rng(seed);
  std::vector<double> acc(C), buf(C);
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 a = mesh.corner(f, 0), b = mesh.corner(f, 1), c = mesh.corner(f, 2);
    query_point(field, mesh.centroid(f), acc);
    // Samples come in triples that cycle the corners of one uniform draw, so
    // every complete triple averages to the centroid.
    double u1 = 0.0, u2 = 0.0;
    for (std::uint32_t s = 1; s < samples_per_face; ++s) {
      const std::uint32_t turn = (s - 1) % 3;
      if (turn == 0) {
        u1 = uniform01(rng);
        u2 = uniform01(rng);
      }
      const Vec3 q = turn == 0 ? sample_triangle(a, b, c, u1, u2)
                               : (turn == 1 ? sample_triangle(b, c, a, u1, u2) : sample_triangle(c, a, b, u1, u2));
      query_point(field, q, buf);
      for (std::size_t k = 0; k < C; ++k) acc[k] += buf[k];
    }
    for (std::size_t k = 0; k < C; ++k) out.data[f * C + k] = static_cast<float>(acc[k] / samples_per_face);
  }
  return out;
}

FeatureSet unit_normalized(FeatureSet features) {
  for (std::size_t i = 0; i < features.count; ++i) {
    auto row = features.row(i);
    double n2 = 0.0;
    for (float v : row) n2 += static_cast<double>(v) * v;
    const double n = std::sqrt(n2);
    if (n <= 1e-12) continue;
    for (float& v : row) v = static_cast<float>(v / n);
  }
  return features;
}

// ---- binary formats -----------------------------------------------------

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t& pos) {
  char buf[sizeof(T)];
  std::memcpy(buf, bytes.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  pos += sizeof(T);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

void require_bytes(std::string_view bytes, std::size_t expected, const char* what) {
  if (bytes.size() < expected) {
    throw FieldError(std::string(what) + " truncated: expected " + std::to_string(expected) + " bytes, got " +
                     std::to_string(bytes.size()));
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FieldError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FieldError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FieldError("write failed: " + path.string());
}

}  // namespace

std::string encode_field(const TriplaneField& field) {
  std::string out = "PFLD";
  out.reserve(20 + field.params.size() * 4);
  put<std::uint32_t>(out, kFieldFormatVersion);
  put<std::uint32_t>(out, field.resolution);
  put<std::uint32_t>(out, field.channels);
  put<float>(out, field.log_temperature);
  for (float v : field.params) put<float>(out, v);
  return out;
}

TriplaneField decode_field(std::string_view bytes) {
  require_bytes(bytes, 20, "field header");
  if (bytes.substr(0, 4) != "PFLD") throw FieldError("bad field magic (expected PFLD)");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kFieldFormatVersion) {
    throw FieldError("unsupported field version " + std::to_string(version) + " (expected " +
                     std::to_string(kFieldFormatVersion) + ")");
  }
  TriplaneField field;
  field.resolution = get<std::uint32_t>(bytes, pos);
  field.channels = get<std::uint32_t>(bytes, pos);
  field.log_temperature = get<float>(bytes, pos);
  if (field.resolution < 2 || field.channels < 1) throw FieldError("field header has invalid shape");
  const std::size_t expected = 20 + field.parameter_count() * 4;
  require_bytes(bytes, expected, "field file");
  if (bytes.size() != expected) {
    throw FieldError("field file has " + std::to_string(bytes.size() - expected) + " trailing bytes");
  }
  field.params.resize(field.parameter_count());
  for (auto& v : field.params) v = get<float>(bytes, pos);
  return field;
}

void save_field(const TriplaneField& field, const std::filesystem::path& path) { write_file(path, encode_field(field)); }

TriplaneField load_field(const std::filesystem::path& path) {
  try {
    return decode_field(read_file(path));
  } catch (const FieldError& e) {
    throw FieldError(path.string() + ": " + e.what());
  }
}

std::string encode_features(const FeatureSet& features) {
  std::string out = "PFTS";
  out.reserve(12 + features.data.size() * 4);
  put<std::uint32_t>(out, features.count);
  put<std::uint32_t>(out, features.dim);
  for (float v : features.data) put<float>(out, v);
  return out;
}

FeatureSet decode_features(std::string_view bytes, ElementKind kind) {
  require_bytes(bytes, 12, "feature header");
  if (bytes.substr(0, 4) != "PFTS") throw FieldError("bad feature magic (expected PFTS)");
  std::size_t pos = 4;
  FeatureSet out;
  out.kind = kind;
  out.count = get<std::uint32_t>(bytes, pos);
  out.dim = get<std::uint32_t>(bytes, pos);
  const std::size_t expected = 12 + static_cast<std::size_t>(out.count) * out.dim * 4;
  require_bytes(bytes, expected, "feature file");
  if (bytes.size() != expected) {
    throw FieldError("feature file has " + std::to_string(bytes.size() - expected) + " trailing bytes");
  }
  out.data.resize(static_cast<std::size_t>(out.count) * out.dim);
  for (auto& v : out.data) {
    v = get<float>(bytes, pos);
    if (!std::isfinite(v)) throw FieldError("feature file contains a non-finite value");
  }
  return out;
}

void save_features(const FeatureSet& features, const std::filesystem::path& path) {
  write_file(path, encode_features(features));
}

FeatureSet load_features(const std::filesystem::path& path, ElementKind kind) {
  try {
    return decode_features(read_file(path), kind);
  } catch (const FieldError& e) {
    throw FieldError(path.string() + ": " + e.what());
  }
}

FeatureSet ingest_external_features(const std::filesystem::path& path, ElementKind kind, std::size_t expected_count) {
  auto features = load_features(path, kind);
  if (features.count != expected_count) {
    throw FieldError(path.string() + ": feature count " + std::to_string(features.count) + " does not match " +
                     std::to_string(expected_count) + (kind == ElementKind::face ? " faces" : " points"));
  }
  return features;
}

}  // namespace partfield
