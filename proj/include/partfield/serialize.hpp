#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "partfield/analysis.hpp"
#include "partfield/clustering.hpp"
#include "partfield/field.hpp"
#include "partfield/geometry.hpp"
#include "partfield/loss.hpp"
#include "partfield/proposals.hpp"
#include "partfield/sampler.hpp"

// JSON mappings for the public types. Readers fill absent keys with defaults
// and throw nlohmann::json exceptions on type mismatches.
namespace partfield {

using Json = nlohmann::json;

void to_json(Json& j, const Vec3& v);
void from_json(const Json& j, Vec3& v);

void to_json(Json& j, const Camera& c);
void from_json(const Json& j, Camera& c);

void to_json(Json& j, const SamplerConfig& c);
void from_json(const Json& j, SamplerConfig& c);

void to_json(Json& j, const AdamConfig& c);
void from_json(const Json& j, AdamConfig& c);

void to_json(Json& j, const FitConfig& c);
void from_json(const Json& j, FitConfig& c);

void to_json(Json& j, const FitReport& r);

void to_json(Json& j, const Segmentation& s);
void from_json(const Json& j, Segmentation& s);

void to_json(Json& j, const MergeTree& t);

void to_json(Json& j, const MiouReport& r);
void to_json(Json& j, const EvaluationSummary& s);

void to_json(Json& j, const LabelSet& labels);
void from_json(const Json& j, LabelSet& labels);

void to_json(Json& j, const TriplaneField& f);
void to_json(Json& j, const FeatureSet& f);

Json read_json(const std::filesystem::path& path);
/// Writes `j.dump(2)` plus a trailing newline.
void write_json(const Json& j, const std::filesystem::path& path);

/// {"labels": [...]} or a bare list of ints.
std::vector<int> read_face_labels(const Json& j);

struct MaskEntry {
  std::filesystem::path mask;
  Camera camera;
};

/// [{"mask": path, "camera": {...}}]; relative mask paths resolve against `base`.
std::vector<MaskEntry> parse_mask_manifest(const Json& j, const std::filesystem::path& base);

}  // namespace partfield
