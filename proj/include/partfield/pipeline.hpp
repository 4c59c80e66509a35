#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "partfield/field.hpp"
#include "partfield/geometry.hpp"
#include "partfield/proposals.hpp"
#include "partfield/serialize.hpp"

// Glue shared by the command line tool and the HTTP service.
namespace partfield {

inline constexpr std::size_t kDefaultCanonicalPoints = 100000;

/// A mesh normalized to the unit cube together with its canonical surface samples.
struct PreparedShape {
  TriMesh mesh;
  NormalizationTransform transform;
  PointSet points;
};

PreparedShape prepare_shape(const TriMesh& raw, std::size_t point_count = kDefaultCanonicalPoints,
                            std::uint64_t seed = 0);

/// Label sets may be per face or per canonical element; per-face sets are
/// carried to elements through `source_face`.
std::vector<PartProposal> proposals_from_labels(const LabelSet& labels, const PreparedShape& shape,
                                                const std::string& shape_id = {});

/// Cameras are expressed in the normalized frame.
std::vector<PartProposal> proposals_from_masks(const std::vector<MaskEntry>& masks, const PreparedShape& shape,
                                               const std::string& shape_id = {});

std::vector<PartProposal> synthetic_mask_proposals(const PreparedShape& shape, const std::vector<int>& face_labels,
                                                   std::uint32_t views = 6, std::uint32_t resolution = 128);

/// Proposals manifest:
///   {"labels3d": "labels.json",
///    "masks": "masks.json",
///    "synthetic_masks": {"labels": "labels.json", "level": 0, "views": 6, "resolution": 128}}
/// Every key is optional; relative paths resolve against `base`.
std::vector<PartProposal> proposals_from_manifest(const Json& manifest, const std::filesystem::path& base,
                                                  const PreparedShape& shape, const std::string& shape_id = {});

/// Per-face features: PFTS files with one row per face are used as is, one
/// row per canonical element are carried to faces through the element
/// nearest to each face centroid.
FeatureSet face_features_from_points(const TriMesh& mesh, const PointSet& points, const FeatureSet& point_features);

/// Loads a PFLD field or PFTS feature file (by magic) and returns face features.
FeatureSet load_face_features(const std::filesystem::path& path, const PreparedShape& shape,
                              std::uint32_t samples_per_face = 11, std::uint64_t seed = 0);

/// Same as load_face_features for an in-memory payload.
FeatureSet face_features_from_bytes(std::string_view bytes, const PreparedShape& shape,
                                    std::uint32_t samples_per_face = 11, std::uint64_t seed = 0);

/// Little-endian mesh payload: u32 vertex count, u32 face count,
/// f32 xyz per vertex, u32 triple per face.
std::string encode_mesh(const TriMesh& mesh);

}  // namespace partfield
