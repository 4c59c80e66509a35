#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "partfield/geometry.hpp"

namespace partfield {

class ProposalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ProposalSource { label3d, mask2d };

/// A subset of the canonical element set asserted to be one part.
/// `members` and `visible` are sorted ascending; members ⊆ visible.
struct PartProposal {
  std::string shape_id;
  ProposalSource source = ProposalSource::label3d;
  int level = 0;           // label3d: hierarchy level
  int label = 0;           // label3d: label id; mask2d: label used to synthesize the mask, or -1
  std::uint32_t view = 0;  // mask2d: view id
  std::vector<std::uint32_t> members;
  std::vector<std::uint32_t> visible;
  bool degenerate = false;  // empty complement inside `visible`

  /// visible \ members, the domain negatives are drawn from.
  std::vector<std::uint32_t> negative_domain() const;
};

/// Integer labels over a fixed element set at one or more hierarchy levels.
struct LabelSet {
  std::vector<std::string> level_names;
  std::vector<std::vector<int>> levels;

  std::size_t element_count() const { return levels.empty() ? 0 : levels.front().size(); }
};

/// Binary mask image; nonzero = masked.
struct MaskImage {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> data;

  bool masked(std::uint32_t row, std::uint32_t col) const { return data[static_cast<std::size_t>(row) * cols + col] != 0; }
};

inline constexpr std::size_t kMinProposalSize = 20;
inline constexpr std::size_t kMinMaskPixels = 50;
/// Upper bound on a pixel's surface footprint, in head-on pixel widths.
inline constexpr double kMaxFootprintPixels = 2.5;

/// Reads {"levels": [{"name": str, "labels": [int...]}]}.
LabelSet load_label_set(const std::filesystem::path& path);
void save_label_set(const LabelSet& labels, const std::filesystem::path& path);

/// Checks coverage and density; throws ProposalError otherwise.
void validate_label_set(const LabelSet& labels, std::size_t element_count);

/// Per-face labels carried to sampled points through PointSet::source_face.
LabelSet face_labels_to_elements(const LabelSet& face_labels, const PointSet& elements);

/// One proposal per (level, label id). Negative domain is the full element set.
std::vector<PartProposal> ingest_labels(const LabelSet& labels, const std::string& shape_id = {});

/// Pixel-to-element matching radius: twice the median nearest-neighbour spacing.
double matching_radius(const PointSet& elements);

/// Back-projects a mask through a rendered view onto the canonical elements.
/// An element is visible when its nearest unprojected hit pixel lies within
/// max(`radius`, that pixel's surface footprint); it is a member when that
/// pixel is also masked.
PartProposal project_mask(const MaskImage& mask, const DepthIdImage& view, const Camera& camera,
                          const PointSet& elements, double radius, std::uint32_t view_id = 0);

/// Stand-in for image-model masks: renders face labels from each camera and
/// projects one mask per label with at least kMinMaskPixels pixels. Proposals
/// with fewer than kMinProposalSize members are dropped.
std::vector<PartProposal> synth_mask_proposals(const TriMesh& mesh, const std::vector<int>& face_labels,
                                               const std::vector<Camera>& cameras, const PointSet& elements,
                                               double radius);

/// Binary PGM (P5) reader/writer.
MaskImage load_mask(const std::filesystem::path& path);
void save_mask_pgm(const MaskImage& mask, const std::filesystem::path& path);

}  // namespace partfield
