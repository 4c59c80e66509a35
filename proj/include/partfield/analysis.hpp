#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "partfield/clustering.hpp"
#include "partfield/field.hpp"
#include "partfield/geometry.hpp"

namespace partfield {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PartIoU {
  int gt_part = 0;
  int best_pred_part = 0;
  std::uint32_t gt_size = 0;
  double iou = 0.0;
};

struct MiouReport {
  double miou = 0.0;
  std::vector<PartIoU> parts;  // ascending GT id
};

/// Class-agnostic mIoU on face sets: each GT part takes its best IoU over
/// predicted parts; the result is the mean over GT parts.
MiouReport miou(std::span<const int> gt, std::span<const int> pred);

/// Argmax of mIoU over `segs`; ties go to the earlier (coarser) entry.
std::pair<std::size_t, double> best_of_scales(std::span<const int> gt, std::span<const Segmentation> segs);

/// Cosine of every row of `features` to `anchor_feature`.
std::vector<float> similarity_map(const FeatureSet& features, std::span<const float> anchor_feature);
/// Same-shape variant: anchor is a row of `features`.
std::vector<float> similarity_map(const FeatureSet& features, std::uint32_t anchor);
/// Cross-shape variant: anchor row of `source`, values over `target`.
std::vector<float> similarity_map(const FeatureSet& source, std::uint32_t anchor, const FeatureSet& target);

/// Per-part mean features of `seg` over `features` (k x dim, label order).
std::vector<float> part_means(const Segmentation& seg, const FeatureSet& features);

/// Seeded k-means on the target with the source's per-part means; target
/// labels inherit source part ids.
Segmentation cosegment(const Segmentation& source_seg, const FeatureSet& source_features,
                       const FeatureSet& target_features);

/// Per source row, the target row of highest cosine (lowest index on ties).
std::vector<std::uint32_t> nn_correspondence(const FeatureSet& source, const FeatureSet& target);

/// Per mesh face, the label of the nearest point to the face centroid.
std::vector<int> transfer_point_labels_to_faces(const TriMesh& mesh, const PointSet& points,
                                                std::span<const int> point_labels);

// ---- interactive regression cosegmentation -------------------------------

struct Annotation {
  std::uint32_t element = 0;
  int label = 0;
};

/// One-vs-rest L2-regularized logistic regression (bias unregularized).
struct LogRegModel {
  std::vector<int> classes;        // ascending class ids
  std::uint32_t dim = 0;
  std::vector<double> weights;     // classes x dim
  std::vector<double> bias;        // per class
  double lambda = 0.0;
  double max_gradient_norm = 0.0;  // over classes, at the returned model
};

struct LogRegOptions {
  double lambda = 1e-2;
  double tolerance = 1e-6;
  std::uint32_t max_iterations = 200000;
};

/// Objective for class `cls` (as +1) vs the rest at (w, b):
///   (1/m) Σ log(1 + exp(-y (w·x + b))) + λ/2 |w|².
double logreg_objective(const FeatureSet& features, std::span<const Annotation> annotations, int cls,
                        std::span<const double> w, double b, double lambda);

LogRegModel fit_logreg(const FeatureSet& features, std::span<const Annotation> annotations,
                       const LogRegOptions& options = {});

/// Per element, the class with the highest score.
std::vector<int> predict(const LogRegModel& model, const FeatureSet& features);

// ---- dataset bookkeeping --------------------------------------------------

/// Category -> group for the 44 categories named in the PartNetE grouping.
const std::map<std::string, std::string>& partnete_class_groups();
const std::vector<std::string>& partnete_group_names();

struct ShapeScore {
  std::string shape_id;
  std::string category;
  double miou = 0.0;
};

/// Evaluation summary: per-category means and grouped means (categories
/// outside the grouping land in "Other").
struct EvaluationSummary {
  double mean = 0.0;
  std::map<std::string, double> per_category;
  std::map<std::string, double> per_group;
};

EvaluationSummary summarize(std::span<const ShapeScore> scores);

}  // namespace partfield
