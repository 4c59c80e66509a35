#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "partfield/field.hpp"

namespace partfield {

class ClusteringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat labelling of elements; labels dense in [0, k).
struct Segmentation {
  std::uint32_t k = 0;
  std::vector<int> labels;

  /// Relabels by first occurrence so equal partitions compare equal.
  Segmentation canonical() const;
  friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

Segmentation make_segmentation(std::vector<int> labels);

/// Binary merge hierarchy. Leaves are 0..n-1; merge i creates node n+i.
struct MergeTree {
  struct Node {
    std::int64_t left = -1;  // -1 for leaves
    std::int64_t right = -1;
    double cost = 0.0;
    std::uint32_t count = 1;
    bool constrained = true;  // false when joining disconnected components
  };

  std::uint32_t leaf_count = 0;
  std::uint32_t dim = 0;
  std::vector<Node> nodes;            // leaf_count + merges
  std::vector<float> mean_features;   // per node, dim floats

  std::size_t merge_count() const { return nodes.size() - leaf_count; }
  std::span<const float> mean(std::size_t node) const { return {mean_features.data() + node * dim, dim}; }
};

struct AgglomerateOptions {
  bool normalize_features = true;
};

/// Greedy centroid-linkage agglomeration over adjacent clusters with cost
/// 1 - cos(mean_a, mean_b). Ties break on (smaller id, larger id).
/// Components left over are joined by the cheapest unconstrained pairs.
MergeTree agglomerate(const FeatureSet& features, const std::vector<std::vector<std::uint32_t>>& adjacency,
                      const AgglomerateOptions& options = {});

/// Undo the last k-1 merges; k in [1, leaf_count].
Segmentation cut_tree(const MergeTree& tree, std::uint32_t k);

/// One cut per k. Empty `ks` means 2..21.
std::vector<Segmentation> multi_scale(const MergeTree& tree, std::span<const std::uint32_t> ks = {});

enum class KMeansInit { random, seeded };

struct KMeansResult {
  Segmentation segmentation;
  std::vector<float> centroids;  // k x dim, unit length
  std::uint32_t iterations = 0;
  std::vector<double> objective;  // within-cluster sum of squares after each iteration
};

/// Spherical Lloyd iterations on unit-normalized features. For seeded init,
/// `seeds` holds k x dim initial means; labels follow seed order.
KMeansResult kmeans(const FeatureSet& features, std::uint32_t k, KMeansInit init, std::uint64_t seed = 0,
                    std::span<const float> seeds = {}, std::uint32_t max_iters = 100);

}  // namespace partfield
