#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "partfield/geometry.hpp"
#include "partfield/proposals.hpp"
#include "partfield/random.hpp"

namespace partfield {

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SamplerConfig {
  std::uint32_t masks_per_batch = 8;               // K
  std::uint32_t positive_pairs = 64;               // N
  std::uint32_t uniform_negatives = 256;           // M1
  std::uint32_t hard3d_negatives = 256;            // M2
  std::uint32_t feature_hard_negatives = 256;      // M3
  double feature_temperature = 0.5;                // tau_m
  // Hard-negative weights are evaluated over a uniform candidate subset of
  // this size when the negative domain is larger.
  std::uint32_t candidate_pool = 512;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Row-major per-element feature table (count x dim).
struct FeatureTable {
  std::size_t dim = 0;
  std::vector<double> values;

  std::size_t count() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * dim, dim}; }
};

struct TripletPair {
  std::uint32_t anchor = 0;
  std::uint32_t positive = 0;
  std::uint32_t proposal = 0;
  // uniform negatives first, then 3D-hard, then feature-hard
  std::vector<std::uint32_t> negatives;
  std::uint32_t uniform_count = 0;
  std::uint32_t hard3d_count = 0;
  std::uint32_t feature_count = 0;
};

struct TripletBatch {
  std::vector<TripletPair> pairs;
  std::vector<std::string> warnings;

  std::size_t negative_count() const;
};

/// A proposal with its negative domain precomputed.
struct PreparedProposal {
  const PartProposal* proposal = nullptr;
  std::vector<std::uint32_t> negatives;
};

/// Drops degenerate proposals (fewer than two members or empty complement).
std::vector<PreparedProposal> prepare_proposals(std::span<const PartProposal> proposals);

std::vector<std::pair<std::uint32_t, std::uint32_t>> sample_positive_pairs(const PartProposal& proposal,
                                                                           std::size_t n, Rng& rng);
std::vector<std::pair<std::uint32_t, std::uint32_t>> sample_positive_pairs(const PartProposal& proposal,
                                                                           std::size_t n, std::uint64_t seed);

std::vector<std::uint32_t> sample_uniform_negatives(std::span<const std::uint32_t> domain, std::size_t m, Rng& rng);
std::vector<std::uint32_t> sample_uniform_negatives(const PartProposal& proposal, std::size_t m,
                                                    std::uint64_t seed);

/// Probability of each candidate in `candidates` under the 3D-hard rule,
/// prob ∝ exp(-dist / sigma). A nonpositive sigma selects the median
/// anchor-to-candidate distance.
std::vector<double> hard3d_probabilities(const Vec3& anchor, std::span<const std::uint32_t> candidates,
                                         std::span<const Vec3> positions, double sigma = 0.0);

/// prob ∝ exp(cos(f(c), f(anchor)) / tau_m).
std::vector<double> feature_hard_probabilities(std::span<const double> anchor_feature,
                                               std::span<const std::uint32_t> candidates,
                                               const FeatureTable& features, double tau_m);

std::vector<std::uint32_t> sample_3d_hard_negatives(std::uint32_t anchor, std::span<const std::uint32_t> domain,
                                                    std::span<const Vec3> positions, std::size_t m, Rng& rng,
                                                    double sigma = 0.0, std::size_t pool = 0);
std::vector<std::uint32_t> sample_3d_hard_negatives(std::uint32_t anchor, const PartProposal& proposal,
                                                    std::span<const Vec3> positions, std::size_t m,
                                                    double sigma, std::uint64_t seed);

std::vector<std::uint32_t> sample_feature_hard_negatives(std::uint32_t anchor, std::span<const std::uint32_t> domain,
                                                         const FeatureTable& features, std::size_t m, double tau_m,
                                                         Rng& rng, std::size_t pool = 0);
std::vector<std::uint32_t> sample_feature_hard_negatives(std::uint32_t anchor, const PartProposal& proposal,
                                                         const FeatureTable& features, std::size_t m, double tau_m,
                                                         std::uint64_t seed);

/// Draws K proposals uniformly (with replacement), N pairs each and
/// M1 + M2 + M3 negatives per pair anchor. Without features the feature-hard
/// count is forced to zero and a warning recorded.
TripletBatch build_triplet_batch(std::span<const PreparedProposal> proposals, std::span<const Vec3> positions,
                                 const SamplerConfig& config, const FeatureTable* features,
                                 std::uint64_t batch_index = 0);
TripletBatch build_triplet_batch(std::span<const PartProposal> proposals, std::span<const Vec3> positions,
                                 const SamplerConfig& config, const FeatureTable* features,
                                 std::uint64_t batch_index = 0);

}  // namespace partfield
