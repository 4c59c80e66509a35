#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "partfield/field.hpp"
#include "partfield/sampler.hpp"

namespace partfield {

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  // a vector had norm <= 1e-12; value is 0
};

CosineResult cosine_sim(std::span<const double> u, std::span<const double> v);

struct LossConfig {
  bool learn_temperature = true;
  double log_floor = 1e-12;  // log arguments are floored here
};

/// Contrastive loss of one pair given its cosine similarities:
///   -1/2 [ log(s_ab / (s_ab + Σ s_ac)) + log(s_ab / (s_ab + Σ s_bc)) ],
///   s_uv = exp(cos_uv / tau).
double pair_loss(double cos_ab, std::span<const double> cos_ac, std::span<const double> cos_bc, double tau,
                 const LossConfig& config = {});

/// Mean pair loss with features looked up by element id.
double contrastive_loss(const TripletBatch& batch, const FeatureTable& features, double tau,
                        const LossConfig& config = {});

/// Mean pair loss with features queried from the field at `positions`.
double contrastive_loss(const TripletBatch& batch, const TriplaneField& field, std::span<const Vec3> positions,
                        const LossConfig& config = {});

struct LossGradient {
  double loss = 0.0;
  FieldGradient grad;
};

/// Exact gradient of the mean pair loss w.r.t. every triplane parameter and θ.
LossGradient loss_grad(const TripletBatch& batch, const TriplaneField& field, std::span<const Vec3> positions,
                       const LossConfig& config = {});

// ---- optimizer ----------------------------------------------------------

struct AdamConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moments mirroring the optimized parameters.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit OptimizerState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update. Returns false and leaves everything unchanged
/// when any gradient is non-finite.
bool adam_step(OptimizerState& state, std::span<double> params, std::span<const double> grads,
               const AdamConfig& config);

/// Field variant; `state` covers all triplane parameters followed by θ.
/// θ is clamped to the temperature range after the step.
bool adam_step(OptimizerState& state, TriplaneField& field, const FieldGradient& grads, const AdamConfig& config);

// ---- per-shape fitting --------------------------------------------------

struct FitConfig {
  std::uint32_t iterations = 2000;
  AdamConfig adam;
  SamplerConfig sampler;
  std::uint32_t feature_hard_start = 500;
  std::uint64_t seed = 0;
  std::uint32_t snapshot_period = 100;
  std::uint32_t resolution = 128;
  std::uint32_t channels = 64;
  double init_scale = 0.1;
  LossConfig loss;

  void validate() const;
};

struct LossSnapshot {
  std::uint32_t iteration = 0;
  double loss = 0.0;
};

struct FitReport {
  std::vector<LossSnapshot> snapshots;
  std::uint32_t iterations = 0;
  double wall_clock_seconds = 0.0;
  double final_temperature = 0.0;
  std::uint32_t rejected_steps = 0;
  std::vector<std::string> warnings;
};

struct FitResult {
  TriplaneField field;
  FitReport report;
};

/// Called after every `snapshot_period` completed iterations (and after the
/// last) with the number of completed iterations.
using SnapshotCallback = std::function<void(std::uint32_t iteration, const TriplaneField& field, double loss)>;

/// Optimizes a fresh triplane on `elements` (normalized) under triplets drawn
/// from `proposals`, whose member ids index into `elements`.
FitResult fit_field(const PointSet& elements, std::span<const PartProposal> proposals, const FitConfig& config,
                    const SnapshotCallback& on_snapshot = {});

/// Double-precision features of every element.
FeatureTable element_features(const TriplaneField& field, std::span<const Vec3> positions);

}  // namespace partfield
