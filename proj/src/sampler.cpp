#include "partfield/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace partfield {

void SamplerConfig::validate() const {
  if (positive_pairs < 1) throw SamplerError("positive_pairs must be at least 1");
  if (masks_per_batch < 1) throw SamplerError("masks_per_batch must be at least 1");
  if (uniform_negatives + hard3d_negatives + feature_hard_negatives == 0) {
    throw SamplerError("at least one negative strategy needs a nonzero count");
  }
  if (!(feature_temperature > 0.0)) throw SamplerError("feature_temperature must be positive");
}

std::size_t TripletBatch::negative_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.negatives.size();
  return n;
}

std::vector<PreparedProposal> prepare_proposals(std::span<const PartProposal> proposals) {
  std::vector<PreparedProposal> out;
  for (const auto& p : proposals) {
    if (p.degenerate || p.members.size() < 2) continue;
    auto negatives = p.negative_domain();
    if (negatives.empty()) continue;
    out.push_back({&p, std::move(negatives)});
  }
  return out;
}

namespace {

// Draws m indices into `probs` (which sum to 1) from a Walker alias table.
// One uniform per draw: its integer part picks a column, the fraction is the coin.
std::vector<std::size_t> draw_categorical(std::span<const double> probs, std::size_t m, Rng& rng) {
  const std::size_t n = probs.size();
  double total = 0.0;
  for (double p : probs) total += p;
  std::vector<double> accept(n);
  std::vector<std::uint32_t> alias(n);
  std::vector<std::uint32_t> small, large;
  small.reserve(n);
  large.reserve(n);
  const double scale = static_cast<double>(n) / total;
  for (std::size_t i = 0; i < n; ++i) {
    accept[i] = probs[i] * scale;
    alias[i] = static_cast<std::uint32_t>(i);
    (accept[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
  }
  while (!small.empty() && !large.empty()) {
    const auto s = small.back();
    const auto l = large.back();
    small.pop_back();
    alias[s] = l;
    accept[l] -= 1.0 - accept[s];
    if (accept[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (auto i : small) accept[i] = 1.0;
  for (auto i : large) accept[i] = 1.0;

  std::vector<std::size_t> out(m);
  const double dn = static_cast<double>(n);
  for (auto& o : out) {
    const double u = uniform01(rng) * dn;
    const std::size_t col = std::min(static_cast<std::size_t>(u), n - 1);
    o = (u - static_cast<double>(col)) < accept[col] ? col : alias[col];
  }
  return out;
}

std::vector<double> softmax(std::vector<double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - top);
    sum += l;
  }
  for (auto& l : logits) l /= sum;
  return logits;
}

std::vector<std::uint32_t> candidate_subset(std::span<const std::uint32_t> domain, std::size_t pool, Rng& rng) {
  if (pool == 0 || domain.size() <= pool) return {domain.begin(), domain.end()};
  std::vector<std::uint32_t> out(pool);
  for (auto& c : out) c = domain[uniform_index(rng, domain.size())];
  return out;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu <= 1e-12 || nv <= 1e-12) return 0.0;
  return uv / (nu * nv);
}

// Rows scaled to unit length (zero rows stay zero), so cosines become dots.
struct UnitRows {
  std::size_t dim = 0;
  std::vector<float> values;

  explicit UnitRows(const FeatureTable& features) : dim(features.dim), values(features.values.size()) {
    for (std::size_t r = 0; r < features.count(); ++r) {
      const auto row = features.row(r);
      double n2 = 0.0;
      for (double v : row) n2 += v * v;
      const double n = std::sqrt(n2);
      const double inv = n > 1e-12 ? 1.0 / n : 0.0;
      for (std::size_t c = 0; c < dim; ++c) values[r * dim + c] = static_cast<float>(row[c] * inv);
    }
  }
  const float* row(std::size_t r) const { return values.data() + r * dim; }
};

std::vector<std::uint32_t> feature_hard_from_unit(std::uint32_t anchor, std::span<const std::uint32_t> domain,
                                                  const UnitRows& unit, std::size_t m, double tau_m, Rng& rng,
                                                  std::size_t pool) {
  const auto candidates = candidate_subset(domain, pool, rng);
  const float* a = unit.row(anchor);
  std::vector<double> logits(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const float* c = unit.row(candidates[i]);
    float d = 0.0f;
    for (std::size_t k = 0; k < unit.dim; ++k) d += a[k] * c[k];
    logits[i] = static_cast<double>(d) / tau_m;
  }
  const auto probs = softmax(std::move(logits));
  std::vector<std::uint32_t> out;
  out.reserve(m);
  for (auto i : draw_categorical(probs, m, rng)) out.push_back(candidates[i]);
  return out;
}

void require_domain(std::size_t size) {
  if (size == 0) throw SamplerError("empty complement: proposal covers its whole negative domain");
}

}  // namespace

std::vector<std::pair<std::uint32_t, std::uint32_t>> sample_positive_pairs(const PartProposal& proposal,
                                                                           std::size_t n, Rng& rng) {
  const auto& m = proposal.members;
  if (m.size() < 2) throw SamplerError("positive pairs need a proposal with at least two members");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out(n);
  for (auto& pair : out) {
    const auto a = uniform_index(rng, m.size());
    auto b = uniform_index(rng, m.size() - 1);
    if (b >= a) ++b;
    pair = {m[a], m[b]};
  }
  return out;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> sample_positive_pairs(const PartProposal& proposal,
                                                                           std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_positive_pairs(proposal, n, rng);
}

std::vector<std::uint32_t> sample_uniform_negatives(std::span<const std::uint32_t> domain, std::size_t m, Rng& rng) {
  require_domain(domain.size());
  std::vector<std::uint32_t> out(m);
  for (auto& c : out) c = domain[uniform_index(rng, domain.size())];
  return out;
}

std::vector<std::uint32_t> sample_uniform_negatives(const PartProposal& proposal, std::size_t m,
                                                    std::uint64_t seed) {
  Rng rng(seed);
  return sample_uniform_negatives(proposal.negative_domain(), m, rng);
}

std::vector<double> hard3d_probabilities(const Vec3& anchor, std::span<const std::uint32_t> candidates,
                                         std::span<const Vec3> positions, double sigma) {
  require_domain(candidates.size());
  std::vector<double> d(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) d[i] = distance(positions[candidates[i]], anchor);
  if (!(sigma > 0.0)) {
    std::vector<double> sorted = d;
    const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    sigma = *mid;
    if (!(sigma > 0.0)) sigma = 1.0;
  }
  for (auto& x : d) x = -x / sigma;
  return softmax(std::move(d));
}

std::vector<double> feature_hard_probabilities(std::span<const double> anchor_feature,
                                               std::span<const std::uint32_t> candidates,
                                               const FeatureTable& features, double tau_m) {
  require_domain(candidates.size());
  std::vector<double> logits(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    logits[i] = cosine(features.row(candidates[i]), anchor_feature) / tau_m;
  }
  return softmax(std::move(logits));
}

std::vector<std::uint32_t> sample_3d_hard_negatives(std::uint32_t anchor, std::span<const std::uint32_t> domain,
                                                    std::span<const Vec3> positions, std::size_t m, Rng& rng,
                                                    double sigma, std::size_t pool) {
  require_domain(domain.size());
  const auto candidates = candidate_subset(domain, pool, rng);
  const auto probs = hard3d_probabilities(positions[anchor], candidates, positions, sigma);
  std::vector<std::uint32_t> out;
  out.reserve(m);
  for (auto i : draw_categorical(probs, m, rng)) out.push_back(candidates[i]);
  return out;
}

std::vector<std::uint32_t> sample_3d_hard_negatives(std::uint32_t anchor, const PartProposal& proposal,
                                                    std::span<const Vec3> positions, std::size_t m,
                                                    double sigma, std::uint64_t seed) {
  Rng rng(seed);
  return sample_3d_hard_negatives(anchor, proposal.negative_domain(), positions, m, rng, sigma);
}

std::vector<std::uint32_t> sample_feature_hard_negatives(std::uint32_t anchor, std::span<const std::uint32_t> domain,
                                                         const FeatureTable& features, std::size_t m, double tau_m,
                                                         Rng& rng, std::size_t pool) {
  require_domain(domain.size());
  const auto candidates = candidate_subset(domain, pool, rng);
  const auto probs = feature_hard_probabilities(features.row(anchor), candidates, features, tau_m);
  std::vector<std::uint32_t> out;
  out.reserve(m);
  for (auto i : draw_categorical(probs, m, rng)) out.push_back(candidates[i]);
  return out;
}

std::vector<std::uint32_t> sample_feature_hard_negatives(std::uint32_t anchor, const PartProposal& proposal,
                                                         const FeatureTable& features, std::size_t m, double tau_m,
                                                         std::uint64_t seed) {
  Rng rng(seed);
  return sample_feature_hard_negatives(anchor, proposal.negative_domain(), features, m, tau_m, rng);
}

TripletBatch build_triplet_batch(std::span<const PreparedProposal> proposals, std::span<const Vec3> positions,
                                 const SamplerConfig& config, const FeatureTable* features,
                                 std::uint64_t batch_index) {
  config.validate();
  if (proposals.empty()) throw SamplerError("no valid proposal to sample triplets from");
  TripletBatch batch;
  std::uint32_t feature_count = config.feature_hard_negatives;
  if (feature_count > 0 && (features == nullptr || features->count() < positions.size())) {
    feature_count = 0;
    batch.warnings.push_back("feature-hard negatives requested without features; using 0");
  }
  const UnitRows unit(feature_count > 0 ? *features : FeatureTable{});
  const std::uint64_t batch_seed = derive_seed(config.seed, batch_index);
  Rng pick(batch_seed);
  batch.pairs.reserve(static_cast<std::size_t>(config.masks_per_batch) * config.positive_pairs);
  for (std::uint32_t k = 0; k < config.masks_per_batch; ++k) {
    const auto which = static_cast<std::uint32_t>(uniform_index(pick, proposals.size()));
    const auto& prepared = proposals[which];
    // each slot gets its own stream so slots are independent of one another
    Rng rng(derive_seed(batch_seed, k + 1));
    for (const auto& [a, b] : sample_positive_pairs(*prepared.proposal, config.positive_pairs, rng)) {
      TripletPair pair;
      pair.anchor = a;
      pair.positive = b;
      pair.proposal = which;
      pair.negatives = sample_uniform_negatives(prepared.negatives, config.uniform_negatives, rng);
      pair.uniform_count = config.uniform_negatives;
      if (config.hard3d_negatives > 0) {
        auto hard = sample_3d_hard_negatives(a, prepared.negatives, positions, config.hard3d_negatives, rng, 0.0,
                                             config.candidate_pool);
        pair.negatives.insert(pair.negatives.end(), hard.begin(), hard.end());
        pair.hard3d_count = config.hard3d_negatives;
      }
      if (feature_count > 0) {
        auto hard = feature_hard_from_unit(a, prepared.negatives, unit, feature_count, config.feature_temperature,
                                           rng, config.candidate_pool);
        pair.negatives.insert(pair.negatives.end(), hard.begin(), hard.end());
        pair.feature_count = feature_count;
      }
      batch.pairs.push_back(std::move(pair));
    }
  }
  return batch;
}

TripletBatch build_triplet_batch(std::span<const PartProposal> proposals, std::span<const Vec3> positions,
                                 const SamplerConfig& config, const FeatureTable* features,
                                 std::uint64_t batch_index) {
  const auto prepared = prepare_proposals(proposals);
  return build_triplet_batch(prepared, positions, config, features, batch_index);
}

}  // namespace partfield
