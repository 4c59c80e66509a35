#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "partfield/random.hpp"
#include "partfield/sampler.hpp"

using namespace partfield;

namespace {

PartProposal make_proposal(std::uint32_t n, std::uint32_t member_end) {
  PartProposal p;
  for (std::uint32_t i = 0; i < n; ++i) {
    p.visible.push_back(i);
    if (i < member_end) p.members.push_back(i);
  }
  return p;
}

std::vector<Vec3> line_positions(std::uint32_t n) {
  std::vector<Vec3> out;
  for (std::uint32_t i = 0; i < n; ++i) out.push_back({0.01 * i, 0.0, 0.0});
  return out;
}

FeatureTable random_features(std::size_t count, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  FeatureTable t{dim, std::vector<double>(count * dim)};
  for (auto& v : t.values) v = standard_normal(rng);
  return t;
}

double cos_rows(const FeatureTable& t, std::size_t a, std::size_t b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < t.dim; ++k) {
    ab += t.row(a)[k] * t.row(b)[k];
    aa += t.row(a)[k] * t.row(a)[k];
    bb += t.row(b)[k] * t.row(b)[k];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("positive pairs: distinct members of the proposal") {
  const auto p = make_proposal(100, 30);
  const auto pairs = sample_positive_pairs(p, 64, 9);
  CHECK(pairs.size() == 64);
  for (const auto& [a, b] : pairs) {
    CHECK(a != b);
    CHECK(a < 30);
    CHECK(b < 30);
  }
  CHECK(sample_positive_pairs(p, 64, 9) == pairs);
  CHECK_THROWS_AS(sample_positive_pairs(make_proposal(10, 1), 4, 1), SamplerError);
}

TEST_CASE("uniform negatives: counts, exclusion, single domain, chi-square") {
  const auto p = make_proposal(300, 100);
  const auto neg = sample_uniform_negatives(p, 256, 3);
  CHECK(neg.size() == 256);
  for (auto c : neg) CHECK(c >= 100);

  const std::vector<std::uint32_t> single{7};
  Rng rng(1);
  const auto same = sample_uniform_negatives(single, 5, rng);
  CHECK(same == std::vector<std::uint32_t>(5, 7));

  CHECK_THROWS_AS(sample_uniform_negatives(make_proposal(5, 5), 3, 1), SamplerError);

  const std::vector<std::uint32_t> domain{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  Rng big(11);
  const auto draws = sample_uniform_negatives(domain, 100000, big);
  std::vector<double> counts(10, 0.0);
  for (auto c : draws) counts[c] += 1.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
  // 9 degrees of freedom; upper 0.001 quantile is 27.877.
  CHECK(chi2 < 27.877);
}

TEST_CASE("3D-hard: equidistant candidates are uniform") {
  std::vector<Vec3> pos{{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, 0, -1}};
  const std::vector<std::uint32_t> cand{1, 2, 3, 4};
  for (double p : hard3d_probabilities(pos[0], cand, pos)) CHECK(p == doctest::Approx(0.25));
}

TEST_CASE("3D-hard: distances d and 2d with sigma d give ratio e") {
  std::vector<Vec3> pos{{0, 0, 0}, {0.3, 0, 0}, {0, 0.6, 0}};
  const std::vector<std::uint32_t> cand{1, 2};
  const auto probs = hard3d_probabilities(pos[0], cand, pos, 0.3);
  CHECK(probs[0] / probs[1] == doctest::Approx(std::exp(1.0)));

  Rng rng(5);
  const auto draws = sample_3d_hard_negatives(0, cand, pos, 100000, rng, 0.3);
  const double near = static_cast<double>(std::count(draws.begin(), draws.end(), 1u));
  const double p_near = std::exp(1.0) / (std::exp(1.0) + 1.0);
  const double sigma = std::sqrt(100000 * p_near * (1 - p_near));
  CHECK(std::abs(near - 100000 * p_near) < 4 * sigma);
}

TEST_CASE("3D-hard draws are closer than uniform draws (paired over 100 anchors)") {
  const auto pos = line_positions(1000);
  const auto p = make_proposal(1000, 200);
  const auto domain = p.negative_domain();
  Rng rng(8);
  int closer = 0;
  for (std::uint32_t anchor = 0; anchor < 200; anchor += 2) {
    const auto hard = sample_3d_hard_negatives(anchor, domain, pos, 256, rng);
    const auto uni = sample_uniform_negatives(domain, 256, rng);
    double dh = 0, du = 0;
    for (auto c : hard) dh += distance(pos[c], pos[anchor]);
    for (auto c : uni) du += distance(pos[c], pos[anchor]);
    closer += dh < du;
  }
  CHECK(closer == 100);
}

TEST_CASE("feature-hard: identical features are uniform, one aligned candidate has e^2 weight") {
  FeatureTable same{2, std::vector<double>(10 * 2, 1.0)};
  const std::vector<std::uint32_t> cand{1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (double pr : feature_hard_probabilities(same.row(0), cand, same, 0.5)) CHECK(pr == doctest::Approx(1.0 / 9));

  FeatureTable t{2, std::vector<double>(10 * 2, 0.0)};
  t.row(0)[0] = 1.0;
  t.row(1)[0] = 2.0;
  for (std::size_t i = 2; i < 10; ++i) t.row(i)[1] = 1.0;
  const double expected = std::exp(2.0) / (std::exp(2.0) + 8.0);
  const auto probs = feature_hard_probabilities(t.row(0), cand, t, 0.5);
  CHECK(probs[0] == doctest::Approx(expected));

  Rng rng(3);
  const auto draws = sample_feature_hard_negatives(0, cand, t, 100000, 0.5, rng);
  const double hits = static_cast<double>(std::count(draws.begin(), draws.end(), 1u));
  const double sigma = std::sqrt(100000 * expected * (1 - expected));
  CHECK(std::abs(hits - 100000 * expected) < 4 * sigma);
}

TEST_CASE("feature-hard draws have higher cosine than uniform draws (paired over 100 anchors)") {
  const auto features = random_features(2000, 8, 4);
  const auto p = make_proposal(2000, 100);
  const auto domain = p.negative_domain();
  Rng rng(10);
  int harder = 0;
  for (std::uint32_t anchor = 0; anchor < 100; ++anchor) {
    const auto hard = sample_feature_hard_negatives(anchor, domain, features, 256, 0.5, rng);
    const auto uni = sample_uniform_negatives(domain, 256, rng);
    double ch = 0, cu = 0;
    for (auto c : hard) ch += cos_rows(features, anchor, c);
    for (auto c : uni) cu += cos_rows(features, anchor, c);
    harder += ch > cu;
  }
  CHECK(harder >= 99);
}

TEST_CASE("build_triplet_batch: counts, exclusion, determinism") {
  const auto pos = line_positions(1000);
  std::vector<PartProposal> props{make_proposal(1000, 300)};
  SamplerConfig cfg;
  cfg.masks_per_batch = 1;
  cfg.feature_hard_negatives = 0;
  const auto batch = build_triplet_batch(props, pos, cfg, nullptr, 0);
  CHECK(batch.pairs.size() == 64);
  for (const auto& pair : batch.pairs) {
    CHECK(pair.negatives.size() == 512);
    CHECK(pair.uniform_count == 256);
    CHECK(pair.hard3d_count == 256);
    CHECK(pair.anchor != pair.positive);
    for (auto c : pair.negatives) CHECK(c >= 300);
  }
  CHECK(batch.warnings.empty());

  const auto again = build_triplet_batch(props, pos, cfg, nullptr, 0);
  REQUIRE(again.pairs.size() == batch.pairs.size());
  for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
    CHECK(again.pairs[i].anchor == batch.pairs[i].anchor);
    CHECK(again.pairs[i].negatives == batch.pairs[i].negatives);
  }
  const auto other = build_triplet_batch(props, pos, cfg, nullptr, 1);
  CHECK(other.pairs[0].negatives != batch.pairs[0].negatives);
}

TEST_CASE("build_triplet_batch: feature-hard fallback and use") {
  const auto pos = line_positions(500);
  std::vector<PartProposal> props{make_proposal(500, 100), make_proposal(500, 250)};
  SamplerConfig cfg;
  cfg.masks_per_batch = 2;
  cfg.positive_pairs = 4;
  const auto without = build_triplet_batch(props, pos, cfg, nullptr);
  CHECK(without.warnings.size() == 1);
  for (const auto& pair : without.pairs) CHECK(pair.feature_count == 0);

  const auto features = random_features(500, 4, 2);
  const auto with = build_triplet_batch(props, pos, cfg, &features);
  CHECK(with.warnings.empty());
  for (const auto& pair : with.pairs) {
    CHECK(pair.feature_count == 256);
    CHECK(pair.negatives.size() == 768);
    const auto& members = props[pair.proposal].members;
    for (auto c : pair.negatives) CHECK_FALSE(std::binary_search(members.begin(), members.end(), c));
  }
}

TEST_CASE("build_triplet_batch: proposals of sizes 100 and 200 are picked equally often") {
  const auto pos = line_positions(400);
  std::vector<PartProposal> props{make_proposal(400, 100), make_proposal(400, 200)};
  SamplerConfig cfg;
  cfg.masks_per_batch = 1;
  cfg.positive_pairs = 1;
  cfg.uniform_negatives = 1;
  cfg.hard3d_negatives = 0;
  cfg.feature_hard_negatives = 0;
  int first = 0;
  const int trials = 4000;
  for (int b = 0; b < trials; ++b) first += build_triplet_batch(props, pos, cfg, nullptr, b).pairs[0].proposal == 0;
  CHECK(std::abs(first - trials / 2) < 4 * std::sqrt(trials * 0.25));
}

TEST_CASE("build_triplet_batch: errors") {
  const auto pos = line_positions(10);
  std::vector<PartProposal> degenerate{make_proposal(10, 10)};
  CHECK_THROWS_AS(build_triplet_batch(degenerate, pos, SamplerConfig{}, nullptr), SamplerError);
  SamplerConfig bad;
  bad.uniform_negatives = bad.hard3d_negatives = bad.feature_hard_negatives = 0;
  std::vector<PartProposal> ok{make_proposal(10, 5)};
  CHECK_THROWS_AS(build_triplet_batch(ok, pos, bad, nullptr), SamplerError);
}
