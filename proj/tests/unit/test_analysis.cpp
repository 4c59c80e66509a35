#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "partfield/analysis.hpp"
#include "partfield/fixtures.hpp"
#include "partfield/random.hpp"
#include "../common/miou_oracle.hpp"

using namespace partfield;

namespace {

FeatureSet random_features(std::uint32_t count, std::uint32_t dim, std::uint64_t seed) {
  Rng rng(seed);
  FeatureSet f;
  f.count = count;
  f.dim = dim;
  for (std::size_t i = 0; i < static_cast<std::size_t>(count) * dim; ++i) {
    f.data.push_back(static_cast<float>(standard_normal(rng)));
  }
  return f;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("miou examples") {
  const std::vector<int> gt{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const std::vector<int> pred{0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  const auto r = miou(gt, pred);
  CHECK(r.miou == doctest::Approx((0.8 + 5.0 / 6.0) / 2));
  CHECK(r.miou == doctest::Approx(0.81667).epsilon(1e-5));
  REQUIRE(r.parts.size() == 2);
  CHECK(r.parts[0].iou == doctest::Approx(0.8));
  CHECK(r.parts[0].best_pred_part == 0);
  CHECK(r.parts[1].gt_size == 5);

  const std::vector<int> relabeled{7, 7, 7, 7, 7, 3, 3, 3, 3, 3};
  CHECK(miou(gt, relabeled).miou == 1.0);
  CHECK(miou(gt, std::vector<int>(10, 4)).miou == doctest::Approx(0.5));
  CHECK(miou(std::vector<int>{0, 0, 0, 1}, std::vector<int>(4, 0)).miou == doctest::Approx(0.5));

  CHECK_THROWS_AS(miou(gt, std::vector<int>{0}), AnalysisError);
  CHECK_THROWS_AS(miou(std::vector<int>{}, std::vector<int>{}), AnalysisError);
}

TEST_CASE("miou agrees with the exhaustive oracle on random partitions") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 100);
    const int kg = 1 + static_cast<int>(uniform_index(rng, 6));
    const int kp = 1 + static_cast<int>(uniform_index(rng, 6));
    std::vector<int> gt(n), pred(n);
    for (auto& v : gt) v = static_cast<int>(uniform_index(rng, kg));
    for (auto& v : pred) v = static_cast<int>(uniform_index(rng, kp)) * 3 - 2;
    const double m = miou(gt, pred).miou;
    CHECK(m == oracle::miou(gt, pred));
    CHECK(m >= 0.0);
    CHECK(m <= 1.0);

    std::vector<int> permuted = pred;
    for (auto& v : permuted) v = 100 - v;
    CHECK(miou(gt, permuted).miou == m);
  }
}

TEST_CASE("best_of_scales") {
  const std::vector<int> gt{0, 0, 1, 1, 2, 2};
  const std::vector<Segmentation> segs{make_segmentation({0, 0, 0, 0, 1, 1}), make_segmentation({0, 0, 1, 1, 2, 2}),
                                       make_segmentation({0, 1, 2, 3, 4, 5})};
  const auto [index, score] = best_of_scales(gt, segs);
  CHECK(index == 1);
  CHECK(score == 1.0);
  const std::vector<Segmentation> one{segs[2]};
  CHECK(best_of_scales(gt, one).first == 0);
  const std::vector<Segmentation> tied{segs[0], segs[0]};
  CHECK(best_of_scales(gt, tied).first == 0);
  CHECK_THROWS_AS(best_of_scales(gt, std::vector<Segmentation>{}), AnalysisError);
}

TEST_CASE("similarity maps") {
  const auto f = random_features(50, 5, 3);
  const auto map = similarity_map(f, 7u);
  CHECK(map[7] == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 50; ++i) CHECK(map[i] == doctest::Approx(cosine(f.row(i), f.row(7))).epsilon(1e-6));

  const auto g = random_features(30, 5, 4);
  const auto cross = similarity_map(f, 2u, g);
  REQUIRE(cross.size() == 30);
  for (std::size_t i = 0; i < 30; ++i) CHECK(cross[i] == doctest::Approx(cosine(g.row(i), f.row(2))).epsilon(1e-6));

  FeatureSet constant{ElementKind::point, 4, 2, {1, 2, 1, 2, 1, 2, 1, 2}};
  for (float v : similarity_map(constant, 0u)) CHECK(v == doctest::Approx(1.0));

  FeatureSet zero{ElementKind::point, 2, 2, {0, 0, 1, 0}};
  CHECK_THROWS_AS(similarity_map(zero, 0u), AnalysisError);
  CHECK_THROWS_AS(similarity_map(f, 50u), AnalysisError);
  CHECK_THROWS_AS(similarity_map(f, 0u, random_features(3, 4, 1)), AnalysisError);
}

TEST_CASE("cosegment: identity, translated copy through the same field, round trip") {
  const auto field = new_triplane(8, 6, 1.0, 5);
  const auto box = fixtures::make_box({-1, -1, -1}, {1, 1, 1}, 6);
  const auto source_mesh = normalize_unit_cube(box).first;
  const auto source = face_features(field, source_mesh, 4, 1);

  const auto seg = kmeans(source, 4, KMeansInit::random, 2).segmentation;
  CHECK(cosegment(seg, source, source) == seg);

  std::vector<Vec3> moved;
  for (const auto& v : box.vertices) moved.push_back(v * 3.5 + Vec3{10, -4, 2});
  const auto copy = make_mesh(moved, box.faces);
  const auto target_mesh = normalize_unit_cube(copy).first;
  const auto target = face_features(field, target_mesh, 4, 1);
  const auto transferred = cosegment(seg, source, target);
  CHECK(transferred == seg);
  CHECK(cosegment(transferred, target, source).canonical() == seg.canonical());

  CHECK_THROWS_AS(cosegment(seg, source, random_features(5, 3, 1)), AnalysisError);
}

TEST_CASE("nn_correspondence: identity, permutation, brute force") {
  const auto f = random_features(300, 6, 9);
  const auto id = nn_correspondence(f, f);
  for (std::uint32_t i = 0; i < 300; ++i) CHECK(id[i] == i);

  std::vector<std::uint32_t> perm(300);
  std::iota(perm.begin(), perm.end(), 0u);
  Rng rng(1);
  for (std::size_t i = 299; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
  FeatureSet permuted = f;
  for (std::uint32_t i = 0; i < 300; ++i) {
    std::copy(f.row(perm[i]).begin(), f.row(perm[i]).end(), permuted.row(i).begin());
  }
  const auto map = nn_correspondence(f, permuted);
  for (std::uint32_t i = 0; i < 300; ++i) CHECK(perm[map[i]] == i);

  const auto g = random_features(700, 6, 10);
  const auto nn = nn_correspondence(f, g);
  for (std::uint32_t i = 0; i < 300; ++i) {
    double best = -2.0;
    std::uint32_t arg = 0;
    for (std::uint32_t j = 0; j < 700; ++j) {
      const double c = cosine(f.row(i), g.row(j));
      if (c > best) {
        best = c;
        arg = j;
      }
    }
    CHECK(nn[i] == arg);
  }

  CHECK_THROWS_AS(nn_correspondence(f, FeatureSet{ElementKind::point, 0, 6, {}}), AnalysisError);
  CHECK_THROWS_AS(nn_correspondence(f, random_features(3, 2, 1)), AnalysisError);
}

TEST_CASE("transfer_point_labels_to_faces uses the point nearest each centroid") {
  const auto quad = fixtures::make_quad(1.0, 0.0, 1);
  PointSet points;
  points.points = {quad.centroid(0) + Vec3{0.01, 0, 0}, quad.centroid(1) + Vec3{0, 0.01, 0}};
  points.source_face = {0, 1};
  const std::vector<int> labels{4, 9};
  CHECK(transfer_point_labels_to_faces(quad, points, labels) == std::vector<int>{4, 9});
}

namespace {

// Plain fixed-step gradient descent on one binary problem.
struct SlowLogReg {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  double lambda;

  void gradient(const std::vector<double>& w, double b, std::vector<double>& gw, double& gb) const {
    gw.assign(w.size(), 0.0);
    gb = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double z = b;
      for (std::size_t c = 0; c < w.size(); ++c) z += w[c] * x[i][c];
      const double s = 1.0 / (1.0 + std::exp(y[i] * z));
      for (std::size_t c = 0; c < w.size(); ++c) gw[c] -= y[i] * s * x[i][c] / x.size();
      gb -= y[i] * s / x.size();
    }
    for (std::size_t c = 0; c < w.size(); ++c) gw[c] += lambda * w[c];
  }

  double objective(const std::vector<double>& w, double b) const {
    double f = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double z = b;
      for (std::size_t c = 0; c < w.size(); ++c) z += w[c] * x[i][c];
      f += std::log(1.0 + std::exp(-y[i] * z));
    }
    double w2 = 0.0;
    for (double v : w) w2 += v * v;
    return f / x.size() + 0.5 * lambda * w2;
  }

  double solve() const {
    double r2 = 1.0;
    for (const auto& row : x) {
      double s = 1.0;
      for (double v : row) s += v * v;
      r2 = std::max(r2, s);
    }
    const double step = 1.0 / (0.25 * r2 + lambda);
    std::vector<double> w(x[0].size(), 0.0), gw;
    double b = 0.0, gb = 0.0;
    for (int it = 0; it < 2000000; ++it) {
      gradient(w, b, gw, gb);
      double n2 = gb * gb;
      for (double v : gw) n2 += v * v;
      if (n2 < 1e-22) break;
      for (std::size_t c = 0; c < w.size(); ++c) w[c] -= step * gw[c];
      b -= step * gb;
    }
    return objective(w, b);
  }
};

}  // namespace

TEST_CASE("fit_logreg: separable annotations are reproduced") {
  FeatureSet f{ElementKind::face, 6, 2, {-2, 0.1f, -1.5f, -0.3f, -1, 0.2f, 1, 0, 1.2f, -0.4f, 2, 0.3f}};
  const std::vector<Annotation> ann{{0, 0}, {1, 0}, {2, 0}, {3, 5}, {4, 5}, {5, 5}};
  const auto model = fit_logreg(f, ann);
  CHECK(model.classes == std::vector<int>{0, 5});
  CHECK(model.max_gradient_norm < 1e-6);
  CHECK(predict(model, f) == std::vector<int>{0, 0, 0, 5, 5, 5});
}

TEST_CASE("fit_logreg: optimality against an independent slow optimizer") {
  const auto f = random_features(40, 3, 21);
  Rng rng(6);
  std::vector<Annotation> ann;
  for (std::uint32_t e = 0; e < 40; e += 3) ann.push_back({e, static_cast<int>(uniform_index(rng, 3))});
  ann.push_back({1, 0});
  ann.push_back({2, 1});
  ann.push_back({4, 2});
  LogRegOptions opts;
  opts.lambda = 0.1;
  const auto model = fit_logreg(f, ann, opts);
  REQUIRE(model.classes.size() == 3);
  CHECK(model.max_gradient_norm < 1e-6);

  for (std::size_t ci = 0; ci < 3; ++ci) {
    SlowLogReg slow{{}, {}, opts.lambda};
    for (const auto& a : ann) {
      slow.x.emplace_back(f.row(a.element).begin(), f.row(a.element).end());
      slow.y.push_back(a.label == model.classes[ci] ? 1.0 : -1.0);
    }
    const std::vector<double> w(model.weights.begin() + ci * 3, model.weights.begin() + ci * 3 + 3);
    std::vector<double> gw;
    double gb = 0.0;
    slow.gradient(w, model.bias[ci], gw, gb);
    CHECK(std::sqrt(gw[0] * gw[0] + gw[1] * gw[1] + gw[2] * gw[2] + gb * gb) < 1e-6);
    const double mine = logreg_objective(f, ann, model.classes[ci], w, model.bias[ci], opts.lambda);
    CHECK(std::abs(mine - slow.objective(w, model.bias[ci])) < 1e-12);
    CHECK(std::abs(mine - slow.solve()) < 1e-6);
  }
}

TEST_CASE("fit_logreg: heavy regularization predicts the majority class") {
  const auto f = random_features(30, 4, 2);
  std::vector<Annotation> ann;
  for (std::uint32_t e = 0; e < 10; ++e) ann.push_back({e, e < 7 ? 3 : 1});
  LogRegOptions opts;
  opts.lambda = 1e6;
  const auto model = fit_logreg(f, ann, opts);
  for (double w : model.weights) CHECK(std::abs(w) < 1e-5);
  for (int p : predict(model, f)) CHECK(p == 3);
}

TEST_CASE("fit_logreg: errors") {
  const auto f = random_features(5, 2, 1);
  CHECK_THROWS_AS(fit_logreg(f, std::vector<Annotation>{{0, 1}, {1, 1}}), AnalysisError);
  CHECK_THROWS_AS(fit_logreg(f, std::vector<Annotation>{{0, 1}, {0, 2}}), AnalysisError);
  CHECK_THROWS_AS(fit_logreg(f, std::vector<Annotation>{{0, 1}, {9, 2}}), AnalysisError);
  const auto model = fit_logreg(f, std::vector<Annotation>{{0, 1}, {1, 2}, {0, 1}});
  CHECK_THROWS_AS(predict(model, random_features(2, 3, 1)), AnalysisError);
}

TEST_CASE("category grouping and summary") {
  const auto& groups = partnete_class_groups();
  CHECK(groups.size() == 44);
  std::set<std::string> names(partnete_group_names().begin(), partnete_group_names().end());
  CHECK(names.size() == 5);
  for (const auto& [category, group] : groups) CHECK(names.count(group) == 1);

  const std::vector<ShapeScore> scores{{"a", "Chair", 0.8}, {"b", "Chair", 0.6}, {"c", "Table", 1.0},
                                       {"d", "Mouse", 0.5}, {"e", "Spaceship", 0.2}};
  const auto s = summarize(scores);
  CHECK(s.mean == doctest::Approx(3.1 / 5));
  CHECK(s.per_category.at("Chair") == doctest::Approx(0.7));
  CHECK(s.per_group.at("Furniture & Household Infrastructure") == doctest::Approx(0.85));
  CHECK(s.per_group.at("Electronics & Computing Devices") == doctest::Approx(0.5));
  CHECK(s.per_group.at("Other") == doctest::Approx(0.2));
  CHECK(summarize(std::vector<ShapeScore>{}).per_category.empty());
}
