#include <doctest.h>

#include <algorithm>
#include <set>

#include "partfield/fixtures.hpp"
#include "partfield/pipeline.hpp"
#include "partfield/proposals.hpp"
#include "support.hpp"

using namespace partfield;

namespace {

bool is_subset(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

struct SphereScene {
  TriMesh mesh;
  PointSet elements;
  Camera camera;
  DepthIdImage view;
  double radius = 0.0;
};

SphereScene sphere_scene() {
  SphereScene s;
  s.mesh = fixtures::make_icosphere(0.8, 4);
  s.elements = sample_surface(s.mesh, 8000, 1);
  s.camera.position = {0, 0, 3};
  s.camera.rows = 96;
  s.camera.cols = 96;
  s.view = render_depth_ids(s.mesh, s.camera);
  s.radius = matching_radius(s.elements);
  return s;
}

MaskImage column_mask(const DepthIdImage& view, std::uint32_t col_end) {
  MaskImage m{view.rows, view.cols, std::vector<std::uint8_t>(view.hit.size(), 0)};
  for (std::uint32_t r = 0; r < view.rows; ++r) {
    for (std::uint32_t c = 0; c < col_end; ++c) m.data[view.index(r, c)] = 1;
  }
  return m;
}

}  // namespace

TEST_CASE("ingest_labels examples") {
  const auto two = ingest_labels(LabelSet{{"l"}, {{0, 0, 1, 1}}});
  REQUIRE(two.size() == 2);
  CHECK(two[0].members == std::vector<std::uint32_t>{0, 1});
  CHECK(two[1].members == std::vector<std::uint32_t>{2, 3});
  CHECK(two[0].negative_domain() == std::vector<std::uint32_t>{2, 3});

  const auto six = ingest_labels(LabelSet{{"coarse", "fine"}, {{0, 0, 0, 1}, {0, 1, 2, 3}}});
  CHECK(six.size() == 6);

  const auto whole = ingest_labels(LabelSet{{"l"}, {{0, 0, 0}}});
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].members.size() == 3);
  CHECK(whole[0].degenerate);
  CHECK(whole[0].negative_domain().empty());
}

TEST_CASE("ingest_labels: validation") {
  CHECK_THROWS_AS(ingest_labels(LabelSet{}), ProposalError);
  CHECK_THROWS_AS(ingest_labels(LabelSet{{"a", "b"}, {{0, 1}, {}}}), ProposalError);
  CHECK_THROWS_AS(ingest_labels(LabelSet{{"a"}, {{0, -1, 1}}}), ProposalError);
  CHECK_THROWS_AS(ingest_labels(LabelSet{{"a"}, {{0, 2, 2}}}), ProposalError);
  CHECK_THROWS_AS(ingest_labels(LabelSet{{"a", "b"}, {{0, 1}, {0, 1, 1}}}), ProposalError);
}

TEST_CASE("ingest_labels: one level partitions the element set") {
  const auto fx = fixtures::make_dumbbell();
  const auto props = ingest_labels(LabelSet{{"parts"}, {fx.face_labels}});
  std::vector<int> seen(fx.face_labels.size(), 0);
  for (const auto& p : props) {
    for (auto m : p.members) ++seen[m];
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST_CASE("label files round trip and name the path on error") {
  testsupport::TempDir dir;
  const LabelSet labels{{"coarse", "fine"}, {{0, 0, 1}, {0, 1, 2}}};
  save_label_set(labels, dir / "labels.json");
  const auto back = load_label_set(dir / "labels.json");
  CHECK(back.level_names == labels.level_names);
  CHECK(back.levels == labels.levels);
  testsupport::write_text(dir / "bad.json", "{\"levels\": 3}");
  CHECK_THROWS_WITH_AS(load_label_set(dir / "bad.json"), doctest::Contains("bad.json"), ProposalError);
  CHECK_THROWS_WITH_AS(load_label_set(dir / "none.json"), doctest::Contains("none.json"), ProposalError);
}

TEST_CASE("face labels carried to elements") {
  const auto fx = fixtures::make_dumbbell();
  const auto pts = sample_surface(fx.mesh, 2000, 4);
  const auto mapped = face_labels_to_elements(LabelSet{{"parts"}, {fx.face_labels}}, pts);
  REQUIRE(mapped.element_count() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(mapped.levels[0][i] == fx.face_labels[pts.source_face[i]]);
}

TEST_CASE("project_mask: full mask gives the visible set, empty mask errors") {
  const auto s = sphere_scene();
  const auto full = project_mask(column_mask(s.view, s.view.cols), s.view, s.camera, s.elements, s.radius);
  CHECK(full.members == full.visible);
  CHECK(full.source == ProposalSource::mask2d);
  CHECK(full.visible.size() > 1000);
  CHECK(full.visible.size() < s.elements.size());

  CHECK_THROWS_AS(project_mask(column_mask(s.view, 0), s.view, s.camera, s.elements, s.radius), ProposalError);
  MaskImage wrong{10, 10, std::vector<std::uint8_t>(100, 1)};
  CHECK_THROWS_AS(project_mask(wrong, s.view, s.camera, s.elements, s.radius), ProposalError);
}

TEST_CASE("project_mask: half-masked sphere against an occlusion-ray oracle") {
  const auto s = sphere_scene();
  const auto half = project_mask(column_mask(s.view, s.view.cols / 2), s.view, s.camera, s.elements, s.radius);
  CHECK(is_subset(half.members, half.visible));

  // Oracle: visible when nothing blocks the segment camera -> element, and
  // on the masked (left, x < 0) side of the image.
  const Bvh bvh(s.mesh);
  std::set<std::uint32_t> expected_visible, expected_members;
  for (std::uint32_t e = 0; e < s.elements.size(); ++e) {
    const Vec3 p = s.elements.points[e];
    const Vec3 d = p - s.camera.position;
    const double len = norm(d);
    const auto hit = bvh.cast(s.camera.position, d * (1.0 / len));
    if (!hit || hit->t < len - 1e-4) continue;
    expected_visible.insert(e);
    if (p.x < 0.0) expected_members.insert(e);
  }
  auto jaccard = [](const std::set<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
    std::size_t inter = 0;
    for (auto x : b) inter += a.count(x);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
  };
  CHECK(jaccard(expected_visible, half.visible) > 0.9);
  CHECK(jaccard(expected_members, half.members) > 0.9);
}

TEST_CASE("project_mask is monotone in the mask") {
  const auto s = sphere_scene();
  std::vector<std::uint32_t> previous;
  for (std::uint32_t end : {20u, 40u, 60u, 96u}) {
    const auto p = project_mask(column_mask(s.view, end), s.view, s.camera, s.elements, s.radius);
    CHECK(is_subset(previous, p.members));
    previous = p.members;
  }
}

TEST_CASE("synth_mask_proposals: visible and occluded labels") {
  // Two quads side by side facing +z, one hidden behind the left one.
  std::vector<Vec3> v;
  std::vector<Face> f;
  auto add_quad = [&](double x0, double x1, double z) {
    const auto base = static_cast<std::uint32_t>(v.size());
    v.insert(v.end(), {{x0, -0.5, z}, {x1, -0.5, z}, {x1, 0.5, z}, {x0, 0.5, z}});
    f.push_back({base, base + 1, base + 2});
    f.push_back({base, base + 2, base + 3});
  };
  add_quad(-1.0, -0.05, 0.0);
  add_quad(0.05, 1.0, 0.0);
  add_quad(-0.9, -0.15, -0.5);
  const auto mesh = make_mesh(v, f);
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  const auto elements = sample_surface(mesh, 6000, 2);
  Camera cam;
  cam.position = {0, 0, 3};
  cam.rows = 96;
  cam.cols = 96;
  const auto props = synth_mask_proposals(mesh, labels, {cam}, elements, matching_radius(elements));
  REQUIRE(props.size() == 2);
  CHECK(props[0].label == 0);
  CHECK(props[1].label == 1);
  for (const auto& p : props) {
    CHECK(p.members.size() >= kMinProposalSize);
    CHECK(is_subset(p.members, p.visible));
  }
}

TEST_CASE("synth_mask_proposals: six views cover each dumbbell label") {
  const auto fx = fixtures::make_dumbbell();
  const auto shape = prepare_shape(fx.mesh, 20000, 3);
  const auto props = synthetic_mask_proposals(shape, fx.face_labels, 6, 128);
  CHECK(props.size() >= 6);
  std::vector<std::set<std::uint32_t>> covered(3);
  for (const auto& p : props) {
    REQUIRE(p.label >= 0);
    covered[p.label].insert(p.members.begin(), p.members.end());
  }
  for (int label = 0; label < 3; ++label) {
    std::size_t total = 0;
    std::size_t hit = 0;
    for (std::uint32_t e = 0; e < shape.points.size(); ++e) {
      if (fx.face_labels[shape.points.source_face[e]] != label) continue;
      ++total;
      hit += covered[label].count(e);
    }
    CAPTURE(label);
    CHECK(static_cast<double>(hit) / total >= 0.95);
  }
}

TEST_CASE("mask files: PGM round trip and errors") {
  testsupport::TempDir dir;
  MaskImage m{3, 4, {0, 1, 0, 255, 0, 0, 0, 0, 9, 9, 0, 1}};
  save_mask_pgm(m, dir / "m.pgm");
  const auto back = load_mask(dir / "m.pgm");
  CHECK(back.rows == 3);
  CHECK(back.cols == 4);
  for (std::uint32_t r = 0; r < 3; ++r) {
    for (std::uint32_t c = 0; c < 4; ++c) CHECK(back.masked(r, c) == m.masked(r, c));
  }
  testsupport::write_text(dir / "bad.pgm", "P2\n1 1\n255\n0\n");
  CHECK_THROWS_AS(load_mask(dir / "bad.pgm"), ProposalError);
  testsupport::write_text(dir / "short.pgm", "P5\n4 4\n255\nab");
  CHECK_THROWS_WITH_AS(load_mask(dir / "short.pgm"), doctest::Contains("truncated"), ProposalError);
}
