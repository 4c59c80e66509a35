#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "partfield/analysis.hpp"
#include "partfield/pipeline.hpp"
#include "partfield/random.hpp"
#include "partfield/serialize.hpp"
#include "support.hpp"

using namespace partfield;
using testsupport::read_bytes;
using testsupport::TempDir;

namespace {

struct Run {
  int exit_code;
  std::string out;
  std::string err;
};

Run cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string command = std::string(PARTFIELD_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(command.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_bytes(out), read_bytes(err)};
}

// Small, fast configuration for the dumbbell fixture.
void write_small_config(const TempDir& dir) {
  write_json(Json::parse(R"({"iterations": 60, "resolution": 16, "channels": 8, "snapshot_period": 20,
                             "feature_hard_start": 30,
                             "sampler": {"masks_per_batch": 3, "positive_pairs": 16, "uniform_negatives": 32,
                                         "hard3d_negatives": 32, "feature_hard_negatives": 32}})"),
             dir / "small.json");
}

struct Fixture {
  TempDir dir;
  std::string d;
  Fixture() : d(dir.path().string() + "/") {
    REQUIRE(cli(dir, "fixture dumbbell --out-dir " + d).exit_code == 0);
    write_small_config(dir);
  }
  std::string fit_args(const std::string& out) const {
    return "fit " + d + "dumbbell.obj --proposals " + d + "proposals_3d.json --config " + d +
           "small.json --points 3000 -o " + d + out;
  }
  std::string shape(const std::string& field) const {
    return d + "dumbbell.obj --points 3000 --features " + d + field;
  }
};

}  // namespace

TEST_CASE("cli: usage errors") {
  TempDir dir;
  CHECK(cli(dir, "").exit_code != 0);
  CHECK(cli(dir, "frobnicate").exit_code != 0);
  const auto help = cli(dir, "--help");
  CHECK(help.exit_code == 0);
  CHECK(help.out.find("segment") != std::string::npos);
}

TEST_CASE("cli: fit writes a field and report; missing proposals names the path") {
  Fixture fx;
  const auto missing = cli(fx.dir, "fit " + fx.d + "dumbbell.obj --proposals " + fx.d + "nope.json -o " + fx.d + "f.pfld");
  CHECK(missing.exit_code != 0);
  CHECK(missing.err.find(fx.d + "nope.json") != std::string::npos);

  const auto zero = cli(fx.dir, fx.fit_args("zero.pfld") + " --iterations 0");
  REQUIRE(zero.exit_code == 0);
  const auto init = load_field(fx.dir / "zero.pfld");
  const auto expected = new_triplane(16, 8, 0.1, derive_seed(0, 1));
  CHECK(init.params == expected.params);

  const auto fit = cli(fx.dir, fx.fit_args("f.pfld"));
  REQUIRE(fit.exit_code == 0);
  const auto report = read_json(fx.dir / "f.pfld.report.json");
  const auto& loss = report.at("loss");
  REQUIRE(loss.size() == 4);
  CHECK(loss.back().at("loss").get<double>() < loss.front().at("loss").get<double>());
}

TEST_CASE("cli: segment, hierarchy, eval, coseg, correspond") {
  Fixture fx;
  REQUIRE(cli(fx.dir, fx.fit_args("f.pfld")).exit_code == 0);

  REQUIRE(cli(fx.dir, "segment " + fx.shape("f.pfld") + " --k 3 -o " + fx.d + "k3.json").exit_code == 0);
  const auto k3 = read_json(fx.dir / "k3.json").get<Segmentation>();
  CHECK(k3.k == 3);
  CHECK(make_segmentation(k3.labels).k == 3);

  REQUIRE(cli(fx.dir, "segment " + fx.shape("f.pfld") + " --k 1 -o " + fx.d + "k1.json").exit_code == 0);
  CHECK(read_json(fx.dir / "k1.json").at("labels") == Json(std::vector<int>(k3.labels.size(), 0)));

  REQUIRE(cli(fx.dir, "segment " + fx.shape("f.pfld") + " --scales 20 -o " + fx.d + "sweep.json").exit_code == 0);
  const auto sweep = read_json(fx.dir / "sweep.json");
  REQUIRE(sweep.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) CHECK(sweep[i].at("k") == i + 2);

  const auto too_many = cli(fx.dir, "segment " + fx.shape("f.pfld") + " --k 999999");
  CHECK(too_many.exit_code != 0);
  CHECK(too_many.err.find("error:") != std::string::npos);

  REQUIRE(cli(fx.dir, "hierarchy " + fx.shape("f.pfld") + " -o " + fx.d + "tree.json").exit_code == 0);
  const auto tree = read_json(fx.dir / "tree.json");
  CHECK(tree.at("leaf_count") == k3.labels.size());
  CHECK(tree.at("merges").size() == k3.labels.size() - 1);

  // eval: identical, the 10-face example, and a sweep containing the gt
  const auto gt_path = fx.d + "dumbbell_gt.json";
  auto self = cli(fx.dir, "eval --gt " + gt_path + " --pred " + gt_path);
  REQUIRE(self.exit_code == 0);
  CHECK(Json::parse(self.out).at("miou") == 1.0);

  write_json(Json{{"labels", {0, 0, 0, 0, 0, 1, 1, 1, 1, 1}}}, fx.dir / "g10.json");
  write_json(Json{{"labels", {0, 0, 0, 0, 1, 1, 1, 1, 1, 1}}}, fx.dir / "p10.json");
  auto ten = cli(fx.dir, "eval --gt " + fx.d + "g10.json --pred " + fx.d + "p10.json");
  REQUIRE(ten.exit_code == 0);
  CHECK(Json::parse(ten.out).at("miou").get<double>() == doctest::Approx(0.81667).epsilon(1e-5));

  const auto gt = read_face_labels(read_json(fx.dir / "dumbbell_gt.json"));
  Json crafted = Json::array({make_segmentation(std::vector<int>(gt.size(), 0)), make_segmentation(gt)});
  crafted[1]["k"] = 3;
  write_json(crafted, fx.dir / "crafted.json");
  auto best = cli(fx.dir, "eval --gt " + gt_path + " --pred " + fx.d + "crafted.json");
  REQUIRE(best.exit_code == 0);
  CHECK(Json::parse(best.out).at("best_k") == 3);
  CHECK(Json::parse(best.out).at("best_index") == 1);

  auto bad_eval = cli(fx.dir, "eval --gt " + fx.d + "g10.json --pred " + gt_path);
  CHECK(bad_eval.exit_code != 0);

  // coseg and correspond of a shape with itself; the source segmentation is a
  // converged k-means partition of the same face features the CLI computes
  const auto shape = prepare_shape(load_mesh(fx.dir / "dumbbell.obj"), 3000, derive_seed(0, 3));
  const auto faces = load_face_features(fx.dir / "f.pfld", shape, 11, derive_seed(0, 4));
  const auto source = kmeans(faces, 3, KMeansInit::random, 1).segmentation;
  const std::string pair = "--source-mesh " + fx.d + "dumbbell.obj --source-features " + fx.d +
                           "f.pfld --target-mesh " + fx.d + "dumbbell.obj --target-features " + fx.d + "f.pfld";
  write_json(Json{{"labels", source.labels}}, fx.dir / "src.json");
  REQUIRE(cli(fx.dir, "coseg " + pair + " --source-seg " + fx.d + "src.json -o " + fx.d + "co.json").exit_code == 0);
  const auto co = read_json(fx.dir / "co.json").get<Segmentation>();
  CHECK(co.canonical() == source.canonical());

  REQUIRE(cli(fx.dir, "correspond " + pair + " -o " + fx.d + "map.json").exit_code == 0);
  const auto map = read_json(fx.dir / "map.json").at("map").get<std::vector<std::uint32_t>>();
  REQUIRE(map.size() == k3.labels.size());
  bool identity = true;
  for (std::uint32_t i = 0; i < map.size(); ++i) identity = identity && map[i] == i;
  CHECK(identity);
}

TEST_CASE("cli: fit, segment and eval are byte-identical across runs") {
  Fixture fx;
  REQUIRE(cli(fx.dir, fx.fit_args("a.pfld") + " --report " + fx.d + "a.json").exit_code == 0);
  REQUIRE(cli(fx.dir, fx.fit_args("b.pfld") + " --report " + fx.d + "b.json").exit_code == 0);
  CHECK(read_bytes(fx.dir / "a.pfld") == read_bytes(fx.dir / "b.pfld"));
  auto strip_clock = [](Json j) {
    j.erase("wall_clock_seconds");
    return j.dump();
  };
  CHECK(strip_clock(read_json(fx.dir / "a.json")) == strip_clock(read_json(fx.dir / "b.json")));

  for (const char* out : {"s1.json", "s2.json"}) {
    REQUIRE(cli(fx.dir, "segment " + fx.shape("a.pfld") + " --scales 20 -o " + fx.d + out).exit_code == 0);
  }
  CHECK(read_bytes(fx.dir / "s1.json") == read_bytes(fx.dir / "s2.json"));

  for (const char* out : {"e1.json", "e2.json"}) {
    REQUIRE(cli(fx.dir, "eval --gt " + fx.d + "dumbbell_gt.json --pred " + fx.d + "s1.json -o " + fx.d + out)
                .exit_code == 0);
  }
  CHECK(read_bytes(fx.dir / "e1.json") == read_bytes(fx.dir / "e2.json"));
}
