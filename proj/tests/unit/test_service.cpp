#include <doctest.h>

#include <chrono>
#include <thread>

#include <httplib.h>

#include "partfield/fixtures.hpp"
#include "partfield/serialize.hpp"
#include "partfield/service.hpp"
#include "support.hpp"

using namespace partfield;
using testsupport::TempDir;

namespace {

std::string obj_text(const TriMesh& mesh) {
  TempDir dir;
  save_obj(mesh, dir / "m.obj");
  return testsupport::read_bytes(dir / "m.obj");
}

// Box split into a left half (x < 0.5) and right half, one feature channel each.
struct TwoPart {
  TriMesh mesh;
  FeatureSet features;
  std::vector<int> labels;
};

TwoPart two_part() {
  TwoPart t;
  t.mesh = fixtures::make_box({0, 0, 0}, {1, 1, 1}, 4);
  t.features.kind = ElementKind::face;
  t.features.count = static_cast<std::uint32_t>(t.mesh.num_faces());
  t.features.dim = 2;
  for (std::size_t f = 0; f < t.mesh.num_faces(); ++f) {
    const bool left = t.mesh.centroid(f).x < 0.5;
    t.labels.push_back(left ? 0 : 1);
    t.features.data.push_back(left ? 1.0f : 0.1f);
    t.features.data.push_back(left ? 0.1f : 1.0f);
  }
  return t;
}

class Harness {
 public:
  explicit Harness(ServiceOptions options = small_options()) : service_(std::move(options)) {
    service_.register_routes(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(120, 0);
  }
  ~Harness() {
    server_.stop();
    thread_.join();
  }

  static ServiceOptions small_options() {
    ServiceOptions o;
    o.canonical_points = 3000;
    o.samples_per_face = 4;
    return o;
  }

  httplib::Client& client() { return *client_; }
  Service& service() { return service_; }

  std::string upload(const std::string& obj) {
    httplib::MultipartFormDataItems items{{"mesh", obj, "mesh.obj", "text/plain"}};
    auto res = client_->Post("/v1/shapes", items);
    REQUIRE(res);
    REQUIRE(res->status == 201);
    return Json::parse(res->body).at("shape_id").get<std::string>();
  }

 private:
  Service service_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

void check_error(const httplib::Result& res, int status, const std::string& code) {
  REQUIRE(res);
  CHECK(res->status == status);
  const auto body = Json::parse(res->body);
  CHECK(body.at("code") == code);
  CHECK(body.at("message").is_string());
  CHECK_FALSE(body.at("message").get<std::string>().empty());
}

}  // namespace

TEST_CASE("upload, mesh payload, features, similarity, segment, hierarchy") {
  Harness h;
  const auto t = two_part();
  const auto id = h.upload(obj_text(t.mesh));

  auto list = h.client().Get("/v1/shapes");
  REQUIRE(list);
  CHECK(Json::parse(list->body).at("shapes")[0].at("shape_id") == id);

  auto mesh = h.client().Get("/v1/shapes/" + id + "/mesh");
  REQUIRE(mesh);
  CHECK(mesh->status == 200);
  CHECK(mesh->body == encode_mesh(h.service().session(id)->shape.mesh));

  check_error(h.client().Get("/v1/shapes/" + id + "/similarity?face=0"), 409, "missing_field");

  auto put = h.client().Post("/v1/shapes/" + id + "/features", encode_features(t.features), "application/octet-stream");
  REQUIRE(put);
  CHECK(put->status == 204);

  auto sim = h.client().Get("/v1/shapes/" + id + "/similarity?face=5");
  REQUIRE(sim);
  REQUIRE(sim->status == 200);
  const auto values = Json::parse(sim->body).at("values").get<std::vector<float>>();
  REQUIRE(values.size() == t.mesh.num_faces());
  CHECK(values[5] == doctest::Approx(1.0));

  auto seg = h.client().Get("/v1/shapes/" + id + "/segment?k=2");
  REQUIRE(seg);
  REQUIRE(seg->status == 200);
  const auto s = Json::parse(seg->body).get<Segmentation>();
  CHECK(s.k == 2);
  CHECK(miou(t.labels, s.labels).miou == 1.0);

  check_error(h.client().Get("/v1/shapes/" + id + "/segment?k=100000"), 422, "invalid_body");
  check_error(h.client().Get("/v1/shapes/" + id + "/segment?k=abc"), 422, "invalid_body");
  check_error(h.client().Get("/v1/shapes/" + id + "/segment"), 422, "invalid_body");

  auto tree = h.client().Get("/v1/shapes/" + id + "/hierarchy");
  REQUIRE(tree);
  CHECK(Json::parse(tree->body).at("leaf_count") == t.mesh.num_faces());

  // repeated reads of an unchanged session agree
  auto again = h.client().Get("/v1/shapes/" + id + "/similarity?face=5");
  CHECK(again->body == sim->body);
}

TEST_CASE("annotations and interactive cosegmentation") {
  Harness h;
  const auto t = two_part();
  const auto a = h.upload(obj_text(t.mesh));
  const auto b = h.upload(obj_text(t.mesh));
  for (const auto& id : {a, b}) {
    h.client().Post("/v1/shapes/" + id + "/features", encode_features(t.features), "application/octet-stream");
  }
  std::uint32_t left = 0, right = 0;
  while (t.labels[left] != 0) ++left;
  while (t.labels[right] != 1) ++right;

  auto post = [&](std::uint32_t face, int cls) {
    return h.client().Post("/v1/shapes/" + a + "/annotations",
                           Json{{"face", face}, {"class", cls}}.dump(), "application/json");
  };
  REQUIRE(post(left, 3)->status == 204);
  check_error(h.client().Get("/v1/shapes/" + a + "/coseg"), 422, "invalid_body");
  REQUIRE(post(right, 8)->status == 204);

  auto listed = Json::parse(h.client().Get("/v1/shapes/" + a + "/annotations")->body).at("annotations");
  CHECK(listed.size() == 2);

  auto coseg = h.client().Get("/v1/shapes/" + a + "/coseg");
  REQUIRE(coseg);
  REQUIRE(coseg->status == 200);
  const auto labels = Json::parse(coseg->body).at("labels").get<std::vector<int>>();
  CHECK(labels[left] == 3);
  CHECK(labels[right] == 8);
  CHECK(miou(t.labels, labels).miou == 1.0);

  auto cross = h.client().Get("/v1/shapes/" + a + "/coseg?target=" + b);
  REQUIRE(cross);
  CHECK(Json::parse(cross->body).at("labels").get<std::vector<int>>() == labels);

  CHECK(h.client().Delete("/v1/shapes/" + a + "/annotations?face=" + std::to_string(left))->status == 204);
  CHECK(h.service().annotations(a).size() == 1);
  CHECK(h.client().Delete("/v1/shapes/" + a + "/annotations")->status == 204);
  CHECK(h.service().annotations(a).empty());

  check_error(post(1u << 30, 1), 422, "invalid_body");
  check_error(h.client().Post("/v1/shapes/" + a + "/annotations", "{bad", "application/json"), 422, "invalid_body");
  check_error(h.client().Post("/v1/shapes/" + a + "/annotations", R"({"face": 1})", "application/json"), 422,
              "invalid_body");
}

TEST_CASE("fit jobs run in the background and publish a field") {
  Harness h;
  const auto fx = fixtures::make_dumbbell();
  const auto id = h.upload(obj_text(fx.mesh));

  check_error(h.client().Post("/v1/shapes/" + id + "/fit", "{}", "application/json"), 422, "invalid_body");

  Json body{{"config",
             {{"iterations", 30},
              {"resolution", 8},
              {"channels", 4},
              {"snapshot_period", 10},
              {"sampler", {{"masks_per_batch", 2}, {"positive_pairs", 8}, {"uniform_negatives", 16},
                           {"hard3d_negatives", 16}, {"feature_hard_negatives", 16}}}}},
            {"labels", LabelSet{{"parts"}, {fx.face_labels}}}};
  auto submitted = h.client().Post("/v1/shapes/" + id + "/fit", body.dump(), "application/json");
  REQUIRE(submitted);
  REQUIRE(submitted->status == 202);
  const auto job = Json::parse(submitted->body).at("job_id").get<std::string>();

  Json status;
  for (int i = 0; i < 600; ++i) {
    status = Json::parse(h.client().Get("/v1/jobs/" + job)->body);
    if (status.at("status") == "done" || status.at("status") == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  REQUIRE(status.at("status") == "done");
  CHECK(status.at("iteration") == 30);
  CHECK(status.at("loss").is_number());

  auto sim = h.client().Get("/v1/shapes/" + id + "/similarity?face=0");
  REQUIRE(sim);
  REQUIRE(sim->status == 200);
  CHECK(Json::parse(sim->body).at("values")[0].get<double>() == doctest::Approx(1.0));
  CHECK(h.service().snapshot(id)->field != nullptr);

  auto bad = h.client().Post("/v1/shapes/" + id + "/fit", R"({"adam": {"learning_rate": 0}})", "application/json");
  check_error(bad, 422, "invalid_body");
}

TEST_CASE("unknown ids, routes, CORS") {
  Harness h;
  check_error(h.client().Get("/v1/shapes/nope/similarity?face=0"), 404, "not_found");
  check_error(h.client().Get("/v1/jobs/job-42"), 404, "not_found");
  check_error(h.client().Post("/v1/shapes/nope/features", "PFTS", "application/octet-stream"), 404, "not_found");
  check_error(h.client().Get("/v1/unknown"), 404, "not_found");
  check_error(h.client().Post("/v1/shapes", "not an obj\nf 1 2 3\n", "text/plain"), 422, "invalid_body");

  auto res = h.client().Get("/v1/shapes");
  REQUIRE(res);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  auto pre = h.client().Options("/v1/shapes");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
}

TEST_CASE("sessions persist to a data directory") {
  TempDir dir;
  const auto t = two_part();
  auto options = Harness::small_options();
  options.data_dir = dir.path();
  std::string id;
  {
    Service service(options);
    id = service.add_shape(obj_text(t.mesh));
    service.set_features(id, encode_features(t.features));
    service.annotate(id, 0, 4);
  }
  Service restored(options);
  REQUIRE(restored.shape_ids() == std::vector<std::string>{id});
  CHECK(restored.annotations(id) == std::map<std::uint32_t, int>{{0, 4}});
  CHECK(restored.snapshot(id)->face_features.data == t.features.data);
  CHECK(restored.add_shape(obj_text(t.mesh)) != id);
}
