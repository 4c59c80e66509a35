#include "partfield/service.hpp"

#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "partfield/serialize.hpp"

namespace partfield {

namespace {

ServiceError not_found(const std::string& what) { return {404, "not_found", what}; }
ServiceError missing_field(const std::string& id) {
  return {409, "missing_field", "shape " + id + " has no field or features yet"};
}
ServiceError invalid(const std::string& message) { return {422, "invalid_body", message}; }

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Module errors raised while handling a request are client errors.
template <typename F>
auto translate(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ServiceError&) {
    throw;
  } catch (const GeometryError& e) {
    throw invalid(e.what());
  } catch (const FieldError& e) {
    throw invalid(e.what());
  } catch (const ProposalError& e) {
    throw invalid(e.what());
  } catch (const AnalysisError& e) {
    throw invalid(e.what());
  } catch (const ClusteringError& e) {
    throw invalid(e.what());
  } catch (const SamplerError& e) {
    throw invalid(e.what());
  } catch (const FitError& e) {
    throw invalid(e.what());
  } catch (const Json::exception& e) {
    throw invalid(e.what());
  }
}

struct PendingJob {
  std::string id;
  std::string shape_id;
  FitConfig config;
};

}  // namespace

ServiceOptions options_from_environment(ServiceOptions base) {
  if (const char* dir = std::getenv("PARTFIELD_DATA_DIR"); dir != nullptr && *dir != '\0') base.data_dir = dir;
  return base;
}

struct Service::Impl {
  ServiceOptions options;

  mutable std::shared_mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<ShapeSession>> sessions;
  std::uint64_t next_shape = 1;

  mutable std::mutex jobs_mutex;
  std::condition_variable queue_cv;
  std::condition_variable idle_cv;
  std::deque<PendingJob> queue;
  std::map<std::string, JobStatus> jobs;
  std::uint64_t next_job = 1;
  bool busy = false;
  bool stopping = false;
  std::thread worker;

  std::shared_ptr<ShapeSession> get(const std::string& id) const {
    std::shared_lock lock(sessions_mutex);
    const auto it = sessions.find(id);
    if (it == sessions.end()) throw not_found("unknown shape " + id);
    return it->second;
  }

  std::shared_ptr<const SessionSnapshot> current(const ShapeSession& s) const {
    std::shared_lock lock(s.mutex);
    if (!s.snapshot) throw missing_field(s.id);
    return s.snapshot;
  }

  std::optional<std::filesystem::path> session_dir(const std::string& id) const {
    if (!options.data_dir) return std::nullopt;
    auto dir = *options.data_dir / id;
    std::filesystem::create_directories(dir);
    return dir;
  }

  std::shared_ptr<const SessionSnapshot> build_snapshot(const ShapeSession& s, std::string_view payload) const {
    auto snap = std::make_shared<SessionSnapshot>();
    if (payload.substr(0, 4) == "PFLD") snap->field = std::make_shared<TriplaneField>(decode_field(payload));
    snap->face_features = face_features_from_bytes(payload, s.shape, options.samples_per_face, options.seed);
    snap->tree = agglomerate(snap->face_features, s.shape.mesh.face_adjacency);
    return snap;
  }

  void publish(ShapeSession& s, std::shared_ptr<const SessionSnapshot> snap, std::string_view payload) {
    if (auto dir = session_dir(s.id)) write_all(*dir / "features.bin", payload);
    std::unique_lock lock(s.mutex);
    s.snapshot = std::move(snap);
  }

  void persist_annotations(const ShapeSession& s) const {
    auto dir = session_dir(s.id);
    if (!dir) return;
    Json list = Json::array();
    for (const auto& [face, cls] : s.annotations) list.push_back({{"face", face}, {"class", cls}});
    write_json(list, *dir / "annotations.json");
  }

  std::shared_ptr<ShapeSession> make_session(const std::string& id, std::string obj_text,
                                             std::optional<LabelSet> labels) const {
    auto s = std::make_shared<ShapeSession>();
    s->id = id;
    std::istringstream in(obj_text);
    s->shape = prepare_shape(parse_obj(in), options.canonical_points, options.seed);
    s->mesh_source = std::move(obj_text);
    if (labels) {
      const auto n = labels->element_count();
      if (n != s->shape.mesh.num_faces() && n != s->shape.points.size()) {
        throw invalid("label count " + std::to_string(n) + " matches neither faces nor canonical points");
      }
      validate_label_set(*labels, n);
      s->labels = std::move(labels);
    }
    return s;
  }

  void restore() {
    if (!options.data_dir || !std::filesystem::exists(*options.data_dir)) return;
    for (const auto& entry : std::filesystem::directory_iterator(*options.data_dir)) {
      const auto mesh_path = entry.path() / "mesh.obj";
      if (!entry.is_directory() || !std::filesystem::exists(mesh_path)) continue;
      const std::string id = entry.path().filename().string();
      try {
        restore_one(id, entry.path());
      } catch (const std::exception& e) {
        std::fprintf(stderr, "skipping stored session %s: %s\n", id.c_str(), e.what());
      }
    }
  }

  void restore_one(const std::string& id, const std::filesystem::path& dir) {
    const auto mesh_path = dir / "mesh.obj";
    std::optional<LabelSet> labels;
    if (std::filesystem::exists(dir / "labels.json")) labels = load_label_set(dir / "labels.json");
    auto s = make_session(id, read_all(mesh_path), std::move(labels));
    if (std::filesystem::exists(dir / "features.bin")) {
      const auto payload = read_all(dir / "features.bin");
      s->snapshot = build_snapshot(*s, payload);
    }
    if (std::filesystem::exists(dir / "annotations.json")) {
      for (const auto& a : read_json(dir / "annotations.json")) {
        s->annotations[a.at("face").get<std::uint32_t>()] = a.at("class").get<int>();
      }
    }
    if (id.rfind("shape-", 0) == 0) {
      try {
        next_shape = std::max<std::uint64_t>(next_shape, std::stoull(id.substr(6)) + 1);
      } catch (const std::exception&) {
      }
    }
    sessions.emplace(id, std::move(s));
  }

  void run_job(const PendingJob& job) {
    auto s = get(job.shape_id);
    if (!s->labels) throw invalid("shape " + job.shape_id + " has no labels to draw proposals from");
    const auto proposals = proposals_from_labels(*s->labels, s->shape, s->id);
    auto result = fit_field(s->shape.points, proposals, job.config,
                            [&](std::uint32_t iteration, const TriplaneField&, double loss) {
                              std::lock_guard lock(jobs_mutex);
                              auto& st = jobs[job.id];
                              st.iteration = iteration;
                              st.loss = loss;
                            });
    const std::string payload = encode_field(result.field);
    publish(*s, build_snapshot(*s, payload), payload);
  }

  void work() {
    std::unique_lock lock(jobs_mutex);
    while (true) {
      queue_cv.wait(lock, [&] { return stopping || !queue.empty(); });
      if (stopping) return;
      PendingJob job = std::move(queue.front());
      queue.pop_front();
      busy = true;
      jobs[job.id].status = "running";
      lock.unlock();
      std::string error;
      try {
        translate([&] { run_job(job); });
      } catch (const std::exception& e) {
        error = e.what();
      }
      lock.lock();
      auto& st = jobs[job.id];
      st.status = error.empty() ? "done" : "failed";
      st.error = error;
      busy = false;
      if (queue.empty()) idle_cv.notify_all();
    }
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
  impl_->restore();
  impl_->worker = std::thread([this] { impl_->work(); });
}

Service::~Service() {
  {
    std::lock_guard lock(impl_->jobs_mutex);
    impl_->stopping = true;
  }
  impl_->queue_cv.notify_all();
  if (impl_->worker.joinable()) impl_->worker.join();
}

std::string Service::add_shape(std::string obj_text, std::optional<LabelSet> labels) {
  std::string id;
  {
    std::unique_lock lock(impl_->sessions_mutex);
    id = "shape-" + std::to_string(impl_->next_shape++);
  }
  auto s = translate([&] { return impl_->make_session(id, std::move(obj_text), std::move(labels)); });
  if (auto dir = impl_->session_dir(id)) {
    write_all(*dir / "mesh.obj", s->mesh_source);
    if (s->labels) save_label_set(*s->labels, *dir / "labels.json");
  }
  std::unique_lock lock(impl_->sessions_mutex);
  impl_->sessions.emplace(id, std::move(s));
  return id;
}

std::vector<std::string> Service::shape_ids() const {
  std::shared_lock lock(impl_->sessions_mutex);
  std::vector<std::string> out;
  for (const auto& [id, s] : impl_->sessions) out.push_back(id);
  return out;
}

std::shared_ptr<ShapeSession> Service::session(const std::string& id) const { return impl_->get(id); }

void Service::set_features(const std::string& id, std::string_view payload) {
  auto s = impl_->get(id);
  auto snap = translate([&] { return impl_->build_snapshot(*s, payload); });
  impl_->publish(*s, std::move(snap), payload);
}

std::string Service::submit_fit(const std::string& id, const FitConfig& config, std::optional<LabelSet> labels) {
  auto s = impl_->get(id);
  translate([&] { config.validate(); });
  if (labels) {
    const auto n = labels->element_count();
    if (n != s->shape.mesh.num_faces() && n != s->shape.points.size()) {
      throw invalid("label count " + std::to_string(n) + " matches neither faces nor canonical points");
    }
    translate([&] { validate_label_set(*labels, n); });
    std::unique_lock lock(s->mutex);
    s->labels = std::move(labels);
    if (auto dir = impl_->session_dir(id)) save_label_set(*s->labels, *dir / "labels.json");
  }
  if (!s->labels) throw invalid("shape " + id + " has no labels to draw proposals from");
  std::lock_guard lock(impl_->jobs_mutex);
  const std::string job_id = "job-" + std::to_string(impl_->next_job++);
  JobStatus st;
  st.id = job_id;
  st.shape_id = id;
  st.status = "queued";
  st.iterations = config.iterations;
  impl_->jobs.emplace(job_id, st);
  impl_->queue.push_back({job_id, id, config});
  impl_->queue_cv.notify_one();
  return job_id;
}

JobStatus Service::job(const std::string& id) const {
  std::lock_guard lock(impl_->jobs_mutex);
  const auto it = impl_->jobs.find(id);
  if (it == impl_->jobs.end()) throw not_found("unknown job " + id);
  return it->second;
}

void Service::wait_idle() {
  std::unique_lock lock(impl_->jobs_mutex);
  impl_->idle_cv.wait(lock, [&] { return impl_->queue.empty() && !impl_->busy; });
}

std::shared_ptr<const SessionSnapshot> Service::snapshot(const std::string& id) const {
  return impl_->current(*impl_->get(id));
}

std::vector<float> Service::similarity(const std::string& id, std::uint32_t face, const std::string& target) const {
  const auto snap = snapshot(id);
  if (face >= snap->face_features.count) {
    throw invalid("face " + std::to_string(face) + " out of range [0, " + std::to_string(snap->face_features.count) +
                  ")");
  }
  if (target.empty()) return translate([&] { return similarity_map(snap->face_features, face); });
  const auto other = snapshot(target);
  return translate([&] { return similarity_map(snap->face_features, face, other->face_features); });
}

Segmentation Service::segment(const std::string& id, std::uint32_t k) const {
  const auto snap = snapshot(id);
  if (k < 1 || k > snap->tree.leaf_count) {
    throw invalid("k must be in [1, " + std::to_string(snap->tree.leaf_count) + "], got " + std::to_string(k));
  }
  return cut_tree(snap->tree, k);
}

void Service::annotate(const std::string& id, std::uint32_t face, int cls) {
  auto s = impl_->get(id);
  if (face >= s->shape.mesh.num_faces()) throw invalid("face " + std::to_string(face) + " out of range");
  std::unique_lock lock(s->mutex);
  s->annotations[face] = cls;
  impl_->persist_annotations(*s);
}

void Service::remove_annotation(const std::string& id, std::optional<std::uint32_t> face) {
  auto s = impl_->get(id);
  std::unique_lock lock(s->mutex);
  if (face) {
    s->annotations.erase(*face);
  } else {
    s->annotations.clear();
  }
  impl_->persist_annotations(*s);
}

std::map<std::uint32_t, int> Service::annotations(const std::string& id) const {
  auto s = impl_->get(id);
  std::shared_lock lock(s->mutex);
  return s->annotations;
}

Segmentation Service::coseg(const std::string& id, const std::string& target) const {
  const auto snap = snapshot(id);
  std::vector<Annotation> annots;
  for (const auto& [face, cls] : annotations(id)) annots.push_back({face, cls});
  const auto target_snap = target.empty() ? snap : snapshot(target);
  return translate([&] {
    const auto model = fit_logreg(snap->face_features, annots);
    return make_segmentation(predict(model, target_snap->face_features));
  });
}

// ---- HTTP routes --------------------------------------------------------

namespace {

void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, Json{{"code", code}, {"message", message}}, status);
}

Json parse_body(const httplib::Request& req) {
  try {
    return Json::parse(req.body);
  } catch (const Json::exception& e) {
    throw invalid(std::string("request body is not valid JSON: ") + e.what());
  }
}

std::uint32_t uint_param(const httplib::Request& req, const std::string& name) {
  if (!req.has_param(name)) throw invalid("missing query parameter '" + name + "'");
  const std::string value = req.get_param_value(name);
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size() || v < 0 || v > 0xffffffffLL) throw std::out_of_range(value);
    return static_cast<std::uint32_t>(v);
  } catch (const std::exception&) {
    throw invalid("query parameter '" + name + "' must be a non-negative integer, got '" + value + "'");
  }
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.code(), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

Json segmentation_json(const Segmentation& s) { return s; }

}  // namespace

void Service::register_routes(httplib::Server& server) {
  const std::string origin = impl_->options.cors_origin;
  server.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.body.empty()) {
      send_error(res, res.status, res.status == 404 ? "not_found" : "error",
                 res.status == 404 ? "no route for " + req.method + " " + req.path : "request failed");
    }
  });

  server.Get("/v1/shapes", guarded([this](const httplib::Request&, httplib::Response& res) {
               Json list = Json::array();
               for (const auto& id : shape_ids()) {
                 auto s = session(id);
                 std::shared_lock lock(s->mutex);
                 list.push_back({{"shape_id", id},
                                 {"faces", s->shape.mesh.num_faces()},
                                 {"has_features", s->snapshot != nullptr},
                                 {"has_labels", s->labels.has_value()}});
               }
               send_json(res, Json{{"shapes", list}});
             }));

  server.Post("/v1/shapes", guarded([this](const httplib::Request& req, httplib::Response& res) {
                std::string obj;
                std::optional<LabelSet> labels;
                if (req.is_multipart_form_data()) {
                  if (!req.has_file("mesh")) throw invalid("multipart upload needs a 'mesh' part");
                  obj = req.get_file_value("mesh").content;
                  if (req.has_file("labels")) {
                    labels = translate([&] { return Json::parse(req.get_file_value("labels").content).get<LabelSet>(); });
                  }
                } else {
                  obj = req.body;
                }
                send_json(res, Json{{"shape_id", add_shape(std::move(obj), std::move(labels))}}, 201);
              }));

  server.Get(R"(/v1/shapes/([^/]+)/mesh)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               res.set_content(encode_mesh(session(req.matches[1])->shape.mesh), "application/octet-stream");
             }));

  server.Post(R"(/v1/shapes/([^/]+)/features)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                set_features(req.matches[1], req.body);
                res.status = 204;
              }));

  server.Post(R"(/v1/shapes/([^/]+)/fit)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const std::string id = req.matches[1];
                session(id);
                const Json body = req.body.empty() ? Json::object() : parse_body(req);
                FitConfig config;
                std::optional<LabelSet> labels;
                translate([&] {
                  config = body.contains("config") ? body.at("config").get<FitConfig>() : body.get<FitConfig>();
                  if (body.contains("labels")) labels = body.at("labels").get<LabelSet>();
                });
                send_json(res, Json{{"job_id", submit_fit(id, config, std::move(labels))}}, 202);
              }));

  server.Get(R"(/v1/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto st = job(req.matches[1]);
               Json body{{"job_id", st.id},
                         {"shape_id", st.shape_id},
                         {"status", st.status},
                         {"iteration", st.iteration},
                         {"iterations", st.iterations},
                         {"loss", st.loss ? Json(*st.loss) : Json(nullptr)}};
               if (!st.error.empty()) body["error"] = st.error;
               send_json(res, body);
             }));

  server.Get(R"(/v1/shapes/([^/]+)/similarity)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const std::string target = req.has_param("target") ? req.get_param_value("target") : "";
               send_json(res, Json{{"values", similarity(req.matches[1], uint_param(req, "face"), target)}});
             }));

  server.Get(R"(/v1/shapes/([^/]+)/segment)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, segmentation_json(segment(req.matches[1], uint_param(req, "k"))));
             }));

  server.Get(R"(/v1/shapes/([^/]+)/hierarchy)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, Json(snapshot(req.matches[1])->tree));
             }));

  server.Get(R"(/v1/shapes/([^/]+)/annotations)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               Json list = Json::array();
               for (const auto& [face, cls] : annotations(req.matches[1])) {
                 list.push_back({{"face", face}, {"class", cls}});
               }
               send_json(res, Json{{"annotations", list}});
             }));

  server.Post(R"(/v1/shapes/([^/]+)/annotations)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const std::string id = req.matches[1];
                session(id);
                const Json body = parse_body(req);
                std::uint32_t face = 0;
                int cls = 0;
                translate([&] {
                  face = body.at("face").get<std::uint32_t>();
                  cls = body.at("class").get<int>();
                });
                annotate(id, face, cls);
                res.status = 204;
              }));

  server.Delete(R"(/v1/shapes/([^/]+)/annotations)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  std::optional<std::uint32_t> face;
                  if (req.has_param("face")) face = uint_param(req, "face");
                  remove_annotation(req.matches[1], face);
                  res.status = 204;
                }));

  server.Get(R"(/v1/shapes/([^/]+)/coseg)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const std::string target = req.has_param("target") ? req.get_param_value("target") : "";
               send_json(res, segmentation_json(coseg(req.matches[1], target)));
             }));
}

}  // namespace partfield
