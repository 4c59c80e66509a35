#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "partfield/analysis.hpp"
#include "partfield/clustering.hpp"
#include "partfield/loss.hpp"
#include "partfield/pipeline.hpp"

namespace httplib {
class Server;
}

namespace partfield {

/// Error surfaced to HTTP clients as {"code", "message"} with `status`.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

/// Everything derived from one field or feature upload. Immutable once
/// published; readers hold a shared_ptr to whichever snapshot was current.
struct SessionSnapshot {
  std::shared_ptr<const TriplaneField> field;  // null when features were uploaded directly
  FeatureSet face_features;
  MergeTree tree;
};

struct ShapeSession {
  std::string id;
  std::string mesh_source;  // OBJ text as uploaded
  PreparedShape shape;
  std::optional<LabelSet> labels;

  mutable std::shared_mutex mutex;
  std::shared_ptr<const SessionSnapshot> snapshot;  // guarded by mutex
  std::map<std::uint32_t, int> annotations;         // face -> class, guarded by mutex
};

struct ServiceOptions {
  std::size_t canonical_points = kDefaultCanonicalPoints;
  std::uint64_t seed = 0;
  std::uint32_t samples_per_face = 11;
  std::optional<std::filesystem::path> data_dir;
  std::string cors_origin = "*";
};

/// Reads PARTFIELD_DATA_DIR into `data_dir` when set.
ServiceOptions options_from_environment(ServiceOptions base = {});

struct JobStatus {
  std::string id;
  std::string shape_id;
  std::string status;  // queued | running | done | failed
  std::uint32_t iteration = 0;
  std::uint32_t iterations = 0;
  std::optional<double> loss;
  std::string error;
};

/// Shape sessions, a FIFO fit queue drained by one worker thread, and the
/// /v1 HTTP routes over them.
class Service {
 public:
  explicit Service(ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void register_routes(httplib::Server& server);

  std::string add_shape(std::string obj_text, std::optional<LabelSet> labels = {});
  std::vector<std::string> shape_ids() const;
  std::shared_ptr<ShapeSession> session(const std::string& id) const;

  void set_features(const std::string& id, std::string_view payload);
  std::string submit_fit(const std::string& id, const FitConfig& config, std::optional<LabelSet> labels = {});
  JobStatus job(const std::string& id) const;
  /// Blocks until every queued job has finished.
  void wait_idle();

  std::vector<float> similarity(const std::string& id, std::uint32_t face, const std::string& target = {}) const;
  Segmentation segment(const std::string& id, std::uint32_t k) const;
  std::shared_ptr<const SessionSnapshot> snapshot(const std::string& id) const;

  void annotate(const std::string& id, std::uint32_t face, int cls);
  void remove_annotation(const std::string& id, std::optional<std::uint32_t> face);
  std::map<std::uint32_t, int> annotations(const std::string& id) const;
  Segmentation coseg(const std::string& id, const std::string& target = {}) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace partfield
