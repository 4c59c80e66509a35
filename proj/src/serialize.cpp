#include "partfield/serialize.hpp"

#include <fstream>
#include <sstream>

namespace partfield {

void to_json(Json& j, const Vec3& v) { j = Json::array({v.x, v.y, v.z}); }

void from_json(const Json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-element array");
  v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void to_json(Json& j, const Camera& c) {
  j = Json{{"position", c.position}, {"target", c.target}, {"up", c.up},
           {"fov_y", c.fov_y},       {"rows", c.rows},     {"cols", c.cols}};
}

void from_json(const Json& j, Camera& c) {
  c = Camera{};
  if (j.contains("position")) c.position = j.at("position").get<Vec3>();
  if (j.contains("target")) c.target = j.at("target").get<Vec3>();
  if (j.contains("up")) c.up = j.at("up").get<Vec3>();
  c.fov_y = j.value("fov_y", c.fov_y);
  c.rows = j.value("rows", c.rows);
  c.cols = j.value("cols", c.cols);
  c.validate();
}

void to_json(Json& j, const SamplerConfig& c) {
  j = Json{{"masks_per_batch", c.masks_per_batch},
           {"positive_pairs", c.positive_pairs},
           {"uniform_negatives", c.uniform_negatives},
           {"hard3d_negatives", c.hard3d_negatives},
           {"feature_hard_negatives", c.feature_hard_negatives},
           {"feature_temperature", c.feature_temperature},
           {"candidate_pool", c.candidate_pool},
           {"seed", c.seed}};
}

void from_json(const Json& j, SamplerConfig& c) {
  c = SamplerConfig{};
  c.masks_per_batch = j.value("masks_per_batch", c.masks_per_batch);
  c.positive_pairs = j.value("positive_pairs", c.positive_pairs);
  c.uniform_negatives = j.value("uniform_negatives", c.uniform_negatives);
  c.hard3d_negatives = j.value("hard3d_negatives", c.hard3d_negatives);
  c.feature_hard_negatives = j.value("feature_hard_negatives", c.feature_hard_negatives);
  c.feature_temperature = j.value("feature_temperature", c.feature_temperature);
  c.candidate_pool = j.value("candidate_pool", c.candidate_pool);
  c.seed = j.value("seed", c.seed);
}

void to_json(Json& j, const AdamConfig& c) {
  j = Json{{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}};
}

void from_json(const Json& j, AdamConfig& c) {
  c = AdamConfig{};
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
}

void to_json(Json& j, const FitConfig& c) {
  j = Json{{"iterations", c.iterations},
           {"adam", c.adam},
           {"sampler", c.sampler},
           {"feature_hard_start", c.feature_hard_start},
           {"seed", c.seed},
           {"snapshot_period", c.snapshot_period},
           {"resolution", c.resolution},
           {"channels", c.channels},
           {"init_scale", c.init_scale},
           {"learn_temperature", c.loss.learn_temperature},
           {"log_floor", c.loss.log_floor}};
}

void from_json(const Json& j, FitConfig& c) {
  c = FitConfig{};
  c.iterations = j.value("iterations", c.iterations);
  if (j.contains("adam")) c.adam = j.at("adam").get<AdamConfig>();
  if (j.contains("sampler")) c.sampler = j.at("sampler").get<SamplerConfig>();
  c.feature_hard_start = j.value("feature_hard_start", c.feature_hard_start);
  c.seed = j.value("seed", c.seed);
  c.snapshot_period = j.value("snapshot_period", c.snapshot_period);
  c.resolution = j.value("resolution", c.resolution);
  c.channels = j.value("channels", c.channels);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.loss.learn_temperature = j.value("learn_temperature", c.loss.learn_temperature);
  c.loss.log_floor = j.value("log_floor", c.loss.log_floor);
}

void to_json(Json& j, const FitReport& r) {
  Json loss = Json::array();
  for (const auto& s : r.snapshots) loss.push_back({{"iteration", s.iteration}, {"loss", s.loss}});
  j = Json{{"iterations", r.iterations},           {"wall_clock_seconds", r.wall_clock_seconds},
           {"final_temperature", r.final_temperature}, {"rejected_steps", r.rejected_steps},
           {"warnings", r.warnings},               {"loss", loss}};
}

void to_json(Json& j, const Segmentation& s) { j = Json{{"k", s.k}, {"labels", s.labels}}; }

void from_json(const Json& j, Segmentation& s) {
  s = make_segmentation(j.at("labels").get<std::vector<int>>());
  if (j.contains("k") && j.at("k").get<std::uint32_t>() != s.k) {
    throw std::invalid_argument("segmentation k does not match its labels");
  }
}

void to_json(Json& j, const MergeTree& t) {
  Json nodes = Json::array();
  for (std::size_t i = t.leaf_count; i < t.nodes.size(); ++i) {
    const auto& n = t.nodes[i];
    nodes.push_back({{"id", i},
                     {"left", n.left},
                     {"right", n.right},
                     {"cost", n.cost},
                     {"count", n.count},
                     {"constrained", n.constrained}});
  }
  j = Json{{"leaf_count", t.leaf_count}, {"merges", nodes}};
}

void to_json(Json& j, const MiouReport& r) {
  Json parts = Json::array();
  for (const auto& p : r.parts) {
    parts.push_back({{"gt_part", p.gt_part}, {"best_pred_part", p.best_pred_part}, {"gt_size", p.gt_size},
                     {"iou", p.iou}});
  }
  j = Json{{"miou", r.miou}, {"parts", parts}};
}

void to_json(Json& j, const EvaluationSummary& s) {
  j = Json{{"mean", s.mean}, {"per_category", s.per_category}, {"per_group", s.per_group}};
}

void to_json(Json& j, const TriplaneField& f) {
  j = Json{{"resolution", f.resolution},
           {"channels", f.channels},
           {"log_temperature", f.log_temperature},
           {"params", f.params}};
}

void to_json(Json& j, const FeatureSet& f) {
  j = Json{{"kind", f.kind == ElementKind::face ? "face" : "point"},
           {"count", f.count},
           {"dim", f.dim},
           {"data", f.data}};
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<int> read_face_labels(const Json& j) {
  if (j.is_array()) return j.get<std::vector<int>>();
  return j.at("labels").get<std::vector<int>>();
}

std::vector<MaskEntry> parse_mask_manifest(const Json& j, const std::filesystem::path& base) {
  if (!j.is_array()) throw std::invalid_argument("mask manifest must be a list");
  std::vector<MaskEntry> out;
  for (const auto& e : j) {
    MaskEntry m;
    m.mask = e.at("mask").get<std::string>();
    if (m.mask.is_relative()) m.mask = base / m.mask;
    m.camera = e.at("camera").get<Camera>();
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace partfield
