#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>

#include "partfield/analysis.hpp"
#include "partfield/clustering.hpp"
#include "partfield/fixtures.hpp"
#include "partfield/loss.hpp"
#include "partfield/pipeline.hpp"
#include "partfield/random.hpp"
#include "partfield/serialize.hpp"
#include "partfield/service.hpp"

namespace fs = std::filesystem;
using namespace partfield;

namespace {

struct ShapeArgs {
  std::string mesh;
  std::size_t points = kDefaultCanonicalPoints;
  std::uint64_t seed = 0;
};

void add_shape_options(CLI::App* cmd, ShapeArgs& args, const std::string& prefix = "") {
  const std::string flag = prefix.empty() ? "" : "--" + prefix + "-";
  if (prefix.empty()) {
    cmd->add_option("mesh", args.mesh, "Input mesh (OBJ)")->required()->check(CLI::ExistingFile);
  } else {
    cmd->add_option(flag + "mesh", args.mesh, prefix + " mesh (OBJ)")->required()->check(CLI::ExistingFile);
  }
}

PreparedShape load_shape(const ShapeArgs& args) {
  return prepare_shape(load_mesh(args.mesh), args.points, derive_seed(args.seed, 3));
}

void write_output(const Json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(j, path);
  }
}

// ---- fit ------------------------------------------------------------------

struct FitArgs {
  ShapeArgs shape;
  std::string proposals;
  std::string config;
  std::string output;
  std::string report;
  std::optional<std::uint32_t> iterations;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

int run_fit(const FitArgs& a) {
  FitConfig config;
  if (!a.config.empty()) config = read_json(a.config).get<FitConfig>();
  if (a.iterations) config.iterations = *a.iterations;
  if (a.seed) config.seed = *a.seed;
  ShapeArgs shape_args = a.shape;
  shape_args.seed = config.seed;
  const Json manifest = read_json(a.proposals);
  const auto shape = load_shape(shape_args);
  const auto proposals =
      proposals_from_manifest(manifest, fs::path(a.proposals).parent_path(), shape, fs::path(a.shape.mesh).stem());
  auto result = fit_field(shape.points, proposals, config, [&](std::uint32_t it, const TriplaneField&, double loss) {
    if (a.verbose) std::fprintf(stderr, "iteration %u loss %.6f\n", it, loss);
  });
  save_field(result.field, a.output);
  write_json(Json(result.report), a.report.empty() ? a.output + ".report.json" : a.report);
  for (const auto& w : result.report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

// ---- segment / hierarchy -------------------------------------------------

struct FeatureArgs {
  ShapeArgs shape;
  std::string features;
  std::uint32_t samples_per_face = 11;
};

void add_feature_options(CLI::App* cmd, FeatureArgs& args) {
  add_shape_options(cmd, args.shape);
  cmd->add_option("--features,--field", args.features, "PFLD field or PFTS feature file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--points", args.shape.points, "Canonical point count used for point features");
  cmd->add_option("--seed", args.shape.seed, "Seed for point and face sampling");
  cmd->add_option("--samples-per-face", args.samples_per_face, "Field samples averaged per face (incl. centroid)");
}

FeatureSet features_for(const FeatureArgs& a, const PreparedShape& shape) {
  return load_face_features(a.features, shape, a.samples_per_face, derive_seed(a.shape.seed, 4));
}

struct SegmentArgs {
  FeatureArgs in;
  std::optional<std::uint32_t> k;
  std::optional<std::uint32_t> scales;
  std::string output;
};

int run_segment(const SegmentArgs& a) {
  const auto shape = load_shape(a.in.shape);
  const auto tree = agglomerate(features_for(a.in, shape), shape.mesh.face_adjacency);
  if (a.k) {
    write_output(Json(cut_tree(tree, *a.k)), a.output);
    return 0;
  }
  std::vector<std::uint32_t> ks;
  for (std::uint32_t i = 0; i < a.scales.value_or(20); ++i) ks.push_back(2 + i);
  Json list = Json::array();
  for (const auto& s : multi_scale(tree, ks)) list.push_back(s);
  write_output(list, a.output);
  return 0;
}

int run_hierarchy(const FeatureArgs& a, const std::string& output) {
  const auto shape = load_shape(a.shape);
  write_output(Json(agglomerate(features_for(a, shape), shape.mesh.face_adjacency)), output);
  return 0;
}

// ---- eval -------------------------------------------------------------------

std::vector<Segmentation> read_predictions(const Json& j) {
  std::vector<Segmentation> out;
  if (j.is_array() && !j.empty() && j.front().is_object()) {
    for (const auto& s : j) out.push_back(s.get<Segmentation>());
  } else {
    out.push_back(make_segmentation(read_face_labels(j)));
  }
  return out;
}

Json evaluate_one(const std::vector<int>& gt, const Json& pred_json) {
  const auto preds = read_predictions(pred_json);
  const auto [best, score] = best_of_scales(gt, preds);
  Json report = miou(gt, preds[best].labels);
  if (pred_json.is_array() && !pred_json.empty() && pred_json.front().is_object()) {
    Json scores = Json::array();
    for (const auto& p : preds) scores.push_back({{"k", p.k}, {"miou", miou(gt, p.labels).miou}});
    report["best_index"] = best;
    report["best_k"] = preds[best].k;
    report["scales"] = scores;
  }
  return report;
}

struct EvalArgs {
  std::string gt;
  std::string pred;
  std::string batch;
  std::string output;
};

int run_eval(const EvalArgs& a) {
  if (!a.batch.empty()) {
    const Json manifest = read_json(a.batch);
    const fs::path base = fs::path(a.batch).parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() ? base / p : fs::path(p); };
    std::vector<ShapeScore> scores;
    Json shapes = Json::array();
    for (const auto& e : manifest) {
      const auto gt = read_face_labels(read_json(resolve(e.at("gt").get<std::string>())));
      Json r = evaluate_one(gt, read_json(resolve(e.at("pred").get<std::string>())));
      ShapeScore s{e.value("shape_id", std::string{}), e.value("category", std::string{}), r.at("miou").get<double>()};
      scores.push_back(s);
      r["shape_id"] = s.shape_id;
      r["category"] = s.category;
      shapes.push_back(std::move(r));
    }
    Json out = summarize(scores);
    out["shapes"] = shapes;
    write_output(out, a.output);
    std::fprintf(stderr, "mean mIoU %.6f over %zu shapes\n", out.at("mean").get<double>(), scores.size());
    return 0;
  }
  if (a.gt.empty() || a.pred.empty()) throw std::invalid_argument("eval needs --gt and --pred, or --batch");
  const auto gt = read_face_labels(read_json(a.gt));
  const Json report = evaluate_one(gt, read_json(a.pred));
  write_output(report, a.output);
  std::fprintf(stderr, "mIoU %.6f\n", report.at("miou").get<double>());
  return 0;
}

// ---- cross-shape --------------------------------------------------------

struct PairArgs {
  FeatureArgs source;
  FeatureArgs target;
  std::string source_seg;
  std::string output;
};

void add_pair_options(CLI::App* cmd, PairArgs& a) {
  cmd->add_option("--source-mesh", a.source.shape.mesh, "Source mesh")->required()->check(CLI::ExistingFile);
  cmd->add_option("--source-features", a.source.features, "Source PFLD/PFTS")->required()->check(CLI::ExistingFile);
  cmd->add_option("--target-mesh", a.target.shape.mesh, "Target mesh")->required()->check(CLI::ExistingFile);
  cmd->add_option("--target-features", a.target.features, "Target PFLD/PFTS")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", a.output, "Output JSON (stdout when omitted)");
}

std::pair<PreparedShape, FeatureSet> load_pair_side(const FeatureArgs& a) {
  auto shape = load_shape(a.shape);
  auto features = features_for(a, shape);
  return {std::move(shape), std::move(features)};
}

int run_coseg(const PairArgs& a) {
  const auto [src_shape, src] = load_pair_side(a.source);
  const auto [dst_shape, dst] = load_pair_side(a.target);
  const Segmentation seg = make_segmentation(read_face_labels(read_json(a.source_seg)));
  if (seg.labels.size() != src.count) throw std::invalid_argument("source segmentation does not cover the source faces");
  write_output(Json(cosegment(seg.canonical(), src, dst)), a.output);
  return 0;
}

int run_correspond(const PairArgs& a) {
  const auto [src_shape, src] = load_pair_side(a.source);
  const auto [dst_shape, dst] = load_pair_side(a.target);
  write_output(Json{{"map", nn_correspondence(src, dst)}}, a.output);
  return 0;
}

// ---- proposals ------------------------------------------------------------

struct ProjectArgs {
  ShapeArgs shape;
  std::string masks;
  std::string output;
};

int run_project(const ProjectArgs& a) {
  const auto shape = load_shape(a.shape);
  const auto proposals = proposals_from_masks(parse_mask_manifest(read_json(a.masks), fs::path(a.masks).parent_path()),
                                              shape, fs::path(a.shape.mesh).stem());
  Json list = Json::array();
  for (const auto& p : proposals) {
    list.push_back({{"view", p.view}, {"members", p.members}, {"visible", p.visible}});
  }
  write_output(Json{{"element_count", shape.points.size()}, {"proposals", list}}, a.output);
  return 0;
}

// ---- fixture ------------------------------------------------------------

int run_fixture(const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  const auto fixture = fixtures::make_dumbbell();
  save_obj(fixture.mesh, dir / "dumbbell.obj");
  save_label_set(LabelSet{{"parts"}, {fixture.face_labels}}, dir / "dumbbell_labels.json");
  write_json(Json{{"labels", fixture.face_labels}}, dir / "dumbbell_gt.json");
  write_json(Json{{"labels3d", "dumbbell_labels.json"}}, dir / "proposals_3d.json");
  write_json(Json{{"synthetic_masks", {{"labels", "dumbbell_labels.json"}, {"views", 6}, {"resolution", 128}}}},
             dir / "proposals_2d.json");
  FitConfig config;
  config.resolution = 64;
  config.channels = 32;
  write_json(Json(config), dir / "fit_config.json");
  std::fprintf(stderr, "wrote dumbbell fixture (%zu faces) to %s\n", fixture.mesh.num_faces(), out_dir.c_str());
  return 0;
}

// ---- serve ----------------------------------------------------------------

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server != nullptr) g_server->stop();
}

int run_serve(const std::string& host, int port, std::size_t points, const std::string& data_dir) {
  ServiceOptions options = options_from_environment();
  options.canonical_points = points;
  if (!data_dir.empty()) options.data_dir = data_dir;
  Service service(options);
  httplib::Server server;
  service.register_routes(server);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::fprintf(stderr, "listening on http://%s:%d/v1\n", host.c_str(), port);
  if (!server.listen(host, port)) {
    std::fprintf(stderr, "error: cannot listen on %s:%d\n", host.c_str(), port);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part feature fields: fit, segment, evaluate and serve"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a triplane feature field to part proposals");
  add_shape_options(fit_cmd, fit.shape);
  fit_cmd->add_option("--proposals", fit.proposals, "Proposals manifest JSON")->required();
  fit_cmd->add_option("--config", fit.config, "FitConfig JSON")->check(CLI::ExistingFile);
  fit_cmd->add_option("-o,--output", fit.output, "Output PFLD path")->required();
  fit_cmd->add_option("--report", fit.report, "FitReport JSON path (default: <output>.report.json)");
  fit_cmd->add_option("--iterations", fit.iterations, "Override the configured iteration count");
  fit_cmd->add_option("--seed", fit.seed, "Override the configured seed");
  fit_cmd->add_option("--points", fit.shape.points, "Canonical surface point count");
  fit_cmd->add_flag("-v,--verbose", fit.verbose, "Print the loss at every snapshot");

  SegmentArgs seg;
  auto* seg_cmd = app.add_subcommand("segment", "Cut the merge tree of the face features");
  add_feature_options(seg_cmd, seg.in);
  auto* k_opt = seg_cmd->add_option("--k", seg.k, "Number of parts");
  seg_cmd->add_option("--scales", seg.scales, "Emit this many cuts, k = 2, 3, ...")->excludes(k_opt);
  seg_cmd->add_option("-o,--output", seg.output, "Output JSON (stdout when omitted)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Class-agnostic mIoU against ground truth");
  eval_cmd->add_option("--gt", ev.gt, "Ground truth JSON {\"labels\": [...]}");
  eval_cmd->add_option("--pred", ev.pred, "Segmentation JSON or a list of them");
  eval_cmd->add_option("--batch", ev.batch, "List of {shape_id, category, gt, pred} for a grouped summary");
  eval_cmd->add_option("-o,--output", ev.output, "Output JSON (stdout when omitted)");

  PairArgs coseg;
  auto* coseg_cmd = app.add_subcommand("coseg", "Carry a source segmentation onto a target shape");
  add_pair_options(coseg_cmd, coseg);
  coseg_cmd->add_option("--source-seg", coseg.source_seg, "Source segmentation JSON")
      ->required()
      ->check(CLI::ExistingFile);

  PairArgs corr;
  auto* corr_cmd = app.add_subcommand("correspond", "Nearest-feature face correspondence");
  add_pair_options(corr_cmd, corr);

  FeatureArgs hier;
  std::string hier_out;
  auto* hier_cmd = app.add_subcommand("hierarchy", "Emit the merge tree as JSON");
  add_feature_options(hier_cmd, hier);
  hier_cmd->add_option("-o,--output", hier_out, "Output JSON (stdout when omitted)");

  ProjectArgs project;
  auto* prop_cmd = app.add_subcommand("proposals", "Part proposal utilities");
  prop_cmd->require_subcommand(1);
  auto* project_cmd = prop_cmd->add_subcommand("project", "Back-project 2D masks onto canonical points");
  add_shape_options(project_cmd, project.shape);
  project_cmd->add_option("--masks", project.masks, "Mask manifest JSON")->required()->check(CLI::ExistingFile);
  project_cmd->add_option("--points", project.shape.points, "Canonical surface point count");
  project_cmd->add_option("--seed", project.shape.seed, "Point sampling seed");
  project_cmd->add_option("-o,--output", project.output, "Output JSON (stdout when omitted)");

  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t serve_points = kDefaultCanonicalPoints;
  std::string data_dir;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port");
  serve_cmd->add_option("--points", serve_points, "Canonical surface point count per shape");
  serve_cmd->add_option("--data-dir", data_dir, "Session persistence directory (default: $PARTFIELD_DATA_DIR)");

  std::string fixture_name;
  std::string fixture_dir = ".";
  auto* fixture_cmd = app.add_subcommand("fixture", "Write a synthetic test shape with labels");
  fixture_cmd->add_option("name", fixture_name, "Fixture name")->required()->check(CLI::IsMember({"dumbbell"}));
  fixture_cmd->add_option("--out-dir", fixture_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit_cmd) return run_fit(fit);
    if (*seg_cmd) {
      if (!seg.k && !seg.scales) throw std::invalid_argument("segment needs --k or --scales");
      return run_segment(seg);
    }
    if (*eval_cmd) return run_eval(ev);
    if (*coseg_cmd) return run_coseg(coseg);
    if (*corr_cmd) return run_correspond(corr);
    if (*hier_cmd) return run_hierarchy(hier, hier_out);
    if (*project_cmd) return run_project(project);
    if (*serve_cmd) return run_serve(host, port, serve_points, data_dir);
    if (*fixture_cmd) return run_fixture(fixture_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
