#include "partfield/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace partfield {

MiouReport miou(std::span<const int> gt, std::span<const int> pred) {
  if (gt.size() != pred.size()) {
    throw AnalysisError("label length mismatch: gt " + std::to_string(gt.size()) + " vs pred " +
                        std::to_string(pred.size()));
  }
  if (gt.empty()) throw AnalysisError("empty labelling");
  std::map<int, std::uint32_t> gt_size, pred_size;
  std::map<std::pair<int, int>, std::uint32_t> inter;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    ++gt_size[gt[i]];
    ++pred_size[pred[i]];
    ++inter[{gt[i], pred[i]}];
  }
  MiouReport report;
  double sum = 0.0;
  for (const auto& [g, gs] : gt_size) {
    PartIoU part{g, pred_size.begin()->first, gs, 0.0};
    for (const auto& [p, ps] : pred_size) {
      const auto it = inter.find({g, p});
      const std::uint32_t i = it == inter.end() ? 0 : it->second;
      const double iou = static_cast<double>(i) / static_cast<double>(gs + ps - i);
      if (iou > part.iou) {
        part.iou = iou;
        part.best_pred_part = p;
      }
    }
    sum += part.iou;
    report.parts.push_back(part);
  }
  report.miou = sum / static_cast<double>(report.parts.size());
  return report;
}

std::pair<std::size_t, double> best_of_scales(std::span<const int> gt, std::span<const Segmentation> segs) {
  if (segs.empty()) throw AnalysisError("no segmentations to choose from");
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const double score = miou(gt, segs[i].labels).miou;
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return {best, best_score};
}

namespace {

double row_cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na <= 1e-12 || nb <= 1e-12) return 0.0;
  return std::clamp(ab / (na * nb), -1.0, 1.0);
}

void require_same_dim(const FeatureSet& a, const FeatureSet& b) {
  if (a.dim != b.dim) {
    throw AnalysisError("feature dimension mismatch: " + std::to_string(a.dim) + " vs " + std::to_string(b.dim));
  }
}

}  // namespace

std::vector<float> similarity_map(const FeatureSet& features, std::span<const float> anchor_feature) {
  if (anchor_feature.size() != features.dim) throw AnalysisError("anchor feature dimension mismatch");
  double n2 = 0.0;
  for (float v : anchor_feature) n2 += static_cast<double>(v) * v;
  if (std::sqrt(n2) <= 1e-12) throw AnalysisError("degenerate (zero) anchor feature");
  std::vector<float> out(features.count);
  for (std::size_t i = 0; i < features.count; ++i) {
    out[i] = static_cast<float>(row_cosine(features.row(i), anchor_feature));
  }
  return out;
}

std::vector<float> similarity_map(const FeatureSet& features, std::uint32_t anchor) {
  if (anchor >= features.count) throw AnalysisError("anchor " + std::to_string(anchor) + " out of range");
  return similarity_map(features, features.row(anchor));
}

std::vector<float> similarity_map(const FeatureSet& source, std::uint32_t anchor, const FeatureSet& target) {
  require_same_dim(source, target);
  if (anchor >= source.count) throw AnalysisError("anchor " + std::to_string(anchor) + " out of range");
  return similarity_map(target, source.row(anchor));
}

std::vector<float> part_means(const Segmentation& seg, const FeatureSet& features) {
  if (seg.labels.size() != features.count) throw AnalysisError("segmentation does not cover the feature set");
  const std::size_t dim = features.dim;
  std::vector<double> sums(static_cast<std::size_t>(seg.k) * dim, 0.0);
  std::vector<std::size_t> counts(seg.k, 0);
  for (std::size_t i = 0; i < seg.labels.size(); ++i) {
    const int l = seg.labels[i];
    if (l < 0 || static_cast<std::uint32_t>(l) >= seg.k) throw AnalysisError("segmentation labels are not dense");
    ++counts[l];
    const auto row = features.row(i);
    for (std::size_t c = 0; c < dim; ++c) sums[l * dim + c] += row[c];
  }
  std::vector<float> means(sums.size());
  for (std::size_t l = 0; l < seg.k; ++l) {
    for (std::size_t c = 0; c < dim; ++c) {
      means[l * dim + c] = counts[l] ? static_cast<float>(sums[l * dim + c] / counts[l]) : 0.0f;
    }
  }
  return means;
}

Segmentation cosegment(const Segmentation& source_seg, const FeatureSet& source_features,
                       const FeatureSet& target_features) {
  require_same_dim(source_features, target_features);
  // means of unit-normalized features, matching the k-means geometry
  const auto means = part_means(source_seg, unit_normalized(source_features));
  return kmeans(target_features, source_seg.k, KMeansInit::seeded, 0, means).segmentation;
}

std::vector<std::uint32_t> nn_correspondence(const FeatureSet& source, const FeatureSet& target) {
  require_same_dim(source, target);
  if (target.count == 0) throw AnalysisError("empty target feature set");
  const FeatureSet s = unit_normalized(source);
  const FeatureSet t = unit_normalized(target);
  std::vector<std::uint32_t> out(s.count);
  for (std::size_t i = 0; i < s.count; ++i) {
    const auto a = s.row(i);
    double best = -std::numeric_limits<double>::infinity();
    std::uint32_t best_j = 0;
    for (std::uint32_t j = 0; j < t.count; ++j) {
      const auto b = t.row(j);
      double d = 0.0;
      for (std::size_t c = 0; c < a.size(); ++c) d += static_cast<double>(a[c]) * b[c];
      if (d > best) {
        best = d;
        best_j = j;
      }
    }
    out[i] = best_j;
  }
  return out;
}

std::vector<int> transfer_point_labels_to_faces(const TriMesh& mesh, const PointSet& points,
                                                std::span<const int> point_labels) {
  if (point_labels.size() != points.size()) throw AnalysisError("point label count mismatch");
  if (points.empty()) throw AnalysisError("no points to transfer labels from");
  const PointIndex index(points.points);
  std::vector<int> out(mesh.num_faces());
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) out[f] = point_labels[index.nearest(mesh.centroid(f)).first];
  return out;
}

// ---- logistic regression ------------------------------------------------

namespace {

double log1p_exp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct BinaryProblem {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  double lambda;

  double objective(std::span<const double> w, double b) const {
    double f = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double z = b;
      for (std::size_t c = 0; c < w.size(); ++c) z += w[c] * x[i][c];
      f += log1p_exp(-y[i] * z);
    }
    f /= static_cast<double>(x.size());
    double w2 = 0.0;
    for (double v : w) w2 += v * v;
    return f + 0.5 * lambda * w2;
  }

  // gradient w.r.t. (w..., b); returns objective
  double gradient(std::span<const double> w, double b, std::vector<double>& g) const {
    const std::size_t d = w.size();
    g.assign(d + 1, 0.0);
    double f = 0.0;
    const double inv_m = 1.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      double z = b;
      for (std::size_t c = 0; c < d; ++c) z += w[c] * x[i][c];
      f += log1p_exp(-y[i] * z);
      const double coef = -y[i] * sigmoid(-y[i] * z) * inv_m;
      for (std::size_t c = 0; c < d; ++c) g[c] += coef * x[i][c];
      g[d] += coef;
    }
    double w2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      g[c] += lambda * w[c];
      w2 += w[c] * w[c];
    }
    return f * inv_m + 0.5 * lambda * w2;
  }
};

double norm2(const std::vector<double>& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

}  // namespace

double logreg_objective(const FeatureSet& features, std::span<const Annotation> annotations, int cls,
                        std::span<const double> w, double b, double lambda) {
  BinaryProblem problem{{}, {}, lambda};
  for (const auto& a : annotations) {
    const auto row = features.row(a.element);
    problem.x.emplace_back(row.begin(), row.end());
    problem.y.push_back(a.label == cls ? 1.0 : -1.0);
  }
  return problem.objective(w, b);
}

LogRegModel fit_logreg(const FeatureSet& features, std::span<const Annotation> annotations,
                       const LogRegOptions& options) {
  std::map<std::uint32_t, int> seen;
  for (const auto& a : annotations) {
    if (a.element >= features.count) {
      throw AnalysisError("annotation references element " + std::to_string(a.element) + " out of range");
    }
    auto [it, inserted] = seen.try_emplace(a.element, a.label);
    if (!inserted && it->second != a.label) {
      throw AnalysisError("conflicting annotations on element " + std::to_string(a.element));
    }
  }
  std::set<int> classes;
  for (const auto& a : annotations) classes.insert(a.label);
  if (classes.size() < 2) throw AnalysisError("logistic regression needs at least two annotated classes");

  LogRegModel model;
  model.classes.assign(classes.begin(), classes.end());
  model.dim = features.dim;
  model.lambda = options.lambda;
  const std::size_t d = features.dim;
  model.weights.assign(model.classes.size() * d, 0.0);
  model.bias.assign(model.classes.size(), 0.0);

  BinaryProblem problem{{}, {}, options.lambda};
  // deduplicated annotations, in element order
  for (const auto& [element, label] : seen) {
    const auto row = features.row(element);
    problem.x.emplace_back(row.begin(), row.end());
  }

  for (std::size_t ci = 0; ci < model.classes.size(); ++ci) {
    problem.y.clear();
    for (const auto& [element, label] : seen) problem.y.push_back(label == model.classes[ci] ? 1.0 : -1.0);
    std::vector<double> w(d, 0.0), g, w_try(d);
    double b = 0.0;
    double step = 1.0;
    double f = problem.gradient(w, b, g);
    double gnorm = norm2(g);
    for (std::uint32_t it = 0; it < options.max_iterations && gnorm >= options.tolerance; ++it) {
      // Armijo backtracking
      double f_try = 0.0;
      while (true) {
        for (std::size_t c = 0; c < d; ++c) w_try[c] = w[c] - step * g[c];
        const double b_try = b - step * g[d];
        f_try = problem.objective(w_try, b_try);
        if (f_try <= f - 1e-4 * step * gnorm * gnorm || step < 1e-20) {
          b = b_try;
          break;
        }
        step *= 0.5;
      }
      w.swap(w_try);
      f = problem.gradient(w, b, g);
      gnorm = norm2(g);
      step *= 2.0;
    }
    std::copy(w.begin(), w.end(), model.weights.begin() + static_cast<std::ptrdiff_t>(ci * d));
    model.bias[ci] = b;
    model.max_gradient_norm = std::max(model.max_gradient_norm, gnorm);
  }
  return model;
}

std::vector<int> predict(const LogRegModel& model, const FeatureSet& features) {
  if (features.dim != model.dim) throw AnalysisError("feature dimension does not match the model");
  std::vector<int> out(features.count);
  const std::size_t d = model.dim;
  for (std::size_t i = 0; i < features.count; ++i) {
    const auto row = features.row(i);
    double best = -std::numeric_limits<double>::infinity();
    int best_class = model.classes.front();
    for (std::size_t ci = 0; ci < model.classes.size(); ++ci) {
      double z = model.bias[ci];
      for (std::size_t c = 0; c < d; ++c) z += model.weights[ci * d + c] * row[c];
      if (z > best) {
        best = z;
        best_class = model.classes[ci];
      }
    }
    out[i] = best_class;
  }
  return out;
}

// ---- dataset bookkeeping --------------------------------------------------

const std::vector<std::string>& partnete_group_names() {
  static const std::vector<std::string> names{
      "Electronics & Computing Devices", "Large Home Appliances", "Kitchen & Food-Related Items",
      "Furniture & Household Infrastructure", "Tools, Office Supplies, & Miscellaneous"};
  return names;
}

const std::map<std::string, std::string>& partnete_class_groups() {
  static const std::map<std::string, std::string> groups = [] {
    const auto& g = partnete_group_names();
    const std::vector<std::pair<std::size_t, std::vector<std::string>>> table{
        {0, {"Keyboard", "Mouse", "Laptop", "Phone", "Camera", "USB", "Display", "Remote", "Printer", "Switch"}},
        {1, {"WashingMachine", "Dishwasher", "Refrigerator", "Oven", "Microwave"}},
        {2, {"KitchenPot", "Kettle", "Toaster", "CoffeeMachine", "Faucet", "Dispenser", "Knife", "Bottle", "Bucket"}},
        {3, {"Table", "Chair", "FoldingChair", "StorageFurniture", "Door", "Window", "Lamp", "TrashCan", "Safe"}},
        {4,
         {"Stapler", "Scissors", "Pen", "Pliers", "Lighter", "Box", "Cart", "Globe", "Suitcase", "Eyeglasses",
          "Clock"}},
    };
    std::map<std::string, std::string> m;
    for (const auto& [group, names] : table) {
      for (const auto& name : names) m.emplace(name, g[group]);
    }
    return m;
  }();
  return groups;
}

EvaluationSummary summarize(std::span<const ShapeScore> scores) {
  EvaluationSummary out;
  if (scores.empty()) return out;
  std::map<std::string, std::pair<double, std::size_t>> cat;
  double total = 0.0;
  for (const auto& s : scores) {
    auto& [sum, n] = cat[s.category];
    sum += s.miou;
    ++n;
    total += s.miou;
  }
  out.mean = total / static_cast<double>(scores.size());
  std::map<std::string, std::pair<double, std::size_t>> grp;
  const auto& groups = partnete_class_groups();
  for (const auto& [name, sn] : cat) {
    const double mean = sn.first / static_cast<double>(sn.second);
    out.per_category[name] = mean;
    const auto it = groups.find(name);
    auto& [gs, gn] = grp[it == groups.end() ? std::string("Other") : it->second];
    gs += mean;
    ++gn;
  }
  for (const auto& [name, gn] : grp) out.per_group[name] = gn.first / static_cast<double>(gn.second);
  return out;
}

}  // namespace partfield
