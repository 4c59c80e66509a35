#include "partfield/loss.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace partfield {

CosineResult cosine_sim(std::span<const double> u, std::span<const double> v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu <= 1e-12 || nv <= 1e-12) return {0.0, true};
  return {std::clamp(uv / (nu * nv), -1.0, 1.0), false};
}

namespace {

double log_sum_exp(double first, std::span<const double> rest) {
  double top = first;
  for (double z : rest) top = std::max(top, z);
  double sum = std::exp(first - top);
  for (double z : rest) sum += std::exp(z - top);
  return top + std::log(sum);
}

// Unit-normalized rows plus the original norms.
struct UnitRows {
  std::size_t dim = 0;
  std::vector<double> unit;
  std::vector<double> norm;

  explicit UnitRows(const FeatureTable& table) : dim(table.dim), unit(table.values), norm(table.count()) {
    for (std::size_t r = 0; r < norm.size(); ++r) {
      double n2 = 0.0;
      for (std::size_t c = 0; c < dim; ++c) n2 += unit[r * dim + c] * unit[r * dim + c];
      const double n = std::sqrt(n2);
      if (!std::isfinite(n)) throw FitError("non-finite feature in loss evaluation");
      norm[r] = n;
      const double inv = n > 1e-12 ? 1.0 / n : 0.0;
      for (std::size_t c = 0; c < dim; ++c) unit[r * dim + c] *= inv;
    }
  }
  const double* row(std::size_t r) const { return unit.data() + r * dim; }
};

inline double dot_n(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Every (pair, negative) term of a batch, ordered by the negative's table row
// so each row is read once per pass.
struct TermIndex {
  std::vector<std::uint32_t> row_start;  // terms of row r: [row_start[r], row_start[r + 1])
  std::vector<std::uint32_t> pair;       // per term, in row order

  template <typename RowOf>
  TermIndex(const TripletBatch& batch, RowOf row_of, std::size_t rows) : row_start(rows + 1, 0) {
    std::size_t total = 0;
    for (const auto& p : batch.pairs) {
      if (p.negatives.empty()) throw FitError("pair without negatives");
      total += p.negatives.size();
      for (auto c : p.negatives) ++row_start[row_of(c) + 1];
    }
    for (std::size_t r = 0; r < rows; ++r) row_start[r + 1] += row_start[r];
    pair.resize(total);
    std::vector<std::uint32_t> fill(row_start.begin(), row_start.end() - 1);
    for (std::size_t p = 0; p < batch.pairs.size(); ++p) {
      for (auto c : batch.pairs[p].negatives) pair[fill[row_of(c)]++] = static_cast<std::uint32_t>(p);
    }
  }
};

struct CoreResult {
  double loss = 0.0;
  std::vector<double> feature_grad;  // per row, w.r.t. the raw (unnormalized) features
  double log_temperature_grad = 0.0;
};

// `row_of(id)` maps element ids to table rows.
//
// Cosines never exceed 1, so every logit z = x / tau is shifted by 1 / tau
// instead of by its running maximum; exp(z - 1/tau) >= exp(-2 / tau_min)
// stays far above the double underflow threshold.
template <typename RowOf>
CoreResult loss_core(const TripletBatch& batch, const FeatureTable& table, RowOf row_of, double tau,
                     const LossConfig& config, bool want_grad) {
  if (batch.pairs.empty()) throw FitError("empty triplet batch");
  if (!(tau > 0.0)) throw FitError("temperature must be positive");
  const UnitRows rows(table);
  const std::size_t C = rows.dim;
  const std::size_t R = table.count();
  const std::size_t P = batch.pairs.size();
  const double s = 1.0 / tau;
  const double log_floor = std::log(config.log_floor);
  const double inv_pairs = 1.0 / static_cast<double>(P);
  const TermIndex terms(batch, row_of, R);
  const std::size_t T = terms.pair.size();

  std::vector<std::size_t> row_a(P), row_b(P);
  std::vector<double> x_ab(P);
  for (std::size_t p = 0; p < P; ++p) {
    row_a[p] = row_of(batch.pairs[p].anchor);
    row_b[p] = row_of(batch.pairs[p].positive);
    x_ab[p] = dot_n(rows.row(row_a[p]), rows.row(row_b[p]), C);
  }

  // per term: cosines to the anchor and positive and their shifted exponentials
  std::vector<double> x_a(T), x_b(T), e_a(T), e_b(T);
  std::vector<double> sum_a(P, 0.0), sum_b(P, 0.0);
  for (std::size_t r = 0, t = 0; r < R; ++r) {
    const double* uc = rows.row(r);
    for (; t < terms.row_start[r + 1]; ++t) {
      const std::uint32_t p = terms.pair[t];
      x_a[t] = dot_n(rows.row(row_a[p]), uc, C);
      x_b[t] = dot_n(rows.row(row_b[p]), uc, C);
      e_a[t] = std::exp(s * (x_a[t] - 1.0));
      e_b[t] = std::exp(s * (x_b[t] - 1.0));
      sum_a[p] += e_a[t];
      sum_b[p] += e_b[t];
    }
  }

  CoreResult out;
  // dL/dx for each negative term is coef[p] * e[t]; zero for floored sides
  std::vector<double> coef_a(P, 0.0), coef_b(P, 0.0);
  double dz_times_x = 0.0;
  std::vector<double> unit_grad;
  if (want_grad) unit_grad.assign(table.values.size(), 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    const double z0 = s * x_ab[p];
    const double e0 = std::exp(z0 - s);
    double g_ab = 0.0;  // dL/dx_ab
    for (int side = 0; side < 2; ++side) {
      const double sum = e0 + (side == 0 ? sum_a[p] : sum_b[p]);
      const double log_p = z0 - (s + std::log(sum));
      if (log_p < log_floor) {
        out.loss += -0.5 * log_floor * inv_pairs;
        continue;
      }
      out.loss += -0.5 * log_p * inv_pairs;
      // dL/dz0 = -1/2 (1 - p0), dL/dz_j = 1/2 p_j (per pair, before the mean)
      const double dz0 = -0.5 * (1.0 - std::exp(log_p)) * inv_pairs;
      g_ab += s * dz0;
      dz_times_x += dz0 * x_ab[p];
      (side == 0 ? coef_a : coef_b)[p] = 0.5 * inv_pairs / sum;
    }
    if (want_grad && g_ab != 0.0) {
      axpy(g_ab, rows.row(row_b[p]), unit_grad.data() + row_a[p] * C, C);
      axpy(g_ab, rows.row(row_a[p]), unit_grad.data() + row_b[p] * C, C);
    }
  }
  if (!std::isfinite(out.loss)) throw FitError("loss is not finite");
  if (!want_grad) return out;

  // anchor/positive gradients gather per pair, then land in their rows
  std::vector<double> pair_ga(P * C, 0.0), pair_gb(P * C, 0.0);
  for (std::size_t r = 0, t = 0; r < R; ++r) {
    const double* uc = rows.row(r);
    double* g_c = unit_grad.data() + r * C;
    for (; t < terms.row_start[r + 1]; ++t) {
      const std::uint32_t p = terms.pair[t];
      const double dz_a = coef_a[p] * e_a[t], dz_b = coef_b[p] * e_b[t];
      if (dz_a == 0.0 && dz_b == 0.0) continue;
      dz_times_x += dz_a * x_a[t] + dz_b * x_b[t];
      const double wa = s * dz_a, wb = s * dz_b;
      const double* ua = rows.row(row_a[p]);
      const double* ub = rows.row(row_b[p]);
      double* ga = pair_ga.data() + p * C;
      double* gb = pair_gb.data() + p * C;
      for (std::size_t c = 0; c < C; ++c) {
        g_c[c] += wa * ua[c] + wb * ub[c];
        ga[c] += wa * uc[c];
        gb[c] += wb * uc[c];
      }
    }
  }
  for (std::size_t p = 0; p < P; ++p) {
    axpy(1.0, pair_ga.data() + p * C, unit_grad.data() + row_a[p] * C, C);
    axpy(1.0, pair_gb.data() + p * C, unit_grad.data() + row_b[p] * C, C);
  }

  // d/du of û: (I - û ûᵀ) / |u|
  out.feature_grad.assign(table.values.size(), 0.0);
  for (std::size_t r = 0; r < rows.norm.size(); ++r) {
    if (rows.norm[r] <= 1e-12) continue;
    const double* u = rows.row(r);
    const double* g = unit_grad.data() + r * C;
    const double along = dot_n(g, u, C);
    const double inv = 1.0 / rows.norm[r];
    for (std::size_t c = 0; c < C; ++c) out.feature_grad[r * C + c] = (g[c] - along * u[c]) * inv;
  }
  // z = x / tau = x exp(-θ)  =>  dz/dθ = -z
  out.log_temperature_grad = config.learn_temperature ? -s * dz_times_x : 0.0;
  return out;
}

// Element ids used by a batch, in first-seen order, with a dense row map.
struct CompactIds {
  std::vector<std::uint32_t> ids;
  std::vector<std::uint32_t> row;  // indexed by element id

  CompactIds(const TripletBatch& batch, std::size_t element_count)
      : row(element_count, std::numeric_limits<std::uint32_t>::max()) {
    auto add = [&](std::uint32_t id) {
      if (id >= element_count) throw FitError("triplet references element " + std::to_string(id) + " out of range");
      if (row[id] == std::numeric_limits<std::uint32_t>::max()) {
        row[id] = static_cast<std::uint32_t>(ids.size());
        ids.push_back(id);
      }
    };
    for (const auto& p : batch.pairs) {
      add(p.anchor);
      add(p.positive);
      for (auto c : p.negatives) add(c);
    }
  }
};

FeatureTable gather_features(const TriplaneField& field, std::span<const Vec3> positions,
                             std::span<const std::uint32_t> ids) {
  FeatureTable table;
  table.dim = field.channels;
  table.values.resize(ids.size() * field.channels);
  for (std::size_t r = 0; r < ids.size(); ++r) query_point(field, positions[ids[r]], table.row(r));
  return table;
}

}  // namespace

double pair_loss(double cos_ab, std::span<const double> cos_ac, std::span<const double> cos_bc, double tau,
                 const LossConfig& config) {
  if (cos_ac.empty() || cos_ac.size() != cos_bc.size()) throw FitError("pair needs matching negative similarities");
  const double s = 1.0 / tau;
  const double log_floor = std::log(config.log_floor);
  double loss = 0.0;
  for (const auto* neg : {&cos_ac, &cos_bc}) {
    std::vector<double> z(neg->size());
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = s * (*neg)[j];
    const double log_p = s * cos_ab - log_sum_exp(s * cos_ab, z);
    loss += -0.5 * std::max(log_p, log_floor);
  }
  return loss;
}

double contrastive_loss(const TripletBatch& batch, const FeatureTable& features, double tau,
                        const LossConfig& config) {
  return loss_core(batch, features, [](std::uint32_t id) { return static_cast<std::size_t>(id); }, tau, config, false)
      .loss;
}

double contrastive_loss(const TripletBatch& batch, const TriplaneField& field, std::span<const Vec3> positions,
                        const LossConfig& config) {
  const CompactIds compact(batch, positions.size());
  const auto table = gather_features(field, positions, compact.ids);
  return loss_core(batch, table, [&](std::uint32_t id) { return static_cast<std::size_t>(compact.row[id]); },
                   field.temperature(), config, false)
      .loss;
}

LossGradient loss_grad(const TripletBatch& batch, const TriplaneField& field, std::span<const Vec3> positions,
                       const LossConfig& config) {
  const CompactIds compact(batch, positions.size());
  const auto table = gather_features(field, positions, compact.ids);
  auto core = loss_core(batch, table, [&](std::uint32_t id) { return static_cast<std::size_t>(compact.row[id]); },
                        field.temperature(), config, true);
  LossGradient out;
  out.loss = core.loss;
  out.grad.params.assign(field.parameter_count(), 0.0);
  const std::size_t C = field.channels;
  for (std::size_t r = 0; r < compact.ids.size(); ++r) {
    accumulate_query_grad(field, positions[compact.ids[r]],
                          std::span<const double>(core.feature_grad.data() + r * C, C), out.grad.params);
  }
  out.grad.log_temperature = core.log_temperature_grad;
  return out;
}

// ---- optimizer ----------------------------------------------------------

namespace {

inline double adam_delta(double& m, double& v, double g, const AdamConfig& cfg, double bc1, double bc2) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
  return -cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
}

bool all_finite(std::span<const double> g) {
  return std::all_of(g.begin(), g.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

bool adam_step(OptimizerState& state, std::span<double> params, std::span<const double> grads,
               const AdamConfig& config) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw FitError("optimizer shape mismatch");
  }
  if (!all_finite(grads)) return false;
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] += adam_delta(state.m[i], state.v[i], grads[i], config, bc1, bc2);
  }
  return true;
}

bool adam_step(OptimizerState& state, TriplaneField& field, const FieldGradient& grads, const AdamConfig& config) {
  const std::size_t n = field.parameter_count();
  if (grads.params.size() != n || state.m.size() != n + 1 || state.v.size() != n + 1) {
    throw FitError("optimizer shape mismatch");
  }
  if (!all_finite(grads.params) || !std::isfinite(grads.log_temperature)) return false;
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    field.params[i] =
        static_cast<float>(field.params[i] + adam_delta(state.m[i], state.v[i], grads.params[i], config, bc1, bc2));
  }
  field.log_temperature = static_cast<float>(
      field.log_temperature + adam_delta(state.m[n], state.v[n], grads.log_temperature, config, bc1, bc2));
  field.clamp_temperature();
  return true;
}

// ---- fitting ------------------------------------------------------------

void FitConfig::validate() const {
  if (!(adam.learning_rate > 0.0)) throw FitError("learning rate must be positive");
  if (snapshot_period < 1) throw FitError("snapshot_period must be at least 1");
  sampler.validate();
}

FeatureTable element_features(const TriplaneField& field, std::span<const Vec3> positions) {
  FeatureTable table;
  table.dim = field.channels;
  table.values.resize(positions.size() * field.channels);
  for (std::size_t i = 0; i < positions.size(); ++i) query_point(field, positions[i], table.row(i));
  return table;
}

FitResult fit_field(const PointSet& elements, std::span<const PartProposal> proposals, const FitConfig& config,
                    const SnapshotCallback& on_snapshot) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto prepared = prepare_proposals(proposals);
  if (prepared.empty()) throw FitError("all proposals are degenerate; nothing to fit");
  for (const auto& p : prepared) {
    if (!p.proposal->visible.empty() && p.proposal->visible.back() >= elements.size()) {
      throw FitError("proposal references elements beyond the element set");
    }
  }

  FitResult result;
  result.field = new_triplane(config.resolution, config.channels, config.init_scale, derive_seed(config.seed, 1));
  OptimizerState state(result.field.parameter_count() + 1);
  SamplerConfig sampler = config.sampler;
  sampler.seed = derive_seed(config.seed, 2);
  SamplerConfig early = sampler;
  early.feature_hard_negatives = 0;
  const bool mine_features = sampler.feature_hard_negatives > 0;

  auto& report = result.report;
  for (std::uint32_t it = 0; it < config.iterations; ++it) {
    const bool feature_phase = mine_features && it >= config.feature_hard_start;
    FeatureTable current;
    if (feature_phase) current = element_features(result.field, elements.points);
    auto batch = build_triplet_batch(prepared, elements.points, feature_phase ? sampler : early,
                                     feature_phase ? &current : nullptr, it);
    auto lg = loss_grad(batch, result.field, elements.points, config.loss);
    if (!std::isfinite(lg.loss)) throw FitError("loss diverged at iteration " + std::to_string(it));
    if (!adam_step(state, result.field, lg.grad, config.adam)) {
      ++report.rejected_steps;
      report.warnings.push_back("non-finite gradient at iteration " + std::to_string(it) + "; step rejected");
    }
    const std::uint32_t done = it + 1;
    if (it == 0) report.snapshots.push_back({0, lg.loss});
    if (done % config.snapshot_period == 0 || done == config.iterations) {
      report.snapshots.push_back({done, lg.loss});
      if (on_snapshot) on_snapshot(done, result.field, lg.loss);
    }
  }
  report.iterations = config.iterations;
  report.final_temperature = result.field.temperature();
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace partfield
