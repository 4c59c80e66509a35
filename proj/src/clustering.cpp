#include "partfield/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>

#include "partfield/random.hpp"

namespace partfield {

Segmentation Segmentation::canonical() const {
  std::map<int, int> remap;
  Segmentation out;
  out.labels.reserve(labels.size());
  for (int l : labels) {
    auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
    out.labels.push_back(it->second);
  }
  out.k = static_cast<std::uint32_t>(remap.size());
  return out;
}

Segmentation make_segmentation(std::vector<int> labels) {
  Segmentation s;
  s.labels = std::move(labels);
  std::vector<int> distinct = s.labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  s.k = static_cast<std::uint32_t>(distinct.size());
  return s;
}

namespace {

struct HeapEntry {
  double cost;
  std::uint32_t lo;
  std::uint32_t hi;

  bool operator>(const HeapEntry& o) const {
    if (cost != o.cost) return cost > o.cost;
    if (lo != o.lo) return lo > o.lo;
    return hi > o.hi;
  }
};

using MinHeap = std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>>;

double cosine_cost(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na <= 1e-12 || nb <= 1e-12) return 1.0;
  return 1.0 - ab / (na * nb);
}

}  // namespace

MergeTree agglomerate(const FeatureSet& features, const std::vector<std::vector<std::uint32_t>>& adjacency,
                      const AgglomerateOptions& options) {
  const std::uint32_t n = features.count;
  if (n == 0) throw ClusteringError("no features to cluster");
  if (adjacency.size() != n) {
    throw ClusteringError("adjacency covers " + std::to_string(adjacency.size()) + " faces but features cover " +
                          std::to_string(n));
  }
  const std::size_t dim = features.dim;
  const FeatureSet source = options.normalize_features ? unit_normalized(features) : features;

  MergeTree tree;
  tree.leaf_count = n;
  tree.dim = features.dim;
  tree.nodes.assign(n, {});
  tree.nodes.reserve(2 * static_cast<std::size_t>(n) - 1);
  tree.mean_features.assign(source.data.begin(), source.data.end());
  tree.mean_features.reserve((2 * static_cast<std::size_t>(n) - 1) * dim);

  const std::size_t capacity = 2 * static_cast<std::size_t>(n) - 1;
  std::vector<std::vector<double>> sums(capacity);
  std::vector<std::vector<std::uint32_t>> neighbours(capacity);
  std::vector<char> alive(capacity, 0);
  for (std::uint32_t f = 0; f < n; ++f) {
    const auto row = source.row(f);
    sums[f].assign(row.begin(), row.end());
    alive[f] = 1;
    for (auto g : adjacency[f]) {
      if (g >= n) throw ClusteringError("adjacency references face " + std::to_string(g) + " out of range");
      if (g != f) neighbours[f].push_back(g);
    }
    std::sort(neighbours[f].begin(), neighbours[f].end());
    neighbours[f].erase(std::unique(neighbours[f].begin(), neighbours[f].end()), neighbours[f].end());
  }

  MinHeap heap;
  for (std::uint32_t f = 0; f < n; ++f) {
    for (auto g : neighbours[f]) {
      if (g > f) heap.push({cosine_cost(sums[f], sums[g]), f, g});
    }
  }

  auto merge = [&](const HeapEntry& e, bool constrained) {
    const auto c = static_cast<std::uint32_t>(tree.nodes.size());
    const auto a = e.lo, b = e.hi;
    MergeTree::Node node;
    node.left = a;
    node.right = b;
    node.cost = e.cost;
    node.count = tree.nodes[a].count + tree.nodes[b].count;
    node.constrained = constrained;
    tree.nodes.push_back(node);

    sums[c].resize(dim);
    for (std::size_t i = 0; i < dim; ++i) sums[c][i] = sums[a][i] + sums[b][i];
    for (std::size_t i = 0; i < dim; ++i) tree.mean_features.push_back(static_cast<float>(sums[c][i] / node.count));

    std::vector<std::uint32_t> merged;
    std::set_union(neighbours[a].begin(), neighbours[a].end(), neighbours[b].begin(), neighbours[b].end(),
                   std::back_inserter(merged));
    merged.erase(std::remove_if(merged.begin(), merged.end(), [&](std::uint32_t x) { return x == a || x == b; }),
                 merged.end());
    for (auto x : merged) {
      auto& list = neighbours[x];
      list.erase(std::remove_if(list.begin(), list.end(), [&](std::uint32_t y) { return y == a || y == b; }),
                 list.end());
      list.push_back(c);  // c exceeds every live id, so the list stays sorted
      heap.push({cosine_cost(sums[x], sums[c]), x, c});
    }
    neighbours[c] = std::move(merged);
    alive[a] = alive[b] = 0;
    alive[c] = 1;
    sums[a] = {};
    sums[b] = {};
    neighbours[a] = {};
    neighbours[b] = {};
    return c;
  };

  while (!heap.empty()) {
    const auto e = heap.top();
    heap.pop();
    if (!alive[e.lo] || !alive[e.hi]) continue;
    merge(e, true);
  }

  // Join disconnected components by the cheapest unconstrained pairs.
  std::vector<std::uint32_t> roots;
  for (std::uint32_t id = 0; id < tree.nodes.size(); ++id) {
    if (alive[id]) roots.push_back(id);
  }
  if (roots.size() > 1) {
    MinHeap free_heap;
    for (std::size_t i = 0; i < roots.size(); ++i) {
      for (std::size_t j = i + 1; j < roots.size(); ++j) {
        free_heap.push({cosine_cost(sums[roots[i]], sums[roots[j]]), roots[i], roots[j]});
      }
    }
    while (!free_heap.empty()) {
      const auto e = free_heap.top();
      free_heap.pop();
      if (!alive[e.lo] || !alive[e.hi]) continue;
      const auto c = merge(e, false);
      for (std::uint32_t id = 0; id < c; ++id) {
        if (alive[id]) free_heap.push({cosine_cost(sums[id], sums[c]), id, c});
      }
    }
  }
  return tree;
}

Segmentation cut_tree(const MergeTree& tree, std::uint32_t k) {
  const std::uint32_t n = tree.leaf_count;
  if (k < 1 || k > n) {
    throw ClusteringError("cut k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  if (tree.merge_count() + 1 < n && k < n - tree.merge_count()) {
    throw ClusteringError("tree is incomplete; cannot cut to " + std::to_string(k));
  }
  std::vector<std::uint32_t> parent(tree.nodes.size());
  std::iota(parent.begin(), parent.end(), 0u);
  const std::size_t applied = n - k;
  for (std::size_t m = 0; m < applied; ++m) {
    const auto& node = tree.nodes[n + m];
    parent[node.left] = static_cast<std::uint32_t>(n + m);
    parent[node.right] = static_cast<std::uint32_t>(n + m);
  }
  auto find = [&](std::uint32_t x) {
    std::uint32_t root = x;
    while (parent[root] != root) root = parent[root];
    while (parent[x] != root) {
      const auto next = parent[x];
      parent[x] = root;
      x = next;
    }
    return root;
  };
  std::vector<int> raw(n);
  for (std::uint32_t f = 0; f < n; ++f) raw[f] = static_cast<int>(find(f));
  Segmentation s;
  s.labels = std::move(raw);
  return s.canonical();
}

std::vector<Segmentation> multi_scale(const MergeTree& tree, std::span<const std::uint32_t> ks) {
  std::vector<std::uint32_t> defaults;
  if (ks.empty()) {
    for (std::uint32_t k = 2; k <= 21; ++k) defaults.push_back(k);
    ks = defaults;
  }
  std::vector<Segmentation> out;
  out.reserve(ks.size());
  for (auto k : ks) out.push_back(cut_tree(tree, k));
  return out;
}

// ---- k-means ------------------------------------------------------------

KMeansResult kmeans(const FeatureSet& features, std::uint32_t k, KMeansInit init, std::uint64_t seed,
                    std::span<const float> seeds, std::uint32_t max_iters) {
  const std::size_t n = features.count;
  const std::size_t dim = features.dim;
  if (k < 1) throw ClusteringError("k must be at least 1");
  if (n == 0) throw ClusteringError("no features to cluster");
  const FeatureSet x = unit_normalized(features);

  std::vector<double> centroids(k * dim, 0.0);
  auto normalize_centroid = [&](std::size_t j) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) n2 += centroids[j * dim + i] * centroids[j * dim + i];
    const double nn = std::sqrt(n2);
    if (nn > 1e-12) {
      for (std::size_t i = 0; i < dim; ++i) centroids[j * dim + i] /= nn;
    }
  };

  if (init == KMeansInit::seeded) {
    if (seeds.size() != static_cast<std::size_t>(k) * dim) {
      throw ClusteringError("seeded k-means needs k x dim seed values");
    }
    for (std::size_t i = 0; i < centroids.size(); ++i) centroids[i] = seeds[i];
    for (std::size_t j = 0; j < k; ++j) normalize_centroid(j);
  } else {
    if (k > n) throw ClusteringError("k exceeds the element count");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
    std::vector<std::size_t> chosen;
    for (auto idx : order) {
      const auto row = x.row(idx);
      const bool duplicate = std::any_of(chosen.begin(), chosen.end(), [&](std::size_t c) {
        return std::equal(row.begin(), row.end(), x.row(c).begin());
      });
      if (duplicate) continue;
      chosen.push_back(idx);
      if (chosen.size() == k) break;
    }
    if (chosen.size() < k) {
      throw ClusteringError("only " + std::to_string(chosen.size()) + " distinct features for k=" + std::to_string(k));
    }
    for (std::size_t j = 0; j < k; ++j) {
      const auto row = x.row(chosen[j]);
      for (std::size_t i = 0; i < dim; ++i) centroids[j * dim + i] = row[i];
    }
  }

  KMeansResult result;
  std::vector<int> labels(n, -1);
  std::vector<double> dist2(n, 0.0);
  for (std::uint32_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const auto row = x.row(p);
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        double d = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          const double diff = row[i] - centroids[j * dim + i];
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(j);
        }
      }
      if (labels[p] != best) changed = true;
      labels[p] = best;
      dist2[p] = best_d;
      objective += best_d;
    }
    if (!changed) break;
    result.objective.push_back(objective);
    result.iterations = iter + 1;

    std::vector<double> sums(k * dim, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t p = 0; p < n; ++p) {
      const auto row = x.row(p);
      ++counts[labels[p]];
      for (std::size_t i = 0; i < dim; ++i) sums[labels[p] * dim + i] += row[i];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        std::copy(sums.begin() + static_cast<std::ptrdiff_t>(j * dim),
                  sums.begin() + static_cast<std::ptrdiff_t>((j + 1) * dim),
                  centroids.begin() + static_cast<std::ptrdiff_t>(j * dim));
        normalize_centroid(j);
        continue;
      }
      // empty cluster: reseed from the point farthest from its centroid
      const auto far = static_cast<std::size_t>(std::max_element(dist2.begin(), dist2.end()) - dist2.begin());
      const auto row = x.row(far);
      for (std::size_t i = 0; i < dim; ++i) centroids[j * dim + i] = row[i];
      dist2[far] = 0.0;
    }
  }
  result.segmentation.labels = std::move(labels);
  result.segmentation.k = k;
  result.centroids.assign(centroids.begin(), centroids.end());
  return result;
}

}  // namespace partfield
