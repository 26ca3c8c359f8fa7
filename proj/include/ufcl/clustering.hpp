#pragma once

// HDBSCAN over a precomputed distance matrix (core distances, mutual
// reachability, Prim MST, condensed tree, excess-of-mass extraction) and a
// DBSCAN baseline. Both produce pseudo labels with an outlier sentinel.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "ufcl/common.hpp"
#include "ufcl/neighbors.hpp"

namespace ufcl {

inline constexpr int kOutlier = -1;

/// Distances below this floor map to the largest finite lambda.
inline constexpr double kMinLambdaDistance = 1e-12;

struct ClusterAssignment {
  std::vector<int> labels;
  std::size_t num_clusters = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_outliers() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kOutlier));
  }
  std::size_t num_clustered() const noexcept { return size() - num_outliers(); }

  /// Members of each cluster, ascending indices.
  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(num_clusters);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != kOutlier) out[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    return out;
  }

  friend bool operator==(const ClusterAssignment&, const ClusterAssignment&) = default;
};

/// Renumbers arbitrary non-negative group ids so that clusters are numbered
/// 0.. in order of their first member index. Negative ids become outliers.
inline ClusterAssignment relabel_by_first_member(const std::vector<long>& raw) {
  ClusterAssignment a;
  a.labels.assign(raw.size(), kOutlier);
  std::unordered_map<long, int> ids;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] < 0) continue;
    const auto [it, inserted] = ids.try_emplace(raw[i], static_cast<int>(ids.size()));
    a.labels[i] = it->second;
  }
  a.num_clusters = ids.size();
  return a;
}

// ---------------------------------------------------------------------------
// HDBSCAN building blocks

/// Distance from each point to its `min_samples`-th nearest other point.
inline std::vector<double> core_distances(const DistanceMatrix& d, std::size_t min_samples,
                                          std::size_t threads = 1) {
  const std::size_t n = d.n();
  if (min_samples < 1) throw ParameterError("min_samples must be >= 1");
  if (min_samples >= n) {
    throw ParameterError("min_samples (" + std::to_string(min_samples) +
                         ") must be smaller than the point count (" + std::to_string(n) + ")");
  }
  std::vector<double> core(n);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<double> others;
    others.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(d(i, j));
    }
    auto kth = others.begin() + static_cast<std::ptrdiff_t>(min_samples - 1);
    std::nth_element(others.begin(), kth, others.end());
    core[i] = *kth;
  });
  return core;
}

inline DistanceMatrix mutual_reachability(const DistanceMatrix& d, std::span<const double> cores,
                                          std::size_t threads = 1) {
  const std::size_t n = d.n();
  if (cores.size() != n) throw ShapeError("core distance count does not match the matrix");
  DistanceMatrix mr(n);
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) mr.set(i, j, std::max({cores[i], cores[j], d(i, j)}));
  });
  return mr;
}

struct MstEdge {
  std::size_t a = 0;  // a < b
  std::size_t b = 0;
  double weight = 0.0;

  friend bool operator==(const MstEdge&, const MstEdge&) = default;
};

/// Strict total order on edges: (weight, smaller index, larger index).
inline bool edge_less(const MstEdge& x, const MstEdge& y) noexcept {
  return std::tie(x.weight, x.a, x.b) < std::tie(y.weight, y.a, y.b);
}

struct MstEdgeList {
  std::size_t n = 0;
  std::vector<MstEdge> edges;  // sorted by edge_less

  double total_weight() const noexcept {
    double s = 0.0;
    for (const auto& e : edges) s += e.weight;
    return s;
  }
};

/// Prim's algorithm on the dense matrix. Because edge_less is a strict total
/// order the tree is unique, so tie handling cannot change the result.
inline MstEdgeList mst(const DistanceMatrix& w) {
  const std::size_t n = w.n();
  if (n < 2) throw ParameterError("mst requires at least two points");
  std::vector<bool> in_tree(n, false);
  std::vector<MstEdge> best(n);
  in_tree[0] = true;
  for (std::size_t v = 1; v < n; ++v) best[v] = {0, v, w(0, v)};
  MstEdgeList out;
  out.n = n;
  out.edges.reserve(n - 1);
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t pick = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (!in_tree[v] && (pick == n || edge_less(best[v], best[pick]))) pick = v;
    }
    in_tree[pick] = true;
    out.edges.push_back(best[pick]);
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      const MstEdge cand{std::min(pick, v), std::max(pick, v), w(pick, v)};
      if (edge_less(cand, best[v])) best[v] = cand;
    }
  }
  std::sort(out.edges.begin(), out.edges.end(), edge_less);
  return out;
}

// ---------------------------------------------------------------------------
// Condensed tree

struct CondensedCluster {
  int parent = -1;  // -1 for the root
  double birth_lambda = 0.0;
  double death_lambda = 0.0;
  std::size_t size = 0;  // members at birth
  double stability = 0.0;
  std::vector<std::size_t> children;
};

/// Clusters are numbered in breadth-first order from the root (id 0), so a
/// child always has a larger id than its parent.
struct CondensedTree {
  std::size_t min_cluster_size = 0;
  std::vector<CondensedCluster> clusters;
  /// Cluster each point last belonged to, and the lambda at which it left.
  std::vector<std::size_t> point_cluster;
  std::vector<double> point_lambda;

  std::size_t n_points() const noexcept { return point_cluster.size(); }
};

namespace detail {

inline double to_lambda(double distance) noexcept {
  return 1.0 / std::max(distance, kMinLambdaDistance);
}

struct Dendrogram {
  // node ids: 0..n-1 leaves, n.. merges in edge order
  std::vector<std::size_t> left, right, size;
  std::vector<double> distance;
  std::size_t n = 0;

  std::size_t node_size(std::size_t v) const { return v < n ? 1 : size[v - n]; }
};

inline Dendrogram single_linkage(const MstEdgeList& tree) {
  Dendrogram g;
  g.n = tree.n;
  const std::size_t n = tree.n;
  std::vector<std::size_t> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&parent](std::size_t v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  std::size_t next = n;
  for (const auto& e : tree.edges) {
    const std::size_t ra = find(e.a);
    const std::size_t rb = find(e.b);
    g.left.push_back(ra);
    g.right.push_back(rb);
    g.distance.push_back(e.weight);
    g.size.push_back(g.node_size(ra) + g.node_size(rb));
    parent[ra] = next;
    parent[rb] = next;
    ++next;
  }
  return g;
}

inline void collect_leaves(const Dendrogram& g, std::size_t node, std::vector<std::size_t>& out) {
  std::vector<std::size_t> stack{node};
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    if (v < g.n) {
      out.push_back(v);
    } else {
      stack.push_back(g.right[v - g.n]);
      stack.push_back(g.left[v - g.n]);
    }
  }
}

}  // namespace detail

/// Walks the single-linkage dendrogram top-down. A split where both sides
/// hold at least `min_cluster_size` points creates two child clusters; a
/// smaller side is treated as points falling out of the current cluster.
inline CondensedTree condense_tree(const MstEdgeList& tree, std::size_t min_cluster_size) {
  if (min_cluster_size < 2) throw ParameterError("min_cluster_size must be >= 2");
  const std::size_t n = tree.n;
  CondensedTree ct;
  ct.min_cluster_size = min_cluster_size;
  ct.point_cluster.assign(n, 0);
  ct.point_lambda.assign(n, 0.0);
  ct.clusters.push_back(CondensedCluster{-1, 0.0, 0.0, n, 0.0, {}});
  if (n < 2) return ct;

  const auto g = detail::single_linkage(tree);
  const std::size_t root = 2 * n - 2;

  auto fall_out = [&](std::size_t node, std::size_t cluster, double lambda) {
    std::vector<std::size_t> pts;
    detail::collect_leaves(g, node, pts);
    for (std::size_t p : pts) {
      ct.point_cluster[p] = cluster;
      ct.point_lambda[p] = lambda;
    }
  };

  // breadth-first over (dendrogram node, owning cluster)
  std::vector<std::pair<std::size_t, std::size_t>> queue{{root, 0}};
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    // queued nodes always hold >= min_cluster_size >= 2 points, so they are merges
    const auto [node, cluster] = queue[qi];
    const std::size_t l = g.left[node - n];
    const std::size_t r = g.right[node - n];
    const double lambda = detail::to_lambda(g.distance[node - n]);
    const bool keep_l = g.node_size(l) >= min_cluster_size;
    const bool keep_r = g.node_size(r) >= min_cluster_size;
    if (keep_l && keep_r) {
      for (std::size_t child : {l, r}) {
        const std::size_t id = ct.clusters.size();
        ct.clusters.push_back(
            CondensedCluster{static_cast<int>(cluster), lambda, 0.0, g.node_size(child), 0.0, {}});
        ct.clusters[cluster].children.push_back(id);
        queue.emplace_back(child, id);
      }
    } else if (!keep_l && !keep_r) {
      fall_out(l, cluster, lambda);
      fall_out(r, cluster, lambda);
    } else {
      const std::size_t small = keep_l ? r : l;
      const std::size_t big = keep_l ? l : r;
      fall_out(small, cluster, lambda);
      queue.emplace_back(big, cluster);
    }
  }

  // stability: sum over everything leaving a cluster of
  // (lambda at which it leaves - birth lambda) * count
  for (std::size_t p = 0; p < n; ++p) {
    auto& c = ct.clusters[ct.point_cluster[p]];
    c.stability += ct.point_lambda[p] - c.birth_lambda;
    c.death_lambda = std::max(c.death_lambda, ct.point_lambda[p]);
  }
  for (std::size_t id = 1; id < ct.clusters.size(); ++id) {
    const auto& child = ct.clusters[id];
    auto& parent = ct.clusters[static_cast<std::size_t>(child.parent)];
    parent.stability += (child.birth_lambda - parent.birth_lambda) * static_cast<double>(child.size);
    parent.death_lambda = std::max(parent.death_lambda, child.birth_lambda);
  }
  return ct;
}

/// Excess-of-mass selection. Leaves start selected; an internal cluster is
/// selected when its stability exceeds the best total of its descendants, in
/// which case every descendant is deselected. The root competes only when
/// `allow_single_cluster` is set.
inline std::vector<bool> select_clusters(const CondensedTree& tree, bool allow_single_cluster) {
  const std::size_t m = tree.clusters.size();
  std::vector<bool> selected(m, false);
  std::vector<double> best(m, 0.0);
  for (std::size_t id = m; id-- > 0;) {
    const auto& c = tree.clusters[id];
    if (id == 0 && !allow_single_cluster) break;
    if (id == 0 && c.size < tree.min_cluster_size) break;
    double children = 0.0;
    for (std::size_t ch : c.children) children += best[ch];
    if (c.children.empty() || c.stability > children) {
      selected[id] = true;
      best[id] = c.stability;
      std::vector<std::size_t> stack(c.children.begin(), c.children.end());
      while (!stack.empty()) {
        const std::size_t v = stack.back();
        stack.pop_back();
        selected[v] = false;
        stack.insert(stack.end(), tree.clusters[v].children.begin(), tree.clusters[v].children.end());
      }
    } else {
      best[id] = children;
    }
  }
  return selected;
}

/// Points inherit the label of their nearest selected ancestor cluster. When
/// the root itself is selected, only points still present when it dies are
/// members. Everything else is an outlier.
inline ClusterAssignment extract_clusters(const CondensedTree& tree, bool allow_single_cluster = false) {
  const auto selected = select_clusters(tree, allow_single_cluster);
  const std::size_t n = tree.n_points();
  std::vector<long> raw(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    long c = static_cast<long>(tree.point_cluster[p]);
    while (c >= 0 && !selected[static_cast<std::size_t>(c)]) c = tree.clusters[static_cast<std::size_t>(c)].parent;
    if (c < 0) continue;
    if (c == 0 && tree.point_lambda[p] < tree.clusters[0].death_lambda) continue;
    raw[p] = c;
  }
  return relabel_by_first_member(raw);
}

struct HdbscanOptions {
  std::size_t min_cluster_size = 5;
  /// 0 means "same as min_cluster_size".
  std::size_t min_samples = 0;
  bool allow_single_cluster = false;
  std::size_t threads = 1;
};

inline ClusterAssignment hdbscan(const DistanceMatrix& d, const HdbscanOptions& opt = {}) {
  const std::size_t n = d.n();
  if (opt.min_cluster_size < 2) throw ParameterError("min_cluster_size must be >= 2");
  if (n < 2 || n < opt.min_cluster_size) {
    return ClusterAssignment{std::vector<int>(n, kOutlier), 0};
  }
  std::size_t min_samples = opt.min_samples ? opt.min_samples : opt.min_cluster_size;
  min_samples = std::min(min_samples, n - 1);
  const auto cores = core_distances(d, min_samples, opt.threads);
  const auto mr = mutual_reachability(d, cores, opt.threads);
  return extract_clusters(condense_tree(mst(mr), opt.min_cluster_size), opt.allow_single_cluster);
}

inline ClusterAssignment hdbscan(const DistanceMatrix& d, std::size_t min_cluster_size) {
  HdbscanOptions opt;
  opt.min_cluster_size = min_cluster_size;
  return hdbscan(d, opt);
}

// ---------------------------------------------------------------------------
// DBSCAN

/// Classic DBSCAN. Neighborhoods are closed balls (d <= eps) that include the
/// point itself; a point is core when its neighborhood holds >= min_pts
/// points. Border points join the cluster of their lowest-index core neighbor.
inline ClusterAssignment dbscan(const DistanceMatrix& d, double eps, std::size_t min_pts) {
  if (!(eps > 0.0)) throw ParameterError("eps must be > 0");
  if (min_pts < 1) throw ParameterError("min_pts must be >= 1");
  const std::size_t n = d.n();
  std::vector<bool> core(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += d(i, j) <= eps ? 1 : 0;
    core[i] = count >= min_pts;
  }
  std::vector<long> raw(n, -1);
  long next = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (!core[s] || raw[s] >= 0) continue;
    raw[s] = next;
    std::vector<std::size_t> stack{s};
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < n; ++j) {
        if (core[j] && raw[j] < 0 && d(v, j) <= eps) {
          raw[j] = next;
          stack.push_back(j);
        }
      }
    }
    ++next;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (core[j] && d(i, j) <= eps) {
        raw[i] = raw[j];
        break;
      }
    }
  }
  return relabel_by_first_member(raw);
}

}  // namespace ufcl
