#pragma once

// Outlier-aware clustering metrics and the weighted k-NN classifier.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ufcl/clustering.hpp"
#include "ufcl/common.hpp"

namespace ufcl {

struct Assignment {
  std::vector<int> row_to_col;  // -1 when a row is left unmatched
  double cost = 0.0;
};

/// Minimum-cost one-to-one assignment (Hungarian algorithm with potentials).
/// Rectangular inputs are padded to square with zero cost.
inline Assignment hungarian(const Matrix& costs) {
  const std::size_t rows = costs.rows();
  const std::size_t cols = costs.cols();
  Assignment out;
  out.row_to_col.assign(rows, -1);
  if (rows == 0 || cols == 0) return out;
  if (!all_finite(costs.values())) throw DomainError("assignment costs must be finite");

  const std::size_t n = std::max(rows, cols);
  auto cost = [&](std::size_t i, std::size_t j) { return i < rows && j < cols ? costs(i, j) : 0.0; };
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; p[j] is the row matched to column j
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j] - 1;
    if (i < rows && j - 1 < cols) {
      out.row_to_col[i] = static_cast<int>(j - 1);
      out.cost += costs(i, j - 1);
    }
  }
  return out;
}

/// Predicted clusters (clustered examples only) by ground-truth classes.
struct ContingencyTable {
  std::vector<std::vector<long>> counts;  // [cluster][class]
  std::size_t n_total = 0;
  std::size_t n_clustered = 0;

  std::size_t clusters() const noexcept { return counts.size(); }
  std::size_t classes() const noexcept { return counts.empty() ? 0 : counts.front().size(); }
};

inline ContingencyTable contingency(const ClusterAssignment& pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw ShapeError("prediction and truth lengths differ");
  std::map<int, std::size_t> class_index;
  for (int t : truth) {
    if (t < 0) throw DomainError("ground-truth labels must be non-negative");
    class_index.emplace(t, 0);
  }
  std::size_t next = 0;
  for (auto& [label, idx] : class_index) idx = next++;

  ContingencyTable table;
  table.n_total = truth.size();
  table.counts.assign(pred.num_clusters, std::vector<long>(class_index.size(), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred.labels[i] == kOutlier) continue;
    ++table.counts[static_cast<std::size_t>(pred.labels[i])][class_index[truth[i]]];
    ++table.n_clustered;
  }
  return table;
}

/// Best one-to-one cluster-to-class matching, divided by ALL examples, so
/// outliers always count as errors.
inline double clustering_acc(const ClusterAssignment& pred, std::span<const int> truth) {
  const auto table = contingency(pred, truth);
  if (table.n_total == 0) return 0.0;
  Matrix cost(table.clusters(), table.classes());
  for (std::size_t r = 0; r < cost.rows(); ++r) {
    for (std::size_t c = 0; c < cost.cols(); ++c) cost(r, c) = -static_cast<double>(table.counts[r][c]);
  }
  const auto match = hungarian(cost);
  long matched = 0;
  for (std::size_t r = 0; r < match.row_to_col.size(); ++r) {
    if (match.row_to_col[r] >= 0) matched += table.counts[r][static_cast<std::size_t>(match.row_to_col[r])];
  }
  return static_cast<double>(matched) / static_cast<double>(table.n_total);
}

/// NMI with arithmetic-mean normalization over the clustered examples.
inline double nmi(const ClusterAssignment& pred, std::span<const int> truth) {
  const auto t = contingency(pred, truth);
  if (t.n_clustered == 0) return 0.0;
  const double n = static_cast<double>(t.n_clustered);
  std::vector<double> a(t.clusters(), 0.0), b(t.classes(), 0.0);
  for (std::size_t r = 0; r < t.clusters(); ++r) {
    for (std::size_t c = 0; c < t.classes(); ++c) {
      a[r] += static_cast<double>(t.counts[r][c]);
      b[c] += static_cast<double>(t.counts[r][c]);
    }
  }
  auto entropy = [n](const std::vector<double>& m) {
    double h = 0.0;
    for (double x : m) {
      if (x > 0.0) h -= x / n * std::log(x / n);
    }
    return h;
  };
  const double hu = entropy(a);
  const double hv = entropy(b);
  if (hu == 0.0 && hv == 0.0) return 1.0;  // both partitions are a single group
  double mi = 0.0;
  for (std::size_t r = 0; r < t.clusters(); ++r) {
    for (std::size_t c = 0; c < t.classes(); ++c) {
      const double nij = static_cast<double>(t.counts[r][c]);
      if (nij > 0.0) mi += nij / n * std::log(n * nij / (a[r] * b[c]));
    }
  }
  return std::clamp(2.0 * mi / (hu + hv), 0.0, 1.0);
}

/// Adjusted Rand index over the clustered examples.
inline double ari(const ClusterAssignment& pred, std::span<const int> truth) {
  const auto t = contingency(pred, truth);
  if (t.n_clustered == 0) return 0.0;
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  std::vector<double> b(t.classes(), 0.0);
  for (std::size_t r = 0; r < t.clusters(); ++r) {
    double a = 0.0;
    for (std::size_t c = 0; c < t.classes(); ++c) {
      const double nij = static_cast<double>(t.counts[r][c]);
      index += pairs(nij);
      a += nij;
      b[c] += nij;
    }
    sum_a += pairs(a);
  }
  for (double x : b) sum_b += pairs(x);
  const double total = pairs(static_cast<double>(t.n_clustered));
  const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // identical trivial partitions
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------

struct LabeledEmbeddings {
  Matrix features;
  std::vector<int> labels;
};

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) noexcept {
  return dot(a, b) / (norm(a) * norm(b));
}

/// Weighted k-NN vote: the k most cosine-similar training points each add
/// exp(s / tau) to their class. Ties go to the smaller class id.
inline int weighted_knn_predict(const LabeledEmbeddings& train, std::span<const double> query,
                                std::size_t k, double tau) {
  const std::size_t n = train.features.rows();
  std::vector<std::pair<double, std::size_t>> sims(n);
  for (std::size_t i = 0; i < n; ++i) sims[i] = {cosine_similarity(query, train.features.row(i)), i};
  const std::size_t take = std::min(k, n);
  std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(take), sims.end(),
                    [](const auto& x, const auto& y) {
                      return x.first > y.first || (x.first == y.first && x.second < y.second);
                    });
  std::map<int, double> score;
  for (std::size_t r = 0; r < take; ++r) {
    score[train.labels[sims[r].second]] += std::exp(sims[r].first / tau);
  }
  int best = score.begin()->first;
  double best_score = score.begin()->second;
  for (const auto& [label, s] : score) {
    if (s > best_score) {
      best = label;
      best_score = s;
    }
  }
  return best;
}

inline double weighted_knn_top1(const LabeledEmbeddings& train, const LabeledEmbeddings& test,
                                std::size_t k = 5, double tau = 0.07, std::size_t threads = 1) {
  if (train.features.rows() == 0) throw ParameterError("weighted k-NN needs a non-empty training set");
  if (k < 1) throw ParameterError("k must be >= 1");
  if (!(tau > 0.0)) throw ParameterError("tau must be > 0");
  if (train.labels.size() != train.features.rows() || test.labels.size() != test.features.rows()) {
    throw ShapeError("labels do not match feature rows");
  }
  if (train.features.cols() != test.features.cols()) throw ShapeError("train/test dimension mismatch");
  const std::size_t m = test.features.rows();
  if (m == 0) return 0.0;
  std::vector<char> correct(m, 0);
  parallel_for(m, threads, [&](std::size_t i) {
    correct[i] = weighted_knn_predict(train, test.features.row(i), k, tau) == test.labels[i];
  });
  const auto hits = std::count(correct.begin(), correct.end(), 1);
  return static_cast<double>(hits) / static_cast<double>(m);
}

}  // namespace ufcl
