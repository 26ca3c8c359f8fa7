#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ufcl/common.hpp"

namespace ufcl {

/// Symmetric n x n matrix of non-negative distances with a zero diagonal.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : m_(n, n, 0.0) {}

  /// Validates symmetry (1e-12), zero diagonal, finiteness and non-negativity.
  static DistanceMatrix from_matrix(Matrix m) {
    if (m.rows() != m.cols()) throw ShapeError("distance matrix must be square");
    const std::size_t n = m.rows();
    for (std::size_t i = 0; i < n; ++i) {
      if (m(i, i) != 0.0) throw DomainError("distance matrix diagonal must be zero");
      for (std::size_t j = 0; j < n; ++j) {
        const double v = m(i, j);
        if (!std::isfinite(v) || v < 0.0) throw DomainError("distances must be finite and >= 0");
        if (std::abs(v - m(j, i)) > 1e-12) throw DomainError("distance matrix must be symmetric");
      }
    }
    DistanceMatrix d;
    d.m_ = std::move(m);
    return d;
  }

  std::size_t n() const noexcept { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const noexcept { return m_(i, j); }

  /// Writes both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double v) noexcept {
    m_(i, j) = v;
    m_(j, i) = v;
  }

  std::span<const double> row(std::size_t i) const noexcept { return m_.row(i); }
  const Matrix& matrix() const noexcept { return m_; }

 private:
  Matrix m_;
};

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Per-point neighbor lists sorted by (distance, index), no self loops.
struct KnnGraph {
  std::size_t k = 0;
  std::vector<std::vector<Neighbor>> neighbors;

  std::size_t n() const noexcept { return neighbors.size(); }
};

enum class DistanceKind { euclidean, jaccard };

inline DistanceMatrix pairwise_euclidean(const EmbeddingMatrix& x, std::size_t threads = 1) {
  const std::size_t n = x.rows();
  DistanceMatrix d(n);
  // row i owns the pairs (i, j > i); each entry is written exactly once
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) d.set(i, j, euclidean(x.row(i), x.row(j)));
  });
  return d;
}

inline KnnGraph knn_graph(const DistanceMatrix& d, std::size_t k, std::size_t threads = 1) {
  if (k < 1) throw ParameterError("knn_graph requires k >= 1");
  const std::size_t n = d.n();
  KnnGraph g;
  g.k = k;
  g.neighbors.resize(n);
  const std::size_t take = n == 0 ? 0 : std::min(k, n - 1);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<Neighbor> all;
    all.reserve(n ? n - 1 : 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) all.push_back({j, d(i, j)});
    }
    auto less = [](const Neighbor& a, const Neighbor& b) {
      return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), less);
    all.resize(take);
    g.neighbors[i] = std::move(all);
  });
  return g;
}

/// 1 - |S(a) n S(b)| / |S(a) u S(b)| with S(x) = {x} plus the k-NN of x.
inline DistanceMatrix jaccard_distance(const KnnGraph& g, std::size_t threads = 1) {
  const std::size_t n = g.n();
  std::vector<std::vector<std::size_t>> sets(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = sets[i];
    s.reserve(g.neighbors[i].size() + 1);
    s.push_back(i);
    for (const auto& nb : g.neighbors[i]) s.push_back(nb.index);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  DistanceMatrix d(n);
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = sets[i];
      const auto& b = sets[j];
      std::size_t inter = 0;
      for (std::size_t p = 0, q = 0; p < a.size() && q < b.size();) {
        if (a[p] < b[q]) {
          ++p;
        } else if (b[q] < a[p]) {
          ++q;
        } else {
          ++inter;
          ++p;
          ++q;
        }
      }
      const std::size_t uni = a.size() + b.size() - inter;
      d.set(i, j, 1.0 - static_cast<double>(inter) / static_cast<double>(uni));
    }
  });
  return d;
}

/// Distance matrix used as clustering input.
inline DistanceMatrix clustering_distances(const EmbeddingMatrix& x, DistanceKind kind,
                                           std::size_t jaccard_k, std::size_t threads = 1) {
  auto d = pairwise_euclidean(x, threads);
  if (kind == DistanceKind::euclidean) return d;
  return jaccard_distance(knn_graph(d, jaccard_k, threads), threads);
}

}  // namespace ufcl
