#pragma once

// Cluster-level memory bank of feature agents: weighted initialization,
// momentum updates from mini-batch class means, and the ClusterNCE loss.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ufcl/clustering.hpp"
#include "ufcl/common.hpp"
#include "ufcl/encoder.hpp"

namespace ufcl {

enum class WeightKind { zero, min, mean };
/// as_written weights members by exp(+d); inverted by exp(-d).
enum class WeightSign { as_written, inverted };

struct WeightScheme {
  WeightKind kind = WeightKind::mean;
  WeightSign sign = WeightSign::as_written;

  friend bool operator==(const WeightScheme&, const WeightScheme&) = default;
};

/// Distance of member `i` to the rest of its cluster (rows of `members`).
/// zero: 0; min: nearest other member; mean: average over the other members.
/// A singleton cluster gives 0 for every scheme.
inline double pairwise_set_distance(std::size_t i, const Matrix& members, WeightScheme scheme) {
  const std::size_t n = members.rows();
  if (n == 0) throw ParameterError("cluster feature set is empty");
  if (i >= n) throw LookupError("member index out of range");
  if (scheme.kind == WeightKind::zero || n == 1) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const double d = euclidean(members.row(i), members.row(j));
    best = std::min(best, d);
    sum += d;
  }
  return scheme.kind == WeightKind::min ? best : sum / static_cast<double>(n - 1);
}

/// Softmax of (+/-) member distances; positive and summing to one.
inline std::vector<double> compute_weights(const Matrix& members, WeightScheme scheme) {
  const std::size_t n = members.rows();
  if (n == 0) throw ParameterError("cluster feature set is empty");
  const double sign = scheme.sign == WeightSign::as_written ? 1.0 : -1.0;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = sign * pairwise_set_distance(i, members, scheme);
  const double top = *std::max_element(w.begin(), w.end());
  double total = 0.0;
  for (double& v : w) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : w) v /= total;
  return w;
}

struct FeatureAgentBank {
  Matrix agents;  // one unit-norm row per cluster
  double momentum = 0.1;
  double temperature = 0.05;

  std::size_t size() const noexcept { return agents.rows(); }
  std::size_t dim() const noexcept { return agents.cols(); }
};

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(x.row(rows[r]).begin(), x.row(rows[r]).end(), out.row(r).begin());
  }
  return out;
}

/// One agent per cluster: the weighted centroid of its members, renormalized.
/// Outliers do not contribute.
inline FeatureAgentBank init_agents(const EmbeddingMatrix& features, const ClusterAssignment& assignment,
                                    WeightScheme scheme, double momentum = 0.1,
                                    double temperature = 0.05) {
  if (assignment.size() != features.rows()) {
    throw ShapeError("assignment length does not match feature rows");
  }
  FeatureAgentBank bank;
  bank.momentum = momentum;
  bank.temperature = temperature;
  bank.agents = Matrix(assignment.num_clusters, features.cols());
  const auto groups = assignment.members();
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) throw std::logic_error("cluster " + std::to_string(k) + " has no members");
    const Matrix fk = gather_rows(features, groups[k]);
    const auto w = compute_weights(fk, scheme);
    std::vector<double> c(features.cols(), 0.0);
    for (std::size_t i = 0; i < fk.rows(); ++i) {
      for (std::size_t j = 0; j < c.size(); ++j) c[j] += w[i] * fk(i, j);
    }
    const auto unit = l2_normalize(c);
    std::copy(unit.begin(), unit.end(), bank.agents.row(k).begin());
  }
  return bank;
}

struct MiniBatch {
  Matrix features;          // unit rows
  std::vector<int> labels;  // cluster ids, never kOutlier
};

/// Plain mean of the batch features labelled k (not renormalized).
inline std::vector<double> batch_class_mean(const MiniBatch& batch, int k) {
  std::vector<double> mean(batch.features.cols(), 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    if (batch.labels[i] != k) continue;
    ++count;
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += batch.features(i, j);
  }
  if (count == 0) throw LookupError("label " + std::to_string(k) + " is absent from the batch");
  for (double& v : mean) v /= static_cast<double>(count);
  return mean;
}

/// c_k <- m c_k + (1 - m) f_k, then renormalized. A zero result leaves the
/// agent unchanged and throws.
inline void momentum_update(FeatureAgentBank& bank, std::size_t k, std::span<const double> class_mean) {
  if (k >= bank.size()) throw LookupError("agent index out of range");
  if (class_mean.size() != bank.dim()) throw ShapeError("class mean dimension mismatch");
  auto c = bank.agents.row(k);
  std::vector<double> next(c.size());
  for (std::size_t j = 0; j < c.size(); ++j) {
    next[j] = bank.momentum * c[j] + (1.0 - bank.momentum) * class_mean[j];
  }
  if (!(norm(next) > 0.0)) throw DegenerateInputError("momentum update produced a zero agent");
  const auto unit = l2_normalize(next);
  std::copy(unit.begin(), unit.end(), c.begin());
}

struct NceResult {
  double loss = 0.0;
  Matrix feature_gradients;  // d loss / d batch.features
  std::vector<int> classes;  // classes present, ascending
};

/// ClusterNCE: for each class k in the batch the normalized class mean q_k is
/// scored against every agent, loss_k = -log softmax(q_k . c / tau)[k]. The
/// total is the mean over classes present. Agents are treated as constants.
inline NceResult cluster_nce_loss(const MiniBatch& batch, const FeatureAgentBank& bank) {
  const double tau = bank.temperature;
  if (!(tau > 0.0)) throw ParameterError("temperature must be > 0");
  if (batch.labels.size() != batch.features.rows()) throw ShapeError("batch labels/features mismatch");
  if (batch.features.cols() != bank.dim()) throw ShapeError("batch feature dimension mismatch");

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    const int k = batch.labels[i];
    if (k < 0 || static_cast<std::size_t>(k) >= bank.size()) {
      throw LookupError("batch label " + std::to_string(k) + " has no agent");
    }
    groups[k].push_back(i);
  }

  NceResult out;
  out.feature_gradients = Matrix(batch.features.rows(), batch.features.cols());
  if (groups.empty()) return out;
  const double inv_classes = 1.0 / static_cast<double>(groups.size());
  const std::size_t dim = bank.dim();
  const std::size_t agents = bank.size();

  for (const auto& [k, rows] : groups) {
    out.classes.push_back(k);
    std::vector<double> mean(dim, 0.0);
    for (std::size_t r : rows) {
      for (std::size_t j = 0; j < dim; ++j) mean[j] += batch.features(r, j);
    }
    for (double& v : mean) v /= static_cast<double>(rows.size());
    const auto q = l2_normalize(mean);

    std::vector<double> logits(agents);
    for (std::size_t a = 0; a < agents; ++a) logits[a] = dot(q, bank.agents.row(a)) / tau;
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    const double lse = top + std::log(z);
    out.loss += (lse - logits[static_cast<std::size_t>(k)]) * inv_classes;

    // d loss_k / d q = (sum_j p_j c_j - c_k) / tau
    std::vector<double> gq(dim, 0.0);
    for (std::size_t a = 0; a < agents; ++a) {
      const double p = std::exp(logits[a] - lse);
      const auto c = bank.agents.row(a);
      for (std::size_t j = 0; j < dim; ++j) gq[j] += p * c[j];
    }
    const auto ck = bank.agents.row(static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < dim; ++j) gq[j] = (gq[j] - ck[j]) / tau;

    const auto gmean = l2_normalize_backward(mean, gq);
    const double scale = inv_classes / static_cast<double>(rows.size());
    for (std::size_t r : rows) {
      auto g = out.feature_gradients.row(r);
      for (std::size_t j = 0; j < dim; ++j) g[j] += gmean[j] * scale;
    }
  }
  return out;
}

}  // namespace ufcl
