#pragma once

// Synthetic fine-grained benchmark: equiangular class means on the unit
// sphere, isotropic Gaussian spread, and optional ambiguous samples whose
// means are blended with a neighboring class.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ufcl/common.hpp"

namespace ufcl {

struct SynthOptions {
  std::size_t classes = 20;
  std::size_t per_class = 50;
  /// Samples per class in the held-out split; 0 disables it.
  std::size_t test_per_class = 50;
  std::size_t dim = 64;
  /// Pairwise angle between class means, radians.
  double separation = 0.8;
  /// Per-coordinate standard deviation around the class mean.
  double spread = 0.07;
  /// Fraction of each class drawn around the midpoint of its mean and the next class's mean.
  double noise_frac = 0.0;
  std::uint64_t seed = 0;
};

struct SynthDataset {
  Matrix class_means;  // classes x dim, unit rows
  Matrix train;
  std::vector<int> train_labels;
  Matrix test;
  std::vector<int> test_labels;
};

/// Largest achievable common pairwise angle for `classes` means.
inline double max_separation(std::size_t classes) {
  if (classes <= 1) return std::numbers::pi;
  return std::acos(-1.0 / static_cast<double>(classes - 1));
}

/// k unit vectors with identical pairwise angle `separation`: a regular
/// simplex in a random k-dimensional subspace, tilted toward its axis.
template <typename Rng>
Matrix equiangular_means(std::size_t classes, std::size_t dim, double separation, Rng& rng) {
  if (classes == 0 || dim == 0) throw ParameterError("classes and dim must be >= 1");
  if (classes > dim) {
    throw ParameterError("cannot place " + std::to_string(classes) + " equiangular means in " +
                         std::to_string(dim) + " dimensions");
  }
  if (!(separation >= 0.0) || separation > max_separation(classes) + 1e-12) {
    throw ParameterError("separation " + std::to_string(separation) + " is infeasible for " +
                         std::to_string(classes) + " classes (max " +
                         std::to_string(max_separation(classes)) + ")");
  }
  // random orthonormal basis e_1..e_k by Gram-Schmidt
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix basis(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    auto row = basis.row(c);
    while (true) {
      for (double& v : row) v = gauss(rng);
      for (std::size_t p = 0; p < c; ++p) {
        const double proj = dot(row, basis.row(p));
        for (std::size_t j = 0; j < dim; ++j) row[j] -= proj * basis(p, j);
      }
      const double n = norm(row);
      if (n > 1e-6) {
        for (double& v : row) v /= n;
        break;
      }
    }
  }
  Matrix means(classes, dim);
  if (classes == 1) {
    std::copy(basis.row(0).begin(), basis.row(0).end(), means.row(0).begin());
    return means;
  }
  const double k = static_cast<double>(classes);
  // cos(theta) = a^2 - b^2 / (k - 1) with a^2 + b^2 = 1
  const double a2 = std::clamp((std::cos(separation) * (k - 1.0) + 1.0) / k, 0.0, 1.0);
  const double a = std::sqrt(a2);
  const double b = std::sqrt(1.0 - a2);
  std::vector<double> axis(dim, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < dim; ++j) axis[j] += basis(c, j);
  }
  const double vertex_norm = std::sqrt(1.0 - 1.0 / k);
  for (std::size_t c = 0; c < classes; ++c) {
    auto row = means.row(c);
    for (std::size_t j = 0; j < dim; ++j) {
      const double vertex = (basis(c, j) - axis[j] / k) / vertex_norm;
      row[j] = a * axis[j] / std::sqrt(k) + b * vertex;
    }
    const double n = norm(row);
    for (double& v : row) v /= n;
  }
  return means;
}

namespace detail {

template <typename Rng>
void draw_split(const Matrix& means, std::size_t per_class, double spread, double noise_frac, Rng& rng,
                Matrix& out, std::vector<int>& labels) {
  const std::size_t classes = means.rows();
  const std::size_t dim = means.cols();
  const std::size_t n = classes * per_class;
  const auto noisy = static_cast<std::size_t>(std::floor(noise_frac * static_cast<double>(per_class) + 0.5));
  std::normal_distribution<double> gauss(0.0, 1.0);

  Matrix x(n, dim);
  std::vector<int> y(n);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> slots(per_class);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    std::vector<bool> blended(per_class, false);
    for (std::size_t i = 0; i < std::min(noisy, per_class); ++i) blended[slots[i]] = true;
    const std::size_t other = (c + 1) % classes;
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t r = c * per_class + i;
      y[r] = static_cast<int>(c);
      auto row = x.row(r);
      for (std::size_t j = 0; j < dim; ++j) {
        const double mu = blended[i] ? 0.5 * (means(c, j) + means(other, j)) : means(c, j);
        row[j] = mu + spread * gauss(rng);
      }
    }
  }
  // present rows in random order
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  out = Matrix(n, dim);
  labels.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(x.row(order[r]).begin(), x.row(order[r]).end(), out.row(r).begin());
    labels[r] = y[order[r]];
  }
}

}  // namespace detail

inline SynthDataset synth_dataset(const SynthOptions& opt) {
  if (opt.classes < 1 || opt.per_class < 1 || opt.dim < 1) throw ParameterError("synth counts must be >= 1");
  if (opt.spread < 0.0) throw ParameterError("spread must be >= 0");
  if (opt.noise_frac < 0.0 || opt.noise_frac > 1.0) throw ParameterError("noise_frac must be in [0, 1]");
  SynthDataset ds;
  auto rng = make_rng(opt.seed, SeedStream::synth_train);
  ds.class_means = equiangular_means(opt.classes, opt.dim, opt.separation, rng);
  detail::draw_split(ds.class_means, opt.per_class, opt.spread, opt.noise_frac, rng, ds.train, ds.train_labels);
  if (opt.test_per_class > 0) {
    auto test_rng = make_rng(opt.seed, SeedStream::synth_test);
    detail::draw_split(ds.class_means, opt.test_per_class, opt.spread, opt.noise_frac, test_rng, ds.test,
                       ds.test_labels);
  }
  return ds;
}

}  // namespace ufcl
