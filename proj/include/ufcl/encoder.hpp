#pragma once

// Desk-scale differentiable encoder: optional GEM pooling, one or two dense
// layers, L2 normalization. Analytic backward passes and an AdamW optimizer.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ufcl/common.hpp"

namespace ufcl {

/// Values below this are clamped before fractional powers are taken.
inline constexpr double kGemClamp = 1e-12;
/// Learned exponents are kept at or above this value after each update.
inline constexpr double kMinGemExponent = 1e-3;
inline constexpr double kDefaultGemExponent = 3.0;

/// W x H x K activations, stored row-major by (h, w, k).
struct FeatureTensor {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  FeatureTensor() = default;
  FeatureTensor(std::size_t w, std::size_t h, std::size_t k, std::vector<double> v)
      : width(w), height(h), channels(k), values(std::move(v)) {
    if (w == 0 || h == 0 || k == 0) throw ShapeError("feature tensor dimensions must be positive");
    if (values.size() != w * h * k) throw ShapeError("feature tensor value count mismatch");
  }

  std::size_t spatial() const noexcept { return width * height; }
  double at(std::size_t h, std::size_t w, std::size_t k) const noexcept {
    return values[(h * width + w) * channels + k];
  }
};

namespace detail {

inline void check_gem_domain(const FeatureTensor& x, std::span<const double> exponents) {
  if (exponents.size() != x.channels) {
    throw ShapeError("expected " + std::to_string(x.channels) + " GEM exponents, got " +
                     std::to_string(exponents.size()));
  }
  for (double p : exponents) {
    if (!(p > 0.0) || !std::isfinite(p)) throw DomainError("GEM exponent must be positive and finite");
  }
  for (double v : x.values) {
    if (!std::isfinite(v)) throw DomainError("GEM input must be finite");
    if (v < 0.0) throw DomainError("GEM input must be non-negative");
  }
}

// Per-channel sufficient statistics, scaled by the channel maximum so that
// large exponents do not overflow: r = x / max, S = mean r^p, T = mean r^p ln r.
struct GemChannelStats {
  double max = 0.0;
  double s = 0.0;
  double t = 0.0;
};

inline GemChannelStats gem_channel_stats(const FeatureTensor& x, std::size_t k, double p) {
  GemChannelStats st;
  const std::size_t n = x.spatial();
  st.max = kGemClamp;
  for (std::size_t i = 0; i < n; ++i) st.max = std::max(st.max, x.values[i * x.channels + k]);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::max(x.values[i * x.channels + k], kGemClamp) / st.max;
    const double rp = std::pow(r, p);
    st.s += rp;
    st.t += rp * std::log(r);
  }
  st.s /= static_cast<double>(n);
  st.t /= static_cast<double>(n);
  return st;
}

}  // namespace detail

/// Generalized-mean pooling over the spatial positions of each channel:
/// f(k) = (mean x^p(k))^(1/p(k)). p = 1 is average pooling, p -> inf is max pooling.
inline std::vector<double> gem_pool(const FeatureTensor& x, std::span<const double> exponents) {
  detail::check_gem_domain(x, exponents);
  std::vector<double> out(x.channels);
  for (std::size_t k = 0; k < x.channels; ++k) {
    const auto st = detail::gem_channel_stats(x, k, exponents[k]);
    out[k] = st.max * std::pow(st.s, 1.0 / exponents[k]);
  }
  return out;
}

struct GemGradients {
  std::vector<double> tensor;     // same layout as FeatureTensor::values
  std::vector<double> exponents;  // one per channel
};

inline GemGradients gem_pool_backward(const FeatureTensor& x, std::span<const double> exponents,
                                      std::span<const double> upstream) {
  detail::check_gem_domain(x, exponents);
  if (upstream.size() != x.channels) throw ShapeError("GEM upstream gradient size mismatch");
  GemGradients g{std::vector<double>(x.values.size(), 0.0), std::vector<double>(x.channels, 0.0)};
  const std::size_t n = x.spatial();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < x.channels; ++k) {
    const double p = exponents[k];
    const auto st = detail::gem_channel_stats(x, k, p);
    const double f = st.max * std::pow(st.s, 1.0 / p);
    // df/dx_j = S^(1/p - 1) r_j^(p-1) / N
    const double scale = std::pow(st.s, 1.0 / p - 1.0) * inv_n;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = i * x.channels + k;
      if (x.values[idx] < kGemClamp) continue;  // subgradient 0 at the clamp
      const double r = x.values[idx] / st.max;
      g.tensor[idx] = upstream[k] * scale * std::pow(r, p - 1.0);
    }
    // df/dp = f (T / (S p) - ln S / p^2)
    g.exponents[k] = upstream[k] * f * (st.t / (st.s * p) - std::log(st.s) / (p * p));
  }
  return g;
}

inline std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = norm(v);
  if (!(n > 0.0)) throw DegenerateInputError("cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

/// Gradient of l2_normalize at `input`: (g - y (y . g)) / |input|.
inline std::vector<double> l2_normalize_backward(std::span<const double> input,
                                                 std::span<const double> upstream) {
  if (input.size() != upstream.size()) throw ShapeError("normalize backward size mismatch");
  const double n = norm(input);
  if (!(n > 0.0)) throw DegenerateInputError("cannot normalize a zero vector");
  double yg = 0.0;
  for (std::size_t i = 0; i < input.size(); ++i) yg += input[i] / n * upstream[i];
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = (upstream[i] - input[i] / n * yg) / n;
  return out;
}

// ---------------------------------------------------------------------------

struct EncoderShape {
  /// Length of one raw input row. With GEM enabled this is H * W * K.
  std::size_t input_dim = 0;
  /// 0 disables the tanh hidden layer.
  std::size_t hidden_dim = 0;
  std::size_t output_dim = 0;
  bool gem = false;
  std::size_t gem_height = 1;
  std::size_t gem_width = 1;
  /// One exponent shared by all channels instead of one per channel.
  bool shared_gem_exponent = false;

  std::size_t pooled_dim() const {
    if (!gem) return input_dim;
    const std::size_t spatial = gem_height * gem_width;
    if (spatial == 0 || input_dim % spatial != 0) {
      throw ShapeError("input_dim is not divisible by gem_height * gem_width");
    }
    return input_dim / spatial;
  }
};

struct AdamState {
  std::uint64_t step = 0;
  double lr = 0.00035;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

/// Parameters are laid out, for the optimizer, as
/// [hidden_weights..., weights..., gem_exponents...].
struct EncoderParams {
  EncoderShape shape;
  Matrix hidden_weights;  // pooled_dim x hidden_dim, empty without a hidden layer
  Matrix weights;         // (hidden_dim or pooled_dim) x output_dim
  std::vector<double> gem_exponents;  // pooled_dim entries, empty without GEM
  AdamState optimizer;

  std::size_t parameter_count() const {
    return hidden_weights.size() + weights.size() + gem_exponents.size();
  }
};

struct EncoderGradients {
  Matrix hidden_weights;
  Matrix weights;
  std::vector<double> gem_exponents;

  static EncoderGradients zeros_like(const EncoderParams& p) {
    return {Matrix(p.hidden_weights.rows(), p.hidden_weights.cols()),
            Matrix(p.weights.rows(), p.weights.cols()),
            std::vector<double>(p.gem_exponents.size(), 0.0)};
  }
};

inline void validate(const EncoderParams& p) {
  const std::size_t pooled = p.shape.pooled_dim();
  const std::size_t last_in = p.shape.hidden_dim ? p.shape.hidden_dim : pooled;
  if (p.shape.output_dim == 0 || pooled == 0) throw ShapeError("encoder dimensions must be positive");
  if (p.shape.hidden_dim &&
      (p.hidden_weights.rows() != pooled || p.hidden_weights.cols() != p.shape.hidden_dim)) {
    throw ShapeError("hidden weight matrix has the wrong shape");
  }
  if (p.weights.rows() != last_in || p.weights.cols() != p.shape.output_dim) {
    throw ShapeError("weight matrix has the wrong shape");
  }
  if (p.shape.gem) {
    if (p.gem_exponents.size() != pooled) throw ShapeError("wrong number of GEM exponents");
    for (double e : p.gem_exponents) {
      if (!(e > 0.0)) throw DomainError("GEM exponents must be strictly positive");
    }
  }
}

/// Gaussian init with variance 1/fan_in; GEM exponents start at 3.
template <typename Rng>
EncoderParams make_encoder(const EncoderShape& shape, Rng& rng) {
  EncoderParams p;
  p.shape = shape;
  const std::size_t pooled = shape.pooled_dim();
  auto init = [&rng](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
    for (double& v : m.values()) v = g(rng);
    return m;
  };
  if (shape.hidden_dim) {
    p.hidden_weights = init(pooled, shape.hidden_dim);
    p.weights = init(shape.hidden_dim, shape.output_dim);
  } else {
    p.weights = init(pooled, shape.output_dim);
  }
  if (shape.gem) p.gem_exponents.assign(pooled, kDefaultGemExponent);
  validate(p);
  return p;
}

/// Intermediate values kept for the backward pass.
struct EncoderTrace {
  std::vector<double> pooled;  // input to the first dense layer
  std::vector<double> hidden;  // tanh activations, empty without a hidden layer
  std::vector<double> pre_norm;
  std::vector<double> output;
};

namespace detail {

inline std::vector<double> affine(std::span<const double> in, const Matrix& w) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double a = in[i];
    if (a == 0.0) continue;
    const auto row = w.row(i);
    for (std::size_t j = 0; j < w.cols(); ++j) out[j] += a * row[j];
  }
  return out;
}

inline FeatureTensor as_tensor(const EncoderShape& s, std::span<const double> raw) {
  return FeatureTensor(s.gem_width, s.gem_height, s.pooled_dim(),
                       std::vector<double>(raw.begin(), raw.end()));
}

}  // namespace detail

inline EncoderTrace encoder_forward_trace(const EncoderParams& p, std::span<const double> input) {
  if (input.size() != p.shape.input_dim) {
    throw ShapeError("encoder expects input of length " + std::to_string(p.shape.input_dim) +
                     ", got " + std::to_string(input.size()));
  }
  EncoderTrace t;
  if (p.shape.gem) {
    t.pooled = gem_pool(detail::as_tensor(p.shape, input), p.gem_exponents);
  } else {
    t.pooled.assign(input.begin(), input.end());
  }
  if (p.shape.hidden_dim) {
    t.hidden = detail::affine(t.pooled, p.hidden_weights);
    for (double& h : t.hidden) h = std::tanh(h);
    t.pre_norm = detail::affine(t.hidden, p.weights);
  } else {
    t.pre_norm = detail::affine(t.pooled, p.weights);
  }
  t.output = l2_normalize(t.pre_norm);
  return t;
}

inline std::vector<double> encoder_forward(const EncoderParams& p, std::span<const double> input) {
  return encoder_forward_trace(p, input).output;
}

inline std::vector<double> encoder_forward(const EncoderParams& p, const FeatureTensor& input) {
  if (!p.shape.gem || input.width != p.shape.gem_width || input.height != p.shape.gem_height) {
    throw ShapeError("tensor input does not match the encoder's GEM shape");
  }
  return encoder_forward(p, std::span<const double>(input.values));
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
inline void encoder_backward(const EncoderParams& p, std::span<const double> input,
                             const EncoderTrace& trace, std::span<const double> upstream,
                             EncoderGradients& grads) {
  const auto g_pre = l2_normalize_backward(trace.pre_norm, upstream);
  const auto& last_in = p.shape.hidden_dim ? trace.hidden : trace.pooled;
  for (std::size_t i = 0; i < p.weights.rows(); ++i) {
    const double a = last_in[i];
    auto row = grads.weights.row(i);
    for (std::size_t j = 0; j < p.weights.cols(); ++j) row[j] += a * g_pre[j];
  }
  const bool need_pooled_grad = p.shape.gem;
  if (!p.shape.hidden_dim && !need_pooled_grad) return;

  // gradient w.r.t. the input of the last dense layer
  std::vector<double> g_in(p.weights.rows(), 0.0);
  for (std::size_t i = 0; i < p.weights.rows(); ++i) g_in[i] = dot(p.weights.row(i), g_pre);

  std::vector<double> g_pooled;
  if (p.shape.hidden_dim) {
    for (std::size_t i = 0; i < g_in.size(); ++i) g_in[i] *= 1.0 - trace.hidden[i] * trace.hidden[i];
    for (std::size_t i = 0; i < p.hidden_weights.rows(); ++i) {
      const double a = trace.pooled[i];
      auto row = grads.hidden_weights.row(i);
      for (std::size_t j = 0; j < p.hidden_weights.cols(); ++j) row[j] += a * g_in[j];
    }
    if (!need_pooled_grad) return;
    g_pooled.assign(p.hidden_weights.rows(), 0.0);
    for (std::size_t i = 0; i < p.hidden_weights.rows(); ++i) {
      g_pooled[i] = dot(p.hidden_weights.row(i), g_in);
    }
  } else {
    g_pooled = std::move(g_in);
  }
  const auto gg = gem_pool_backward(detail::as_tensor(p.shape, input), p.gem_exponents, g_pooled);
  if (p.shape.shared_gem_exponent) {
    double total = 0.0;
    for (double g : gg.exponents) total += g;
    for (double& g : grads.gem_exponents) g += total;
  } else {
    for (std::size_t k = 0; k < gg.exponents.size(); ++k) grads.gem_exponents[k] += gg.exponents[k];
  }
}

/// One AdamW update. Weight decay is decoupled and touches the dense weights
/// only, never the GEM exponents. A non-finite gradient leaves `p` untouched.
inline void adam_step(EncoderParams& p, const EncoderGradients& g) {
  if (g.hidden_weights.size() != p.hidden_weights.size() || g.weights.size() != p.weights.size() ||
      g.gem_exponents.size() != p.gem_exponents.size()) {
    throw ShapeError("gradients are not congruent with parameters");
  }
  if (!all_finite(g.hidden_weights.values()) || !all_finite(g.weights.values()) ||
      !all_finite(g.gem_exponents)) {
    throw NumericError("non-finite gradient; update skipped");
  }
  auto& opt = p.optimizer;
  const std::size_t total = p.parameter_count();
  if (opt.first_moment.size() != total) {
    opt.first_moment.assign(total, 0.0);
    opt.second_moment.assign(total, 0.0);
  }
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);

  std::size_t idx = 0;
  auto update = [&](double& theta, double grad, bool decay) {
    double& m = opt.first_moment[idx];
    double& v = opt.second_moment[idx];
    ++idx;
    m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
    v = opt.beta2 * v + (1.0 - opt.beta2) * grad * grad;
    const double step = opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.epsilon);
    if (decay) theta -= opt.lr * opt.weight_decay * theta;
    theta -= step;
  };
  for (std::size_t i = 0; i < p.hidden_weights.size(); ++i) {
    update(p.hidden_weights.values()[i], g.hidden_weights.values()[i], true);
  }
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    update(p.weights.values()[i], g.weights.values()[i], true);
  }
  for (std::size_t k = 0; k < p.gem_exponents.size(); ++k) {
    update(p.gem_exponents[k], g.gem_exponents[k], false);
    p.gem_exponents[k] = std::max(p.gem_exponents[k], kMinGemExponent);
  }
}

/// Encodes every row of `inputs`; rows are independent so the result is the
/// same for any thread count.
inline Matrix encode_all(const EncoderParams& p, const Matrix& inputs, std::size_t threads = 1) {
  Matrix out(inputs.rows(), p.shape.output_dim);
  parallel_for(inputs.rows(), threads, [&](std::size_t i) {
    const auto y = encoder_forward(p, inputs.row(i));
    std::copy(y.begin(), y.end(), out.row(i).begin());
  });
  return out;
}

}  // namespace ufcl
