#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "ufcl/encoder.hpp"

using namespace ufcl;

namespace {

FeatureTensor random_tensor(std::size_t w, std::size_t h, std::size_t k, std::mt19937_64& rng, double lo = 0.1,
                            double hi = 10.0) {
  return FeatureTensor(w, h, k, oracle::random_vector(w * h * k, rng, lo, hi));
}

EncoderParams random_encoder(EncoderShape s, std::mt19937_64& rng) {
  auto p = make_encoder(s, rng);
  for (double& e : p.gem_exponents) e = std::uniform_real_distribution<double>(1.0, 4.0)(rng);
  return p;
}

}  // namespace

TEST(GemPool, AverageAtOne) {
  FeatureTensor x(2, 1, 1, {1.0, 3.0});
  const std::vector<double> p{1.0};
  EXPECT_NEAR(gem_pool(x, p)[0], 2.0, 1e-12);
}

TEST(GemPool, MaxForLargeExponent) {
  FeatureTensor x(2, 1, 1, {1.0, 3.0});
  const std::vector<double> p{1000.0};
  EXPECT_NEAR(gem_pool(x, p)[0], 3.0, 0.01);
}

TEST(GemPool, CubicMean) {
  FeatureTensor x(1, 2, 1, {1.0, 2.0});
  const std::vector<double> p{3.0};
  EXPECT_NEAR(gem_pool(x, p)[0], std::cbrt(4.5), 1e-12);
}

TEST(GemPool, ChannelsAreIndependent) {
  // (h, w, k) layout: channel 0 holds 1, 3; channel 1 holds 4, 4
  FeatureTensor x(2, 1, 2, {1.0, 4.0, 3.0, 4.0});
  const std::vector<double> p{1.0, 7.0};
  const auto y = gem_pool(x, p);
  EXPECT_NEAR(y[0], 2.0, 1e-12);
  EXPECT_NEAR(y[1], 4.0, 1e-12);
}

TEST(GemPool, DomainErrors) {
  FeatureTensor x(2, 1, 1, {1.0, -3.0});
  EXPECT_THROW(gem_pool(x, std::vector<double>{2.0}), DomainError);
  FeatureTensor ok(2, 1, 1, {1.0, 3.0});
  EXPECT_THROW(gem_pool(ok, std::vector<double>{0.0}), DomainError);
  EXPECT_THROW(gem_pool(ok, std::vector<double>{-1.0}), DomainError);
  EXPECT_THROW(gem_pool(ok, std::vector<double>{1.0, 2.0}), ShapeError);
  EXPECT_THROW(gem_pool_backward(x, std::vector<double>{2.0}, std::vector<double>{1.0}), DomainError);
}

TEST(GemPool, NonDecreasingInExponentAndBounded) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor(3, 4, 1, rng, 0.0, 5.0);
    double mean = 0.0, mx = 0.0;
    for (double v : x.values) {
      mean += v / 12.0;
      mx = std::max(mx, v);
    }
    double prev = 0.0;
    for (double p = 1.0; p <= 64.0; p *= 1.5) {
      const double y = gem_pool(x, std::vector<double>{p})[0];
      EXPECT_GE(y, prev - 1e-12);
      EXPECT_GE(y, mean - 1e-12);
      EXPECT_LE(y, mx + 1e-12);
      prev = y;
    }
  }
}

TEST(GemPool, LargeExponentDoesNotOverflow) {
  FeatureTensor x(3, 1, 1, {1e3, 2e3, 5e2});
  const double y = gem_pool(x, std::vector<double>{500.0})[0];
  EXPECT_TRUE(std::isfinite(y));
  EXPECT_NEAR(y / 2e3, 1.0, 0.01);
}

TEST(GemPoolBackward, LinearCaseGradient) {
  FeatureTensor x(2, 3, 1, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  const auto g = gem_pool_backward(x, std::vector<double>{1.0}, std::vector<double>{1.0});
  for (double v : g.tensor) EXPECT_NEAR(v, 1.0 / 6.0, 1e-12);
}

TEST(GemPoolBackward, SymmetricInputEqualGradients) {
  FeatureTensor x(2, 1, 1, {2.5, 2.5});
  const auto g = gem_pool_backward(x, std::vector<double>{3.7}, std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(g.tensor[0], g.tensor[1]);
}

TEST(GemPoolBackward, ZeroEntriesGetZeroGradient) {
  FeatureTensor x(3, 1, 1, {0.0, 1.0, 2.0});
  const auto g = gem_pool_backward(x, std::vector<double>{0.5}, std::vector<double>{1.0});
  EXPECT_EQ(g.tensor[0], 0.0);
  EXPECT_TRUE(std::isfinite(g.exponents[0]));
}

TEST(GemPoolBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_tensor(3, 2, 2, rng);
    const std::vector<double> p{2.5, std::uniform_real_distribution<double>(0.5, 6.0)(rng)};
    const auto up = oracle::random_vector(2, rng);
    const auto g = gem_pool_backward(x, p, up);
    auto loss_x = [&](const std::vector<double>& v) {
      const auto y = gem_pool(FeatureTensor(3, 2, 2, v), p);
      return up[0] * y[0] + up[1] * y[1];
    };
    auto loss_p = [&](const std::vector<double>& q) {
      const auto y = gem_pool(x, q);
      return up[0] * y[0] + up[1] * y[1];
    };
    EXPECT_LT(oracle::relative_error(g.tensor, oracle::numeric_gradient(loss_x, x.values)), 1e-4);
    EXPECT_LT(oracle::relative_error(g.exponents, oracle::numeric_gradient(loss_p, p)), 1e-4);
  }
}

TEST(L2Normalize, ThreeFourFive) {
  const auto y = l2_normalize(std::vector<double>{3.0, 4.0});
  EXPECT_DOUBLE_EQ(y[0], 0.6);
  EXPECT_DOUBLE_EQ(y[1], 0.8);
}

TEST(L2Normalize, UnitVectorIsFixed) {
  const std::vector<double> u{0.0, 1.0, 0.0};
  EXPECT_EQ(l2_normalize(u), u);
}

TEST(L2Normalize, ZeroVectorIsDegenerate) {
  EXPECT_THROW(l2_normalize(std::vector<double>{0.0, 0.0}), DegenerateInputError);
  EXPECT_THROW(l2_normalize_backward(std::vector<double>{0.0}, std::vector<double>{1.0}), DegenerateInputError);
}

TEST(L2Normalize, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = oracle::random_vector(6, rng);
    const auto up = oracle::random_vector(6, rng);
    auto f = [&](const std::vector<double>& x) {
      const auto y = l2_normalize(x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += up[i] * y[i];
      return s;
    };
    EXPECT_LT(oracle::relative_error(l2_normalize_backward(v, up), oracle::numeric_gradient(f, v)), 1e-5);
  }
}

TEST(Encoder, IdentityWeightsKeepUnitInput) {
  EncoderParams p;
  p.shape = EncoderShape{3, 0, 3};
  p.weights = Matrix{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const std::vector<double> x{0.6, 0.0, 0.8};
  const auto y = encoder_forward(p, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], x[i], 1e-15);
}

TEST(Encoder, ZeroWeightsAreDegenerate) {
  EncoderParams p;
  p.shape = EncoderShape{2, 0, 2};
  p.weights = Matrix(2, 2);
  EXPECT_THROW(encoder_forward(p, std::vector<double>{1.0, 2.0}), DegenerateInputError);
}

TEST(Encoder, DimensionMismatchIsShapeError) {
  std::mt19937_64 rng(1);
  const auto p = make_encoder(EncoderShape{4, 0, 2}, rng);
  EXPECT_THROW(encoder_forward(p, std::vector<double>{1.0, 2.0}), ShapeError);
  EncoderShape gem{12, 0, 2, true, 2, 2};
  const auto q = make_encoder(gem, rng);
  EXPECT_THROW(encoder_forward(q, FeatureTensor(3, 2, 2, std::vector<double>(12, 1.0))), ShapeError);
}

TEST(Encoder, MatchesCompositionOfGemAndNormalize) {
  std::mt19937_64 rng(7);
  EncoderShape s{2 * 3 * 4, 0, 5, true, 3, 2};
  const auto p = random_encoder(s, rng);
  const auto x = random_tensor(2, 3, 4, rng);
  const auto pooled = gem_pool(x, p.gem_exponents);
  std::vector<double> z(5, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) z[j] += pooled[i] * p.weights(i, j);
  }
  const auto expect = l2_normalize(z);
  const auto got = encoder_forward(p, x);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(got[j], expect[j], 1e-14);
}

TEST(Encoder, OutputHasUnitNorm) {
  std::mt19937_64 rng(9);
  for (const auto& s : {EncoderShape{8, 0, 4}, EncoderShape{8, 6, 4}, EncoderShape{8, 3, 4, true, 2, 1}}) {
    const auto p = random_encoder(s, rng);
    for (int t = 0; t < 20; ++t) {
      const auto y = encoder_forward(p, oracle::random_vector(8, rng, 0.0, 2.0));
      EXPECT_NEAR(norm(y), 1.0, 1e-9);
    }
  }
}

TEST(Encoder, InitialGemExponentsAreThree) {
  std::mt19937_64 rng(1);
  const auto p = make_encoder(EncoderShape{12, 0, 2, true, 2, 2}, rng);
  ASSERT_EQ(p.gem_exponents.size(), 3u);
  for (double e : p.gem_exponents) EXPECT_EQ(e, 3.0);
}

namespace {

// Flattens every parameter so finite differences can perturb them uniformly.
std::vector<double> flatten(const EncoderParams& p) {
  std::vector<double> v(p.hidden_weights.values());
  v.insert(v.end(), p.weights.values().begin(), p.weights.values().end());
  v.insert(v.end(), p.gem_exponents.begin(), p.gem_exponents.end());
  return v;
}

EncoderParams unflatten(EncoderParams p, const std::vector<double>& v) {
  std::size_t i = 0;
  for (double& x : p.hidden_weights.values()) x = v[i++];
  for (double& x : p.weights.values()) x = v[i++];
  for (double& x : p.gem_exponents) x = v[i++];
  return p;
}

std::vector<double> flatten(const EncoderGradients& g) {
  std::vector<double> v(g.hidden_weights.values());
  v.insert(v.end(), g.weights.values().begin(), g.weights.values().end());
  v.insert(v.end(), g.gem_exponents.begin(), g.gem_exponents.end());
  return v;
}

void check_encoder_gradient(const EncoderShape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto p = random_encoder(s, rng);
  const auto x = oracle::random_vector(s.input_dim, rng, 0.1, 3.0);
  const auto up = oracle::random_vector(s.output_dim, rng);
  auto g = EncoderGradients::zeros_like(p);
  encoder_backward(p, x, encoder_forward_trace(p, x), up, g);
  auto f = [&](const std::vector<double>& v) {
    const auto y = encoder_forward(unflatten(p, v), x);
    double t = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) t += up[j] * y[j];
    return t;
  };
  EXPECT_LT(oracle::relative_error(flatten(g), oracle::numeric_gradient(f, flatten(p))), 1e-4);
}

}  // namespace

TEST(EncoderBackward, LinearMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 30; ++s) check_encoder_gradient(EncoderShape{6, 0, 4}, s);
}

TEST(EncoderBackward, HiddenLayerMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 30; ++s) check_encoder_gradient(EncoderShape{6, 5, 3}, 100 + s);
}

TEST(EncoderBackward, GemMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 30; ++s) check_encoder_gradient(EncoderShape{2 * 2 * 3, 4, 3, true, 2, 2}, 200 + s);
}

TEST(EncoderBackward, SharedGemExponentSumsChannelGradients) {
  std::mt19937_64 rng(4);
  EncoderShape s{2 * 2 * 3, 0, 3, true, 2, 2, true};
  auto p = make_encoder(s, rng);
  const auto x = oracle::random_vector(12, rng, 0.1, 3.0);
  const auto up = oracle::random_vector(3, rng);
  auto g = EncoderGradients::zeros_like(p);
  encoder_backward(p, x, encoder_forward_trace(p, x), up, g);
  // all channels share one value, so d/dp is the directional derivative along (1,1,1)
  auto f = [&](double e) {
    auto q = p;
    for (double& v : q.gem_exponents) v = e;
    const auto y = encoder_forward(q, x);
    return up[0] * y[0] + up[1] * y[1] + up[2] * y[2];
  };
  const double h = 1e-6;
  const double fd = (f(3.0 + h) - f(3.0 - h)) / (2 * h);
  for (double v : g.gem_exponents) EXPECT_NEAR(v, fd, 1e-6 * std::max(1.0, std::abs(fd)));
}

TEST(Adam, DefaultsMatchPublishedSettings) {
  AdamState a;
  EXPECT_EQ(a.lr, 0.00035);
  EXPECT_EQ(a.weight_decay, 5e-4);
  EXPECT_EQ(a.beta1, 0.9);
  EXPECT_EQ(a.beta2, 0.999);
  EXPECT_EQ(a.epsilon, 1e-8);
}

TEST(Adam, ZeroGradientNoDecayLeavesParameters) {
  std::mt19937_64 rng(2);
  auto p = make_encoder(EncoderShape{4, 3, 2}, rng);
  p.optimizer.weight_decay = 0.0;
  const auto before = p;
  adam_step(p, EncoderGradients::zeros_like(p));
  EXPECT_EQ(p.weights, before.weights);
  EXPECT_EQ(p.hidden_weights, before.hidden_weights);
}

TEST(Adam, ScalarStepMatchesHandRecurrence) {
  EncoderParams p;
  p.shape = EncoderShape{1, 0, 1};
  p.weights = Matrix{{0.5}};
  p.optimizer.lr = 0.1;
  p.optimizer.weight_decay = 0.01;
  EncoderGradients g{Matrix(), Matrix{{0.2}}, {}};
  // step 1: m = 0.02, v = 4e-5, m_hat = 0.2, v_hat = 0.04
  double theta = 0.5;
  theta -= 0.1 * 0.01 * theta;
  theta -= 0.1 * 0.2 / (0.2 + 1e-8);
  adam_step(p, g);
  EXPECT_NEAR(p.weights(0, 0), theta, 1e-15);
  // step 2 with gradient -0.4
  g.weights(0, 0) = -0.4;
  const double m = 0.9 * 0.02 + 0.1 * -0.4;
  const double v = 0.999 * 4e-5 + 0.001 * 0.16;
  const double mh = m / (1 - 0.81);
  const double vh = v / (1 - 0.999 * 0.999);
  theta -= 0.1 * 0.01 * theta;
  theta -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
  adam_step(p, g);
  EXPECT_NEAR(p.weights(0, 0), theta, 1e-14);
  EXPECT_EQ(p.optimizer.step, 2u);
}

TEST(Adam, GemExponentsAreNotDecayedAndStayPositive) {
  std::mt19937_64 rng(6);
  auto p = make_encoder(EncoderShape{4, 0, 2, true, 2, 1}, rng);
  p.optimizer.weight_decay = 0.5;
  adam_step(p, EncoderGradients::zeros_like(p));
  for (double e : p.gem_exponents) EXPECT_EQ(e, 3.0);
  p.gem_exponents = {0.002, 0.002};
  p.optimizer.lr = 1.0;
  auto g = EncoderGradients::zeros_like(p);
  g.gem_exponents = {100.0, 100.0};
  adam_step(p, g);
  for (double e : p.gem_exponents) EXPECT_EQ(e, kMinGemExponent);
}

TEST(Adam, NonFiniteGradientLeavesParametersUnchanged) {
  std::mt19937_64 rng(8);
  auto p = make_encoder(EncoderShape{3, 0, 2}, rng);
  const auto before = p.weights;
  auto g = EncoderGradients::zeros_like(p);
  g.weights(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(adam_step(p, g), NumericError);
  EXPECT_EQ(p.weights, before);
  EXPECT_EQ(p.optimizer.step, 0u);
}

TEST(Adam, Deterministic) {
  std::mt19937_64 rng(10);
  auto a = make_encoder(EncoderShape{5, 4, 3}, rng);
  auto b = a;
  auto g = EncoderGradients::zeros_like(a);
  for (double& v : g.weights.values()) v = 0.3;
  for (double& v : g.hidden_weights.values()) v = -0.1;
  for (int i = 0; i < 5; ++i) {
    adam_step(a, g);
    adam_step(b, g);
  }
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.hidden_weights, b.hidden_weights);
}

TEST(Encoder, EncodeAllIndependentOfThreads) {
  std::mt19937_64 rng(12);
  const auto p = make_encoder(EncoderShape{6, 4, 3}, rng);
  const auto x = oracle::random_matrix(37, 6, rng);
  EXPECT_EQ(encode_all(p, x, 1), encode_all(p, x, 4));
}
