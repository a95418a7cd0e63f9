#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "ssc/ops.hpp"
#include "ssc/parallel.hpp"

using namespace ssc;
using oracle::random_tensor;

namespace {

ConvSpec random_spec(std::mt19937_64& rng, bool big_dilation) {
  ConvSpec s;
  for (int a = 0; a < 3; ++a) {
    s.kernel[a] = oracle::pick(rng, 1, 3);
    s.stride[a] = oracle::pick(rng, 1, 2);
    s.dilation[a] = big_dilation ? (rng() % 2 ? 2 : 8) : oracle::pick(rng, 1, 2);
    s.padding[a] = oracle::pick(rng, 0, s.dilation[a] * (s.kernel[a] - 1));
  }
  s.in_channels = oracle::pick(rng, 1, 3);
  s.out_channels = oracle::pick(rng, 1, 3);
  return s;
}

Shape input_shape_for(const ConvSpec& s, std::mt19937_64& rng) {
  Shape sh{s.in_channels};
  for (int a = 0; a < 3; ++a) {
    const std::size_t reach = s.dilation[a] * (s.kernel[a] - 1) + 1;
    // guarantee at least one output, sometimes only just
    const std::size_t lo = reach > 2 * s.padding[a] ? reach - 2 * s.padding[a] : 1;
    sh.push_back(oracle::pick(rng, lo, lo + 5));
  }
  return sh;
}

}  // namespace

TEST(Conv3d, OutputExtentFormula) {
  auto s = ConvSpec::cubic(1, 1, 3, 2, 2);
  EXPECT_EQ(s.padding[0], 2u);
  EXPECT_EQ(s.output_extent(0, 9), (9 + 4 - 4 - 1) / 2 + 1);
  ConvSpec tight;
  tight.kernel = {3, 3, 3};
  tight.dilation = {8, 8, 8};
  EXPECT_THROW(tight.output_extent(0, 16), std::invalid_argument);
  EXPECT_EQ(tight.output_extent(0, 17), 1u);
}

TEST(Conv3d, MatchesOracleOnRandomSpecs) {
  std::mt19937_64 rng(11);
  int cases = 0, big = 0;
  for (int i = 0; i < 160; ++i) {
    const bool big_dilation = i % 2 == 1;
    const ConvSpec s = random_spec(rng, big_dilation);
    const Shape xs = input_shape_for(s, rng);
    const TensorD x = random_tensor(xs, rng);
    const TensorD w = random_tensor(s.weight_shape(), rng);
    const TensorD b = random_tensor({s.out_channels}, rng);
    const TensorD want = oracle::conv3d(x, w, b, s);
    const TensorD got = conv3d(x, w, b, s);
    const TensorD ref = conv3d_reference(x, w, b, s);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t j = 0; j < want.size(); ++j) {
      ASSERT_NEAR(got[j], want[j], 1e-12) << "case " << i;
      ASSERT_NEAR(ref[j], want[j], 1e-12) << "case " << i;
    }
    ++cases;
    big += big_dilation;
  }
  EXPECT_GE(cases, 100);
  EXPECT_GE(big, 50);
}

TEST(Conv3d, FloatAgreesWithDouble) {
  std::mt19937_64 rng(5);
  const auto s = ConvSpec::cubic(3, 4, 3, 1, 2);
  const TensorD x = random_tensor({3, 7, 6, 5}, rng);
  const TensorD w = random_tensor(s.weight_shape(), rng);
  const TensorD b = random_tensor({4}, rng);
  const auto yd = conv3d(x, w, b, s);
  const auto yf = conv3d(x.cast<float>(), w.cast<float>(), b.cast<float>(), s);
  for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-5);
}

TEST(Conv3d, ThreadCountDoesNotChangeResult) {
  std::mt19937_64 rng(6);
  const auto s = ConvSpec::cubic(4, 6, 3, 1, 1);
  const TensorF x = random_tensor({4, 8, 8, 8}, rng).cast<float>();
  const TensorF w = random_tensor(s.weight_shape(), rng).cast<float>();
  const TensorF b = random_tensor({6}, rng).cast<float>();
  TensorF one, many;
  {
    ScopedThreads t(1);
    one = conv3d(x, w, b, s);
  }
  {
    ScopedThreads t(4);
    many = conv3d(x, w, b, s);
  }
  EXPECT_EQ(one, many);
}

TEST(Conv3d, ShapeErrors) {
  const auto s = ConvSpec::cubic(2, 3, 3);
  TensorD x({1, 4, 4, 4}), w(s.weight_shape()), b({3});
  EXPECT_THROW(conv3d(x, w, b, s), std::invalid_argument);
  TensorD x2({2, 4, 4, 4}), b2({2});
  EXPECT_THROW(conv3d(x2, w, b2, s), std::invalid_argument);
}

// Vector-Jacobian checks: L = sum(g .* conv(x, w, b)).
TEST(Conv3d, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  double worst = 0.0;
  for (int seed = 0; seed < 110; ++seed) {
    const ConvSpec s = random_spec(rng, seed % 3 == 0);
    const Shape xs = input_shape_for(s, rng);
    TensorD x = random_tensor(xs, rng);
    TensorD w = random_tensor(s.weight_shape(), rng);
    TensorD b = random_tensor({s.out_channels}, rng);
    const TensorD y = conv3d(x, w, b, s);
    const TensorD g = random_tensor(y.shape(), rng);
    const auto grads = conv3d_backward(g, x, w, s);
    auto f = [&] { return oracle::dot(g, conv3d(x, w, b, s)); };
    // linear in each argument, so the stencil is exact up to rounding
    worst = std::max(worst, oracle::max_rel(grads.input, oracle::numeric_grad(x, f), 1e-6));
    worst = std::max(worst, oracle::max_rel(grads.weights, oracle::numeric_grad(w, f), 1e-6));
    worst = std::max(worst, oracle::max_rel(grads.bias, oracle::numeric_grad(b, f), 1e-6));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Pointwise, ReluAndBackward) {
  TensorD x({1, 1, 1, 4}, std::vector<double>{-1.0, 0.0, 0.5, 2.0});
  const auto y = relu(x);
  EXPECT_EQ(y, TensorD({1, 1, 1, 4}, std::vector<double>{0.0, 0.0, 0.5, 2.0}));
  const TensorD g({1, 1, 1, 4}, std::vector<double>{1, 1, 1, 1});
  EXPECT_EQ(relu_backward(g, y), TensorD({1, 1, 1, 4}, std::vector<double>{0, 0, 1, 1}));
}

TEST(Pointwise, SigmoidBackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  TensorD x = random_tensor({2, 3, 2, 2}, rng, -4, 4);
  const TensorD g = random_tensor(x.shape(), rng);
  const auto an = sigmoid_backward(g, sigmoid(x));
  const auto num = oracle::numeric_grad(x, [&] { return oracle::dot(g, sigmoid(x)); });
  EXPECT_LT(oracle::max_rel(an, num), 1e-8);
  EXPECT_NEAR(sigmoid(TensorD({1}, std::vector<double>{0.0}))[0], 0.5, 0);
}

TEST(Pointwise, ScalePerChannel) {
  std::mt19937_64 rng(4);
  TensorD x = random_tensor({3, 2, 2, 2}, rng);
  TensorD s = random_tensor({3, 1, 1, 1}, rng);
  const auto y = scale_per_channel(x, s);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(y[c * 8 + i], x[c * 8 + i] * s[c]);
  const TensorD g = random_tensor(y.shape(), rng);
  const auto an = scale_per_channel_backward(g, x, s);
  auto f = [&] { return oracle::dot(g, scale_per_channel(x, s)); };
  EXPECT_LT(oracle::max_rel(an.x, oracle::numeric_grad(x, f)), 1e-8);
  EXPECT_LT(oracle::max_rel(an.scale, oracle::numeric_grad(s, f)), 1e-8);
}

TEST(Pool, GlobalAverageAndBackward) {
  std::mt19937_64 rng(8);
  TensorD x = random_tensor({4, 3, 5, 2}, rng);
  const auto p = global_avg_pool3d(x);
  ASSERT_EQ(p.shape(), (Shape{4, 1, 1, 1}));
  for (std::size_t c = 0; c < 4; ++c) {
    const double m = std::accumulate(x.raw() + c * 30, x.raw() + (c + 1) * 30, 0.0) / 30.0;
    EXPECT_NEAR(p[c], m, 1e-14);
  }
  const TensorD g = random_tensor(p.shape(), rng);
  const auto an = global_avg_pool3d_backward(g, volume_dims(x));
  const auto num = oracle::numeric_grad(x, [&] { return oracle::dot(g, global_avg_pool3d(x)); });
  EXPECT_LT(oracle::max_rel(an, num), 1e-8);
}

TEST(Upsample, LinearRampIsReproducedExactly) {
  // a ramp sampled at the corner-aligned positions stays a ramp
  TensorD x({1, 3, 2, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 4; ++k) x.at({0, i, j, k}) = 1.0 * i + 10.0 * j + 100.0 * k;
  const Triple f{2, 3, 4};
  const auto y = upsample3d(x, f);
  ASSERT_EQ(y.shape(), (Shape{1, 6, 6, 16}));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t k = 0; k < 16; ++k) {
        const double want = 1.0 * i * 2 / 5 + 10.0 * j * 1 / 5 + 100.0 * k * 3 / 15;
        ASSERT_NEAR(y.at({0, i, j, k}), want, 1e-12);
      }
}

TEST(Upsample, MatchesOracleAndCornersAreCopied) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    const Shape s{oracle::pick(rng, 1, 3), oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 4)};
    const TensorD x = random_tensor(s, rng);
    const Triple f{oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 4)};
    const auto y = upsample3d(x, f);
    const std::size_t out[3] = {s[1] * f[0], s[2] * f[1], s[3] * f[2]};
    for (std::size_t c = 0; c < s[0]; ++c)
      for (std::size_t i = 0; i < out[0]; ++i)
        for (std::size_t j = 0; j < out[1]; ++j)
          for (std::size_t k = 0; k < out[2]; ++k) {
            const std::size_t o[3] = {i, j, k};
            ASSERT_NEAR(y.at({c, i, j, k}), oracle::trilinear_at(x, c, o, out), 1e-12);
          }
    EXPECT_DOUBLE_EQ(y.at({0, out[0] - 1, out[1] - 1, out[2] - 1}), x.at({0, s[1] - 1, s[2] - 1, s[3] - 1}));
    EXPECT_DOUBLE_EQ(y[0], x[0]);
  }
}

TEST(Upsample, BackwardIsAdjoint) {
  std::mt19937_64 rng(10);
  TensorD x = random_tensor({2, 3, 2, 3}, rng);
  const Triple f{4, 2, 3};
  const auto y = upsample3d(x, f);
  const TensorD g = random_tensor(y.shape(), rng);
  const auto an = upsample3d_backward(g, volume_dims(x), f);
  const auto num = oracle::numeric_grad(x, [&] { return oracle::dot(g, upsample3d(x, f)); });
  EXPECT_LT(oracle::max_rel(an, num, 1e-6), 1e-8);
}

TEST(Concat, StacksChannelsAndSplitsGradient) {
  std::mt19937_64 rng(12);
  const TensorD a = random_tensor({2, 2, 3, 2}, rng), b = random_tensor({3, 2, 3, 2}, rng);
  const auto y = concat_channels<double>({&a, &b});
  ASSERT_EQ(y.shape(), (Shape{5, 2, 3, 2}));
  EXPECT_TRUE(std::equal(a.raw(), a.raw() + a.size(), y.raw()));
  EXPECT_TRUE(std::equal(b.raw(), b.raw() + b.size(), y.raw() + a.size()));
  const auto parts = concat_channels_backward(y, {2, 3});
  EXPECT_EQ(parts[0], a);
  EXPECT_EQ(parts[1], b);
  const TensorD bad({1, 2, 3, 3});
  EXPECT_THROW(concat_channels<double>({&a, &bad}), std::invalid_argument);
}

TEST(Softmax, SumsToOneAndMatchesDefinition) {
  std::mt19937_64 rng(13);
  const TensorD z = random_tensor({5, 2, 3, 2}, rng, -30, 30);
  const auto p = softmax_channels(z);
  for (std::size_t v = 0; v < 12; ++v) {
    double sum = 0.0, denom = 0.0, mx = -1e9;
    for (std::size_t c = 0; c < 5; ++c) mx = std::max(mx, z[c * 12 + v]);
    for (std::size_t c = 0; c < 5; ++c) denom += std::exp(z[c * 12 + v] - mx);
    for (std::size_t c = 0; c < 5; ++c) {
      sum += p[c * 12 + v];
      EXPECT_NEAR(p[c * 12 + v], std::exp(z[c * 12 + v] - mx) / denom, 1e-14);
    }
    EXPECT_NEAR(sum, 1.0, 1e-14);
  }
  // shift invariance and no overflow
  TensorD huge({2, 1, 1, 1}, std::vector<double>{1000.0, 1000.0});
  EXPECT_DOUBLE_EQ(softmax_channels(huge)[0], 0.5);
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  TensorD z = random_tensor({4, 2, 2, 3}, rng, -3, 3);
  const TensorD g = random_tensor(z.shape(), rng);
  const auto an = softmax_channels_backward(g, softmax_channels(z));
  const auto num = oracle::numeric_grad(z, [&] { return oracle::dot(g, softmax_channels(z)); });
  EXPECT_LT(oracle::max_rel(an, num, 1e-6), 1e-7);
}

TEST(CrossEntropy, MatchesScalarOracleWithIgnoredVoxels) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 20; ++t) {
    const std::size_t C = oracle::pick(rng, 2, 6);
    TensorD z = random_tensor({C, 3, 2, 4}, rng, -5, 5);
    TensorU8 labels({3, 2, 4}), ignore({3, 2, 4});
    std::vector<int> oracle_labels(24);
    for (std::size_t v = 0; v < 24; ++v) {
      labels[v] = static_cast<std::uint8_t>(rng() % C);
      ignore[v] = rng() % 4 == 0;
      oracle_labels[v] = ignore[v] ? -1 : labels[v];
    }
    const auto ce = cross_entropy(z, labels, ignore);
    EXPECT_NEAR(ce.loss, oracle::cross_entropy(z, oracle_labels), 1e-12);
    EXPECT_EQ(ce.count, static_cast<std::size_t>(std::count_if(oracle_labels.begin(), oracle_labels.end(), [](int l) { return l >= 0; })));
    const auto num = oracle::numeric_grad(z, [&] { return oracle::cross_entropy(z, oracle_labels); });
    EXPECT_LT(oracle::max_rel(ce.grad, num, 1e-6), 1e-6);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  TensorD z({12, 2, 2, 2}, 0.3);
  TensorU8 labels({2, 2, 2}, 7);
  EXPECT_NEAR(cross_entropy(z, labels, TensorU8{}).loss, std::log(12.0), 1e-14);
}

TEST(CrossEntropy, AllIgnoredIsZero) {
  TensorD z({3, 1, 2, 2}, 1.0);
  TensorU8 labels({1, 2, 2}, 0), ignore({1, 2, 2}, 1);
  const auto ce = cross_entropy(z, labels, ignore);
  EXPECT_EQ(ce.loss, 0.0);
  EXPECT_EQ(ce.count, 0u);
  for (double g : ce.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(Argmax, TiesGoToLowestIndex) {
  TensorD z({3, 1, 1, 2}, std::vector<double>{1.0, 0.0, 1.0, 2.0, 0.5, 2.0});
  const auto a = argmax_channels(z);
  EXPECT_EQ(a[0], 0);
  EXPECT_EQ(a[1], 1);
}
