#include <gtest/gtest.h>

#include <random>

#include "ssc/perf.hpp"

using namespace ssc;

namespace {

std::vector<NetworkConfig> configs() {
  std::vector<NetworkConfig> out;
  NetworkConfig c;
  out.push_back(c);
  c.normalization = true;
  out.push_back(c);
  NetworkConfig w;
  w.num_classes = 3;
  w.stem_channels = 3;
  w.stage_channels = {4, 6, 8};
  w.blocks_per_stage = {1, 2, 1};
  w.agg_channels = 6;
  w.attention_reduction = 3;
  w.downsample_factor = 2;
  out.push_back(w);
  w.use_feature_agg = false;
  w.attention_reduction = 2;
  out.push_back(w);
  w.use_ga = false;
  w.use_condition = false;
  out.push_back(w);
  NetworkConfig d;
  d.use_dilation = false;
  d.use_ga = false;
  out.push_back(d);
  return out;
}

}  // namespace

TEST(CountParams, MatchesInstantiatedTensors) {
  for (const auto& c : configs()) EXPECT_EQ(count_params(c), init_params<float>(c, 0).total_elements());
  EXPECT_EQ(count_params(NetworkConfig{}), 99414u);
}

TEST(CountFlops, SingleConvExample) {
  const auto s = ConvSpec::cubic(2, 3, 1);
  const TensorF x({2, 2, 2, 2}, 1.0f), w(s.weight_shape(), 1.0f), b({3}, 0.0f);
  EXPECT_EQ(w.size() + b.size(), 9u);
  OpCounters ops;
  {
    ScopedOpCounting scope(ops);
    conv3d(x, w, b, s);
  }
  EXPECT_EQ(ops.macs, 48u);
}

TEST(CountFlops, MatchesInstrumentedCounters) {
  const std::array<std::size_t, 3> dims{8, 8, 12};
  for (const auto& c : configs()) {
    const auto rep = count_flops(c, dims);
    const auto ops = instrumented_op_count(c, dims, 1);
    EXPECT_EQ(rep.macs, ops.macs);
    EXPECT_EQ(rep.elementwise, ops.elementwise);
    EXPECT_EQ(rep.flops, 2 * rep.macs);
    EXPECT_EQ(rep.params, count_params(c));
    std::uint64_t sum = 0;
    for (const auto& l : rep.layers) sum += l.macs;
    EXPECT_EQ(sum, rep.macs);
  }
}

TEST(CountFlops, DoublingDimsScalesSpatialLayersEightfold) {
  for (const auto& c : configs()) {
    const auto a = count_flops(c, {8, 8, 8}), b = count_flops(c, {16, 16, 16});
    ASSERT_EQ(a.layers.size(), b.layers.size());
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const bool global = a.layers[i].name.rfind("ga.", 0) == 0;  // acts on the pooled vector
      if (global) {
        EXPECT_EQ(b.layers[i].macs, a.layers[i].macs) << a.layers[i].name;
      } else {
        EXPECT_EQ(b.layers[i].macs, 8 * a.layers[i].macs) << a.layers[i].name;
      }
    }
    if (!c.use_ga) EXPECT_EQ(b.macs, 8 * a.macs);
  }
}

TEST(CountFlops, RejectsIndivisibleDims) {
  EXPECT_THROW(count_flops(NetworkConfig{}, {10, 8, 8}), std::invalid_argument);
}

TEST(Percentile, NearestRank) {
  std::vector<double> v(100);
  for (std::size_t i = 0; i < 100; ++i) v[i] = static_cast<double>(100 - i);
  EXPECT_EQ(percentile(v, 50), 50.0);
  EXPECT_EQ(percentile(v, 95), 95.0);
  EXPECT_EQ(percentile(v, 100), 100.0);
  EXPECT_EQ(percentile({5.0}, 95), 5.0);
  EXPECT_THROW(percentile(std::vector<double>{}, 50), std::invalid_argument);
}

TEST(Bench, FillsTimingFields) {
  NetworkConfig c = configs()[2];
  auto rep = count_flops(c, {8, 8, 8});
  bench_inference(rep, init_params<float>(c, 0), c, 1, 9);
  EXPECT_EQ(rep.iters, 9u);
  EXPECT_GT(rep.mean_ms, 0.0);
  EXPECT_GE(rep.p95_ms, rep.p50_ms);
  EXPECT_NEAR(rep.fps, 1000.0 / rep.mean_ms, 1e-9 * rep.fps);
  EXPECT_EQ(rep.precision, "f32");
  EXPECT_NE(rep.to_text().find("FLOPs="), std::string::npos);
  EXPECT_NE(rep.to_csv().find("layer"), std::string::npos);
}
