#include "ssc/perf.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ssc/parallel.hpp"

namespace ssc {

std::uint64_t count_params(const NetworkConfig& cfg) {
  cfg.validate();
  using u64 = std::uint64_t;
  const u64 nrm = cfg.normalization ? 2 : 0;
  auto conv = [&](u64 cin, u64 cout, u64 k, bool normed) {
    return cin * cout * k * k * k + cout + (normed ? nrm * cout : 0);
  };
  const u64 s = cfg.stem_channels;
  const u64 c0 = cfg.stage_channels[0], c1 = cfg.stage_channels[1], c2 = cfg.stage_channels[2];
  const u64 agg = cfg.agg_channels, classes = cfg.num_classes + 1;
  u64 n = conv(1, s, 3, true) + conv(s, s, 3, true);
  n += conv(s, c0, 3, true);
  if (cfg.downsample_factor == 4) n += conv(c0, c0, 3, true);
  const u64 widths[3] = {c0, c1, c2};
  for (std::size_t i = 0; i < 3; ++i) {
    if (i > 0 && widths[i] != widths[i - 1]) n += conv(widths[i - 1], widths[i], 1, true);
    n += 2 * cfg.blocks_per_stage[i] * conv(widths[i], widths[i], 3, true);
  }
  const u64 ctx = cfg.use_feature_agg ? agg : c2;
  if (cfg.use_feature_agg) n += conv(c0 + c1 + c2, ctx, 1, false);
  if (cfg.use_ga) {
    const u64 hidden = ctx / cfg.attention_reduction;
    n += conv(ctx, hidden, 1, false) + conv(hidden, ctx, 1, false);
  }
  n += conv(cfg.use_feature_agg ? ctx + s : ctx, agg, 1, false);
  n += conv(agg, 2, 1, false);
  n += conv(agg + (cfg.use_condition ? 2 : 0), classes, 1, false);
  return n;
}

CostReport count_flops(const NetworkConfig& cfg, const std::array<std::size_t, 3>& dims) {
  cfg.validate();
  const std::size_t f = cfg.downsample_factor;
  for (std::size_t a = 0; a < 3; ++a) {
    if (dims[a] == 0 || dims[a] % f != 0) {
      throw std::invalid_argument("dims " + join_sizes({dims.begin(), dims.end()}, 'x') +
                                  " must be positive multiples of downsample_factor " + std::to_string(f));
    }
  }
  CostReport rep;
  rep.dims = dims;
  const Triple full{dims[0], dims[1], dims[2]};
  std::map<std::string, Triple> out_dims;  // spatial extents per conv layer output

  auto input_dims = [&](const std::string& name) -> Triple {
    if (name == "stem.conv1" || name == "stem.conv2" || name == "down.conv1") return full;
    if (name == "down.conv2") return out_dims.at("down.conv1");
    if (name.rfind("ga.", 0) == 0) return {1, 1, 1};
    if (name == "agg.fuse" || name.rfind("head.", 0) == 0) return full;
    return out_dims.at(cfg.downsample_factor == 4 ? "down.conv2" : "down.conv1");  // stages, agg.reduce
  };
  // convs whose output passes through a relu
  auto has_relu = [&](const std::string& name) {
    if (name.rfind("stem.", 0) == 0 || name.rfind("down.", 0) == 0 || name == "ga.fc1" || name == "agg.fuse")
      return true;
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".proj") == 0) return true;
    return name.size() > 6 && name.compare(name.size() - 6, 6, ".conv1") == 0 && name.find(".block") != std::string::npos;
  };

  for (const ConvLayer& l : conv_layers(cfg)) {
    const Triple in = input_dims(l.name);
    Triple o{};
    for (std::size_t a = 0; a < 3; ++a) o[a] = l.spec.output_extent(a, in[a]);
    out_dims[l.name] = o;
    const std::uint64_t vox = static_cast<std::uint64_t>(o[0]) * o[1] * o[2];
    LayerCost c;
    c.name = l.name;
    c.output = {l.spec.out_channels, o[0], o[1], o[2]};
    c.params = l.spec.in_channels * l.spec.out_channels * l.spec.taps() + l.spec.out_channels +
               (l.normalized ? 2 * l.spec.out_channels : 0);
    c.macs = vox * l.spec.out_channels * l.spec.in_channels * l.spec.taps();
    const std::uint64_t elems = vox * l.spec.out_channels;
    if (l.normalized) c.elementwise += elems;
    if (has_relu(l.name)) c.elementwise += elems;
    rep.layers.push_back(c);
    if (l.name.find(".block") != std::string::npos && l.name.compare(l.name.size() - 6, 6, ".conv2") == 0) {
      LayerCost r;
      r.name = l.name.substr(0, l.name.size() - 6) + ".residual";
      r.output = c.output;
      r.elementwise = 2 * elems;  // add + relu
      rep.layers.push_back(r);
    }
    if (l.name == "ga.fc2") {
      const Triple lo = input_dims("agg.reduce");
      const std::uint64_t ctx_elems = static_cast<std::uint64_t>(cfg.context_channels()) * lo[0] * lo[1] * lo[2];
      LayerCost g;
      g.name = "ga.pool+gate+scale";
      g.output = {cfg.context_channels(), lo[0], lo[1], lo[2]};
      g.elementwise = ctx_elems + cfg.context_channels() + ctx_elems;
      rep.layers.push_back(g);
    }
    if (l.name == "head.occ" && cfg.use_condition) {
      LayerCost s;
      s.name = "head.softmax";
      s.output = c.output;
      s.elementwise = elems;
      rep.layers.push_back(s);
    }
  }
  {
    LayerCost u;
    u.name = "agg.upsample";
    u.output = {cfg.context_channels(), full[0], full[1], full[2]};
    u.elementwise = static_cast<std::uint64_t>(cfg.context_channels()) * full[0] * full[1] * full[2];
    rep.layers.push_back(u);
  }
  for (const auto& l : rep.layers) {
    rep.params += l.params;
    rep.macs += l.macs;
    rep.elementwise += l.elementwise;
  }
  rep.flops = 2 * rep.macs;
  return rep;
}

OpCounters instrumented_op_count(const NetworkConfig& cfg, const std::array<std::size_t, 3>& dims,
                                 std::uint64_t seed) {
  const ParameterSet<float> params = init_params<float>(cfg, seed);
  TensorF x({1, dims[0], dims[1], dims[2]});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : x.data()) v = u(rng);
  OpCounters counters;
  {
    ScopedOpCounting scope(counters);
    (void)forward(x, params, cfg, false);
  }
  return counters;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(q / 100.0 * static_cast<double>(values.size()));
  const std::size_t idx = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return values[std::min(idx, values.size() - 1)];
}

template <typename T>
void bench_inference(CostReport& report, const ParameterSet<T>& params, const NetworkConfig& cfg,
                     std::size_t warmup, std::size_t iters, std::uint64_t seed) {
  if (iters < 1) throw std::invalid_argument("bench_inference: iters must be >= 1");
  const auto& d = report.dims;
  Tensor<T> x({1, d[0], d[1], d[2]});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : x.data()) v = static_cast<T>(u(rng));
  for (std::size_t i = 0; i < warmup; ++i) (void)forward(x, params, cfg, false);
  std::vector<double> ms;
  ms.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)forward(x, params, cfg, false);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  report.iters = iters;
  report.warmup = warmup;
  report.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  report.p50_ms = percentile(ms, 50.0);
  report.p95_ms = percentile(ms, 95.0);
  report.fps = 1000.0 / report.mean_ms;
  report.threads = num_threads();
  report.precision = std::is_same_v<T, float> ? "f32" : "f64";
}

std::string CostReport::to_text() const {
  std::ostringstream os;
  os << "input " << dims[0] << "x" << dims[1] << "x" << dims[2] << "\n";
  os << std::left << std::setw(28) << "layer" << std::right << std::setw(12) << "params" << std::setw(16) << "MACs"
     << std::setw(14) << "elementwise" << "  output\n";
  for (const auto& l : layers) {
    os << std::left << std::setw(28) << l.name << std::right << std::setw(12) << l.params << std::setw(16) << l.macs
       << std::setw(14) << l.elementwise << "  " << shape_to_string(l.output) << "\n";
  }
  os << "params=" << params << "\n";
  os << "MACs=" << macs << "\n";
  os << "FLOPs=" << flops << "\n";
  os << "elementwise=" << elementwise << "\n";
  if (iters > 0) {
    os << std::fixed << std::setprecision(3);
    os << "latency_ms mean=" << mean_ms << " p50=" << p50_ms << " p95=" << p95_ms << "\n";
    os << "FPS=" << fps << " threads=" << threads << " precision=" << precision << " iters=" << iters
       << " warmup=" << warmup << "\n";
  }
  return os.str();
}

std::string CostReport::to_csv() const {
  std::ostringstream os;
  os << "layer,params,macs,elementwise,output\n";
  for (const auto& l : layers)
    os << l.name << ',' << l.params << ',' << l.macs << ',' << l.elementwise << ',' << join_sizes(l.output, 'x') << "\n";
  os << "total," << params << ',' << macs << ',' << elementwise << ",\n";
  os << "\nmetric,value\n";
  os << "params," << params << "\nmacs," << macs << "\nflops," << flops << "\nelementwise," << elementwise << "\n";
  if (iters > 0) {
    os << std::setprecision(9);
    os << "mean_ms," << mean_ms << "\np50_ms," << p50_ms << "\np95_ms," << p95_ms << "\nfps," << fps << "\nthreads,"
       << threads << "\nprecision," << precision << "\niters," << iters << "\n";
  }
  return os.str();
}

template void bench_inference(CostReport&, const ParameterSet<float>&, const NetworkConfig&, std::size_t,
                              std::size_t, std::uint64_t);
template void bench_inference(CostReport&, const ParameterSet<double>&, const NetworkConfig&, std::size_t,
                              std::size_t, std::uint64_t);

}  // namespace ssc
