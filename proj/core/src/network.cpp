#include "ssc/network.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ssc {

// ---- config ------------------------------------------------------------------

void NetworkConfig::validate() const {
  if (num_classes < 1 || num_classes > 254) throw std::invalid_argument("num_classes must be in 1..254");
  if (stem_channels < 1 || agg_channels < 1) throw std::invalid_argument("channel counts must be >= 1");
  for (auto c : stage_channels)
    if (c < 1) throw std::invalid_argument("stage_channels entries must be >= 1");
  for (auto d : dilation_schedule)
    if (d < 1) throw std::invalid_argument("dilation_schedule entries must be >= 1");
  if (downsample_factor != 2 && downsample_factor != 4) {
    throw std::invalid_argument("downsample_factor must be 2 or 4");
  }
  if (use_ga) {
    const std::size_t c = context_channels();
    if (attention_reduction < 1 || c % attention_reduction != 0 || c / attention_reduction < 1) {
      throw std::invalid_argument("attention_reduction " + std::to_string(attention_reduction) +
                                  " must divide the GA channel count " + std::to_string(c));
    }
  }
}

std::size_t NetworkConfig::block_dilation(std::size_t index) const {
  const std::size_t total = total_blocks();
  if (index >= total) throw std::out_of_range("block index out of range");
  if (!use_dilation) return 1;
  const std::size_t from_end = total - index;  // 1 for the last block
  if (from_end > dilation_schedule.size()) return 1;
  return dilation_schedule[dilation_schedule.size() - from_end];
}

const std::vector<std::string>& NetworkConfig::keys() {
  static const std::vector<std::string> k = {
      "num_classes", "stem_channels", "stage_channels", "blocks_per_stage", "dilation_schedule",
      "attention_reduction", "agg_channels", "downsample_factor", "use_dilation",
      "use_feature_agg", "use_ga", "use_condition", "normalization"};
  return k;
}

KeyValues NetworkConfig::to_keyvalues() const {
  KeyValues kv;
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("stem_channels", std::to_string(stem_channels));
  kv.set("stage_channels", join_sizes({stage_channels.begin(), stage_channels.end()}));
  kv.set("blocks_per_stage", join_sizes({blocks_per_stage.begin(), blocks_per_stage.end()}));
  kv.set("dilation_schedule", join_sizes({dilation_schedule.begin(), dilation_schedule.end()}));
  kv.set("attention_reduction", std::to_string(attention_reduction));
  kv.set("agg_channels", std::to_string(agg_channels));
  kv.set("downsample_factor", std::to_string(downsample_factor));
  kv.set("use_dilation", use_dilation ? "true" : "false");
  kv.set("use_feature_agg", use_feature_agg ? "true" : "false");
  kv.set("use_ga", use_ga ? "true" : "false");
  kv.set("use_condition", use_condition ? "true" : "false");
  kv.set("normalization", normalization ? "true" : "false");
  return kv;
}

namespace {

template <std::size_t N>
std::array<std::size_t, N> sizes_array(const KeyValues& kv, const std::string& key,
                                        const std::array<std::size_t, N>& fallback) {
  if (!kv.has(key)) return fallback;
  const auto v = parse_sizes(kv.get(key), key);
  if (v.size() != N) {
    throw std::invalid_argument(key + ": expected " + std::to_string(N) + " entries, got " +
                                std::to_string(v.size()));
  }
  std::array<std::size_t, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace

NetworkConfig NetworkConfig::from_keyvalues(const KeyValues& kv) {
  const auto& k = keys();
  kv.reject_unknown(std::set<std::string>(k.begin(), k.end()), "network config");
  NetworkConfig c;
  auto size_key = [&](const char* key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw std::invalid_argument(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.num_classes = size_key("num_classes", c.num_classes);
  c.stem_channels = size_key("stem_channels", c.stem_channels);
  c.stage_channels = sizes_array(kv, "stage_channels", c.stage_channels);
  c.blocks_per_stage = sizes_array(kv, "blocks_per_stage", c.blocks_per_stage);
  c.dilation_schedule = sizes_array(kv, "dilation_schedule", c.dilation_schedule);
  c.attention_reduction = size_key("attention_reduction", c.attention_reduction);
  c.agg_channels = size_key("agg_channels", c.agg_channels);
  c.downsample_factor = size_key("downsample_factor", c.downsample_factor);
  c.use_dilation = kv.get_bool("use_dilation", c.use_dilation);
  c.use_feature_agg = kv.get_bool("use_feature_agg", c.use_feature_agg);
  c.use_ga = kv.get_bool("use_ga", c.use_ga);
  c.use_condition = kv.get_bool("use_condition", c.use_condition);
  c.normalization = kv.get_bool("normalization", c.normalization);
  c.validate();
  return c;
}

std::vector<ConvLayer> conv_layers(const NetworkConfig& cfg) {
  cfg.validate();
  const bool nrm = cfg.normalization;
  const auto& ch = cfg.stage_channels;
  std::vector<ConvLayer> L;
  L.push_back({"stem.conv1", ConvSpec::cubic(1, cfg.stem_channels, 3), nrm});
  L.push_back({"stem.conv2", ConvSpec::cubic(cfg.stem_channels, cfg.stem_channels, 3), nrm});
  L.push_back({"down.conv1", ConvSpec::cubic(cfg.stem_channels, ch[0], 3, 2), nrm});
  if (cfg.downsample_factor == 4) L.push_back({"down.conv2", ConvSpec::cubic(ch[0], ch[0], 3, 2), nrm});
  std::size_t block = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    if (s > 0 && ch[s] != ch[s - 1]) L.push_back({stage + ".proj", ConvSpec::cubic(ch[s - 1], ch[s], 1), nrm});
    for (std::size_t b = 0; b < cfg.blocks_per_stage[s]; ++b, ++block) {
      const std::string prefix = stage + ".block" + std::to_string(b + 1);
      const std::size_t d = cfg.block_dilation(block);
      L.push_back({prefix + ".conv1", ConvSpec::cubic(ch[s], ch[s], 3, 1, d), nrm});
      L.push_back({prefix + ".conv2", ConvSpec::cubic(ch[s], ch[s], 3, 1, d), nrm});
    }
  }
  const std::size_t ctx = cfg.context_channels();
  if (cfg.use_feature_agg) L.push_back({"agg.reduce", ConvSpec::cubic(ch[0] + ch[1] + ch[2], ctx, 1), false});
  if (cfg.use_ga) {
    L.push_back({"ga.fc1", ConvSpec::cubic(ctx, ctx / cfg.attention_reduction, 1), false});
    L.push_back({"ga.fc2", ConvSpec::cubic(ctx / cfg.attention_reduction, ctx, 1), false});
  }
  const std::size_t fuse_in = cfg.use_feature_agg ? ctx + cfg.stem_channels : ctx;
  L.push_back({"agg.fuse", ConvSpec::cubic(fuse_in, cfg.agg_channels, 1), false});
  L.push_back({"head.occ", ConvSpec::cubic(cfg.agg_channels, 2, 1), false});
  L.push_back({"head.sem", ConvSpec::cubic(cfg.agg_channels + (cfg.use_condition ? 2 : 0),
                                           cfg.num_classes + 1, 1),
               false});
  return L;
}

Triple receptive_field(const std::vector<ConvSpec>& chain) {
  Triple rf{1, 1, 1};
  Triple jump{1, 1, 1};
  for (const ConvSpec& s : chain) {
    for (std::size_t a = 0; a < 3; ++a) {
      rf[a] += (s.kernel[a] - 1) * s.dilation[a] * jump[a];
      jump[a] *= s.stride[a];
    }
  }
  return rf;
}

Triple receptive_field(const NetworkConfig& cfg) {
  std::vector<ConvSpec> chain;
  for (const ConvLayer& l : conv_layers(cfg)) {
    // stage-3 path only
    if (l.name.rfind("stem.", 0) == 0 || l.name.rfind("down.", 0) == 0 || l.name.rfind("stage", 0) == 0)
      chain.push_back(l.spec);
  }
  return receptive_field(chain);
}

// ---- ParameterSet ----------------------------------------------------------------

template <typename T>
void ParameterSet<T>::add(std::string name, Tensor<T> t) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_[name] = names_.size();
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(t));
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return tensors_[it->second];
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return tensors_[it->second];
}

template <typename T>
std::size_t ParameterSet<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], Tensor<T>(tensors_[i].shape()));
  return out;
}

template <typename T>
ParameterSet<T> init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Box-Muller on 53-bit uniforms; keeps the stream identical across standard libraries.
  auto uniform = [&] { return (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0); };
  auto normal = [&] {
    const double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  };
  ParameterSet<T> p;
  for (const ConvLayer& l : conv_layers(cfg)) {
    Tensor<T> w(l.spec.weight_shape());
    const double stddev = std::sqrt(2.0 / static_cast<double>(l.spec.in_channels * l.spec.taps()));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(normal() * stddev);
    p.add(l.name + ".weight", std::move(w));
    p.add(l.name + ".bias", Tensor<T>({l.spec.out_channels}));
    if (l.normalized) {
      p.add(l.name + ".norm.gamma", Tensor<T>({l.spec.out_channels}, T(1)));
      p.add(l.name + ".norm.beta", Tensor<T>({l.spec.out_channels}));
    }
  }
  return p;
}

template <typename T>
void check_params(const ParameterSet<T>& params, const NetworkConfig& cfg) {
  std::size_t expected = 0;
  auto expect = [&](const std::string& name, const Shape& shape) {
    ++expected;
    if (!params.contains(name)) throw std::invalid_argument("parameter set lacks '" + name + "'");
    if (params.get(name).shape() != shape) {
      throw std::invalid_argument("parameter '" + name + "' has shape " +
                                  shape_to_string(params.get(name).shape()) + ", config needs " +
                                  shape_to_string(shape));
    }
  };
  for (const ConvLayer& l : conv_layers(cfg)) {
    expect(l.name + ".weight", l.spec.weight_shape());
    expect(l.name + ".bias", {l.spec.out_channels});
    if (l.normalized) {
      expect(l.name + ".norm.gamma", {l.spec.out_channels});
      expect(l.name + ".norm.beta", {l.spec.out_channels});
    }
  }
  if (expected != params.size()) {
    throw std::invalid_argument("parameter set has " + std::to_string(params.size()) +
                                " tensors, config needs " + std::to_string(expected));
  }
}

// ---- layer helpers -------------------------------------------------------------

namespace {

constexpr double kNormEps = 1e-5;

const ConvLayer& layer(const std::vector<ConvLayer>& layers, const std::string& name) {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw std::logic_error("no conv layer '" + name + "' in this config");
}

template <typename T>
void put(ActivationCache<T>* cache, const std::string& key, const Tensor<T>& t) {
  if (cache) (*cache)[key] = t;
}

template <typename T>
const Tensor<T>& fetch(const ActivationCache<T>& cache, const std::string& key) {
  auto it = cache.find(key);
  if (it == cache.end()) throw std::logic_error("activation cache lacks '" + key + "'");
  return it->second;
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Tensor<T> sum_or(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.empty()) return a;
  if (a.empty()) return b;
  return add(a, b);
}

// Per-channel normalisation over the spatial extent of one sample.
template <typename T>
Tensor<T> norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       ActivationCache<T>* cache, const std::string& name) {
  const VolumeDims d = volume_dims(x);
  const std::size_t sp = d.spatial();
  Tensor<T> xhat(x.shape()), y(x.shape()), inv_std({d.c});
  for (std::size_t c = 0; c < d.c; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < sp; ++i) mean += static_cast<double>(x[c * sp + i]);
    mean /= static_cast<double>(sp);
    double var = 0.0;
    for (std::size_t i = 0; i < sp; ++i) {
      const double v = static_cast<double>(x[c * sp + i]) - mean;
      var += v * v;
    }
    var /= static_cast<double>(sp);
    const double is = 1.0 / std::sqrt(var + kNormEps);
    inv_std[c] = static_cast<T>(is);
    for (std::size_t i = 0; i < sp; ++i) {
      const double h = (static_cast<double>(x[c * sp + i]) - mean) * is;
      xhat[c * sp + i] = static_cast<T>(h);
      y[c * sp + i] = static_cast<T>(static_cast<double>(gamma[c]) * h + static_cast<double>(beta[c]));
    }
  }
  if (OpCounters* oc = active_op_counters()) oc->elementwise += x.size();
  put(cache, name + ".norm.xhat", xhat);
  put(cache, name + ".norm.inv_std", inv_std);
  return y;
}

template <typename T>
Tensor<T> norm_backward(const Tensor<T>& g, const Tensor<T>& gamma, const ActivationCache<T>& cache,
                        const std::string& name, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const Tensor<T>& xhat = fetch(cache, name + ".norm.xhat");
  const Tensor<T>& inv_std = fetch(cache, name + ".norm.inv_std");
  const VolumeDims d = volume_dims(g);
  const std::size_t sp = d.spatial();
  const double n = static_cast<double>(sp);
  Tensor<T> dx(g.shape());
  for (std::size_t c = 0; c < d.c; ++c) {
    double sg = 0.0, sgx = 0.0;
    for (std::size_t i = 0; i < sp; ++i) {
      sg += static_cast<double>(g[c * sp + i]);
      sgx += static_cast<double>(g[c * sp + i]) * static_cast<double>(xhat[c * sp + i]);
    }
    dgamma[c] += static_cast<T>(sgx);
    dbeta[c] += static_cast<T>(sg);
    const double k = static_cast<double>(gamma[c]) * static_cast<double>(inv_std[c]) / n;
    for (std::size_t i = 0; i < sp; ++i) {
      dx[c * sp + i] = static_cast<T>(
          k * (n * static_cast<double>(g[c * sp + i]) - sg - static_cast<double>(xhat[c * sp + i]) * sgx));
    }
  }
  return dx;
}

template <typename T>
Tensor<T> conv_unit(const Tensor<T>& x, const ParameterSet<T>& p, const ConvLayer& l, bool relu_after,
                    ActivationCache<T>* cache) {
  put(cache, l.name + ".in", x);
  Tensor<T> y = conv3d(x, p.get(l.name + ".weight"), p.get(l.name + ".bias"), l.spec);
  if (l.normalized) y = norm_forward(y, p.get(l.name + ".norm.gamma"), p.get(l.name + ".norm.beta"), cache, l.name);
  if (relu_after) {
    y = relu(y);
    put(cache, l.name + ".relu", y);
  }
  return y;
}

template <typename T>
Tensor<T> conv_unit_backward(Tensor<T> g, const ParameterSet<T>& p, const ConvLayer& l, bool relu_after,
                             const ActivationCache<T>& cache, ParameterSet<T>& grads,
                             bool need_input = true) {
  if (relu_after) g = relu_backward(g, fetch(cache, l.name + ".relu"));
  if (l.normalized) {
    g = norm_backward(g, p.get(l.name + ".norm.gamma"), cache, l.name, grads.get(l.name + ".norm.gamma"),
                      grads.get(l.name + ".norm.beta"));
  }
  ConvGrads<T> cg = conv3d_backward(g, fetch(cache, l.name + ".in"), p.get(l.name + ".weight"), l.spec,
                                    need_input);
  accumulate(grads.get(l.name + ".weight"), cg.weights);
  accumulate(grads.get(l.name + ".bias"), cg.bias);
  return std::move(cg.input);
}

std::string block_prefix(std::size_t s, std::size_t b) {
  return "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
}

template <typename T>
Tensor<T> ga_backward(const Tensor<T>& gy, const ParameterSet<T>& p, const std::vector<ConvLayer>& layers,
                      const ActivationCache<T>& cache, ParameterSet<T>& grads) {
  const Tensor<T>& x = fetch(cache, std::string("ga.in"));
  const Tensor<T>& gate = fetch(cache, std::string("ga.gate"));
  ScaleGrads<T> sg = scale_per_channel_backward(gy, x, gate);
  Tensor<T> gz = sigmoid_backward(sg.scale, gate);
  Tensor<T> gh = conv_unit_backward(gz, p, layer(layers, "ga.fc2"), false, cache, grads);
  Tensor<T> gpool = conv_unit_backward(gh, p, layer(layers, "ga.fc1"), true, cache, grads);
  return add(sg.x, global_avg_pool3d_backward(gpool, volume_dims(x)));
}

template <typename T>
struct AggregateGrads {
  Tensor<T> low_level;
  std::array<Tensor<T>, 3> stages;
};

template <typename T>
AggregateGrads<T> aggregate_backward(const Tensor<T>& gf, const ParameterSet<T>& p, const NetworkConfig& cfg,
                                     const std::vector<ConvLayer>& layers, const ActivationCache<T>& cache,
                                     ParameterSet<T>& grads) {
  AggregateGrads<T> out;
  Tensor<T> g = conv_unit_backward(gf, p, layer(layers, "agg.fuse"), true, cache, grads);
  const std::size_t ctx = cfg.context_channels();
  Tensor<T> gu;
  if (cfg.use_feature_agg) {
    auto parts = concat_channels_backward(g, {ctx, cfg.stem_channels});
    gu = std::move(parts[0]);
    out.low_level = std::move(parts[1]);
  } else {
    gu = std::move(g);
  }
  const Shape& cshape = fetch(cache, std::string("agg.context")).shape();
  const VolumeDims cdims{cshape[0], cshape[1], cshape[2], cshape[3]};
  const std::size_t f = cfg.downsample_factor;
  Tensor<T> gr = upsample3d_backward(gu, cdims, Triple{f, f, f});
  if (cfg.use_ga) gr = ga_backward(gr, p, layers, cache, grads);
  if (cfg.use_feature_agg) {
    Tensor<T> gcat = conv_unit_backward(gr, p, layer(layers, "agg.reduce"), false, cache, grads);
    const auto& ch = cfg.stage_channels;
    auto parts = concat_channels_backward(gcat, {ch[0], ch[1], ch[2]});
    for (std::size_t s = 0; s < 3; ++s) out.stages[s] = std::move(parts[s]);
  } else {
    out.stages[2] = std::move(gr);
  }
  return out;
}

template <typename T>
Tensor<T> head_backward(const Tensor<T>& g_occ, const Tensor<T>& g_sem, const ParameterSet<T>& p,
                        const NetworkConfig& cfg, const std::vector<ConvLayer>& layers,
                        const ActivationCache<T>& cache, ParameterSet<T>& grads) {
  Tensor<T> gin = conv_unit_backward(g_sem, p, layer(layers, "head.sem"), false, cache, grads);
  Tensor<T> gf, gocc = g_occ;
  if (cfg.use_condition) {
    auto parts = concat_channels_backward(gin, {cfg.agg_channels, std::size_t{2}});
    gf = std::move(parts[0]);
    gocc = add(gocc, softmax_channels_backward(parts[1], fetch(cache, std::string("head.q"))));
  } else {
    gf = std::move(gin);
  }
  return add(gf, conv_unit_backward(gocc, p, layer(layers, "head.occ"), false, cache, grads));
}

}  // namespace

// ---- component forwards ----------------------------------------------------------

template <typename T>
EncoderOutput<T> encoder_forward(const Tensor<T>& tsdf, const ParameterSet<T>& p, const NetworkConfig& cfg,
                                 ActivationCache<T>* cache) {
  const VolumeDims in = volume_dims(tsdf, "encoder input");
  if (in.c != 1) throw std::invalid_argument("encoder input must have one channel, got " + std::to_string(in.c));
  const std::size_t f = cfg.downsample_factor;
  const std::size_t ext[3] = {in.d, in.h, in.w};
  static constexpr const char* kAxis[3] = {"depth", "height", "width"};
  for (std::size_t a = 0; a < 3; ++a) {
    if (ext[a] % f != 0) {
      throw std::invalid_argument(std::string("encoder input ") + kAxis[a] + " extent " +
                                  std::to_string(ext[a]) + " is not divisible by downsample_factor " +
                                  std::to_string(f));
    }
  }
  const auto layers = conv_layers(cfg);
  EncoderOutput<T> out;
  Tensor<T> h = conv_unit(tsdf, p, layer(layers, "stem.conv1"), true, cache);
  out.low_level = conv_unit(h, p, layer(layers, "stem.conv2"), true, cache);
  h = conv_unit(out.low_level, p, layer(layers, "down.conv1"), true, cache);
  if (f == 4) h = conv_unit(h, p, layer(layers, "down.conv2"), true, cache);
  const auto& ch = cfg.stage_channels;
  for (std::size_t s = 0; s < 3; ++s) {
    if (s > 0 && ch[s] != ch[s - 1]) {
      h = conv_unit(h, p, layer(layers, "stage" + std::to_string(s + 1) + ".proj"), true, cache);
    }
    for (std::size_t b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const std::string prefix = block_prefix(s, b);
      Tensor<T> a = conv_unit(h, p, layer(layers, prefix + ".conv1"), true, cache);
      Tensor<T> c = conv_unit(a, p, layer(layers, prefix + ".conv2"), false, cache);
      h = relu(add(c, h));
      put(cache, prefix + ".relu", h);
    }
    out.stages[s] = h;
  }
  return out;
}

template <typename T>
Tensor<T> ga_module(const Tensor<T>& x, const ParameterSet<T>& p, ActivationCache<T>* cache) {
  const Tensor<T>& w1 = p.get("ga.fc1.weight");
  const Tensor<T>& w2 = p.get("ga.fc2.weight");
  const VolumeDims d = volume_dims(x, "ga_module input");
  if (w1.extent(1) != d.c || w2.extent(0) != d.c) {
    throw std::invalid_argument("ga_module: input has " + std::to_string(d.c) + " channels, projections expect " +
                                std::to_string(w1.extent(1)));
  }
  const ConvLayer fc1{"ga.fc1", ConvSpec::cubic(d.c, w1.extent(0), 1), false};
  const ConvLayer fc2{"ga.fc2", ConvSpec::cubic(w1.extent(0), d.c, 1), false};
  put(cache, std::string("ga.in"), x);
  Tensor<T> g = global_avg_pool3d(x);
  Tensor<T> h = conv_unit(g, p, fc1, true, cache);
  Tensor<T> gate = sigmoid(conv_unit(h, p, fc2, false, cache));
  put(cache, std::string("ga.gate"), gate);
  return scale_per_channel(x, gate);
}

template <typename T>
Tensor<T> aggregate(const Tensor<T>& low_level, const std::array<Tensor<T>, 3>& stages,
                    const ParameterSet<T>& p, const NetworkConfig& cfg, ActivationCache<T>* cache) {
  const auto layers = conv_layers(cfg);
  const VolumeDims s3 = volume_dims(stages[2], "stage output");
  Tensor<T> r;
  if (cfg.use_feature_agg) {
    for (std::size_t s = 0; s < 2; ++s) {
      const VolumeDims ds = volume_dims(stages[s], "stage output");
      if (ds.d != s3.d || ds.h != s3.h || ds.w != s3.w) {
        throw std::invalid_argument("aggregate: stage " + std::to_string(s + 1) + " spatial extents " +
                                    shape_to_string(stages[s].shape()) + " differ from stage 3 " +
                                    shape_to_string(stages[2].shape()));
      }
    }
    Tensor<T> cat = concat_channels<T>({&stages[0], &stages[1], &stages[2]});
    r = conv_unit(cat, p, layer(layers, "agg.reduce"), false, cache);
  } else {
    r = stages[2];
  }
  if (cfg.use_ga) r = ga_module(r, p, cache);
  put(cache, std::string("agg.context"), r);
  const std::size_t f = cfg.downsample_factor;
  Tensor<T> u = upsample3d(r, Triple{f, f, f});
  Tensor<T> fin;
  if (cfg.use_feature_agg) {
    const VolumeDims lo = volume_dims(low_level, "low-level feature");
    const VolumeDims ud = volume_dims(u);
    if (lo.d != ud.d || lo.h != ud.h || lo.w != ud.w) {
      throw std::invalid_argument("aggregate: upsampled context " + shape_to_string(u.shape()) +
                                  " does not match low-level feature " + shape_to_string(low_level.shape()));
    }
    fin = concat_channels<T>({&u, &low_level});
  } else {
    fin = std::move(u);
  }
  return conv_unit(fin, p, layer(layers, "agg.fuse"), true, cache);
}

template <typename T>
HeadOutput<T> conditioned_head(const Tensor<T>& feature, const ParameterSet<T>& p, const NetworkConfig& cfg,
                               ActivationCache<T>* cache) {
  const auto layers = conv_layers(cfg);
  HeadOutput<T> out;
  out.occ_logits = conv_unit(feature, p, layer(layers, "head.occ"), false, cache);
  if (cfg.use_condition) {
    Tensor<T> q = softmax_channels(out.occ_logits);
    put(cache, std::string("head.q"), q);
    Tensor<T> cat = concat_channels<T>({&feature, &q});
    out.sem_logits = conv_unit(cat, p, layer(layers, "head.sem"), false, cache);
  } else {
    out.sem_logits = conv_unit(feature, p, layer(layers, "head.sem"), false, cache);
  }
  return out;
}

template <typename T>
ForwardResult<T> forward(const Tensor<T>& tsdf, const ParameterSet<T>& params, const NetworkConfig& cfg,
                         bool training) {
  check_params(params, cfg);
  ForwardResult<T> r;
  ActivationCache<T>* cache = nullptr;
  if (training) {
    r.cache.emplace();
    cache = &*r.cache;
  }
  EncoderOutput<T> enc = encoder_forward(tsdf, params, cfg, cache);
  Tensor<T> feat = aggregate(enc.low_level, enc.stages, params, cfg, cache);
  HeadOutput<T> head = conditioned_head(feat, params, cfg, cache);
  r.occ_logits = std::move(head.occ_logits);
  r.sem_logits = std::move(head.sem_logits);
  return r;
}

// ---- backward ----------------------------------------------------------------------

template <typename T>
Tensor<T> encoder_backward(const ActivationCache<T>& cache, const Tensor<T>& grad_low_level,
                           const std::array<Tensor<T>, 3>& grad_stages, const ParameterSet<T>& p,
                           const NetworkConfig& cfg, ParameterSet<T>& grads) {
  const auto layers = conv_layers(cfg);
  const auto& ch = cfg.stage_channels;
  Tensor<T> g = grad_stages[2];
  if (g.empty()) throw std::invalid_argument("encoder_backward: stage 3 gradient is required");
  for (std::size_t s = 3; s-- > 0;) {
    for (std::size_t b = cfg.blocks_per_stage[s]; b-- > 0;) {
      const std::string prefix = block_prefix(s, b);
      Tensor<T> gsum = relu_backward(g, fetch(cache, prefix + ".relu"));
      Tensor<T> ga = conv_unit_backward(gsum, p, layer(layers, prefix + ".conv2"), false, cache, grads);
      Tensor<T> gx = conv_unit_backward(ga, p, layer(layers, prefix + ".conv1"), true, cache, grads);
      g = add(gx, gsum);
    }
    if (s > 0 && ch[s] != ch[s - 1]) {
      g = conv_unit_backward(g, p, layer(layers, "stage" + std::to_string(s + 1) + ".proj"), true, cache, grads);
    }
    if (s > 0) g = sum_or(g, grad_stages[s - 1]);
  }
  if (cfg.downsample_factor == 4) g = conv_unit_backward(g, p, layer(layers, "down.conv2"), true, cache, grads);
  g = conv_unit_backward(g, p, layer(layers, "down.conv1"), true, cache, grads);
  g = sum_or(g, grad_low_level);
  g = conv_unit_backward(g, p, layer(layers, "stem.conv2"), true, cache, grads);
  return conv_unit_backward(g, p, layer(layers, "stem.conv1"), true, cache, grads);
}

template <typename T>
ParameterSet<T> backward(const ActivationCache<T>& cache, const Tensor<T>& grad_occ, const Tensor<T>& grad_sem,
                         const ParameterSet<T>& params, const NetworkConfig& cfg, Tensor<T>* grad_input) {
  check_params(params, cfg);
  const auto layers = conv_layers(cfg);
  ParameterSet<T> grads = params.zeros_like();
  Tensor<T> gf = head_backward(grad_occ, grad_sem, params, cfg, layers, cache, grads);
  AggregateGrads<T> ag = aggregate_backward(gf, params, cfg, layers, cache, grads);
  Tensor<T> gin = encoder_backward(cache, ag.low_level, ag.stages, params, cfg, grads);
  if (grad_input) *grad_input = std::move(gin);
  return grads;
}

template <typename T>
std::uint64_t relu_signature(const ActivationCache<T>& cache) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  for (const auto& [key, t] : cache) {
    if (key.size() < 5 || key.compare(key.size() - 5, 5, ".relu") != 0) continue;
    for (char c : key) mix(static_cast<unsigned char>(c));
    for (std::size_t i = 0; i < t.size(); ++i) mix(t[i] > T(0) ? 0x9e37u : 0x1u);
  }
  return h;
}

#define SSC_INSTANTIATE_NET(T)                                                                             \
  template class ParameterSet<T>;                                                                          \
  template ParameterSet<T> init_params(const NetworkConfig&, std::uint64_t);                               \
  template void check_params(const ParameterSet<T>&, const NetworkConfig&);                                \
  template EncoderOutput<T> encoder_forward(const Tensor<T>&, const ParameterSet<T>&, const NetworkConfig&, \
                                            ActivationCache<T>*);                                          \
  template Tensor<T> ga_module(const Tensor<T>&, const ParameterSet<T>&, ActivationCache<T>*);             \
  template Tensor<T> aggregate(const Tensor<T>&, const std::array<Tensor<T>, 3>&, const ParameterSet<T>&,  \
                               const NetworkConfig&, ActivationCache<T>*);                                 \
  template HeadOutput<T> conditioned_head(const Tensor<T>&, const ParameterSet<T>&, const NetworkConfig&,  \
                                          ActivationCache<T>*);                                            \
  template ForwardResult<T> forward(const Tensor<T>&, const ParameterSet<T>&, const NetworkConfig&, bool); \
  template Tensor<T> encoder_backward(const ActivationCache<T>&, const Tensor<T>&,                         \
                                      const std::array<Tensor<T>, 3>&, const ParameterSet<T>&,             \
                                      const NetworkConfig&, ParameterSet<T>&);                             \
  template ParameterSet<T> backward(const ActivationCache<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                    const ParameterSet<T>&, const NetworkConfig&, Tensor<T>*);             \
  template std::uint64_t relu_signature(const ActivationCache<T>&);

SSC_INSTANTIATE_NET(float)
SSC_INSTANTIATE_NET(double)

#undef SSC_INSTANTIATE_NET

}  // namespace ssc
