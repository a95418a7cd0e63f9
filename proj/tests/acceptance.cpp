// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <string>

#include "oracles.hpp"
#include "probe.hpp"
#include "ssc/metrics.hpp"
#include "ssc/netcheck.hpp"
#include "ssc/perf.hpp"
#include "ssc/synth.hpp"
#include "ssc/train.hpp"

using namespace ssc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

double worst_rel(const TensorD& a, const TensorD& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel(a[i], b[i]));
  return m;
}

char buf[512];

template <typename... A>
std::string fmt(const char* f, A... a) {
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  NetworkGradCheckOptions o;
  o.dims = {8, 8, 8};
  const auto rep = network_grad_check(NetworkConfig{}, o);
  const double secs = seconds_since(t0);
  return {rep.overall.max_rel_error <= 1e-5 && secs < 300.0 && rep.per_tensor.size() > 1,
          fmt("max rel err %.3g (worst %s), %zu tensors, %zu probes, %zu skipped, %.1fs", rep.overall.max_rel_error,
              rep.overall.worst_tensor.c_str(), rep.per_tensor.size(), rep.overall.checked, rep.overall.skipped, secs)};
}

Outcome kernel_oracles() {
  std::mt19937_64 rng(2024);
  const int cases = 120;
  double conv = 0, pool = 0, up = 0, sm = 0, ce = 0;
  int dil2 = 0, dil8 = 0;
  for (int t = 0; t < cases; ++t) {
    ConvSpec s;
    const std::size_t d = t % 3 == 0 ? 8 : t % 3 == 1 ? 2 : 1;
    for (int a = 0; a < 3; ++a) {
      s.kernel[a] = oracle::pick(rng, 1, 3);
      s.stride[a] = oracle::pick(rng, 1, 2);
      s.dilation[a] = d;
      s.padding[a] = oracle::pick(rng, 0, d * (s.kernel[a] - 1));
    }
    dil2 += d == 2;
    dil8 += d == 8;
    s.in_channels = oracle::pick(rng, 1, 3);
    s.out_channels = oracle::pick(rng, 1, 3);
    Shape xs{s.in_channels};
    for (int a = 0; a < 3; ++a) {
      const std::size_t reach = s.dilation[a] * (s.kernel[a] - 1) + 1;
      const std::size_t lo = reach > 2 * s.padding[a] ? reach - 2 * s.padding[a] : 1;
      xs.push_back(oracle::pick(rng, lo, lo + 4));
    }
    const TensorD x = oracle::random_tensor(xs, rng), w = oracle::random_tensor(s.weight_shape(), rng),
                  b = oracle::random_tensor({s.out_channels}, rng);
    conv = std::max(conv, worst_rel(conv3d(x, w, b, s), oracle::conv3d(x, w, b, s)));

    const Shape vs{oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 5), oracle::pick(rng, 1, 5), oracle::pick(rng, 1, 5)};
    const TensorD v = oracle::random_tensor(vs, rng, -3, 3);
    const std::size_t sp = vs[1] * vs[2] * vs[3];
    TensorD mean({vs[0], 1, 1, 1});
    for (std::size_t c = 0; c < vs[0]; ++c) {
      double acc = 0;
      for (std::size_t i = 0; i < sp; ++i) acc += v[c * sp + i];
      mean[c] = acc / static_cast<double>(sp);
    }
    pool = std::max(pool, worst_rel(global_avg_pool3d(v), mean));

    const Triple f{oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 4)};
    const std::size_t out[3] = {vs[1] * f[0], vs[2] * f[1], vs[3] * f[2]};
    TensorD want({vs[0], out[0], out[1], out[2]});
    for (std::size_t c = 0; c < vs[0]; ++c)
      for (std::size_t i = 0; i < out[0]; ++i)
        for (std::size_t j = 0; j < out[1]; ++j)
          for (std::size_t k = 0; k < out[2]; ++k) {
            const std::size_t o[3] = {i, j, k};
            want.at({c, i, j, k}) = oracle::trilinear_at(v, c, o, out);
          }
    up = std::max(up, worst_rel(upsample3d(v, f), want));

    const std::size_t C = vs[0] + 1;
    const TensorD z = oracle::random_tensor({C, vs[1], vs[2], vs[3]}, rng, -5, 5);
    TensorD p(z.shape());
    for (std::size_t i = 0; i < sp; ++i) {
      double den = 0;
      for (std::size_t c = 0; c < C; ++c) den += std::exp(z[c * sp + i]);
      for (std::size_t c = 0; c < C; ++c) p[c * sp + i] = std::exp(z[c * sp + i]) / den;
    }
    sm = std::max(sm, worst_rel(softmax_channels(z), p));
    TensorU8 labels({vs[1], vs[2], vs[3]}), ignore({vs[1], vs[2], vs[3]});
    std::vector<int> ol(sp);
    for (std::size_t i = 0; i < sp; ++i) {
      labels[i] = static_cast<std::uint8_t>(rng() % C);
      ignore[i] = rng() % 5 == 0;
      ol[i] = ignore[i] ? -1 : labels[i];
    }
    ce = std::max(ce, rel(cross_entropy(z, labels, ignore).loss, oracle::cross_entropy(z, ol)));
  }
  const double worst = std::max({conv, pool, up, sm, ce});
  return {worst <= 1e-5 && dil2 > 0 && dil8 > 0,
          fmt("%d cases each (%d with dilation 2, %d with dilation 8); max rel err conv %.2g pool %.2g upsample %.2g "
              "softmax %.2g CE %.2g",
              cases, dil2, dil8, conv, pool, up, sm, ce)};
}

Outcome label_mapping_and_loss() {
  std::mt19937_64 rng(7);
  std::size_t checked = 0, wrong = 0;
  for (int t = 0; t < 20; ++t) {
    TensorU8 l({8, 8, 8});
    for (auto& v : l.data()) v = static_cast<std::uint8_t>(rng());
    // make sure every byte value shows up at least once
    for (std::size_t i = 0; i < 256; ++i) l[i] = static_cast<std::uint8_t>(i);
    const TensorU8 b = binary_occupancy_labels(l);
    for (std::size_t i = 0; i < l.size(); ++i, ++checked) {
      const std::uint8_t want = l[i] == 255 ? 255 : l[i] == 0 ? 0 : 1;
      wrong += b[i] != want;
    }
  }
  const TensorD occ({2, 3, 3, 3}, 0.0), sem({12, 3, 3, 3}, 0.0);
  TensorU8 labels({3, 3, 3});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(i % 12);
  const double loss = joint_loss(occ, sem, labels).total;
  const double want = std::log(12.0) + std::log(2.0);
  return {wrong == 0 && std::abs(loss - want) <= 1e-6,
          fmt("%zu voxels mapped, %zu wrong; uniform-logit joint loss %.9f (expected %.9f)", checked, wrong, loss, want)};
}

Outcome schedule_and_optimizer() {
  const double a = poly_lr(0, 2000, 0.1), z = poly_lr(2000, 2000, 0.1), m = poly_lr(1000, 2000, 0.1);
  const double mid = 0.1 * std::pow(0.5, 0.9);
  ParameterSet<double> p, g;
  p.add("w", TensorD({2}, std::vector<double>{0.7, -1.3}));
  g.add("w", TensorD({2}, std::vector<double>{0.25, -0.5}));
  auto st = OptimState<double>::init(p, 0.1, 5, 0.9, 0.0005);
  double w[2] = {0.7, -1.3}, v[2] = {0, 0}, err = 0;
  for (std::size_t it = 0; it < 5; ++it) {
    const double lr = poly_lr(it, 5, 0.1);
    sgd_step(p, g, st, lr);
    for (int i = 0; i < 2; ++i) {
      v[i] = 0.9 * v[i] + (g.get("w")[i] + 0.0005 * w[i]);
      w[i] -= lr * v[i];
      err = std::max(err, std::abs(p.get("w")[i] - w[i]));
    }
  }
  return {a == 0.1 && z == 0.0 && std::abs(m - mid) <= 1e-9 && err <= 1e-12,
          fmt("lr(0)=%.17g lr(max)=%.17g lr(mid)=%.12f (want %.12f); 5-step sgd max abs diff %.3g", a, z, m, mid, err)};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(11);
  const int volumes = 50;
  std::size_t mismatches = 0, identity_checked = 0;
  double identity_err = 0;
  for (int t = 0; t < volumes; ++t) {
    const std::size_t N = 1 + rng() % 8;
    TensorU8 pred({8, 8, 8}), gt({8, 8, 8}), vis({8, 8, 8});
    for (std::size_t i = 0; i < gt.size(); ++i) {
      vis[i] = static_cast<std::uint8_t>(rng() % 4);
      gt[i] = rng() % 9 == 0 ? kUnlabeled : static_cast<std::uint8_t>(rng() % (N + 1));
      pred[i] = rng() % 2 && gt[i] != kUnlabeled ? gt[i] : static_cast<std::uint8_t>(rng() % (N + 1));
    }
    // full (N+1)x(N+1) confusion matrices by enumeration
    std::vector<std::size_t> occl(4, 0), conf((N + 1) * (N + 1), 0);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == kUnlabeled || vis[i] == 3) continue;
      ++conf[gt[i] * (N + 1) + pred[i]];
      if (vis[i] == 2) ++occl[(gt[i] != 0) * 2 + (pred[i] != 0)];
    }
    const auto sc = sc_metrics(pred, gt, vis);
    mismatches += sc.tp != occl[3] || sc.fp != occl[1] || sc.fn != occl[2];
    const auto ssc = ssc_metrics(pred, gt, vis, N);
    for (std::size_t k = 1; k <= N; ++k) {
      std::size_t tp = conf[k * (N + 1) + k], fp = 0, fn = 0;
      for (std::size_t j = 0; j <= N; ++j) {
        if (j == k) continue;
        fp += conf[j * (N + 1) + k];
        fn += conf[k * (N + 1) + j];
      }
      mismatches += ssc.tp[k - 1] != tp || ssc.fp[k - 1] != fp || ssc.fn[k - 1] != fn;
      if (tp + fp + fn > 0) mismatches += *ssc.class_iou[k - 1] != static_cast<double>(tp) / (tp + fp + fn);
    }
    if (sc.tp > 0) {
      ++identity_checked;
      identity_err = std::max(identity_err, std::abs(1.0 / sc.iou - (1.0 / sc.precision + 1.0 / sc.recall - 1.0)));
    }
  }
  return {mismatches == 0 && identity_checked > 0 && identity_err < 1e-12,
          fmt("%d random 8x8x8 volumes, %zu count mismatches; 1/IoU identity checked %zu times, max err %.2g", volumes,
              mismatches, identity_checked, identity_err)};
}

Outcome overfit() {
  const auto t0 = Clock::now();
  SceneConfig scene;  // 32x16x32 grid, N = 4
  std::vector<SceneSample> data;
  for (std::uint64_t s = 0; s < 8; ++s) data.push_back(synth_scene(s, scene));
  NetworkConfig net;
  net.num_classes = scene.num_classes;
  TrainConfig tc;
  tc.batch_size = 2;  // 4 iterations per epoch x 500 epochs = 2000
  const auto r = train_loop(data, tc, net);
  const double secs = seconds_since(t0);
  const auto& rep = r.evals.back().report;
  return {r.history.size() == 2000 && rep.sc_iou >= 0.90 && rep.ssc_miou >= 0.80 && secs < 1800.0,
          fmt("%zu iterations, final loss %.4f, SC IoU %.4f, SSC mIoU %.4f, %.0fs", r.history.size(),
              r.history.back().loss_total, rep.sc_iou, rep.ssc_miou, secs)};
}

bool has(const NetworkConfig& c, const std::string& name) {
  for (const auto& l : conv_layers(c))
    if (l.name == name) return true;
  return false;
}

std::size_t in_channels(const NetworkConfig& c, const std::string& name) {
  for (const auto& l : conv_layers(c))
    if (l.name == name) return l.spec.in_channels;
  return 0;
}

Outcome ablations() {
  const NetworkConfig base;
  std::vector<std::string> bad;
  NetworkConfig nd = base;
  nd.use_dilation = false;
  for (const auto& l : conv_layers(nd))
    if (l.spec.dilation != Triple{1, 1, 1}) bad.push_back("dilation:" + l.name);
  bool any_dilated = false;
  for (const auto& l : conv_layers(base)) any_dilated |= l.spec.dilation[0] > 1;
  if (!any_dilated) bad.push_back("dilation:none in default");

  NetworkConfig na = base;
  na.use_feature_agg = false;
  if (has(na, "agg.reduce") || !has(base, "agg.reduce")) bad.push_back("feature_agg:reduce");
  if (in_channels(na, "agg.fuse") != base.stage_channels[2]) bad.push_back("feature_agg:fuse width");

  NetworkConfig ng = base;
  ng.use_ga = false;
  if (has(ng, "ga.fc1") || has(ng, "ga.fc2") || !has(base, "ga.fc1")) bad.push_back("ga:layers");

  NetworkConfig nc = base;
  nc.use_condition = false;
  if (in_channels(nc, "head.sem") != base.agg_channels || in_channels(base, "head.sem") != base.agg_channels + 2)
    bad.push_back("condition:head width");

  // same structural facts through a real forward pass on a small volume
  const TensorF x({1, 8, 8, 8}, 0.3f);
  auto keys = [&](const NetworkConfig& c) {
    auto f = forward(x, init_params<float>(c, 0), c, true);
    return *f.cache;
  };
  const auto kb = keys(base);
  if (!kb.count("ga.gate") || !kb.count("head.q") || !kb.count("agg.reduce.in")) bad.push_back("cache:base");
  if (keys(ng).count("ga.gate")) bad.push_back("cache:ga");
  if (keys(nc).count("head.q")) bad.push_back("cache:condition");
  if (keys(na).count("agg.reduce.in")) bad.push_back("cache:feature_agg");

  NetworkConfig probe_cfg;
  probe_cfg.stem_channels = 1;
  probe_cfg.stage_channels = {1, 1, 1};
  const std::size_t rf_dil = receptive_field(probe_cfg)[0];
  const std::size_t imp_dil = probe::impulse_extent(probe_cfg, {400, 4, 4})[0];
  probe_cfg.dilation_schedule = {1, 1, 1, 1, 1, 1};
  const std::size_t rf_one = receptive_field(probe_cfg)[0];
  const std::size_t imp_one = probe::impulse_extent(probe_cfg, {400, 4, 4})[0];
  const bool rf_ok = rf_dil > rf_one && imp_dil == rf_dil && imp_one == rf_one &&
                     receptive_field(NetworkConfig{})[0] == rf_dil;
  std::string detail = fmt("structural checks %s; RF (2,2,2,4,8,4) analytic %zu probe %zu vs (1,...,1) analytic %zu probe %zu",
                           bad.empty() ? "ok" : "FAILED", rf_dil, imp_dil, rf_one, imp_one);
  for (const auto& b : bad) detail += " [" + b + "]";
  return {bad.empty() && rf_ok, detail};
}

std::vector<NetworkConfig> cost_configs() {
  std::vector<NetworkConfig> out(6);
  out[1].normalization = true;
  out[2].use_feature_agg = false;
  out[3].use_ga = false;
  out[3].use_condition = false;
  out[4].use_dilation = false;
  out[4].blocks_per_stage = {1, 2, 3};
  out[5].stage_channels = {8, 12, 16};
  out[5].downsample_factor = 2;
  out[5].num_classes = 4;
  return out;
}

Outcome cost_accounting() {
  std::size_t ok_params = 0, ok_flops = 0;
  const auto cfgs = cost_configs();
  for (const auto& c : cfgs) {
    ok_params += count_params(c) == init_params<float>(c, 0).total_elements();
    const auto rep = count_flops(c, {16, 8, 16});
    const auto ops = instrumented_op_count(c, {16, 8, 16});
    ok_flops += rep.macs == ops.macs && rep.elementwise == ops.elementwise;
  }
  const NetworkConfig def;
  const auto params = init_params<float>(def, 0);
  const std::array<std::size_t, 3> dims{60, 36, 60};
  CostReport a = count_flops(def, dims), b = a;
  bench_inference(a, params, def, 3, 100);
  bench_inference(b, params, def, 3, 100);
  const double var = std::abs(a.p50_ms - b.p50_ms) / std::min(a.p50_ms, b.p50_ms);
  return {ok_params == cfgs.size() && ok_flops == cfgs.size() && cfgs.size() >= 5 && var < 0.2,
          fmt("%zu configs: params exact %zu, MACs exact %zu; default 60x36x60: %.2f GFLOPs, p50 %.1f ms vs %.1f ms "
              "(%.1f%% apart), %.2f FPS",
              cfgs.size(), ok_params, ok_flops, a.flops / 1e9, a.p50_ms, b.p50_ms, 100 * var, a.fps)};
}

}  // namespace

int main(int argc, char** argv) {
  // optional arguments: 1-based criterion numbers to run (default: all)
  std::vector<bool> want;
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {"gradient integrity", gradient_integrity},
      {"kernel oracles", kernel_oracles},
      {"label mapping and joint loss", label_mapping_and_loss},
      {"schedule and optimizer", schedule_and_optimizer},
      {"metric oracle", metric_oracle},
      {"overfit run", overfit},
      {"ablation mechanics", ablations},
      {"cost accounting", cost_accounting},
  };
  want.assign(all.size(), argc < 2);
  for (int a = 1; a < argc; ++a) {
    const auto n = static_cast<std::size_t>(std::atoi(argv[a]));
    if (n >= 1 && n <= all.size()) want[n - 1] = true;
  }
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!want[i]) continue;
    ++ran;
    Outcome o;
    try {
      o = all[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, all[i].name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed ? 1 : 0;
}
