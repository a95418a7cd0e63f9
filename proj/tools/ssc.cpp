// ssc: command-line front end for the scene completion engine.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "ssc/checkpoint.hpp"
#include "ssc/metrics.hpp"
#include "ssc/netcheck.hpp"
#include "ssc/parallel.hpp"
#include "ssc/perf.hpp"
#include "ssc/synth.hpp"
#include "ssc/tensor_io.hpp"
#include "ssc/train.hpp"

namespace {

using namespace ssc;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int threads = 0;  // 0: keep $SSC_THREADS / default
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override one config key (key=value); repeatable");
  app->add_option("--threads", c.threads, "worker threads (default: $SSC_THREADS or 1)")->check(CLI::Range(1, 1024));
}

KeyValues gather(const Common& c) {
  KeyValues kv;
  if (!c.config.empty()) kv = KeyValues::load(c.config);
  for (const auto& s : c.sets) kv.set_assignment(s);
  if (c.threads > 0) set_num_threads(c.threads);
  return kv;
}

std::string key_list(const KeyValues& defaults, const std::vector<std::string>& keys,
                     const std::map<std::string, std::string>& extra = {}) {
  std::ostringstream os;
  os << "Config keys (file or --set):\n";
  for (const auto& k : keys) {
    os << "  " << std::left << std::setw(20) << k;
    if (defaults.has(k)) os << "default " << defaults.get(k);
    else if (extra.count(k)) os << extra.at(k);
    os << "\n";
  }
  return os.str();
}

std::array<std::size_t, 3> parse_dims(const std::string& s) {
  const auto v = parse_sizes(s, "--dims");
  if (v.size() != 3) throw std::invalid_argument("--dims: expected DxHxW, got '" + s + "'");
  return {v[0], v[1], v[2]};
}

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) {
    const auto a = static_cast<std::uint64_t>(parse_int(s, "--seeds"));
    return {a, a + 1};
  }
  const auto a = parse_int(s.substr(0, dots), "--seeds start");
  const auto b = parse_int(s.substr(dots + 2), "--seeds end");
  if (a < 0 || b <= a) throw std::invalid_argument("--seeds: expected a..b with 0 <= a < b, got '" + s + "'");
  return {static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b)};
}

std::string scene_help() {
  return key_list({}, SceneConfig::keys(),
                  {{"num_classes", "default 4"},
                   {"dims", "default 32x16x32"},
                   {"voxel_size", "default 0.08 (m)"},
                   {"origin", "default -1.28,-0.38,0.8 (m, camera frame)"},
                   {"truncation", "default 0.24 (m)"},
                   {"fx", "default 60"},
                   {"fy", "default 60"},
                   {"cx", "default 40"},
                   {"cy", "default 30"},
                   {"size", "default 80x60 (WxH pixels)"},
                   {"room", "x0,y0,z0,x1,y1,z1 voxels (default: whole grid)"},
                   {"objects_min", "default 2"},
                   {"objects_max", "default 5"},
                   {"object_size_min", "default 2 (voxels)"},
                   {"object_size_max", "default 6 (voxels)"},
                   {"ceiling", "default false"},
                   {"tsdf_mode", "flipped | standard (default flipped)"}});
}

std::string net_help() { return key_list(NetworkConfig{}.to_keyvalues(), NetworkConfig::keys()); }

std::string train_help() {
  std::vector<std::string> keys = TrainConfig::keys();
  return key_list(TrainConfig{}.to_keyvalues(), keys,
                  {{"data", "directory of sample subdirectories"},
                   {"checkpoint", "output checkpoint path"},
                   {"history_csv", "loss history CSV path"}}) +
         "\nNetwork keys are accepted in the same file:\n" + net_help();
}

/// Splits one key=value set into train and network parts; unknown keys throw.
std::pair<KeyValues, KeyValues> split_train_keys(const KeyValues& kv) {
  const auto& tk = TrainConfig::keys();
  const auto& nk = NetworkConfig::keys();
  const std::set<std::string> ts(tk.begin(), tk.end()), ns(nk.begin(), nk.end());
  KeyValues t, n;
  for (const auto& [k, v] : kv.entries()) {
    if (ts.count(k)) t.set(k, v);
    else if (ns.count(k)) n.set(k, v);
    else throw std::invalid_argument("unknown config key '" + k + "' for train");
  }
  return {t, n};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic scene completion engine: synthesis, voxelization, training, evaluation, profiling"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // synth
  Common synth_c;
  std::string synth_seeds = "0..1", synth_out;
  auto* synth = app.add_subcommand("synth", "generate synthetic labelled scenes");
  add_common(synth, synth_c);
  synth->add_option("--seeds", synth_seeds, "seed range a..b (half-open) or a single seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory (one scene_NNNN subdirectory per seed)")->required();
  synth->footer(scene_help());

  // voxelize
  Common vox_c;
  std::string vox_depth, vox_camera, vox_out;
  auto* vox = app.add_subcommand("voxelize", "depth image + camera -> TSDF and visibility volumes");
  add_common(vox, vox_c);
  vox->add_option("--depth", vox_depth, "16-bit PGM depth in millimetres")->required()->check(CLI::ExistingFile);
  vox->add_option("--camera", vox_camera, "camera file (fx, fy, cx, cy, size=WxH)")->required()->check(CLI::ExistingFile);
  vox->add_option("--out", vox_out, "output directory")->required();
  vox->footer(key_list(VoxelGridSpec{}.to_keyvalues(), {"dims", "voxel_size", "origin", "truncation", "tsdf_mode"},
                       {{"tsdf_mode", "flipped | standard (default flipped)"}}));

  // train
  Common train_c;
  std::string train_data, train_out, train_history;
  std::size_t train_log_every = 50;
  auto* train = app.add_subcommand("train", "train the network on a directory of samples");
  add_common(train, train_c);
  train->add_option("--data", train_data, "sample directory (overrides key 'data')");
  train->add_option("--out", train_out, "checkpoint path (overrides key 'checkpoint'; default model.ckpt)");
  train->add_option("--history", train_history, "loss history CSV (overrides key 'history_csv')");
  train->add_option("--log-every", train_log_every, "print the loss every N iterations (0: never)")->capture_default_str();
  train->footer(train_help());

  // eval
  Common eval_c;
  std::string eval_ckpt, eval_data, eval_out;
  bool eval_occ = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a directory of samples");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "sample directory")->required();
  eval->add_option("--out", eval_out, "write <prefix>.txt and <prefix>.csv");
  eval->add_flag("--sc-from-occupancy", eval_occ, "derive SC positives from the occupancy head");
  eval->footer("Config keys: none (the network config is read from <checkpoint>.cfg).\n");

  // bench
  Common bench_c;
  std::string bench_dims = "60x36x60", bench_csv, bench_precision = "f32";
  std::size_t bench_iters = 20, bench_warmup = 3;
  std::uint64_t bench_seed = 0;
  auto* bench = app.add_subcommand("bench", "measure inference latency and throughput");
  add_common(bench, bench_c);
  bench->add_option("--dims", bench_dims, "input volume DxHxW")->capture_default_str();
  bench->add_option("--iters", bench_iters, "timed iterations")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--warmup", bench_warmup, "untimed warmup iterations")->capture_default_str();
  bench->add_option("--precision", bench_precision, "f32 | f64")->capture_default_str()->check(CLI::IsMember({"f32", "f64"}));
  bench->add_option("--seed", bench_seed, "parameter/input seed")->capture_default_str();
  bench->add_option("--csv", bench_csv, "also write the report as CSV");
  bench->footer(net_help());

  // flops
  Common flops_c;
  std::string flops_dims = "60x36x60", flops_csv;
  bool flops_verify = false;
  auto* flops = app.add_subcommand("flops", "analytic parameter / MAC / FLOP counts");
  add_common(flops, flops_c);
  flops->add_option("--dims", flops_dims, "input volume DxHxW")->capture_default_str();
  flops->add_option("--csv", flops_csv, "also write the report as CSV");
  flops->add_flag("--verify", flops_verify, "run an instrumented forward pass and compare counts");
  flops->footer(net_help());

  // gradcheck
  Common gc_c;
  std::string gc_dims = "8x8x8";
  NetworkGradCheckOptions gc_opts;
  double gc_threshold = 1e-5;
  bool gc_verbose = false;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient (f64)");
  add_common(gc, gc_c);
  gc->add_option("--dims", gc_dims, "input volume DxHxW")->capture_default_str();
  gc->add_option("--samples", gc_opts.samples_per_tensor, "elements probed per tensor (0: all)")->capture_default_str();
  gc->add_option("--eps", gc_opts.epsilon, "finite-difference step")->capture_default_str();
  gc->add_option("--threshold", gc_threshold, "maximum accepted relative error")->capture_default_str();
  gc->add_option("--seed", gc_opts.seed, "seed for parameters, input, labels and sampling")->capture_default_str();
  gc->add_flag("--verbose", gc_verbose, "print one line per tensor");
  gc->footer(net_help());

  // export
  Common ex_c;
  std::string ex_labels, ex_sample, ex_out;
  auto* ex = app.add_subcommand("export", "label volume -> text point list `x y z class`");
  add_common(ex, ex_c);
  auto* ex_lab = ex->add_option("--labels", ex_labels, "u8 VXT1 label volume [Dx,Dy,Dz]")->check(CLI::ExistingFile);
  auto* ex_smp = ex->add_option("--sample", ex_sample, "sample directory (uses labels.vxt)");
  ex_lab->excludes(ex_smp);
  ex->add_option("--out", ex_out, "output file (default stdout)");
  ex->footer("Config keys: none.\n");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const SceneConfig cfg = SceneConfig::from_keyvalues(gather(synth_c));
      const auto [a, b] = parse_seed_range(synth_seeds);
      for (std::uint64_t s = a; s < b; ++s) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04llu", static_cast<unsigned long long>(s));
        save_sample(std::filesystem::path(synth_out) / name, synth_scene(s, cfg));
      }
      std::cout << "wrote " << (b - a) << " scenes to " << synth_out << "\n";
    } else if (*vox) {
      KeyValues kv = gather(vox_c);
      kv.reject_unknown({"dims", "voxel_size", "origin", "truncation", "tsdf_mode"}, "voxelize config");
      const std::string mode = kv.get_or("tsdf_mode", "flipped");
      if (mode != "flipped" && mode != "standard") throw std::invalid_argument("tsdf_mode: expected flipped or standard");
      KeyValues grid_kv = VoxelGridSpec{}.to_keyvalues();
      for (const auto& [k, v] : kv.entries())
        if (k != "tsdf_mode") grid_kv.set(k, v);
      const VoxelGridSpec grid = VoxelGridSpec::from_keyvalues(grid_kv);
      const DepthImage depth = load_depth_pgm(vox_depth);
      const CameraIntrinsics cam = load_camera(vox_camera);
      const TsdfVolume tsdf = depth_to_tsdf(depth, cam, grid, mode == "flipped" ? TsdfMode::Flipped : TsdfMode::Standard);
      const VisibilityVolume vis = compute_visibility(depth, cam, grid);
      std::filesystem::create_directories(vox_out);
      save_vxt(std::filesystem::path(vox_out) / "tsdf.vxt", tsdf.values);
      save_vxt(std::filesystem::path(vox_out) / "visibility.vxt", vis.states);
      KeyValues meta = grid.to_keyvalues();
      meta.set("tsdf_mode", mode);
      write_text((std::filesystem::path(vox_out) / "grid.txt").string(), meta.to_text());
      std::cout << "wrote tsdf.vxt, visibility.vxt, grid.txt to " << vox_out << "\n";
    } else if (*train) {
      auto [tkv, nkv] = split_train_keys(gather(train_c));
      if (!train_data.empty()) tkv.set("data", train_data);
      if (!train_out.empty()) tkv.set("checkpoint", train_out);
      if (!train_history.empty()) tkv.set("history_csv", train_history);
      if (!tkv.has("checkpoint")) tkv.set("checkpoint", "model.ckpt");
      const TrainConfig tc = TrainConfig::from_keyvalues(tkv);
      const NetworkConfig nc = NetworkConfig::from_keyvalues(nkv);
      if (tc.data.empty()) throw std::invalid_argument("train: no data directory (use --data or key 'data')");
      const auto samples = load_samples(tc.data);
      TrainCallbacks cb;
      cb.on_iteration = [&](const TrainRecord& r) {
        if (train_log_every && r.iter % train_log_every == 0) {
          std::cout << "iter " << r.iter << " lr " << r.lr << " loss " << r.loss_total << " (sem " << r.loss_sem
                    << ", occ " << r.loss_occ << ")\n";
        }
      };
      cb.on_eval = [](const EvalRecord& e) {
        std::cout << "eval @" << e.iter << " SC-IoU=" << e.report.sc_iou << " SSC-mIoU=" << e.report.ssc_miou << "\n";
      };
      const TrainResult res = train_loop(samples, tc, nc, cb);
      std::cout << "trained " << res.history.size() << " iterations on " << samples.size() << " samples in "
                << res.seconds << " s; checkpoint " << tc.checkpoint << "\n";
    } else if (*eval) {
      gather(eval_c).reject_unknown({}, "eval config");
      NetworkConfig nc;
      const ParameterSet<float> params = load_checkpoint<float>(eval_ckpt, &nc);
      const auto samples = load_samples(eval_data);
      const MetricsReport rep = evaluate(samples, params, nc, eval_occ);
      std::cout << rep.to_text();
      if (!eval_out.empty()) {
        write_text(eval_out + ".txt", rep.to_text());
        write_text(eval_out + ".csv", rep.to_csv());
      }
    } else if (*bench) {
      const NetworkConfig nc = NetworkConfig::from_keyvalues(gather(bench_c));
      CostReport rep = count_flops(nc, parse_dims(bench_dims));
      if (bench_precision == "f32") bench_inference(rep, init_params<float>(nc, bench_seed), nc, bench_warmup, bench_iters, bench_seed);
      else bench_inference(rep, init_params<double>(nc, bench_seed), nc, bench_warmup, bench_iters, bench_seed);
      std::cout << rep.to_text();
      if (!bench_csv.empty()) write_text(bench_csv, rep.to_csv());
    } else if (*flops) {
      const NetworkConfig nc = NetworkConfig::from_keyvalues(gather(flops_c));
      const auto dims = parse_dims(flops_dims);
      const CostReport rep = count_flops(nc, dims);
      std::cout << rep.to_text();
      if (!flops_csv.empty()) write_text(flops_csv, rep.to_csv());
      if (flops_verify) {
        const OpCounters oc = instrumented_op_count(nc, dims);
        const std::uint64_t instantiated = init_params<float>(nc, 0).total_elements();
        std::cout << "instrumented MACs=" << oc.macs << " elementwise=" << oc.elementwise
                  << " instantiated params=" << instantiated << "\n";
        if (oc.macs != rep.macs || oc.elementwise != rep.elementwise || instantiated != rep.params ||
            count_params(nc) != rep.params) {
          std::cerr << "ssc flops: analytic counts disagree with the instrumented pass\n";
          return 2;
        }
        std::cout << "verify: OK\n";
      }
    } else if (*gc) {
      const NetworkConfig nc = NetworkConfig::from_keyvalues(gather(gc_c));
      gc_opts.dims = parse_dims(gc_dims);
      const NetworkGradCheckReport rep = network_grad_check(nc, gc_opts);
      if (gc_verbose) {
        for (const auto& [name, r] : rep.per_tensor) {
          std::cout << std::left << std::setw(30) << name << " max_rel_err=" << std::scientific << std::setprecision(3)
                    << r.max_rel_error << std::defaultfloat << " checked=" << r.checked << " skipped=" << r.skipped
                    << "\n";
        }
      }
      std::cout << "tensors=" << rep.per_tensor.size() << " probes=" << rep.overall.checked
                << " skipped=" << rep.overall.skipped << " max_rel_err=" << std::scientific << std::setprecision(3)
                << rep.overall.max_rel_error << " worst=" << rep.overall.worst_tensor << "[" << rep.overall.worst_index
                << "]" << std::defaultfloat << " seconds=" << rep.seconds << "\n";
      if (rep.overall.checked == 0 || !(rep.overall.max_rel_error <= gc_threshold)) {
        std::cerr << "ssc gradcheck: relative error above threshold " << gc_threshold << "\n";
        return 2;
      }
    } else if (*ex) {
      gather(ex_c).reject_unknown({}, "export config");
      LabelVolume lv;
      if (!ex_sample.empty()) {
        lv = load_sample(ex_sample).labels;
      } else if (!ex_labels.empty()) {
        TensorU8 t = load_vxt<std::uint8_t>(ex_labels);
        if (t.rank() != 3) throw std::invalid_argument(ex_labels + ": label volume must be rank 3");
        lv.grid.dims = {t.extent(0), t.extent(1), t.extent(2)};
        lv.labels = std::move(t);
      } else {
        throw std::invalid_argument("export: give --labels or --sample");
      }
      if (ex_out.empty()) {
        export_points(std::cout, lv);
      } else {
        std::ofstream os(ex_out);
        if (!os) throw std::runtime_error("cannot write " + ex_out);
        export_points(os, lv);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "ssc " << app.get_subcommands().front()->get_name() << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
