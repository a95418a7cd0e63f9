#include "ssc/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ssc/checkpoint.hpp"

namespace ssc {

template <typename T>
JointLossResult<T> joint_loss(const Tensor<T>& occ_logits, const Tensor<T>& sem_logits, const TensorU8& labels,
                              bool use_condition) {
  TensorU8 ignore(labels.shape());
  for (std::size_t v = 0; v < labels.size(); ++v) ignore[v] = labels[v] == kUnlabeled;
  JointLossResult<T> r;
  CrossEntropyResult<T> sem = cross_entropy(sem_logits, labels, ignore);
  r.sem = sem.loss;
  r.grad_sem = std::move(sem.grad);
  if (use_condition) {
    CrossEntropyResult<T> occ = cross_entropy(occ_logits, binary_occupancy_labels(labels), ignore);
    r.occ = occ.loss;
    r.grad_occ = std::move(occ.grad);
  } else {
    r.grad_occ = Tensor<T>(occ_logits.shape());
  }
  r.total = r.sem + r.occ;
  return r;
}

double poly_lr(std::size_t iter, std::size_t max_iter, double lr0) {
  if (max_iter == 0) throw std::invalid_argument("poly_lr: max_iter must be >= 1");
  if (iter > max_iter) {
    throw std::invalid_argument("poly_lr: iter " + std::to_string(iter) + " exceeds max_iter " +
                                std::to_string(max_iter));
  }
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), 0.9);
}

template <typename T>
OptimState<T> OptimState<T>::init(const ParameterSet<T>& params, double lr0, std::size_t max_iter, double momentum,
                                  double weight_decay) {
  OptimState s;
  for (std::size_t i = 0; i < params.size(); ++i) s.velocity.emplace_back(params.at(i).shape());
  s.max_iter = max_iter;
  s.lr0 = lr0;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  return s;
}

template <typename T>
void sgd_step(ParameterSet<T>& params, const ParameterSet<T>& grads, OptimState<T>& st, double lr) {
  if (grads.size() != params.size() || st.velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: parameter, gradient and velocity counts differ");
  }
  if (st.iteration >= st.max_iter) throw std::logic_error("sgd_step: already at max_iter");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params.at(i);
    const Tensor<T>& g = grads.at(i);
    Tensor<T>& v = st.velocity[i];
    if (g.shape() != p.shape() || v.shape() != p.shape()) {
      throw std::invalid_argument("sgd_step: shape mismatch for '" + params.names()[i] + "'");
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]) + st.weight_decay * static_cast<double>(p[j]);
      const double vj = st.momentum * static_cast<double>(v[j]) + gj;
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - lr * vj);
    }
  }
  ++st.iteration;
}

// ---- config --------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(lr0 >= 0.0)) throw std::invalid_argument("lr0 must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {"batch_size", "epochs", "lr0", "momentum", "weight_decay", "seed",
                                             "shuffle", "eval_every", "data", "checkpoint", "history_csv"};
  return k;
}

TrainConfig TrainConfig::from_keyvalues(const KeyValues& kv) {
  const auto& k = keys();
  kv.reject_unknown(std::set<std::string>(k.begin(), k.end()), "train config");
  TrainConfig c;
  auto nonneg = [&](const char* key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw std::invalid_argument(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.batch_size = nonneg("batch_size", c.batch_size);
  c.epochs = nonneg("epochs", c.epochs);
  c.lr0 = kv.get_double("lr0", c.lr0);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.seed = nonneg("seed", c.seed);
  c.shuffle = kv.get_bool("shuffle", c.shuffle);
  c.eval_every = nonneg("eval_every", c.eval_every);
  c.data = kv.get_or("data", c.data);
  c.checkpoint = kv.get_or("checkpoint", c.checkpoint);
  c.history_csv = kv.get_or("history_csv", c.history_csv);
  c.validate();
  return c;
}

KeyValues TrainConfig::to_keyvalues() const {
  KeyValues kv;
  std::ostringstream d;
  d << std::setprecision(17);
  auto num = [&](double v) {
    d.str("");
    d << v;
    return d.str();
  };
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("epochs", std::to_string(epochs));
  kv.set("lr0", num(lr0));
  kv.set("momentum", num(momentum));
  kv.set("weight_decay", num(weight_decay));
  kv.set("seed", std::to_string(seed));
  kv.set("shuffle", shuffle ? "true" : "false");
  kv.set("eval_every", std::to_string(eval_every));
  if (!data.empty()) kv.set("data", data);
  if (!checkpoint.empty()) kv.set("checkpoint", checkpoint);
  if (!history_csv.empty()) kv.set("history_csv", history_csv);
  return kv;
}

// ---- data -----------------------------------------------------------------------

TensorU8 training_labels(const SceneSample& s) {
  TensorU8 labels = s.labels.labels;
  if (s.visibility.states.shape() != labels.shape()) {
    throw std::invalid_argument("sample visibility and labels differ in shape");
  }
  for (std::size_t v = 0; v < labels.size(); ++v)
    if (s.visibility.at(v) == VoxelState::OutsideFrustum) labels[v] = kUnlabeled;
  return labels;
}

std::vector<SceneSample> load_samples(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("data directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "sample.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no samples under " + dir.string());
  std::vector<SceneSample> out;
  for (const auto& d : dirs) out.push_back(load_sample(d));
  return out;
}

MetricsReport evaluate(const std::vector<SceneSample>& samples, const ParameterSet<float>& params,
                       const NetworkConfig& net, bool sc_from_occupancy) {
  MetricsAccumulator acc(net.num_classes);
  MetricsAccumulator occ_acc(net.num_classes);
  for (const SceneSample& s : samples) {
    const ForwardResult<float> r = forward(tsdf_input(s.tsdf), params, net, false);
    const TensorU8 pred = argmax_channels(r.sem_logits);
    acc.add(pred, s.labels.labels, s.visibility.states);
    if (sc_from_occupancy) occ_acc.add(argmax_channels(r.occ_logits), s.labels.labels, s.visibility.states);
  }
  MetricsReport rep = MetricsReport::from(acc);
  if (sc_from_occupancy) {
    const ScMetrics sc = occ_acc.sc();
    rep.sc_precision = sc.precision;
    rep.sc_recall = sc.recall;
    rep.sc_iou = sc.iou;
  }
  return rep;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "iter,lr,loss_total,loss_sem,loss_occ\n" << std::setprecision(9);
  for (const auto& r : history)
    os << r.iter << ',' << r.lr << ',' << r.loss_total << ',' << r.loss_sem << ',' << r.loss_occ << "\n";
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

TrainResult train_loop(const std::vector<SceneSample>& samples, const TrainConfig& cfg, const NetworkConfig& net,
                       const TrainCallbacks& callbacks, std::optional<ParameterSet<float>> init) {
  cfg.validate();
  net.validate();
  if (samples.empty()) throw std::invalid_argument("train_loop: dataset is empty");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<TensorF> inputs;
  std::vector<TensorU8> labels;
  for (const auto& s : samples) {
    inputs.push_back(tsdf_input(s.tsdf));
    labels.push_back(training_labels(s));
    for (std::size_t v = 0; v < labels.back().size(); ++v) {
      const std::uint8_t l = labels.back()[v];
      if (l != kUnlabeled && l > net.num_classes) {
        throw std::invalid_argument("train_loop: label " + std::to_string(l) + " exceeds num_classes " +
                                    std::to_string(net.num_classes));
      }
    }
  }

  TrainResult result;
  result.params = init ? std::move(*init) : init_params<float>(net, cfg.seed);
  check_params(result.params, net);
  const std::size_t n = samples.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t max_iter = per_epoch * cfg.epochs;
  OptimState<float> st = OptimState<float>::init(result.params, cfg.lr0, max_iter, cfg.momentum, cfg.weight_decay);

  std::mt19937_64 rng(cfg.seed ^ 0x5eedf00dull);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto run_eval = [&](std::size_t iter) {
    EvalRecord e{iter, evaluate(samples, result.params, net)};
    if (callbacks.on_eval) callbacks.on_eval(e);
    result.evals.push_back(std::move(e));
  };

  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < per_epoch; ++b, ++iter) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      ParameterSet<float> grads = result.params.zeros_like();
      TrainRecord rec;
      rec.iter = iter;
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t s = order[i];
        ForwardResult<float> fr = forward(inputs[s], result.params, net, true);
        JointLossResult<float> jl = joint_loss(fr.occ_logits, fr.sem_logits, labels[s], net.use_condition);
        ParameterSet<float> g = backward(*fr.cache, jl.grad_occ, jl.grad_sem, result.params, net);
        for (std::size_t p = 0; p < g.size(); ++p) {
          Tensor<float>& dst = grads.at(p);
          const Tensor<float>& src = g.at(p);
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
        rec.loss_total += jl.total;
        rec.loss_sem += jl.sem;
        rec.loss_occ += jl.occ;
      }
      const float inv = 1.0f / static_cast<float>(hi - lo);
      for (std::size_t p = 0; p < grads.size(); ++p)
        for (auto& x : grads.at(p).data()) x *= inv;
      const double binv = 1.0 / static_cast<double>(hi - lo);
      rec.loss_total *= binv;
      rec.loss_sem *= binv;
      rec.loss_occ *= binv;
      rec.lr = poly_lr(iter, max_iter, cfg.lr0);
      sgd_step(result.params, grads, st, rec.lr);
      if (!std::isfinite(rec.loss_total)) {
        throw std::runtime_error("train_loop: non-finite loss at iteration " + std::to_string(iter));
      }
      if (callbacks.on_iteration) callbacks.on_iteration(rec);
      result.history.push_back(rec);
      if (cfg.eval_every && (iter + 1) % cfg.eval_every == 0 && iter + 1 < max_iter) run_eval(iter + 1);
    }
  }
  run_eval(max_iter);

  if (!cfg.history_csv.empty()) write_history_csv(cfg.history_csv, result.history);
  if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, result.params, net);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

template JointLossResult<float> joint_loss(const TensorF&, const TensorF&, const TensorU8&, bool);
template JointLossResult<double> joint_loss(const TensorD&, const TensorD&, const TensorU8&, bool);
template struct OptimState<float>;
template struct OptimState<double>;
template void sgd_step(ParameterSet<float>&, const ParameterSet<float>&, OptimState<float>&, double);
template void sgd_step(ParameterSet<double>&, const ParameterSet<double>&, OptimState<double>&, double);

}  // namespace ssc
