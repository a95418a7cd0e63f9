#include "ssc/netcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "ssc/parallel.hpp"
#include "ssc/train.hpp"

namespace ssc {

NetworkGradCheckReport network_grad_check(const NetworkConfig& cfg, const NetworkGradCheckOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  ScopedThreads single(1);
  const auto& d = opts.dims;
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  ParameterSet<double> params = init_params<double>(cfg, opts.seed);
  // nonzero biases so bias gradients are exercised away from the init point
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& n = params.names()[i];
    if (n.size() > 5 && n.compare(n.size() - 5, 5, ".bias") == 0)
      for (auto& v : params.at(i).data()) v = 0.1 * u(rng);
  }
  TensorD x({1, d[0], d[1], d[2]});
  for (auto& v : x.data()) v = u(rng);
  TensorU8 labels({d[0], d[1], d[2]});
  for (auto& l : labels.data()) {
    const auto r = rng() % (cfg.num_classes + 2);
    l = r == cfg.num_classes + 1 ? kUnlabeled : static_cast<std::uint8_t>(r);
  }

  ForwardResult<double> fr = forward(x, params, cfg, true);
  JointLossResult<double> jl = joint_loss(fr.occ_logits, fr.sem_logits, labels, cfg.use_condition);
  TensorD grad_x;
  const ParameterSet<double> grads = backward(*fr.cache, jl.grad_occ, jl.grad_sem, params, cfg, &grad_x);

  // Per-voxel contributions to the joint loss; they sum to joint_loss().total.
  const TensorU8 occ_labels = binary_occupancy_labels(labels);
  std::size_t counted = 0;
  for (auto l : labels.data()) counted += l != kUnlabeled;
  const double inv = counted ? 1.0 / static_cast<double>(counted) : 0.0;
  auto nll = [](const TensorD& logits, std::size_t v, std::size_t y) {
    const std::size_t c = logits.extent(0), sp = logits.size() / c;
    double mx = logits[v];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, logits[k * sp + v]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += std::exp(logits[k * sp + v] - mx);
    return mx + std::log(sum) - logits[y * sp + v];
  };
  std::uint64_t signature = 0;
  auto terms = [&]() {
    ForwardResult<double> r = forward(x, params, cfg, true);
    signature = relu_signature(*r.cache);
    std::vector<double> t;
    t.reserve(2 * counted);
    for (std::size_t v = 0; v < labels.size(); ++v) {
      if (labels[v] == kUnlabeled) continue;
      t.push_back(nll(r.sem_logits, v, labels[v]) * inv);
      if (cfg.use_condition) t.push_back(nll(r.occ_logits, v, occ_labels[v]) * inv);
    }
    return t;
  };
  {
    double total = 0.0;
    for (double v : terms()) total += v;
    if (std::abs(total - jl.total) > 1e-9 * std::max(1.0, std::abs(jl.total))) {
      throw std::logic_error("network_grad_check: per-voxel loss terms disagree with joint_loss");
    }
  }
  auto regime = [&]() { return signature; };

  GradCheckOptions go;
  go.epsilon = opts.epsilon;
  go.samples_per_tensor = opts.samples_per_tensor;
  go.five_point = opts.five_point;
  go.shrink_retries = opts.shrink_retries;
  go.prefer_nonzero = true;

  NetworkGradCheckReport rep;
  auto run = [&](const std::string& name, TensorD* target, const TensorD* analytic) {
    go.seed = opts.seed + rep.per_tensor.size() + 1;
    GradCheckResult r = grad_check_terms(terms, {target}, {analytic}, {name}, go, regime);
    rep.overall.checked += r.checked;
    rep.overall.skipped += r.skipped;
    if (r.max_rel_error > rep.overall.max_rel_error || rep.overall.worst_tensor.empty()) {
      rep.overall.max_rel_error = r.max_rel_error;
      rep.overall.worst_tensor = r.worst_tensor;
      rep.overall.worst_index = r.worst_index;
      rep.overall.worst_analytic = r.worst_analytic;
      rep.overall.worst_numeric = r.worst_numeric;
    }
    rep.per_tensor.emplace_back(name, std::move(r));
  };
  for (std::size_t i = 0; i < params.size(); ++i) run(params.names()[i], &params.at(i), &grads.at(i));
  if (opts.include_input) run("input", &x, &grad_x);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace ssc
