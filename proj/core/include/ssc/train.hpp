#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ssc/keyvalue.hpp"
#include "ssc/metrics.hpp"
#include "ssc/network.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

template <typename T>
struct JointLossResult {
  double total = 0.0, sem = 0.0, occ = 0.0;
  Tensor<T> grad_occ, grad_sem;
};

/// CE(sem, labels) + CE(occ, binary(labels)); 255 voxels are ignored. Without
/// conditioning only the semantic term is used and grad_occ is zero.
template <typename T>
JointLossResult<T> joint_loss(const Tensor<T>& occ_logits, const Tensor<T>& sem_logits,
                              const TensorU8& labels, bool use_condition = true);

/// lr0 * (1 - iter/max_iter)^0.9
double poly_lr(std::size_t iter, std::size_t max_iter, double lr0);

template <typename T>
struct OptimState {
  std::vector<Tensor<T>> velocity;
  std::size_t iteration = 0;
  std::size_t max_iter = 1;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;

  static OptimState init(const ParameterSet<T>& params, double lr0, std::size_t max_iter,
                         double momentum = 0.9, double weight_decay = 0.0005);
};

/// g' = g + wd*p; v = momentum*v + g'; p -= lr*v. Advances state.iteration.
template <typename T>
void sgd_step(ParameterSet<T>& params, const ParameterSet<T>& grads, OptimState<T>& state, double lr);

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 500;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::uint64_t seed = 0;
  bool shuffle = true;
  /// Evaluate on the training set every this many iterations (0: only at the end).
  std::size_t eval_every = 0;
  /// Directory of sample subdirectories (CLI only; train_loop takes samples).
  std::string data;
  std::string checkpoint;   // written at the end when non-empty
  std::string history_csv;  // loss history when non-empty

  void validate() const;
  static const std::vector<std::string>& keys();
  static TrainConfig from_keyvalues(const KeyValues& kv);
  KeyValues to_keyvalues() const;
};

struct TrainRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss_total = 0.0, loss_sem = 0.0, loss_occ = 0.0;
};

struct EvalRecord {
  std::size_t iter = 0;
  MetricsReport report;
};

struct TrainResult {
  ParameterSet<float> params;
  std::vector<TrainRecord> history;
  std::vector<EvalRecord> evals;
  double seconds = 0.0;
};

struct TrainCallbacks {
  std::function<void(const TrainRecord&)> on_iteration;
  std::function<void(const EvalRecord&)> on_eval;
};

/// Labels with voxels outside the view frustum set to 255.
TensorU8 training_labels(const SceneSample& s);

/// Predictions of `params` on every sample, accumulated into one report.
MetricsReport evaluate(const std::vector<SceneSample>& samples, const ParameterSet<float>& params,
                       const NetworkConfig& net, bool sc_from_occupancy = false);

std::vector<SceneSample> load_samples(const std::filesystem::path& dir);

/// Deterministic in (samples, configs, seed). Starts from `init` when given.
TrainResult train_loop(const std::vector<SceneSample>& samples, const TrainConfig& cfg,
                       const NetworkConfig& net, const TrainCallbacks& callbacks = {},
                       std::optional<ParameterSet<float>> init = std::nullopt);

void write_history_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& history);

}  // namespace ssc
