#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssc/keyvalue.hpp"
#include "ssc/ops.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

struct NetworkConfig {
  std::size_t num_classes = 11;  // N; the network predicts N + 1 classes
  std::size_t stem_channels = 8;
  std::array<std::size_t, 3> stage_channels{16, 16, 16};
  std::array<std::size_t, 3> blocks_per_stage{2, 2, 2};
  /// Dilations of the last six residual blocks, in order.
  std::array<std::size_t, 6> dilation_schedule{2, 2, 2, 4, 8, 4};
  std::size_t attention_reduction = 4;
  std::size_t agg_channels = 32;
  std::size_t downsample_factor = 4;
  bool use_dilation = true;
  bool use_feature_agg = true;
  bool use_ga = true;
  bool use_condition = true;
  bool normalization = false;

  void validate() const;
  /// Channels entering the GA module (and the upsampler).
  std::size_t context_channels() const { return use_feature_agg ? agg_channels : stage_channels[2]; }
  std::size_t total_blocks() const {
    return blocks_per_stage[0] + blocks_per_stage[1] + blocks_per_stage[2];
  }
  /// Dilation used by residual block `index` (0-based over all stages).
  std::size_t block_dilation(std::size_t index) const;

  KeyValues to_keyvalues() const;
  static NetworkConfig from_keyvalues(const KeyValues& kv);
  static const std::vector<std::string>& keys();
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Convolution layers in creation order. Every entry owns `<name>.weight`
/// and `<name>.bias`, plus `<name>.norm.gamma/beta` when `normalized`.
struct ConvLayer {
  std::string name;
  ConvSpec spec;
  bool normalized = false;
};
std::vector<ConvLayer> conv_layers(const NetworkConfig& cfg);

/// Named learnable tensors in insertion order.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Tensor<T> t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  Tensor<T>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& at(std::size_t i) const { return tensors_[i]; }
  std::size_t total_elements() const;

  ParameterSet zeros_like() const;
  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }
  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
using ActivationCache = std::map<std::string, Tensor<T>>;

/// Conv weights ~ N(0, 2/fan_in), biases 0, norm gamma 1 / beta 0.
template <typename T>
ParameterSet<T> init_params(const NetworkConfig& cfg, std::uint64_t seed);

/// Throws if names or shapes differ from what `cfg` requires.
template <typename T>
void check_params(const ParameterSet<T>& params, const NetworkConfig& cfg);

template <typename T>
struct EncoderOutput {
  Tensor<T> low_level;               // stem output, full resolution
  std::array<Tensor<T>, 3> stages;   // downsampled stage outputs
};

template <typename T>
struct HeadOutput {
  Tensor<T> occ_logits;  // [2, D, H, W]
  Tensor<T> sem_logits;  // [N+1, D, H, W]
};

template <typename T>
struct ForwardResult {
  Tensor<T> occ_logits;
  Tensor<T> sem_logits;
  std::optional<ActivationCache<T>> cache;
};

// Component forwards. A non-null cache receives everything the matching
// backward needs.
template <typename T>
EncoderOutput<T> encoder_forward(const Tensor<T>& tsdf, const ParameterSet<T>& params,
                                 const NetworkConfig& cfg, ActivationCache<T>* cache = nullptr);
template <typename T>
Tensor<T> ga_module(const Tensor<T>& x, const ParameterSet<T>& params,
                    ActivationCache<T>* cache = nullptr);
template <typename T>
Tensor<T> aggregate(const Tensor<T>& low_level, const std::array<Tensor<T>, 3>& stages,
                    const ParameterSet<T>& params, const NetworkConfig& cfg,
                    ActivationCache<T>* cache = nullptr);
template <typename T>
HeadOutput<T> conditioned_head(const Tensor<T>& feature, const ParameterSet<T>& params,
                               const NetworkConfig& cfg, ActivationCache<T>* cache = nullptr);

template <typename T>
ForwardResult<T> forward(const Tensor<T>& tsdf, const ParameterSet<T>& params,
                         const NetworkConfig& cfg, bool training);

/// Parameter gradients of a scalar loss given d loss / d logits. When
/// `grad_input` is non-null it receives d loss / d tsdf.
template <typename T>
ParameterSet<T> backward(const ActivationCache<T>& cache, const Tensor<T>& grad_occ,
                         const Tensor<T>& grad_sem, const ParameterSet<T>& params,
                         const NetworkConfig& cfg, Tensor<T>* grad_input = nullptr);

/// Backward through the encoder alone, accumulating into `grads`.
template <typename T>
Tensor<T> encoder_backward(const ActivationCache<T>& cache, const Tensor<T>& grad_low_level,
                           const std::array<Tensor<T>, 3>& grad_stages,
                           const ParameterSet<T>& params, const NetworkConfig& cfg,
                           ParameterSet<T>& grads);

/// Receptive field (voxels per axis) of one stage-3 encoder voxel:
/// 1 + sum over convs of (k - 1) * d * (product of earlier strides).
Triple receptive_field(const NetworkConfig& cfg);
/// Same formula over an explicit chain of convolutions.
Triple receptive_field(const std::vector<ConvSpec>& chain);

/// Stable hash of every relu on/off decision recorded in a cache.
template <typename T>
std::uint64_t relu_signature(const ActivationCache<T>& cache);

}  // namespace ssc
