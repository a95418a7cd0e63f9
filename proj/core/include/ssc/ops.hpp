#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

using Triple = std::array<std::size_t, 3>;

struct ConvSpec {
  Triple kernel{3, 3, 3};
  Triple stride{1, 1, 1};
  Triple dilation{1, 1, 1};
  Triple padding{0, 0, 0};
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  /// Cubic kernel with "same"-style padding d*(k-1)/2.
  static ConvSpec cubic(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                        std::size_t dilation = 1);

  void validate() const;
  std::size_t taps() const { return kernel[0] * kernel[1] * kernel[2]; }
  /// floor((in + 2p - d(k-1) - 1)/s) + 1; throws if the result would be < 1.
  std::size_t output_extent(std::size_t axis, std::size_t in) const;
  Shape weight_shape() const;
};

// Operation counters used by the profiler's instrumented oracle. While a
// ScopedOpCounting is alive on the calling thread, conv3d runs the naive
// reference kernel and bumps `macs` once per (output, input-channel, tap)
// product, padding taps included; elementwise ops add one per element.
struct OpCounters {
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;
};

class ScopedOpCounting {
 public:
  explicit ScopedOpCounting(OpCounters& sink);
  ~ScopedOpCounting();
  ScopedOpCounting(const ScopedOpCounting&) = delete;
  ScopedOpCounting& operator=(const ScopedOpCounting&) = delete;

 private:
  OpCounters* previous_;
};

OpCounters* active_op_counters();

// ---- convolution ---------------------------------------------------------

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                 const ConvSpec& spec);

/// Six-nested-loop reference; shares no code with the optimized kernel.
template <typename T>
Tensor<T> conv3d_reference(const Tensor<T>& input, const Tensor<T>& weights,
                           const Tensor<T>& bias, const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& weights, const ConvSpec& spec,
                             bool need_input_grad = true);

// ---- pointwise -----------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
/// Gradient through relu given its forward output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& out);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& grad_out, const Tensor<T>& out);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
// add backward is the identity on both operands.

/// x[c,...] * scale[c]; scale has C elements (any shape).
template <typename T>
Tensor<T> scale_per_channel(const Tensor<T>& x, const Tensor<T>& scale);
template <typename T>
struct ScaleGrads {
  Tensor<T> x;
  Tensor<T> scale;
};
template <typename T>
ScaleGrads<T> scale_per_channel_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                         const Tensor<T>& scale);

// ---- pooling / resampling ------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool3d(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool3d_backward(const Tensor<T>& grad_out, const VolumeDims& input_dims);

/// Corner-aligned trilinear upsampling: output extent = input extent * factor,
/// sample position = o * (in - 1) / (out - 1) per axis (0 when out == 1).
template <typename T>
Tensor<T> upsample3d(const Tensor<T>& x, const Triple& factor);
template <typename T>
Tensor<T> upsample3d_backward(const Tensor<T>& grad_out, const VolumeDims& input_dims,
                              const Triple& factor);

// ---- channel concat ------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts);
template <typename T>
std::vector<Tensor<T>> concat_channels_backward(const Tensor<T>& grad_out,
                                                const std::vector<std::size_t>& channels);

// ---- softmax / cross entropy --------------------------------------------

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits);
/// Vector-Jacobian product of softmax_channels given its output.
template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& grad_out, const Tensor<T>& probs);

template <typename T>
struct CrossEntropyResult {
  double loss = 0.0;
  std::size_t count = 0;  // voxels that contributed
  Tensor<T> grad;         // d loss / d logits
};

/// Mean over non-ignored voxels of -log softmax(logits)[label]. `labels` is
/// [D,H,W]; `ignore` (same shape, nonzero = skip) may be empty. With no
/// contributing voxels the loss and gradient are zero.
template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& logits, const TensorU8& labels,
                                    const TensorU8& ignore);

/// Per-voxel argmax over channels, ties toward the lowest index.
template <typename T>
TensorU8 argmax_channels(const Tensor<T>& logits);

}  // namespace ssc
