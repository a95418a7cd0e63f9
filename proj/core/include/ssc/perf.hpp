#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssc/network.hpp"

namespace ssc {

struct LayerCost {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;
  Shape output;  // [C, D, H, W]
};

struct CostReport {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;  // 2 * macs
  std::uint64_t elementwise = 0;
  std::vector<LayerCost> layers;
  std::array<std::size_t, 3> dims{};

  // measured part; iters == 0 until bench_inference fills it
  std::size_t iters = 0, warmup = 0;
  double mean_ms = 0, p50_ms = 0, p95_ms = 0, fps = 0;
  int threads = 1;
  std::string precision;

  std::string to_text() const;
  std::string to_csv() const;
};

/// Closed-form parameter count; builds no tensors.
std::uint64_t count_params(const NetworkConfig& cfg);

/// Analytic MACs and elementwise ops for one forward pass on a
/// [1, dims] input. Conv MACs = out voxels * Cout * Cin * taps.
CostReport count_flops(const NetworkConfig& cfg, const std::array<std::size_t, 3>& dims);

/// Runs a forward pass under ScopedOpCounting and returns what the kernels
/// counted.
OpCounters instrumented_op_count(const NetworkConfig& cfg, const std::array<std::size_t, 3>& dims,
                                 std::uint64_t seed = 0);

/// Fills the measured fields of `report` (which should come from
/// count_flops with the same dims). Input is fixed uniform noise in [-1, 1].
template <typename T>
void bench_inference(CostReport& report, const ParameterSet<T>& params, const NetworkConfig& cfg,
                     std::size_t warmup, std::size_t iters, std::uint64_t seed = 0);

/// Nearest-rank percentile (q in [0, 100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

}  // namespace ssc
