#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "ssc/gradcheck.hpp"
#include "ssc/network.hpp"

namespace ssc {

struct NetworkGradCheckOptions {
  std::array<std::size_t, 3> dims{8, 8, 8};
  std::size_t samples_per_tensor = 16;  // 0: every element
  double epsilon = 1e-4;
  bool five_point = true;
  std::size_t shrink_retries = 3;
  bool include_input = true;
  std::uint64_t seed = 0;
};

struct NetworkGradCheckReport {
  GradCheckResult overall;
  std::vector<std::pair<std::string, GradCheckResult>> per_tensor;
  double seconds = 0.0;
};

/// Finite-difference check, in double precision, of the joint loss
/// gradient wrt every parameter tensor (and the input volume) on a random
/// input with random labels.
NetworkGradCheckReport network_grad_check(const NetworkConfig& cfg, const NetworkGradCheckOptions& opts);

}  // namespace ssc
