#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

struct GradCheckOptions {
  double epsilon = 1e-4;
  /// Elements probed per tensor; 0 probes every element.
  std::size_t samples_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Fourth-order stencil (f(-2h), f(-h), f(h), f(2h)) instead of the
  /// central difference.
  bool five_point = false;
  /// On a regime change, retry with epsilon / 10 up to this many times
  /// before counting the probe as skipped.
  std::size_t shrink_retries = 0;
  /// Sample elements with a nonzero analytic gradient first.
  bool prefer_nonzero = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Probes dropped because the two central-difference evaluations landed
  /// on different sides of a non-differentiable point (see `regime`).
  std::size_t skipped = 0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, kGradFloor). Below the floor the comparison is
/// effectively absolute: finite differences of an O(1) loss carry ~1e-12 of
/// rounding noise, so a true zero gradient cannot be resolved more finely.
inline constexpr double kGradFloor = 1e-6;
double relative_error(double analytic, double numeric);

/// Central-difference check of `analytic[i]` = d loss / d inputs[i]. The
/// loss closure reads the tensors behind `inputs`, which are perturbed in
/// place and restored. `regime`, when set, returns a signature of the
/// piecewise-linear branch the last loss evaluation took (e.g. a hash of
/// relu masks); probes whose +eps/-eps evaluations disagree are skipped.
/// Runs single-threaded.
GradCheckResult grad_check(const std::function<double()>& loss,
                           const std::vector<TensorD*>& inputs,
                           const std::vector<const TensorD*>& analytic,
                           const std::vector<std::string>& names, const GradCheckOptions& opts,
                           const std::function<std::uint64_t()>& regime = {});

/// Same check for a loss written as a sum of terms. Differences are taken
/// term by term before summing, so the rounding of a large total does not
/// swamp small derivatives.
GradCheckResult grad_check_terms(const std::function<std::vector<double>()>& terms,
                                 const std::vector<TensorD*>& inputs,
                                 const std::vector<const TensorD*>& analytic,
                                 const std::vector<std::string>& names, const GradCheckOptions& opts,
                                 const std::function<std::uint64_t()>& regime = {});

}  // namespace ssc
