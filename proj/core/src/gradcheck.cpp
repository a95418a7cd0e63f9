#include "ssc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ssc/parallel.hpp"

namespace ssc {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<double()>& loss,
                           const std::vector<TensorD*>& inputs,
                           const std::vector<const TensorD*>& analytic,
                           const std::vector<std::string>& names, const GradCheckOptions& opts,
                           const std::function<std::uint64_t()>& regime) {
  return grad_check_terms([&] { return std::vector<double>{loss()}; }, inputs, analytic, names, opts, regime);
}

namespace {

// sum_i (a_i - b_i) * w, accumulated in extended precision
long double diff_sum(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::logic_error("grad_check: loss term count changed between evaluations");
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i] - b[i]);
  return s;
}

}  // namespace

GradCheckResult grad_check_terms(const std::function<std::vector<double>()>& terms,
                                 const std::vector<TensorD*>& inputs,
                                 const std::vector<const TensorD*>& analytic,
                                 const std::vector<std::string>& names, const GradCheckOptions& opts,
                                 const std::function<std::uint64_t()>& regime) {
  if (inputs.size() != analytic.size()) {
    throw std::invalid_argument("grad_check: inputs and analytic gradients differ in count");
  }
  ScopedThreads single(1);
  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    TensorD& x = *inputs[t];
    const TensorD& g = *analytic[t];
    if (x.shape() != g.shape()) {
      throw std::invalid_argument("grad_check: analytic gradient shape " +
                                  shape_to_string(g.shape()) + " differs from input " +
                                  shape_to_string(x.shape()));
    }
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t want = x.size();
    if (opts.samples_per_tensor != 0 && opts.samples_per_tensor < x.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      if (opts.prefer_nonzero) {
        std::stable_partition(order.begin(), order.end(), [&](std::size_t i) { return g[i] != 0.0; });
      }
      want = opts.samples_per_tensor;
    }
    std::size_t done = 0;
    for (std::size_t j = 0; j < order.size() && done < want; ++j) {
      const std::size_t i = order[j];
      const double orig = x[i];
      auto eval = [&](double offset, std::uint64_t& sig) {
        x[i] = orig + offset;
        std::vector<double> f = terms();
        sig = regime ? regime() : 0;
        return f;
      };
      double h = opts.epsilon, numeric = 0.0;
      bool ok = false;
      for (std::size_t attempt = 0; attempt <= opts.shrink_retries && !ok; ++attempt, h *= 0.1) {
        std::uint64_t rp = 0, rm = 0, rp2 = 0, rm2 = 0;
        const auto fp = eval(h, rp);
        const auto fm = eval(-h, rm);
        const long double d1 = diff_sum(fp, fm);
        numeric = static_cast<double>(d1 / (2.0L * h));
        ok = rp == rm;
        if (opts.five_point) {
          const auto fp2 = eval(2.0 * h, rp2);
          const auto fm2 = eval(-2.0 * h, rm2);
          numeric = static_cast<double>((8.0L * d1 - diff_sum(fp2, fm2)) / (12.0L * h));
          ok = ok && rp2 == rp && rm2 == rp;
        }
      }
      x[i] = orig;
      if (!ok) {
        ++result.skipped;
        continue;
      }
      const double err = relative_error(g[i], numeric);
      ++result.checked;
      ++done;
      if (err > result.max_rel_error || result.worst_tensor.empty()) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_tensor = t < names.size() ? names[t] : std::to_string(t);
          result.worst_index = i;
          result.worst_analytic = g[i];
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace ssc
