// Independent scalar oracles and helpers shared by the tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ssc/ops.hpp"
#include "ssc/tensor.hpp"

namespace oracle {

using ssc::Shape;
using ssc::TensorD;

inline TensorD random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

// Direct 3D convolution, written from the definition with no tap ranges.
inline TensorD conv3d(const TensorD& x, const TensorD& w, const TensorD& b, const ssc::ConvSpec& s) {
  const std::size_t C = x.extent(0), K = w.extent(0);
  const std::size_t in[3] = {x.extent(1), x.extent(2), x.extent(3)};
  std::size_t out[3];
  for (int a = 0; a < 3; ++a) {
    const long span = static_cast<long>(in[a] + 2 * s.padding[a]) - static_cast<long>(s.dilation[a] * (s.kernel[a] - 1)) - 1;
    out[a] = static_cast<std::size_t>(span) / s.stride[a] + 1;
  }
  TensorD y({K, out[0], out[1], out[2]});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t o0 = 0; o0 < out[0]; ++o0)
      for (std::size_t o1 = 0; o1 < out[1]; ++o1)
        for (std::size_t o2 = 0; o2 < out[2]; ++o2) {
          double acc = b[k];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t0 = 0; t0 < s.kernel[0]; ++t0)
              for (std::size_t t1 = 0; t1 < s.kernel[1]; ++t1)
                for (std::size_t t2 = 0; t2 < s.kernel[2]; ++t2) {
                  const long i0 = static_cast<long>(o0 * s.stride[0] + t0 * s.dilation[0]) - static_cast<long>(s.padding[0]);
                  const long i1 = static_cast<long>(o1 * s.stride[1] + t1 * s.dilation[1]) - static_cast<long>(s.padding[1]);
                  const long i2 = static_cast<long>(o2 * s.stride[2] + t2 * s.dilation[2]) - static_cast<long>(s.padding[2]);
                  if (i0 < 0 || i1 < 0 || i2 < 0 || i0 >= static_cast<long>(in[0]) || i1 >= static_cast<long>(in[1]) ||
                      i2 >= static_cast<long>(in[2]))
                    continue;
                  acc += w.at({k, c, t0, t1, t2}) * x.at({c, static_cast<std::size_t>(i0), static_cast<std::size_t>(i1),
                                                          static_cast<std::size_t>(i2)});
                }
          y.at({k, o0, o1, o2}) = acc;
        }
  return y;
}

// Per-axis linear weights of a corner-aligned resampling from n to m samples.
inline void lerp_coord(std::size_t o, std::size_t n, std::size_t m, std::size_t& i0, std::size_t& i1, double& f) {
  const double pos = m == 1 ? 0.0 : static_cast<double>(o) * static_cast<double>(n - 1) / static_cast<double>(m - 1);
  i0 = static_cast<std::size_t>(std::floor(pos));
  if (i0 > n - 1) i0 = n - 1;
  i1 = i0 + 1 < n ? i0 + 1 : i0;
  f = pos - static_cast<double>(i0);
}

inline double trilinear_at(const TensorD& x, std::size_t c, const std::size_t o[3], const std::size_t out[3]) {
  std::size_t lo[3], hi[3];
  double f[3];
  const std::size_t n[3] = {x.extent(1), x.extent(2), x.extent(3)};
  for (int a = 0; a < 3; ++a) lerp_coord(o[a], n[a], out[a], lo[a], hi[a], f[a]);
  double v = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double wgt = 1.0;
    std::size_t idx[3];
    for (int a = 0; a < 3; ++a) {
      const bool up = (corner >> a) & 1;
      wgt *= up ? f[a] : 1.0 - f[a];
      idx[a] = up ? hi[a] : lo[a];
    }
    v += wgt * x.at({c, idx[0], idx[1], idx[2]});
  }
  return v;
}

inline double cross_entropy(const TensorD& logits, const std::vector<int>& labels) {
  const std::size_t C = logits.extent(0), sp = logits.size() / C;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < sp; ++v) {
    if (labels[v] < 0) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits[c * sp + v]);
    total += -std::log(std::exp(logits[static_cast<std::size_t>(labels[v]) * sp + v]) / z);
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// Fourth-order central difference of a scalar function wrt every element
// of x, returned shaped like x.
inline TensorD numeric_grad(TensorD& x, const std::function<double()>& f, double h = 1e-3) {
  TensorD g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double o = x[i];
    auto at = [&](double d) {
      x[i] = o + d;
      return f();
    };
    const double f1 = at(h), fm1 = at(-h), f2 = at(2 * h), fm2 = at(-2 * h);
    x[i] = o;
    g[i] = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h);
  }
  return g;
}

// Largest |a-n| / max(|a|, |n|, floor) over all elements.
inline double max_rel(const TensorD& a, const TensorD& n, double floor = 1e-8) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a[i]), std::abs(n[i]), floor});
    m = std::max(m, std::abs(a[i] - n[i]) / d);
  }
  return m;
}

// sum(g .* y): scalar probe for vector-Jacobian checks.
inline double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace oracle
