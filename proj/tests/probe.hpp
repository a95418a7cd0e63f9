// Impulse-response probe of the encoder's receptive field.
#pragma once

#include <array>

#include "ssc/network.hpp"

namespace probe {

// Every weight and bias is set positive so no relu ever switches off; the
// nonzero support of d stage3[centre] / d input then spans exactly the
// receptive field along each axis. Returns that span, or 0 on an axis where
// the support touches the volume border (i.e. the probe was clipped).
inline ssc::Triple impulse_extent(const ssc::NetworkConfig& cfg, const ssc::Triple& dims) {
  using ssc::TensorD;
  auto p = ssc::init_params<double>(cfg, 0);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (auto& v : p.at(i).data()) v = 0.05;
  const TensorD x({1, dims[0], dims[1], dims[2]}, 0.0);
  ssc::ActivationCache<double> cache;
  const auto enc = ssc::encoder_forward(x, p, cfg, &cache);
  TensorD g3(enc.stages[2].shape(), 0.0);
  g3.at({0, g3.extent(1) / 2, g3.extent(2) / 2, g3.extent(3) / 2}) = 1.0;
  auto grads = p.zeros_like();
  const TensorD gin = ssc::encoder_backward(cache, TensorD{}, {TensorD{}, TensorD{}, g3}, p, cfg, grads);
  std::array<std::size_t, 3> lo = dims, hi{0, 0, 0};
  for (std::size_t i = 0; i < dims[0]; ++i)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t k = 0; k < dims[2]; ++k)
        if (gin.at({0, i, j, k}) != 0.0) {
          const std::size_t idx[3] = {i, j, k};
          for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], idx[a]);
            hi[a] = std::max(hi[a], idx[a]);
          }
        }
  ssc::Triple span{0, 0, 0};
  for (int a = 0; a < 3; ++a)
    if (lo[a] > 0 && hi[a] + 1 < dims[a]) span[a] = hi[a] - lo[a] + 1;
  return span;
}

}  // namespace probe
