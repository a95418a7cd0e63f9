#pragma once

#include <filesystem>

#include "ssc/network.hpp"

namespace ssc {

// Checkpoint layout:
//   SSCCKPT 1
//   tensors <n>
//   <name> <dtype> <shape DxHxW...> <offset> <bytes>     (n lines)
//   END
//   <payload: VXT1 blobs back to back; offsets relative to payload start>
// The network config goes to `<path>.cfg` as key=value text.

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const NetworkConfig& cfg);

/// Loads tensors (cast to T) and the sidecar config; validates the
/// parameter set against that config.
template <typename T>
ParameterSet<T> load_checkpoint(const std::filesystem::path& path, NetworkConfig* cfg_out = nullptr);

std::filesystem::path checkpoint_config_path(const std::filesystem::path& path);

}  // namespace ssc
