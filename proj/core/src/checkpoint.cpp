#include "ssc/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ssc/tensor_io.hpp"

namespace ssc {

std::filesystem::path checkpoint_config_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".cfg";
  return p;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const NetworkConfig& cfg) {
  check_params(params, cfg);
  std::ostringstream payload(std::ios::binary);
  std::ostringstream manifest;
  manifest << "SSCCKPT 1\ntensors " << params.size() << "\n";
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.at(i);
    const auto offset = static_cast<std::size_t>(payload.tellp());
    write_vxt(payload, t);
    manifest << params.names()[i] << ' ' << dtype_name(dtype_of<T>()) << ' '
             << join_sizes(t.shape(), 'x') << ' ' << offset << ' ' << vxt_encoded_size(t) << "\n";
  }
  manifest << "END\n";

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string m = manifest.str(), p = payload.str();
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  os.write(p.data(), static_cast<std::streamsize>(p.size()));
  if (!os) throw std::runtime_error("write failed for checkpoint " + path.string());

  const auto cfg_path = checkpoint_config_path(path);
  std::ofstream cs(cfg_path);
  if (!cs) throw std::runtime_error("cannot write " + cfg_path.string());
  cs << cfg.to_keyvalues().to_text();
  if (!cs) throw std::runtime_error("write failed for " + cfg_path.string());
}

namespace {

struct ManifestEntry {
  std::string name, dtype, shape;
  std::size_t offset = 0, bytes = 0;
};

template <typename T>
Tensor<T> as(AnyTensor any) {
  return std::visit([](auto& t) { return t.template cast<T>(); }, any);
}

}  // namespace

template <typename T>
ParameterSet<T> load_checkpoint(const std::filesystem::path& path, NetworkConfig* cfg_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string where = "checkpoint " + path.string();
  std::string line;
  if (!std::getline(is, line) || line != "SSCCKPT 1") throw std::runtime_error(where + ": bad header");
  std::size_t n = 0;
  {
    if (!std::getline(is, line)) throw std::runtime_error(where + ": truncated manifest");
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word >> n) || word != "tensors") throw std::runtime_error(where + ": bad tensor count line");
  }
  std::vector<ManifestEntry> entries(n);
  for (auto& e : entries) {
    if (!std::getline(is, line)) throw std::runtime_error(where + ": truncated manifest");
    std::istringstream ls(line);
    if (!(ls >> e.name >> e.dtype >> e.shape >> e.offset >> e.bytes)) {
      throw std::runtime_error(where + ": malformed manifest line '" + line + "'");
    }
  }
  if (!std::getline(is, line) || line != "END") throw std::runtime_error(where + ": manifest lacks END");
  const std::streamoff base = is.tellg();

  ParameterSet<T> params;
  for (const auto& e : entries) {
    is.seekg(base + static_cast<std::streamoff>(e.offset));
    AnyTensor any;
    try {
      any = read_vxt_any(is);
    } catch (const std::exception& ex) {
      throw std::runtime_error(where + ": tensor '" + e.name + "': " + ex.what());
    }
    Tensor<T> t = as<T>(std::move(any));
    if (join_sizes(t.shape(), 'x') != e.shape) {
      throw std::runtime_error(where + ": tensor '" + e.name + "' shape differs from manifest");
    }
    params.add(e.name, std::move(t));
  }

  const auto cfg_path = checkpoint_config_path(path);
  if (!std::filesystem::exists(cfg_path)) throw std::runtime_error("missing checkpoint config " + cfg_path.string());
  const NetworkConfig cfg = NetworkConfig::from_keyvalues(KeyValues::load(cfg_path));
  check_params(params, cfg);
  if (cfg_out) *cfg_out = cfg;
  return params;
}

template void save_checkpoint(const std::filesystem::path&, const ParameterSet<float>&, const NetworkConfig&);
template void save_checkpoint(const std::filesystem::path&, const ParameterSet<double>&, const NetworkConfig&);
template ParameterSet<float> load_checkpoint(const std::filesystem::path&, NetworkConfig*);
template ParameterSet<double> load_checkpoint(const std::filesystem::path&, NetworkConfig*);

}  // namespace ssc
