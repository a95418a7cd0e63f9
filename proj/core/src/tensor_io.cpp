#include "ssc/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace ssc {
namespace {

static_assert(std::endian::native == std::endian::little,
              "VXT1 I/O assumes a little-endian host");

constexpr char kMagic[4] = {'V', 'X', 'T', '1'};

void read_exact(std::istream& is, void* dst, std::size_t n, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw std::runtime_error(std::string("VXT1: truncated ") + what);
  }
}

struct Header {
  DType dtype;
  Shape shape;
};

Header read_header(std::istream& is) {
  char magic[4];
  read_exact(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("VXT1: bad magic");
  std::uint8_t code = 0, rank = 0;
  read_exact(is, &code, 1, "dtype");
  read_exact(is, &rank, 1, "rank");
  if (code > 2) throw std::runtime_error("VXT1: unknown dtype code " + std::to_string(code));
  if (rank == 0) throw std::runtime_error("VXT1: rank 0 is not supported");
  Header h{static_cast<DType>(code), Shape(rank)};
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint32_t e = 0;
    read_exact(is, &e, 4, "extents");
    if (e == 0) throw std::runtime_error("VXT1: zero extent on axis " + std::to_string(i));
    h.shape[i] = e;
  }
  return h;
}

template <typename T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
  Tensor<T> t(std::move(shape));
  read_exact(is, t.raw(), t.size() * sizeof(T), "payload");
  return t;
}

}  // namespace

const char* dtype_name(DType d) {
  switch (d) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::U8: return "u8";
  }
  return "?";
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
  }
  return 0;
}

template <typename T>
void write_vxt(std::ostream& os, const Tensor<T>& t) {
  if (t.rank() == 0 || t.rank() > 255) throw std::invalid_argument("VXT1: rank must be 1..255");
  os.write(kMagic, 4);
  const auto code = static_cast<std::uint8_t>(dtype_of<T>());
  const auto rank = static_cast<std::uint8_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&code), 1);
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (auto e : t.shape()) {
    if (e > 0xffffffffu) throw std::invalid_argument("VXT1: extent exceeds u32");
    const auto e32 = static_cast<std::uint32_t>(e);
    os.write(reinterpret_cast<const char*>(&e32), 4);
  }
  os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw std::runtime_error("VXT1: write failed");
}

template <typename T>
Tensor<T> read_vxt(std::istream& is) {
  Header h = read_header(is);
  if (h.dtype != dtype_of<T>()) {
    throw std::runtime_error(std::string("VXT1: dtype mismatch, file holds ") + dtype_name(h.dtype) +
                             ", expected " + dtype_name(dtype_of<T>()));
  }
  return read_payload<T>(is, std::move(h.shape));
}

AnyTensor read_vxt_any(std::istream& is) {
  Header h = read_header(is);
  switch (h.dtype) {
    case DType::F32: return read_payload<float>(is, std::move(h.shape));
    case DType::F64: return read_payload<double>(is, std::move(h.shape));
    case DType::U8: return read_payload<std::uint8_t>(is, std::move(h.shape));
  }
  throw std::runtime_error("VXT1: unreachable dtype");
}

template <typename T>
void save_vxt(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_vxt(os, t);
}

template <typename T>
Tensor<T> load_vxt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_vxt<T>(is);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

#define SSC_INSTANTIATE_IO(T)                                                  \
  template void write_vxt(std::ostream&, const Tensor<T>&);                    \
  template Tensor<T> read_vxt(std::istream&);                                  \
  template void save_vxt(const std::filesystem::path&, const Tensor<T>&);      \
  template Tensor<T> load_vxt(const std::filesystem::path&);

SSC_INSTANTIATE_IO(float)
SSC_INSTANTIATE_IO(double)
SSC_INSTANTIATE_IO(std::uint8_t)

#undef SSC_INSTANTIATE_IO

}  // namespace ssc
