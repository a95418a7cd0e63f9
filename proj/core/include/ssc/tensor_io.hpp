#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <variant>

#include "ssc/tensor.hpp"

namespace ssc {

/// VXT1 dtype codes.
enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2 };

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::F32;
  else if constexpr (std::is_same_v<T, double>) return DType::F64;
  else if constexpr (std::is_same_v<T, std::uint8_t>) return DType::U8;
  else static_assert(!sizeof(T), "unsupported VXT1 element type");
}

const char* dtype_name(DType d);
std::size_t dtype_size(DType d);

using AnyTensor = std::variant<TensorF, TensorD, TensorU8>;

// VXT1 layout: "VXT1", u8 dtype, u8 rank, rank x u32 LE extents, LE payload.
template <typename T>
void write_vxt(std::ostream& os, const Tensor<T>& t);
template <typename T>
Tensor<T> read_vxt(std::istream& is);
AnyTensor read_vxt_any(std::istream& is);

template <typename T>
void save_vxt(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_vxt(const std::filesystem::path& path);

/// Byte size of the VXT1 encoding of a tensor.
template <typename T>
std::size_t vxt_encoded_size(const Tensor<T>& t) {
  return 4 + 1 + 1 + 4 * t.rank() + sizeof(T) * t.size();
}

}  // namespace ssc
