#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace ssc {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor, last axis fastest. All extents are >= 1; a
/// default-constructed tensor is empty (rank 0, no data) and only valid as
/// a placeholder.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (shape_[i] == 0) {
        throw std::invalid_argument("tensor extent " + std::to_string(i) + " is zero in shape " +
                                    shape_to_string(shape_));
      }
    }
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : Tensor(std::move(shape)) {
    if (data.size() != data_.size()) {
      throw std::invalid_argument("tensor payload has " + std::to_string(data.size()) +
                                  " elements, shape " + shape_to_string(shape_) + " needs " +
                                  std::to_string(data_.size()));
    }
    data_ = std::move(data);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw std::invalid_argument("index rank " + std::to_string(index.size()) +
                                  " does not match tensor rank " + std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (index[i] >= shape_[i]) {
        throw std::out_of_range("index " + std::to_string(index[i]) + " out of range on axis " +
                                std::to_string(i) + " (extent " + std::to_string(shape_[i]) + ")");
      }
      off = off * shape_[i] + index[i];
    }
    return off;
  }
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    return offset(std::span<const std::size_t>(index.begin(), index.size()));
  }

  Shape index_of(std::size_t off) const {
    if (off >= data_.size()) throw std::out_of_range("offset beyond tensor size");
    Shape idx(shape_.size());
    for (std::size_t i = shape_.size(); i-- > 0;) {
      idx[i] = off % shape_[i];
      off /= shape_[i];
    }
    return idx;
  }

  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const {
    Tensor out;
    if (shape_numel(shape) != data_.size()) {
      throw std::invalid_argument("cannot reshape " + shape_to_string(shape_) + " to " +
                                  shape_to_string(shape));
    }
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using TensorU8 = Tensor<std::uint8_t>;

/// Extents of a [C,D,H,W] feature volume.
struct VolumeDims {
  std::size_t c = 1, d = 1, h = 1, w = 1;
  std::size_t spatial() const { return d * h * w; }
};

template <typename T>
VolumeDims volume_dims(const Tensor<T>& t, const char* what = "tensor") {
  if (t.rank() != 4) {
    throw std::invalid_argument(std::string(what) + " must be rank 4 [C,D,H,W], got " +
                                shape_to_string(t.shape()));
  }
  return {t.extent(0), t.extent(1), t.extent(2), t.extent(3)};
}

}  // namespace ssc
