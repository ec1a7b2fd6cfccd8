// Copyright 2026 The slimtrain Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SLIMTRAIN_TENSOR_HPP_
#define SLIMTRAIN_TENSOR_HPP_

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "slimtrain/errors.hpp"

namespace slimtrain {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         [](std::int64_t a, std::int64_t b) { return a * b; });
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

// Dense row-major tensor with value semantics. Activations are (N, C, H, W),
// conv weights (K, C, R, S), linear weights (M, D).
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds IEEE floating point values");

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (auto extent : shape_) {
      if (extent < 0) throw DimensionError("negative extent in shape " + shape_string(shape_));
    }
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t i0, std::int64_t i1) { return data_[offset(i0, i1)]; }
  const T& at(std::int64_t i0, std::int64_t i1) const { return data_[offset(i0, i1)]; }
  T& at(std::int64_t i0, std::int64_t i1, std::int64_t i2, std::int64_t i3) {
    return data_[offset(i0, i1, i2, i3)];
  }
  const T& at(std::int64_t i0, std::int64_t i1, std::int64_t i2, std::int64_t i3) const {
    return data_[offset(i0, i1, i2, i3)];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  // Bitwise comparison: same shape and identical byte patterns.
  bool bitwise_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
  }

 private:
  std::size_t offset(std::int64_t i0, std::int64_t i1) const {
    return static_cast<std::size_t>(i0 * shape_[1] + i1);
  }
  std::size_t offset(std::int64_t i0, std::int64_t i1, std::int64_t i2, std::int64_t i3) const {
    return static_cast<std::size_t>(((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3);
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  std::vector<To> out(src.data().begin(), src.data().end());
  return Tensor<To>(src.shape(), std::move(out));
}

// Keeps only the listed indices along `axis`, in the listed order.
template <typename T>
Tensor<T> select_along(const Tensor<T>& src, std::size_t axis, std::span<const int> indices) {
  if (src.empty() && src.rank() == 0) return src;
  if (axis >= src.rank()) throw DimensionError("select axis out of range");
  const std::int64_t extent = src.dim(axis);
  std::int64_t outer = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= src.dim(a);
  std::int64_t inner = 1;
  for (std::size_t a = axis + 1; a < src.rank(); ++a) inner *= src.dim(a);
  Shape shape = src.shape();
  shape[axis] = static_cast<std::int64_t>(indices.size());
  Tensor<T> out(shape);
  T* dst = out.raw();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (int idx : indices) {
      if (idx < 0 || idx >= extent) throw DimensionError("select index out of range");
      const T* row = src.raw() + (o * extent + idx) * inner;
      dst = std::copy(row, row + inner, dst);
    }
  }
  return out;
}

}  // namespace slimtrain

#endif  // SLIMTRAIN_TENSOR_HPP_
