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

#ifndef SLIMTRAIN_DATASET_HPP_
#define SLIMTRAIN_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "slimtrain/model_graph.hpp"
#include "slimtrain/tensor.hpp"

namespace slimtrain {

inline constexpr std::int64_t kCifarRecordBytes = 3073;
inline constexpr int kCifarClasses = 10;

// Normalized images (count, C, H, W) and labels in [0, classes).
struct DatasetHandle {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<double> mean;  // per channel, of the raw [0, 1] pixels
  std::vector<double> stddev;
  int classes = 0;

  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
  InputShape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
};

// Parses CIFAR-10 binary records: one label byte, then 1024 R, 1024 G and
// 1024 B bytes, each plane row-major 32x32. `path` is a batch file or a
// directory holding data_batch_*.bin (and test_batch.bin), read in name order.
// Pixels are scaled to [0, 1] and normalized with the per-channel statistics
// of the loaded set.
DatasetHandle load_cifar10(const std::filesystem::path& path);
DatasetHandle parse_cifar10(std::span<const std::uint8_t> bytes);

// Class-separable Gaussian-blob images, normalized like load_cifar10.
// Identical arguments give bitwise-identical datasets.
DatasetHandle synth_dataset(std::uint64_t seed, std::int64_t count, InputShape shape, int classes,
                            double noise = 0.6);

// Rows [begin, begin + count) as a new dataset sharing the normalization stats.
DatasetHandle dataset_slice(const DatasetHandle& d, std::int64_t begin, std::int64_t count);

// Images at `indices` as one batch.
template <typename T>
Tensor<T> gather_images(const DatasetHandle& d, std::span<const int> indices);

}  // namespace slimtrain

#endif  // SLIMTRAIN_DATASET_HPP_
