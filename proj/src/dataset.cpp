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

#include "slimtrain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

namespace slimtrain {
namespace {

// Per-channel standardization in place; returns (mean, stddev).
void standardize(DatasetHandle& d) {
  const std::int64_t n = d.images.dim(0), c_count = d.images.dim(1);
  const std::int64_t plane = d.images.dim(2) * d.images.dim(3);
  d.mean.assign(static_cast<std::size_t>(c_count), 0.0);
  d.stddev.assign(static_cast<std::size_t>(c_count), 1.0);
  if (n == 0) return;
  for (std::int64_t c = 0; c < c_count; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const float* p = d.images.raw() + (i * c_count + c) * plane;
      for (std::int64_t k = 0; k < plane; ++k) {
        sum += p[k];
        sq += static_cast<double>(p[k]) * p[k];
      }
    }
    const double count = static_cast<double>(n * plane);
    const double mean = sum / count;
    const double var = std::max(sq / count - mean * mean, 0.0);
    const double sd = var > 1e-12 ? std::sqrt(var) : 1.0;
    d.mean[static_cast<std::size_t>(c)] = mean;
    d.stddev[static_cast<std::size_t>(c)] = sd;
    for (std::int64_t i = 0; i < n; ++i) {
      float* p = d.images.raw() + (i * c_count + c) * plane;
      for (std::int64_t k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - mean) / sd);
    }
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

DatasetHandle parse_cifar10(std::span<const std::uint8_t> bytes) {
  const auto size = static_cast<std::int64_t>(bytes.size());
  if (size % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 data length " + std::to_string(size) + " is not a multiple of " +
                          std::to_string(kCifarRecordBytes),
                      static_cast<std::uint64_t>(size - size % kCifarRecordBytes));
  }
  const std::int64_t n = size / kCifarRecordBytes;
  DatasetHandle d;
  d.classes = kCifarClasses;
  d.images = Tensor<float>({n, 3, 32, 32});
  d.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] >= kCifarClasses) {
      throw FormatError("CIFAR-10 label " + std::to_string(rec[0]) + " out of range",
                        static_cast<std::uint64_t>(i * kCifarRecordBytes));
    }
    d.labels[static_cast<std::size_t>(i)] = rec[0];
    float* out = d.images.raw() + i * 3072;
    for (int k = 0; k < 3072; ++k) out[k] = static_cast<float>(rec[1 + k]) / 255.0f;
  }
  standardize(d);
  return d;
}

DatasetHandle load_cifar10(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      const auto name = entry.path().filename().string();
      if (entry.is_regular_file() && entry.path().extension() == ".bin" &&
          (name.starts_with("data_batch_") || name == "test_batch.bin")) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("no CIFAR-10 batch files in " + path.string());
    for (const auto& f : files) {
      auto part = read_file(f);
      if (part.size() % kCifarRecordBytes != 0) {
        throw FormatError(f.string() + " length " + std::to_string(part.size()) +
                              " is not a multiple of " + std::to_string(kCifarRecordBytes),
                          part.size() - part.size() % kCifarRecordBytes);
      }
      bytes.insert(bytes.end(), part.begin(), part.end());
    }
  } else {
    bytes = read_file(path);
  }
  return parse_cifar10(bytes);
}

DatasetHandle synth_dataset(std::uint64_t seed, std::int64_t count, InputShape shape, int classes,
                            double noise) {
  if (count < 0 || classes < 1 || shape[0] < 1 || shape[1] < 1 || shape[2] < 1) {
    throw ConfigError("synthetic dataset needs count >= 0, classes >= 1 and a positive shape");
  }
  constexpr int kBlobsPerClass = 3;
  struct Blob {
    double y, x, sigma;
    std::vector<double> color;
  };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto h = static_cast<double>(shape[1]), w = static_cast<double>(shape[2]);
  std::vector<std::vector<Blob>> templates(static_cast<std::size_t>(classes));
  for (auto& blobs : templates) {
    for (int b = 0; b < kBlobsPerClass; ++b) {
      Blob blob{unit(rng) * h, unit(rng) * w, (0.08 + 0.17 * unit(rng)) * std::min(h, w), {}};
      for (std::int64_t c = 0; c < shape[0]; ++c) blob.color.push_back(gauss(rng));
      blobs.push_back(std::move(blob));
    }
  }

  DatasetHandle d;
  d.classes = classes;
  d.images = Tensor<float>({count, shape[0], shape[1], shape[2]});
  d.labels.resize(static_cast<std::size_t>(count));
  const double jitter = 0.1 * std::min(h, w);
  for (std::int64_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(rng() % static_cast<std::uint64_t>(classes));
    d.labels[static_cast<std::size_t>(i)] = label;
    float* img = d.images.raw() + i * shape[0] * shape[1] * shape[2];
    for (const auto& blob : templates[static_cast<std::size_t>(label)]) {
      const double cy = blob.y + jitter * gauss(rng), cx = blob.x + jitter * gauss(rng);
      const double amp = 0.7 + 0.6 * unit(rng);
      const double inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
      for (std::int64_t y = 0; y < shape[1]; ++y) {
        for (std::int64_t x = 0; x < shape[2]; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double v = amp * std::exp(-(dy * dy + dx * dx) * inv);
          for (std::int64_t c = 0; c < shape[0]; ++c) {
            img[(c * shape[1] + y) * shape[2] + x] += static_cast<float>(v * blob.color[static_cast<std::size_t>(c)]);
          }
        }
      }
    }
    for (std::int64_t k = 0; k < shape[0] * shape[1] * shape[2]; ++k) {
      img[k] += static_cast<float>(noise * gauss(rng));
    }
  }
  standardize(d);
  return d;
}

DatasetHandle dataset_slice(const DatasetHandle& d, std::int64_t begin, std::int64_t count) {
  if (begin < 0 || count < 0 || begin + count > d.count()) {
    throw InputError("dataset slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + std::to_string(d.count()) + " samples");
  }
  DatasetHandle out;
  out.classes = d.classes;
  out.mean = d.mean;
  out.stddev = d.stddev;
  const std::int64_t per = d.images.size() / std::max<std::int64_t>(d.count(), 1);
  Shape shape = d.images.shape();
  shape[0] = count;
  out.images = Tensor<float>(shape, std::vector<float>(d.images.raw() + begin * per,
                                                       d.images.raw() + (begin + count) * per));
  out.labels.assign(d.labels.begin() + begin, d.labels.begin() + begin + count);
  return out;
}

template <typename T>
Tensor<T> gather_images(const DatasetHandle& d, std::span<const int> indices) {
  Shape shape = d.images.shape();
  const std::int64_t per = shape[1] * shape[2] * shape[3];
  shape[0] = static_cast<std::int64_t>(indices.size());
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= d.count()) throw InputError("sample index out of range");
    const float* src = d.images.raw() + indices[i] * per;
    std::copy(src, src + per, out.raw() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

template Tensor<float> gather_images<float>(const DatasetHandle&, std::span<const int>);
template Tensor<double> gather_images<double>(const DatasetHandle&, std::span<const int>);

}  // namespace slimtrain
