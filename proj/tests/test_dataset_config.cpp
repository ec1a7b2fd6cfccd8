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

#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "slimtrain/config.hpp"
#include "slimtrain/dataset.hpp"
#include "slimtrain/errors.hpp"

namespace slimtrain {
namespace {

std::vector<std::uint8_t> two_records() {
  std::vector<std::uint8_t> bytes(2 * kCifarRecordBytes, 0);
  bytes[0] = 7;
  bytes[1] = 1;  // first red pixel of record 0
  bytes[kCifarRecordBytes] = 3;
  bytes[kCifarRecordBytes + 1 + 1024 + 5] = 255;  // a green pixel of record 1
  return bytes;
}

TEST(Cifar, ParsesLabelsAndPixels) {
  const auto d = parse_cifar10(two_records());
  ASSERT_EQ(d.count(), 2);
  EXPECT_EQ(d.labels, (std::vector<int>{7, 3}));
  EXPECT_EQ(d.image_shape(), (InputShape{3, 32, 32}));
  auto raw = [&](std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    return d.images.at(n, c, y, x) * d.stddev[static_cast<std::size_t>(c)] + d.mean[static_cast<std::size_t>(c)];
  };
  EXPECT_NEAR(raw(0, 0, 0, 0), 1.0 / 255.0, 1e-6);
  EXPECT_NEAR(raw(1, 1, 0, 5), 1.0, 1e-6);
  EXPECT_NEAR(raw(1, 0, 0, 0), 0.0, 1e-6);
  EXPECT_NEAR(d.mean[0], 1.0 / 255.0 / 2048.0, 1e-12);
  EXPECT_EQ(d.stddev[2], 1.0);  // a constant channel is left unscaled
}

TEST(Cifar, RejectsMalformedData) {
  auto bytes = two_records();
  bytes.pop_back();
  try {
    parse_cifar10(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), static_cast<std::uint64_t>(kCifarRecordBytes));
  }
  bytes = two_records();
  bytes[kCifarRecordBytes] = 10;
  EXPECT_THROW(parse_cifar10(bytes), FormatError);
  EXPECT_THROW(load_cifar10("/nonexistent/cifar"), Error);
}

TEST(Cifar, LoadsFullBatchFile) {
  const auto path = std::filesystem::temp_directory_path() / "slimtrain_cifar_batch.bin";
  {
    std::vector<std::uint8_t> bytes(10000 * kCifarRecordBytes, 128);
    for (int i = 0; i < 10000; ++i) bytes[static_cast<std::size_t>(i) * kCifarRecordBytes] = static_cast<std::uint8_t>(i % 10);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const auto d = load_cifar10(path);
  std::filesystem::remove(path);
  EXPECT_EQ(d.count(), 10000);
  EXPECT_EQ(d.labels[9999], 9);
  EXPECT_EQ(d.classes, 10);
}

TEST(Synthetic, DeterministicAndBalanced) {
  const auto a = synth_dataset(3, 200, {3, 8, 8}, 4);
  const auto b = synth_dataset(3, 200, {3, 8, 8}, 4);
  const auto c = synth_dataset(4, 200, {3, 8, 8}, 4);
  EXPECT_TRUE(a.images.bitwise_equal(b.images));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.images.bitwise_equal(c.images));
  std::vector<int> counts(4, 0);
  for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
  for (int n : counts) EXPECT_GT(n, 20);
  const auto slice = dataset_slice(a, 10, 5);
  EXPECT_EQ(slice.count(), 5);
  EXPECT_EQ(slice.labels[0], a.labels[10]);
  EXPECT_EQ(slice.images.at(0, 1, 2, 3), a.images.at(10, 1, 2, 3));
  const int idx[] = {4, 1};
  const auto batch = gather_images<double>(a, idx);
  EXPECT_EQ(batch.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_EQ(batch.at(1, 0, 0, 0), static_cast<double>(a.images.at(1, 0, 0, 0)));
}

TEST(Config, DefaultsAndOverrides) {
  const auto c = parse_run_config(nlohmann::json::parse(R"({
    "epochs": 3, "batch": 64, "model": {"arch": "vgg", "widths": [4, 8]},
    "dataset": {"train": 100, "val": 20, "shape": [3, 8, 8]}})"));
  EXPECT_EQ(c.hp.epochs, 3);
  EXPECT_EQ(c.hp.batch, 64);
  EXPECT_EQ(c.hp.reconfiguration_interval, 10);
  EXPECT_DOUBLE_EQ(c.hp.lr, 0.1);
  EXPECT_DOUBLE_EQ(c.hp.momentum, 0.9);
  EXPECT_EQ(c.model.arch, "vgg");
  EXPECT_EQ(c.dataset.shape, (InputShape{3, 8, 8}));
  EXPECT_EQ(parse_run_config(run_config_to_json(c)).hp.batch, 64);
  const auto [train, val] = load_datasets(c.dataset);
  EXPECT_EQ(train.count(), 100);
  EXPECT_EQ(val.count(), 20);
  const auto g = build_model<float>(c.model, train.image_shape(), train.classes, 1);
  EXPECT_EQ(weighted_layer_ids(g).size(), 3u);
}

TEST(Config, ErrorsNameTheKey) {
  auto message = [](const char* text) -> std::string {
    try {
      parse_run_config(nlohmann::json::parse(text));
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message(R"({"model": {"depth": 3}})").find("model.depth"), std::string::npos);
  EXPECT_NE(message(R"({"batchsize": 3})").find("batchsize"), std::string::npos);
  EXPECT_NE(message(R"({"batch": "x"})").find("batch"), std::string::npos);
  EXPECT_NE(message(R"({"target_lasso_ratio": 1.0})").find("target_lasso_ratio"), std::string::npos);
  EXPECT_NE(message(R"({"momentum": -0.1})").find("momentum"), std::string::npos);
  EXPECT_NE(message(R"({"dataset": {"source": "imagenet"}})").find("dataset.source"), std::string::npos);
}

}  // namespace
}  // namespace slimtrain
