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

// Run configuration. Top-level keys are the HyperParams fields plus "dtype",
// "model" and "dataset":
//
//   {
//     "epochs": 60, "batch": 128, "lr": 0.1, "target_lasso_ratio": 0.2,
//     "model":   {"arch": "resnet", "stages": [{"blocks": 2, "width": 16}]},
//     "dataset": {"source": "synthetic", "train": 4000, "val": 1000}
//   }
//
// Unknown keys are rejected with their dotted path.

#ifndef SLIMTRAIN_CONFIG_HPP_
#define SLIMTRAIN_CONFIG_HPP_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "slimtrain/dataset.hpp"
#include "slimtrain/model_graph.hpp"
#include "slimtrain/trainer.hpp"

namespace slimtrain {

struct ModelConfig {
  std::string arch = "resnet";  // resnet or vgg
  std::vector<StageConfig> stages{{2, 16}, {2, 32}, {2, 64}};
  bool bottleneck = false;
  std::vector<int> widths{16, 32, 64};  // vgg
};

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic or cifar10
  std::string path;                  // cifar10 file or directory
  std::int64_t train = 4000;
  std::int64_t val = 1000;
  InputShape shape{3, 32, 32};  // synthetic only
  int classes = 10;             // synthetic only
  double noise = 0.6;           // synthetic only
  std::uint64_t seed = 1;       // synthetic only
};

struct RunConfig {
  HyperParams hp;
  std::string dtype = "float32";
  ModelConfig model;
  DatasetConfig dataset;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& c);

template <typename T>
ModelGraph<T> build_model(const ModelConfig& m, InputShape input, int classes, std::uint64_t seed);

// (train, validation) split: the first `train` samples, then the next `val`.
std::pair<DatasetHandle, DatasetHandle> load_datasets(const DatasetConfig& d);

}  // namespace slimtrain

#endif  // SLIMTRAIN_CONFIG_HPP_
