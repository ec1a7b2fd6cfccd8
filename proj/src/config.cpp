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

#include "slimtrain/config.hpp"

#include <fstream>
#include <set>

namespace slimtrain {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError("config section '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + prefix + key + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + prefix + key + "' has the wrong type");
  }
}

ModelConfig parse_model(const json& j) {
  const std::string p = "model.";
  reject_unknown(j, {"arch", "stages", "bottleneck", "widths"}, p);
  ModelConfig m;
  read(j, "arch", m.arch, p);
  if (m.arch != "resnet" && m.arch != "vgg") throw ConfigError("config key 'model.arch' must be \"resnet\" or \"vgg\"");
  if (j.contains("stages")) {
    m.stages.clear();
    if (!j.at("stages").is_array()) throw ConfigError("config key 'model.stages' must be an array");
    for (const auto& js : j.at("stages")) {
      reject_unknown(js, {"blocks", "width"}, p + "stages[].");
      StageConfig s;
      read(js, "blocks", s.blocks, p + "stages[].");
      read(js, "width", s.width, p + "stages[].");
      m.stages.push_back(s);
    }
  }
  read(j, "bottleneck", m.bottleneck, p);
  read(j, "widths", m.widths, p);
  return m;
}

DatasetConfig parse_dataset(const json& j) {
  const std::string p = "dataset.";
  reject_unknown(j, {"source", "path", "train", "val", "shape", "classes", "noise", "seed"}, p);
  DatasetConfig d;
  read(j, "source", d.source, p);
  if (d.source != "synthetic" && d.source != "cifar10") {
    throw ConfigError("config key 'dataset.source' must be \"synthetic\" or \"cifar10\"");
  }
  read(j, "path", d.path, p);
  read(j, "train", d.train, p);
  read(j, "val", d.val, p);
  if (j.contains("shape")) {
    std::vector<std::int64_t> s;
    read(j, "shape", s, p);
    if (s.size() != 3) throw ConfigError("config key 'dataset.shape' must have 3 entries");
    d.shape = {s[0], s[1], s[2]};
  }
  read(j, "classes", d.classes, p);
  read(j, "noise", d.noise, p);
  read(j, "seed", d.seed, p);
  if (d.train < 1 || d.val < 0) throw ConfigError("config keys 'dataset.train'/'dataset.val' must be positive");
  return d;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  reject_unknown(j,
                 {"target_lasso_ratio", "threshold", "reconfiguration_interval", "batch", "lr", "momentum",
                  "epochs", "memory_budget", "batch_granularity", "lr_milestones", "lr_decay", "devices",
                  "eval_batch", "seed", "dtype", "model", "dataset"},
                 "");
  RunConfig c;
  auto& hp = c.hp;
  read(j, "target_lasso_ratio", hp.target_lasso_ratio, "");
  read(j, "threshold", hp.threshold, "");
  read(j, "reconfiguration_interval", hp.reconfiguration_interval, "");
  read(j, "batch", hp.batch, "");
  read(j, "lr", hp.lr, "");
  read(j, "momentum", hp.momentum, "");
  read(j, "epochs", hp.epochs, "");
  read(j, "memory_budget", hp.memory_budget, "");
  read(j, "batch_granularity", hp.batch_granularity, "");
  read(j, "lr_milestones", hp.lr_milestones, "");
  read(j, "lr_decay", hp.lr_decay, "");
  read(j, "devices", hp.devices, "");
  read(j, "eval_batch", hp.eval_batch, "");
  read(j, "seed", hp.seed, "");
  read(j, "dtype", c.dtype, "");
  if (c.dtype != "float32" && c.dtype != "float64") throw ConfigError("config key 'dtype' must be \"float32\" or \"float64\"");
  if (j.contains("model")) c.model = parse_model(j.at("model"));
  if (j.contains("dataset")) c.dataset = parse_dataset(j.at("dataset"));
  hp.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what(), e.byte);
  }
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& c) {
  json stages = json::array();
  for (const auto& s : c.model.stages) stages.push_back({{"blocks", s.blocks}, {"width", s.width}});
  const auto& hp = c.hp;
  return {{"target_lasso_ratio", hp.target_lasso_ratio},
          {"threshold", hp.threshold},
          {"reconfiguration_interval", hp.reconfiguration_interval},
          {"batch", hp.batch},
          {"lr", hp.lr},
          {"momentum", hp.momentum},
          {"epochs", hp.epochs},
          {"memory_budget", hp.memory_budget},
          {"batch_granularity", hp.batch_granularity},
          {"lr_milestones", hp.lr_milestones},
          {"lr_decay", hp.lr_decay},
          {"devices", hp.devices},
          {"eval_batch", hp.eval_batch},
          {"seed", hp.seed},
          {"dtype", c.dtype},
          {"model",
           {{"arch", c.model.arch}, {"stages", stages}, {"bottleneck", c.model.bottleneck}, {"widths", c.model.widths}}},
          {"dataset",
           {{"source", c.dataset.source},
            {"path", c.dataset.path},
            {"train", c.dataset.train},
            {"val", c.dataset.val},
            {"shape", c.dataset.shape},
            {"classes", c.dataset.classes},
            {"noise", c.dataset.noise},
            {"seed", c.dataset.seed}}}};
}

template <typename T>
ModelGraph<T> build_model(const ModelConfig& m, InputShape input, int classes, std::uint64_t seed) {
  if (m.arch == "vgg") return build_toy_vgg<T>(m.widths, input, classes, seed);
  return build_toy_resnet<T>(m.stages, input, classes, seed, ResNetOptions{m.bottleneck});
}

std::pair<DatasetHandle, DatasetHandle> load_datasets(const DatasetConfig& d) {
  DatasetHandle all = d.source == "cifar10"
                          ? load_cifar10(d.path)
                          : synth_dataset(d.seed, d.train + d.val, d.shape, d.classes, d.noise);
  if (all.count() < d.train + d.val) {
    throw InputError("dataset has " + std::to_string(all.count()) + " samples, config asks for " +
                     std::to_string(d.train + d.val));
  }
  return {dataset_slice(all, 0, d.train), dataset_slice(all, d.train, d.val)};
}

template ModelGraph<float> build_model<float>(const ModelConfig&, InputShape, int, std::uint64_t);
template ModelGraph<double> build_model<double>(const ModelConfig&, InputShape, int, std::uint64_t);

}  // namespace slimtrain
