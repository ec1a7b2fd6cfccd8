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

// Checkpoint file layout (all integers little-endian):
//
//   bytes 0..3   magic "PTCK"
//   u32          format version (kCheckpointVersion)
//   u64          length L of the JSON header
//   L bytes      JSON header: dtype, architecture, training state, tensor table
//   payload      raw IEEE-754 tensors, little-endian, in tensor-table order
//
// The header is written with sorted keys so save -> load -> save is byte-identical.

#ifndef SLIMTRAIN_CHECKPOINT_HPP_
#define SLIMTRAIN_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "slimtrain/model_graph.hpp"

namespace slimtrain {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Scalars of the training state that travel with the weights.
struct CheckpointState {
  int epoch = 0;
  std::int64_t iteration = 0;
  int batch = 0;
  double lr = 0.0;
  double lambda = 0.0;

  bool operator==(const CheckpointState&) const = default;
};

template <typename T>
struct Checkpoint {
  ModelGraph<T> graph;
  CheckpointState state;
};

template <typename T>
std::string dtype_name();
template <>
std::string dtype_name<float>();
template <>
std::string dtype_name<double>();

// Architecture (no tensor payloads) as JSON.
template <typename T>
nlohmann::json architecture_to_json(const ModelGraph<T>& g);

// Rebuilds the layer list and stage topology; parameter tensors are allocated
// zero-filled with the declared shapes.
template <typename T>
ModelGraph<T> architecture_from_json(const nlohmann::json& j);

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ModelGraph<T>& g, const CheckpointState& state);

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
void save_checkpoint(const ModelGraph<T>& g, const CheckpointState& state,
                     const std::filesystem::path& path);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// "float32" or "float64" as recorded in a checkpoint header.
std::string peek_checkpoint_dtype(const std::filesystem::path& path);

}  // namespace slimtrain

#endif  // SLIMTRAIN_CHECKPOINT_HPP_
