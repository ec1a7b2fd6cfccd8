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

// Analytical cost models.
//
// FLOPs per layer, with N the batch and H'W' the output extent:
//   conv       2 K C R S H'W' N
//   linear     2 M D N
//   batchnorm  kBatchNormFlopsPerElement per output element
//   relu, add  1 per output element
//   avgpool    1 per input element
// Training FLOPs are forward plus backward. Backward is 2x forward for conv,
// linear and batchnorm (input and parameter gradients), 1x for the rest.
//
// Batchnorm memory traffic counts full passes over the activation:
// kBatchNormForwardPasses (3 reads, 1 write) plus kBatchNormBackwardPasses
// (2 reads, 1 write).

#ifndef SLIMTRAIN_COST_HPP_
#define SLIMTRAIN_COST_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "slimtrain/model_graph.hpp"
#include "slimtrain/prune.hpp"

namespace slimtrain {

inline constexpr int kBatchNormFlopsPerElement = 4;
inline constexpr int kBatchNormForwardPasses = 4;
inline constexpr int kBatchNormBackwardPasses = 3;

enum class CostMode { kInference, kTraining };

struct LayerCost {
  int layer_id = 0;
  LayerKind kind = LayerKind::kConv;
  int in_channels = 0;
  int out_channels = 0;
  std::int64_t inference_flops = 0;
  std::int64_t training_flops = 0;
  std::int64_t bn_traffic_bytes = 0;
  std::int64_t params = 0;
};

struct CostReport {
  std::string mode = "dense";  // dense, union or gating
  int batch = 0;
  int bytes_per_elem = 4;
  std::vector<LayerCost> layers;
  std::int64_t inference_flops = 0;
  std::int64_t training_flops = 0;
  std::int64_t bn_traffic_bytes = 0;
  std::int64_t params = 0;
  // Per-epoch communication, filled by with_communication().
  int devices = 1;
  std::int64_t samples_per_epoch = 0;
  std::int64_t updates_per_epoch = 0;
  double comm_bytes_per_epoch = 0.0;

  std::int64_t flops(CostMode m) const { return m == CostMode::kTraining ? training_flops : inference_flops; }
};

// Costs of g as it stands.
template <typename T>
CostReport count_flops(const ModelGraph<T>& g, int batch, int bytes_per_elem = 4);

// Costs g would have after `plan`, evaluated on g's spatial shapes with the
// plan's channel counts. mode is "union", "gating" or "sequential".
template <typename T>
CostReport count_flops(const ModelGraph<T>& g, const PrunePlan& plan, int batch, int bytes_per_elem = 4);

template <typename T>
std::int64_t flops_per_iteration(const ModelGraph<T>& g, CostMode mode, int batch);

template <typename T>
std::int64_t bn_memory_traffic(const ModelGraph<T>& g, int batch, int bytes_per_elem);

// Ring allreduce: 2 (N - 1) / N * params * bytes per device per update.
double allreduce_bytes_per_update(std::int64_t param_count, int devices, int bytes_per_elem);
double allreduce_cost(std::int64_t param_count, int devices, std::int64_t updates_per_epoch,
                      int bytes_per_elem);
std::int64_t updates_per_epoch(std::int64_t samples, int batch);

void with_communication(CostReport& report, int devices, std::int64_t samples_per_epoch);

nlohmann::json cost_report_to_json(const CostReport& report);

// ---------------------------------------------------------------------------
// One-time versus periodic reconfiguration.

// Zero masks detected at the end of an epoch, in the channel indices of the
// initial graph.
struct MaskSnapshot {
  int epoch = 0;
  std::vector<ChannelMask> masks;
};

struct Trajectory {
  nlohmann::json architecture;  // initial graph
  int interval = 1;
  std::int64_t samples_per_epoch = 0;
  std::vector<MaskSnapshot> epochs;  // one per trained epoch, in order
};

nlohmann::json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

struct CompareRow {
  int epoch = 0;  // one-time reconfiguration point
  double one_time_flops = 0.0;
  double ratio = 0.0;  // one_time / periodic
};

struct CompareTable {
  int interval = 1;
  double dense_flops = 0.0;
  double periodic_flops = 0.0;
  std::vector<CompareRow> rows;
};

// Total training FLOPs over the trajectory. Periodic runs dense until the
// first reconfiguration and then uses the masks recorded at the end of the
// epoch preceding each reconfiguration. One-time(e) is dense for epochs < e
// and uses the masks recorded at the end of epoch e - 1 afterwards. Candidates
// are e = 0, interval, 2 interval, ..., E.
CompareTable compare_one_time_vs_periodic(const Trajectory& t, int interval);

nlohmann::json compare_table_to_json(const CompareTable& table);

}  // namespace slimtrain

#endif  // SLIMTRAIN_COST_HPP_
