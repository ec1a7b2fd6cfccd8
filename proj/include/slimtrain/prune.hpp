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

// Structured pruning and network reconfiguration.
//
// Channels are tracked per *boundary*: the set of tensors that share one
// channel index space because only channel-wise layers (batchnorm, relu,
// pooling, add) sit between them. A boundary has producers (conv/linear
// layers writing it) and consumers (conv/linear layers reading it). A plain
// conv -> BN -> ReLU -> conv edge is a boundary with one producer and one
// consumer; the shared node of a residual stage is a boundary with the stem
// or projection plus every block's last conv as producers and every block's
// first conv plus the next stage's projection (or the head) as consumers.
//
// A channel is removed from a boundary only when every neighbouring layer has
// it zeroed: producers on their output side, consumers on their input side.
// For a single edge that is the intersection rule; for a residual node it is
// channel union (the retained set is the union of the dense channels of all
// neighbours), which needs no gather/scatter indices at run time.
//
// Reconfiguration flow: detect_zeroed_channels -> zero_flagged_channels ->
// plan_reconfiguration -> apply_reconfiguration.

#ifndef SLIMTRAIN_PRUNE_HPP_
#define SLIMTRAIN_PRUNE_HPP_

#include <map>
#include <vector>

#include "json.hpp"
#include "slimtrain/model_graph.hpp"

namespace slimtrain {

inline constexpr double kDefaultZeroThreshold = 1e-4;

enum class MaskDirection { kInput, kOutput };

// true = channel is zeroed (below threshold).
struct ChannelMask {
  int layer_id = 0;
  MaskDirection direction = MaskDirection::kOutput;
  std::vector<bool> zeroed;
};

struct DetectOptions {
  // Also require |gamma| and |beta| of the following batchnorm below threshold
  // before an output channel counts as zeroed.
  bool require_batchnorm = false;
};

// Output channel k of a conv/linear is zeroed iff max|W[k, ...]| < threshold
// (strict); input channel c iff max|W[:, c, ...]| < threshold. The first conv's
// input side and the head's output side are never reported.
template <typename T>
std::vector<ChannelMask> detect_zeroed_channels(const ModelGraph<T>& g, double threshold,
                                                DetectOptions options = {});

// Hard-sets flagged weights (and their momentum) to zero; for flagged output
// channels also the following batchnorm's gamma and beta.
template <typename T>
void zero_flagged_channels(ModelGraph<T>& g, const std::vector<ChannelMask>& masks);

struct ChannelBoundary {
  int id = 0;
  std::vector<int> producers;  // conv/linear layers writing these channels
  std::vector<int> consumers;  // conv/linear layers reading these channels
  std::vector<int> members;    // channel-wise layers carrying these channels
  int width = 0;
  bool reads_graph_input = false;
  int stage_id = -1;  // residual stage whose shared node this is
  int block_stage = -1;  // (stage, block) whose residual path contains it entirely
  int block_index = -1;

  // Graph input and head output keep all channels.
  bool prunable() const { return !reads_graph_input && !producers.empty() && !consumers.empty(); }
};

template <typename T>
std::vector<ChannelBoundary> find_channel_boundaries(const ModelGraph<T>& g);

enum class PlanMode { kSequential, kUnion, kGating };

const char* plan_mode_name(PlanMode mode);

struct BoundaryPlan {
  ChannelBoundary boundary;
  PlanMode mode = PlanMode::kSequential;
  std::vector<int> retained;  // sorted, nonempty
};

// Gather/scatter index maps of a layer under channel gating.
struct GatedLayer {
  int layer_id = 0;
  std::vector<int> input_select;
  std::vector<int> output_scatter;
};

struct PrunePlan {
  PlanMode mode = PlanMode::kSequential;
  std::vector<BoundaryPlan> boundaries;
  std::vector<int> removed_layers;
  std::vector<GatedLayer> gating;  // only for PlanMode::kGating

  const BoundaryPlan* boundary_of_output(int layer_id) const;
  const BoundaryPlan* boundary_of_input(int layer_id) const;
  bool removes(int layer_id) const;
};

// Intersection rule on every boundary outside residual stages.
template <typename T>
PrunePlan plan_sequential(const std::vector<ChannelMask>& masks, const ModelGraph<T>& g);

// Channel union at the stage's shared node, intersection rule inside each
// residual path, and removal of residual paths that contribute nothing.
template <typename T>
PrunePlan plan_channel_union(const std::vector<ChannelMask>& masks, const ModelGraph<T>& g,
                             const ResidualStage& stage);

// Union plan plus per-path gather/scatter maps that drop each path's own zero
// channels. Cost modelling only; apply_reconfiguration rejects it.
template <typename T>
PrunePlan plan_channel_gating(const std::vector<ChannelMask>& masks, const ModelGraph<T>& g,
                              const ResidualStage& stage);

// plan_sequential for the non-residual part plus union (or gating) per stage.
template <typename T>
PrunePlan plan_reconfiguration(const std::vector<ChannelMask>& masks, const ModelGraph<T>& g,
                               PlanMode stage_mode = PlanMode::kUnion);

// Per-layer (in, out) channel counts the graph has once `plan` is applied;
// removed layers get (0, 0). Gated layers report their gathered/scattered counts.
struct LayerDims {
  int in = 0;
  int out = 0;
};

template <typename T>
std::vector<LayerDims> planned_layer_dims(const ModelGraph<T>& g, const PrunePlan& plan);

// Slices weights, batchnorm state, momentum and channel origins to the
// retained channels (order preserved) and drops removed residual paths.
template <typename T>
ModelGraph<T> apply_reconfiguration(const ModelGraph<T>& g, const PrunePlan& plan);

nlohmann::json plan_to_json(const PrunePlan& plan);

// Masks of `g` mapped back to the channel indices of the original graph `g0`.
// Channels already pruned, and layers already removed, read as zeroed.
template <typename T>
std::vector<ChannelMask> masks_in_original_coordinates(const std::vector<ChannelMask>& masks,
                                                       const ModelGraph<T>& g,
                                                       const ModelGraph<T>& g0);

// ---------------------------------------------------------------------------
// Channel revival monitoring.

// Per epoch, per conv layer, per original output channel: max |W[k, ...]|.
// Pruned channels and removed layers record 0.
struct SparsityHistory {
  std::map<int, int> original_widths;  // conv id -> original output channels
  struct Record {
    int epoch = 0;
    std::map<int, std::vector<double>> max_abs;
  };
  std::vector<Record> records;
};

template <typename T>
SparsityHistory make_sparsity_history(const ModelGraph<T>& g0);

// Appends one epoch; epochs must be strictly increasing.
template <typename T>
void record_sparsity(SparsityHistory& history, const ModelGraph<T>& g, int epoch);

struct RevivalReport {
  struct LayerCounts {
    int layer_id = 0;
    int ever_zeroed = 0;
    int revived = 0;
  };
  int ever_zeroed = 0;
  int revived = 0;
  double revived_channel_fraction = 0.0;  // revived / ever_zeroed, 0 when nothing was zeroed
  std::vector<LayerCounts> layers;
};

// A channel revives when its max-abs drops below threshold at some epoch and
// is at or above it at a later one.
RevivalReport revival_report(const SparsityHistory& history, double threshold);

nlohmann::json sparsity_history_to_json(const SparsityHistory& history);
SparsityHistory sparsity_history_from_json(const nlohmann::json& j);
nlohmann::json revival_report_to_json(const RevivalReport& report);

}  // namespace slimtrain

#endif  // SLIMTRAIN_PRUNE_HPP_
