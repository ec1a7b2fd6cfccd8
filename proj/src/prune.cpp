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

#include "slimtrain/prune.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>

namespace slimtrain {
namespace {

using nlohmann::json;

// Max |W| over output channel k (axis 0) or input channel c (axis 1).
template <typename T>
std::vector<double> channel_max_abs(const Tensor<T>& w, MaskDirection direction) {
  const std::int64_t k_count = w.dim(0), c_count = w.dim(1);
  const std::int64_t inner = k_count * c_count == 0 ? 0 : w.size() / (k_count * c_count);
  std::vector<double> out(static_cast<std::size_t>(direction == MaskDirection::kOutput ? k_count : c_count), 0.0);
  for (std::int64_t k = 0; k < k_count; ++k) {
    for (std::int64_t c = 0; c < c_count; ++c) {
      const T* p = w.raw() + (k * c_count + c) * inner;
      double m = 0.0;
      for (std::int64_t i = 0; i < inner; ++i) m = std::max(m, static_cast<double>(std::fabs(p[i])));
      auto& slot = out[static_cast<std::size_t>(direction == MaskDirection::kOutput ? k : c)];
      slot = std::max(slot, m);
    }
  }
  return out;
}

struct DisjointSets {
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::size_t> parent;
};

// (layer, direction) -> mask, with lengths checked against the graph.
class MaskIndex {
 public:
  template <typename T>
  MaskIndex(const std::vector<ChannelMask>& masks, const ModelGraph<T>& g) {
    for (const auto& m : masks) {
      const auto* l = g.find(m.layer_id);
      if (!l || !l->has_weights()) {
        throw ConsistencyError("mask refers to unknown or parameter-free layer " +
                               std::to_string(m.layer_id));
      }
      const int expected = m.direction == MaskDirection::kOutput ? l->out_channels : l->in_channels;
      if (static_cast<int>(m.zeroed.size()) != expected) {
        throw ConsistencyError("mask for layer " + std::to_string(m.layer_id) + " has length " +
                               std::to_string(m.zeroed.size()) + ", layer has " +
                               std::to_string(expected) + " channels");
      }
      index_[{m.layer_id, m.direction}] = &m.zeroed;
    }
  }

  // A side without a mask counts as dense.
  bool zeroed(int layer_id, MaskDirection direction, int channel) const {
    auto it = index_.find({layer_id, direction});
    return it != index_.end() && (*it->second)[static_cast<std::size_t>(channel)];
  }

  bool all_zeroed(int layer_id, MaskDirection direction) const {
    auto it = index_.find({layer_id, direction});
    return it != index_.end() &&
           std::all_of(it->second->begin(), it->second->end(), [](bool b) { return b; });
  }

 private:
  std::map<std::pair<int, MaskDirection>, const std::vector<bool>*> index_;
};

template <typename T>
bool channel_flagged(const ChannelBoundary& b, const MaskIndex& masks, const std::set<int>& removed,
                     int channel) {
  for (int p : b.producers) {
    if (!removed.count(p) && !masks.zeroed(p, MaskDirection::kOutput, channel)) return false;
  }
  for (int c : b.consumers) {
    if (!removed.count(c) && !masks.zeroed(c, MaskDirection::kInput, channel)) return false;
  }
  return true;
}

// Channel kept by the minimum-channel rule: largest max-abs weight across the
// boundary's live neighbours, lowest index on ties.
template <typename T>
int strongest_channel(const ChannelBoundary& b, const ModelGraph<T>& g, const std::set<int>& removed) {
  std::vector<double> magnitude(static_cast<std::size_t>(b.width), 0.0);
  auto merge = [&](const std::vector<double>& m) {
    for (std::size_t i = 0; i < magnitude.size() && i < m.size(); ++i) magnitude[i] = std::max(magnitude[i], m[i]);
  };
  for (int p : b.producers) {
    if (!removed.count(p)) merge(channel_max_abs(g.layer(p).weight, MaskDirection::kOutput));
  }
  for (int c : b.consumers) {
    if (!removed.count(c)) merge(channel_max_abs(g.layer(c).weight, MaskDirection::kInput));
  }
  return static_cast<int>(std::max_element(magnitude.begin(), magnitude.end()) - magnitude.begin());
}

template <typename T>
BoundaryPlan plan_boundary(const ChannelBoundary& b, const ModelGraph<T>& g, const MaskIndex& masks,
                           const std::set<int>& removed, PlanMode mode) {
  BoundaryPlan plan;
  plan.boundary = b;
  plan.mode = mode;
  for (int i = 0; i < b.width; ++i) {
    if (!channel_flagged<T>(b, masks, removed, i)) plan.retained.push_back(i);
  }
  if (plan.retained.empty()) plan.retained.push_back(strongest_channel(b, g, removed));
  return plan;
}

template <typename T>
bool boundary_fully_flagged(const ChannelBoundary& b, const MaskIndex& masks) {
  const std::set<int> none;
  for (int i = 0; i < b.width; ++i) {
    if (!channel_flagged<T>(b, masks, none, i)) return false;
  }
  return true;
}

std::vector<int> conv_ids_on_path(const std::vector<int>& path, const std::function<bool(int)>& is_conv) {
  std::vector<int> out;
  for (int id : path) {
    if (is_conv(id)) out.push_back(id);
  }
  return out;
}

template <typename T>
std::set<int> removable_block_layers(const ModelGraph<T>& g, const ResidualStage& stage,
                                     const std::vector<ChannelBoundary>& boundaries,
                                     const MaskIndex& masks, std::vector<bool>* removed_blocks) {
  std::set<int> removed;
  removed_blocks->assign(stage.blocks.size(), false);
  for (std::size_t bi = 0; bi < stage.blocks.size(); ++bi) {
    const auto& block = stage.blocks[bi];
    const auto convs = conv_ids_on_path(block.path, [&](int id) {
      return g.layer(id).kind == LayerKind::kConv;
    });
    if (convs.empty() || !masks.all_zeroed(convs.back(), MaskDirection::kOutput)) continue;
    bool interior_empty = true;
    for (const auto& b : boundaries) {
      if (b.block_stage == stage.stage_id && b.block_index == static_cast<int>(bi) && b.prunable() &&
          !boundary_fully_flagged<T>(b, masks)) {
        interior_empty = false;
        break;
      }
    }
    if (!interior_empty) continue;
    (*removed_blocks)[bi] = true;
    removed.insert(block.path.begin(), block.path.end());
    removed.insert(block.add_id);
    removed.insert(block.relu_id);
  }
  return removed;
}

const ChannelBoundary* node_boundary(const std::vector<ChannelBoundary>& boundaries, int stage_id) {
  for (const auto& b : boundaries) {
    if (b.stage_id == stage_id) return &b;
  }
  return nullptr;
}

const ResidualStage& stage_by_id(const std::vector<ResidualStage>& stages, int stage_id) {
  for (const auto& s : stages) {
    if (s.stage_id == stage_id) return s;
  }
  throw ConsistencyError("stage " + std::to_string(stage_id) + " not in graph");
}

template <typename T>
void check_stage_in_graph(const ModelGraph<T>& g, const ResidualStage& stage) {
  const auto& own = stage_by_id(g.stages, stage.stage_id);
  if (own.entry_id != stage.entry_id || own.blocks.size() != stage.blocks.size() ||
      own.width != stage.width) {
    throw ConsistencyError("stage " + std::to_string(stage.stage_id) + " does not match the graph");
  }
}

}  // namespace

const char* plan_mode_name(PlanMode mode) {
  switch (mode) {
    case PlanMode::kSequential: return "sequential";
    case PlanMode::kUnion: return "union";
    case PlanMode::kGating: return "gating";
  }
  return "unknown";
}

const BoundaryPlan* PrunePlan::boundary_of_output(int layer_id) const {
  for (const auto& b : boundaries) {
    if (std::find(b.boundary.producers.begin(), b.boundary.producers.end(), layer_id) !=
            b.boundary.producers.end() ||
        std::find(b.boundary.members.begin(), b.boundary.members.end(), layer_id) !=
            b.boundary.members.end()) {
      return &b;
    }
  }
  return nullptr;
}

const BoundaryPlan* PrunePlan::boundary_of_input(int layer_id) const {
  for (const auto& b : boundaries) {
    if (std::find(b.boundary.consumers.begin(), b.boundary.consumers.end(), layer_id) !=
        b.boundary.consumers.end()) {
      return &b;
    }
  }
  return nullptr;
}

bool PrunePlan::removes(int layer_id) const {
  return std::find(removed_layers.begin(), removed_layers.end(), layer_id) != removed_layers.end();
}

template <typename T>
std::vector<ChannelMask> detect_zeroed_channels(const ModelGraph<T>& g, double threshold,
                                                DetectOptions options) {
  std::vector<ChannelMask> masks;
  const int first = first_conv_id(g);
  for (const auto& l : g.layers) {
    if (!l.has_weights()) continue;
    if (l.id != g.head_id) {
      ChannelMask m{l.id, MaskDirection::kOutput, {}};
      const auto max_abs = channel_max_abs(l.weight, MaskDirection::kOutput);
      const auto* bn = options.require_batchnorm ? batchnorm_after(g, l.id) : nullptr;
      for (std::size_t k = 0; k < max_abs.size(); ++k) {
        bool zeroed = max_abs[k] < threshold;
        if (zeroed && bn) {
          const auto i = static_cast<std::int64_t>(k);
          zeroed = std::max(std::fabs(static_cast<double>(bn->bn.gamma[i])),
                            std::fabs(static_cast<double>(bn->bn.beta[i]))) < threshold;
        }
        m.zeroed.push_back(zeroed);
      }
      masks.push_back(std::move(m));
    }
    if (l.id != first) {
      ChannelMask m{l.id, MaskDirection::kInput, {}};
      for (double v : channel_max_abs(l.weight, MaskDirection::kInput)) m.zeroed.push_back(v < threshold);
      masks.push_back(std::move(m));
    }
  }
  return masks;
}

template <typename T>
void zero_flagged_channels(ModelGraph<T>& g, const std::vector<ChannelMask>& masks) {
  MaskIndex index(masks, g);  // validates lengths
  for (const auto& m : masks) {
    auto& l = g.layer(m.layer_id);
    const std::int64_t k_count = l.weight.dim(0), c_count = l.weight.dim(1);
    const std::int64_t inner = l.weight.size() / (k_count * c_count);
    for (std::size_t ch = 0; ch < m.zeroed.size(); ++ch) {
      if (!m.zeroed[ch]) continue;
      const auto idx = static_cast<std::int64_t>(ch);
      for (std::int64_t a = 0; a < (m.direction == MaskDirection::kOutput ? c_count : k_count); ++a) {
        const std::int64_t k = m.direction == MaskDirection::kOutput ? idx : a;
        const std::int64_t c = m.direction == MaskDirection::kOutput ? a : idx;
        const std::int64_t base = (k * c_count + c) * inner;
        std::fill(l.weight.raw() + base, l.weight.raw() + base + inner, T(0));
        std::fill(l.weight_momentum.raw() + base, l.weight_momentum.raw() + base + inner, T(0));
      }
      if (m.direction == MaskDirection::kOutput) {
        if (!l.bias.empty()) {
          l.bias[idx] = T(0);
          l.bias_momentum[idx] = T(0);
        }
        if (const auto* bn_const = batchnorm_after(g, l.id)) {
          auto& bn = g.layer(bn_const->id);
          bn.bn.gamma[idx] = T(0);
          bn.bn.beta[idx] = T(0);
          bn.gamma_momentum[idx] = T(0);
          bn.beta_momentum[idx] = T(0);
        }
      }
    }
  }
}

template <typename T>
std::vector<ChannelBoundary> find_channel_boundaries(const ModelGraph<T>& g) {
  const std::size_t count = g.layers.size();
  std::unordered_map<int, std::size_t> tensor_of;  // layer id -> tensor index
  tensor_of[kGraphInput] = 0;
  for (std::size_t i = 0; i < count; ++i) tensor_of[g.layers[i].id] = i + 1;
  auto tensor = [&](int id) {
    auto it = tensor_of.find(id);
    if (it == tensor_of.end()) throw ConsistencyError("layer " + std::to_string(id) + " not in graph");
    return it->second;
  };
  DisjointSets sets(count + 1);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& l = g.layers[i];
    if (!l.is_channelwise()) continue;
    for (int src : l.inputs) sets.unite(i + 1, tensor(src));
  }
  std::map<std::size_t, int> boundary_of_root;
  std::vector<ChannelBoundary> out;
  auto boundary_for = [&](std::size_t t) -> ChannelBoundary& {
    const std::size_t root = sets.find(t);
    auto it = boundary_of_root.find(root);
    if (it == boundary_of_root.end()) {
      ChannelBoundary b;
      b.id = static_cast<int>(out.size());
      b.width = t == 0 ? static_cast<int>(g.input_shape[0]) : g.layers[t - 1].out_channels;
      it = boundary_of_root.emplace(root, b.id).first;
      out.push_back(std::move(b));
    }
    return out[static_cast<std::size_t>(it->second)];
  };
  boundary_for(0).reads_graph_input = true;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& l = g.layers[i];
    if (l.has_weights()) {
      boundary_for(i + 1).producers.push_back(l.id);
      boundary_for(tensor(l.inputs.at(0))).consumers.push_back(l.id);
    } else {
      boundary_for(i + 1).members.push_back(l.id);
    }
  }
  for (const auto& stage : g.stages) {
    boundary_for(tensor(stage.entry_id)).stage_id = stage.stage_id;
    for (std::size_t bi = 0; bi < stage.blocks.size(); ++bi) {
      const std::set<int> path(stage.blocks[bi].path.begin(), stage.blocks[bi].path.end());
      for (auto& b : out) {
        if (b.producers.empty() || b.consumers.empty() || b.stage_id >= 0) continue;
        const bool inside =
            std::all_of(b.producers.begin(), b.producers.end(), [&](int id) { return path.count(id) > 0; }) &&
            std::all_of(b.consumers.begin(), b.consumers.end(), [&](int id) { return path.count(id) > 0; });
        if (inside) {
          b.block_stage = stage.stage_id;
          b.block_index = static_cast<int>(bi);
        }
      }
    }
  }
  return out;
}

template <typename T>
PrunePlan plan_sequential(const std::vector<ChannelMask>& masks, const ModelGraph<T>& g) {
  const MaskIndex index(masks, g);
  PrunePlan plan;
  plan.mode = PlanMode::kSequential;
  const std::set<int> none;
  for (const auto& b : find_channel_boundaries(g)) {
    if (!b.prunable() || b.stage_id >= 0 || b.block_stage >= 0) continue;
    plan.boundaries.push_back(plan_boundary(b, g, index, none, PlanMode::kSequential));
  }
  return plan;
}

template <typename T>
PrunePlan plan_channel_union(const std::vector<ChannelMask>& masks, const ModelGraph<T>& g,
                             const ResidualStage& stage) {
  check_stage_in_graph(g, stage);
  const MaskIndex index(masks, g);
  const auto boundaries = find_channel_boundaries(g);
  PrunePlan plan;
  plan.mode = PlanMode::kUnion;
  std::vector<bool> removed_blocks;
  const std::set<int> removed = removable_block_layers(g, stage, boundaries, index, &removed_blocks);
  plan.removed_layers.assign(removed.begin(), removed.end());
  const auto* node = node_boundary(boundaries, stage.stage_id);
  if (!node) throw ConsistencyError("stage " + std::to_string(stage.stage_id) + " has no node boundary");
  plan.boundaries.push_back(plan_boundary(*node, g, index, removed, PlanMode::kUnion));
  for (const auto& b : boundaries) {
    if (b.block_stage != stage.stage_id || !b.prunable()) continue;
    if (removed_blocks[static_cast<std::size_t>(b.block_index)]) continue;
    plan.boundaries.push_back(plan_boundary(b, g, index, removed, PlanMode::kSequential));
  }
  return plan;
}

template <typename T>
PrunePlan plan_channel_gating(const std::vector<ChannelMask>& masks, const ModelGraph<T>& g,
                              const ResidualStage& stage) {
  PrunePlan plan = plan_channel_union(masks, g, stage);
  plan.mode = PlanMode::kGating;
  const MaskIndex index(masks, g);
  const auto& retained = plan.boundaries.front().retained;  // the node
  for (const auto& block : stage.blocks) {
    if (plan.removes(block.add_id)) continue;
    const auto convs = conv_ids_on_path(block.path, [&](int id) {
      return g.layer(id).kind == LayerKind::kConv;
    });
    auto dense = [&](int layer_id, MaskDirection dir) {
      std::vector<int> keep;
      for (int i : retained) {
        if (!index.zeroed(layer_id, dir, i)) keep.push_back(i);
      }
      if (keep.empty()) keep.push_back(retained.front());
      return keep;
    };
    GatedLayer entry{convs.front(), dense(convs.front(), MaskDirection::kInput), {}};
    if (convs.size() == 1) {
      entry.output_scatter = dense(convs.front(), MaskDirection::kOutput);
      plan.gating.push_back(std::move(entry));
      continue;
    }
    plan.gating.push_back(std::move(entry));
    plan.gating.push_back({convs.back(), {}, dense(convs.back(), MaskDirection::kOutput)});
  }
  return plan;
}

template <typename T>
PrunePlan plan_reconfiguration(const std::vector<ChannelMask>& masks, const ModelGraph<T>& g,
                               PlanMode stage_mode) {
  if (stage_mode == PlanMode::kSequential) {
    throw ConfigError("stage planning mode must be union or gating");
  }
  PrunePlan plan = plan_sequential(masks, g);
  plan.mode = g.stages.empty() ? PlanMode::kSequential : stage_mode;
  for (const auto& stage : g.stages) {
    PrunePlan part = stage_mode == PlanMode::kGating ? plan_channel_gating(masks, g, stage)
                                                     : plan_channel_union(masks, g, stage);
    for (auto& b : part.boundaries) plan.boundaries.push_back(std::move(b));
    plan.removed_layers.insert(plan.removed_layers.end(), part.removed_layers.begin(),
                               part.removed_layers.end());
    for (auto& gl : part.gating) plan.gating.push_back(std::move(gl));
  }
  std::sort(plan.removed_layers.begin(), plan.removed_layers.end());
  return plan;
}

template <typename T>
std::vector<LayerDims> planned_layer_dims(const ModelGraph<T>& g, const PrunePlan& plan) {
  std::unordered_map<int, int> effective_out;  // layer id -> channels after the plan
  effective_out[kGraphInput] = static_cast<int>(g.input_shape[0]);
  std::vector<LayerDims> dims(g.layers.size());
  std::unordered_map<int, const GatedLayer*> gated;
  for (const auto& gl : plan.gating) gated[gl.layer_id] = &gl;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    LayerDims d;
    if (l.has_weights()) {
      const auto* in_b = plan.boundary_of_input(l.id);
      const auto* out_b = plan.boundary_of_output(l.id);
      d.in = in_b ? static_cast<int>(in_b->retained.size()) : l.in_channels;
      d.out = out_b ? static_cast<int>(out_b->retained.size()) : l.out_channels;
      if (auto it = gated.find(l.id); it != gated.end()) {
        if (!it->second->input_select.empty()) d.in = static_cast<int>(it->second->input_select.size());
        if (!it->second->output_scatter.empty()) d.out = static_cast<int>(it->second->output_scatter.size());
      }
    } else if (l.kind == LayerKind::kAdd) {
      const auto* b = plan.boundary_of_output(l.id);
      d.in = d.out = b ? static_cast<int>(b->retained.size()) : l.out_channels;
    } else {
      d.in = d.out = effective_out.at(l.inputs.at(0));
    }
    effective_out[l.id] = d.out;
    dims[i] = plan.removes(l.id) ? LayerDims{} : d;
  }
  return dims;
}

template <typename T>
ModelGraph<T> apply_reconfiguration(const ModelGraph<T>& g, const PrunePlan& plan) {
  if (plan.mode == PlanMode::kGating || !plan.gating.empty()) {
    throw ConsistencyError("channel-gating plans are for cost modelling and cannot be applied");
  }
  const std::set<int> removed(plan.removed_layers.begin(), plan.removed_layers.end());
  for (int id : removed) {
    if (!g.find(id)) throw ConsistencyError("plan removes unknown layer " + std::to_string(id));
  }
  for (const auto& bp : plan.boundaries) {
    const auto& b = bp.boundary;
    for (int p : b.producers) {
      const auto* l = g.find(p);
      if (!l || l->out_channels != b.width) {
        throw ConsistencyError("plan boundary " + std::to_string(b.id) + " does not match producer " +
                               std::to_string(p));
      }
    }
    for (int c : b.consumers) {
      const auto* l = g.find(c);
      if (!l || l->in_channels != b.width) {
        throw ConsistencyError("plan boundary " + std::to_string(b.id) + " does not match consumer " +
                               std::to_string(c));
      }
    }
    if (bp.retained.empty() || !std::is_sorted(bp.retained.begin(), bp.retained.end()) ||
        std::adjacent_find(bp.retained.begin(), bp.retained.end()) != bp.retained.end() ||
        bp.retained.front() < 0 || bp.retained.back() >= b.width) {
      throw ConsistencyError("plan boundary " + std::to_string(b.id) + " has an invalid retained list");
    }
  }

  ModelGraph<T> out = g;

  // Drop residual paths and route their consumers to the node.
  for (auto& stage : out.stages) {
    std::vector<ResidualBlock> kept;
    for (auto& block : stage.blocks) {
      if (!removed.count(block.add_id)) {
        kept.push_back(block);
        continue;
      }
      const auto& add = out.layer(block.add_id);
      const std::set<int> path(block.path.begin(), block.path.end());
      int node_input = add.inputs.at(0);
      for (int src : add.inputs) {
        if (!path.count(src)) node_input = src;
      }
      for (auto& l : out.layers) {
        for (int& src : l.inputs) {
          if (src == block.relu_id) src = node_input;
        }
      }
    }
    stage.blocks = std::move(kept);
  }
  std::erase_if(out.layers, [&](const LayerSpec<T>& l) { return removed.count(l.id) > 0; });

  for (const auto& bp : plan.boundaries) {
    const auto& b = bp.boundary;
    if (static_cast<int>(bp.retained.size()) == b.width) continue;
    const std::span<const int> keep(bp.retained);
    const int n = static_cast<int>(keep.size());
    auto slice_origin = [&](std::vector<int>& origin) {
      std::vector<int> sliced;
      for (int i : keep) sliced.push_back(origin.at(static_cast<std::size_t>(i)));
      origin = std::move(sliced);
    };
    for (int p : b.producers) {
      if (removed.count(p)) continue;
      auto& l = out.layer(p);
      l.weight = select_along(l.weight, 0, keep);
      l.weight_momentum = select_along(l.weight_momentum, 0, keep);
      if (!l.bias.empty()) {
        l.bias = select_along(l.bias, 0, keep);
        l.bias_momentum = select_along(l.bias_momentum, 0, keep);
      }
      slice_origin(l.out_origin);
      l.out_channels = n;
    }
    for (int c : b.consumers) {
      if (removed.count(c)) continue;
      auto& l = out.layer(c);
      l.weight = select_along(l.weight, 1, keep);
      l.weight_momentum = select_along(l.weight_momentum, 1, keep);
      slice_origin(l.in_origin);
      l.in_channels = n;
    }
    for (int m : b.members) {
      if (removed.count(m)) continue;
      auto& l = out.layer(m);
      if (l.kind == LayerKind::kBatchNorm) {
        l.bn.gamma = select_along(l.bn.gamma, 0, keep);
        l.bn.beta = select_along(l.bn.beta, 0, keep);
        l.bn.running_mean = select_along(l.bn.running_mean, 0, keep);
        l.bn.running_var = select_along(l.bn.running_var, 0, keep);
        l.gamma_momentum = select_along(l.gamma_momentum, 0, keep);
        l.beta_momentum = select_along(l.beta_momentum, 0, keep);
      }
      l.in_channels = l.out_channels = n;
    }
  }
  for (auto& stage : out.stages) stage.width = out.layer(stage.entry_id).out_channels;

  if (auto v = validate_graph(out); !v.empty()) {
    throw InternalError("reconfigured graph is invalid: " + v.front().message);
  }
  return out;
}

json plan_to_json(const PrunePlan& plan) {
  json boundaries = json::array();
  for (const auto& bp : plan.boundaries) {
    json jb = {{"boundary", bp.boundary.id},
               {"mode", plan_mode_name(bp.mode)},
               {"producers", bp.boundary.producers},
               {"consumers", bp.boundary.consumers},
               {"width", bp.boundary.width},
               {"retained", bp.retained}};
    if (bp.boundary.stage_id >= 0) jb["stage"] = bp.boundary.stage_id;
    boundaries.push_back(std::move(jb));
  }
  json gating = json::array();
  for (const auto& gl : plan.gating) {
    gating.push_back({{"layer", gl.layer_id},
                      {"input_select", gl.input_select},
                      {"output_scatter", gl.output_scatter}});
  }
  return {{"mode", plan_mode_name(plan.mode)},
          {"boundaries", std::move(boundaries)},
          {"removed_layers", plan.removed_layers},
          {"gating", std::move(gating)}};
}

template <typename T>
std::vector<ChannelMask> masks_in_original_coordinates(const std::vector<ChannelMask>& masks,
                                                       const ModelGraph<T>& g,
                                                       const ModelGraph<T>& g0) {
  const MaskIndex index(masks, g);
  const int first = first_conv_id(g0);
  std::vector<ChannelMask> out;
  for (const auto& l0 : g0.layers) {
    if (!l0.has_weights()) continue;
    const auto* l = g.find(l0.id);
    auto expand = [&](MaskDirection dir, int original_width, const std::vector<int>* origin) {
      ChannelMask m{l0.id, dir, std::vector<bool>(static_cast<std::size_t>(original_width), true)};
      if (l) {
        for (std::size_t j = 0; j < origin->size(); ++j) {
          m.zeroed[static_cast<std::size_t>((*origin)[j])] = index.zeroed(l->id, dir, static_cast<int>(j));
        }
      }
      out.push_back(std::move(m));
    };
    if (l0.id != g0.head_id) expand(MaskDirection::kOutput, l0.out_channels, l ? &l->out_origin : nullptr);
    if (l0.id != first) expand(MaskDirection::kInput, l0.in_channels, l ? &l->in_origin : nullptr);
  }
  return out;
}

template <typename T>
SparsityHistory make_sparsity_history(const ModelGraph<T>& g0) {
  SparsityHistory h;
  for (const auto& l : g0.layers) {
    if (l.kind == LayerKind::kConv) h.original_widths[l.id] = l.out_channels;
  }
  return h;
}

template <typename T>
void record_sparsity(SparsityHistory& history, const ModelGraph<T>& g, int epoch) {
  if (!history.records.empty() && history.records.back().epoch >= epoch) {
    throw ConsistencyError("sparsity history epochs must increase");
  }
  SparsityHistory::Record rec;
  rec.epoch = epoch;
  for (const auto& [id, width] : history.original_widths) {
    std::vector<double> values(static_cast<std::size_t>(width), 0.0);
    if (const auto* l = g.find(id)) {
      const auto max_abs = channel_max_abs(l->weight, MaskDirection::kOutput);
      for (std::size_t j = 0; j < max_abs.size(); ++j) {
        values.at(static_cast<std::size_t>(l->out_origin[j])) = max_abs[j];
      }
    }
    rec.max_abs[id] = std::move(values);
  }
  history.records.push_back(std::move(rec));
}

RevivalReport revival_report(const SparsityHistory& history, double threshold) {
  RevivalReport report;
  for (const auto& [id, width] : history.original_widths) {
    RevivalReport::LayerCounts counts;
    counts.layer_id = id;
    for (int ch = 0; ch < width; ++ch) {
      bool below = false;
      bool revived = false;
      for (const auto& rec : history.records) {
        auto it = rec.max_abs.find(id);
        if (it == rec.max_abs.end()) continue;
        const double v = it->second.at(static_cast<std::size_t>(ch));
        if (v < threshold) {
          below = true;
        } else if (below) {
          revived = true;
        }
      }
      counts.ever_zeroed += below ? 1 : 0;
      counts.revived += revived ? 1 : 0;
    }
    report.ever_zeroed += counts.ever_zeroed;
    report.revived += counts.revived;
    report.layers.push_back(counts);
  }
  report.revived_channel_fraction =
      report.ever_zeroed == 0 ? 0.0 : static_cast<double>(report.revived) / report.ever_zeroed;
  return report;
}

json sparsity_history_to_json(const SparsityHistory& history) {
  json widths = json::object();
  for (const auto& [id, w] : history.original_widths) widths[std::to_string(id)] = w;
  json records = json::array();
  for (const auto& rec : history.records) {
    json layers = json::object();
    for (const auto& [id, values] : rec.max_abs) layers[std::to_string(id)] = values;
    records.push_back({{"epoch", rec.epoch}, {"max_abs", std::move(layers)}});
  }
  return {{"original_widths", std::move(widths)}, {"records", std::move(records)}};
}

SparsityHistory sparsity_history_from_json(const json& j) {
  SparsityHistory h;
  try {
    for (const auto& [key, w] : j.at("original_widths").items()) h.original_widths[std::stoi(key)] = w.get<int>();
    for (const auto& jr : j.at("records")) {
      SparsityHistory::Record rec;
      rec.epoch = jr.at("epoch").get<int>();
      for (const auto& [key, values] : jr.at("max_abs").items()) {
        rec.max_abs[std::stoi(key)] = values.get<std::vector<double>>();
      }
      h.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed sparsity history: ") + e.what());
  }
  return h;
}

json revival_report_to_json(const RevivalReport& report) {
  json layers = json::array();
  for (const auto& c : report.layers) {
    layers.push_back({{"layer", c.layer_id}, {"ever_zeroed", c.ever_zeroed}, {"revived", c.revived}});
  }
  return {{"ever_zeroed", report.ever_zeroed},
          {"revived", report.revived},
          {"revived_channel_fraction", report.revived_channel_fraction},
          {"layers", std::move(layers)}};
}

#define SLIMTRAIN_INSTANTIATE_PRUNE(T)                                                              \
  template std::vector<ChannelMask> detect_zeroed_channels<T>(const ModelGraph<T>&, double,          \
                                                              DetectOptions);                        \
  template void zero_flagged_channels<T>(ModelGraph<T>&, const std::vector<ChannelMask>&);          \
  template std::vector<ChannelBoundary> find_channel_boundaries<T>(const ModelGraph<T>&);           \
  template PrunePlan plan_sequential<T>(const std::vector<ChannelMask>&, const ModelGraph<T>&);     \
  template PrunePlan plan_channel_union<T>(const std::vector<ChannelMask>&, const ModelGraph<T>&,   \
                                           const ResidualStage&);                                    \
  template PrunePlan plan_channel_gating<T>(const std::vector<ChannelMask>&, const ModelGraph<T>&,  \
                                            const ResidualStage&);                                   \
  template PrunePlan plan_reconfiguration<T>(const std::vector<ChannelMask>&, const ModelGraph<T>&, \
                                             PlanMode);                                              \
  template std::vector<LayerDims> planned_layer_dims<T>(const ModelGraph<T>&, const PrunePlan&);    \
  template ModelGraph<T> apply_reconfiguration<T>(const ModelGraph<T>&, const PrunePlan&);          \
  template std::vector<ChannelMask> masks_in_original_coordinates<T>(                               \
      const std::vector<ChannelMask>&, const ModelGraph<T>&, const ModelGraph<T>&);                  \
  template SparsityHistory make_sparsity_history<T>(const ModelGraph<T>&);                          \
  template void record_sparsity<T>(SparsityHistory&, const ModelGraph<T>&, int);

SLIMTRAIN_INSTANTIATE_PRUNE(float)
SLIMTRAIN_INSTANTIATE_PRUNE(double)

#undef SLIMTRAIN_INSTANTIATE_PRUNE

}  // namespace slimtrain
