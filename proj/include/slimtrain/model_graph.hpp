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

// Reconfigurable architecture of the toy CNNs.
//
// A ModelGraph is an ordered (topologically sorted) list of layers, each
// naming its producers by id, plus the residual-stage topology that the
// channel-union planner needs. Parameters and their momentum buffers live on
// the layers, so slicing a layer slices its optimizer state with it.

#ifndef SLIMTRAIN_MODEL_GRAPH_HPP_
#define SLIMTRAIN_MODEL_GRAPH_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slimtrain/kernels.hpp"
#include "slimtrain/tensor.hpp"

namespace slimtrain {

enum class LayerKind { kConv, kBatchNorm, kRelu, kAvgPool, kLinear, kAdd };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

// Producer id standing for the network input.
inline constexpr int kGraphInput = -1;

// (channels, height, width) of one sample.
using InputShape = std::array<std::int64_t, 3>;

template <typename T>
struct LayerSpec {
  int id = 0;
  LayerKind kind = LayerKind::kRelu;
  std::vector<int> inputs;
  int in_channels = 0;
  int out_channels = 0;
  // conv: square kernel extent; avgpool: window, 0 meaning global pooling.
  int kernel = 0;
  int stride = 1;
  int pad = 0;

  Tensor<T> weight;  // conv (K, C, R, S); linear (M, D)
  Tensor<T> bias;    // linear (M)
  Tensor<T> weight_momentum;
  Tensor<T> bias_momentum;

  BatchNormState<T> bn;
  Tensor<T> gamma_momentum;
  Tensor<T> beta_momentum;

  // conv/linear: index of each current channel in the layer as first built.
  std::vector<int> in_origin;
  std::vector<int> out_origin;

  bool has_weights() const { return kind == LayerKind::kConv || kind == LayerKind::kLinear; }
  // Layers that keep channel identity (output channel i is a function of input channel i).
  bool is_channelwise() const { return !has_weights(); }
};

struct ResidualBlock {
  std::vector<int> path;  // layer ids of the residual path, first conv .. last batchnorm
  int add_id = 0;
  int relu_id = 0;  // activation after the merge; its output is the node value
};

struct ResidualStage {
  int stage_id = 0;
  int width = 0;  // shared node channel count
  int entry_id = 0;  // layer whose output is the node value entering the stage
  std::optional<int> projection_id;  // strided 1x1 conv feeding the node, if any
  std::vector<ResidualBlock> blocks;
};

template <typename T>
struct ModelGraph {
  InputShape input_shape{};
  int num_classes = 0;
  std::vector<LayerSpec<T>> layers;
  std::vector<ResidualStage> stages;
  int head_id = 0;
  int next_layer_id = 0;

  // Position of a layer in `layers`; throws ConsistencyError for unknown ids.
  std::size_t index_of(int id) const;
  const LayerSpec<T>* find(int id) const;
  LayerSpec<T>* find(int id);
  const LayerSpec<T>& layer(int id) const { return layers[index_of(id)]; }
  LayerSpec<T>& layer(int id) { return layers[index_of(id)]; }

  std::int64_t parameter_count() const;
};

struct StageConfig {
  int blocks = 1;
  int width = 1;
};

struct ResNetOptions {
  // Three convs per residual path (1x1, 3x3, 1x1) with inner width max(1, width/4).
  bool bottleneck = false;
};

// Stem conv-BN-ReLU, one residual stage per entry (identity shortcuts inside a
// stage, strided 1x1 projection between stages), global average pool, linear head.
template <typename T>
ModelGraph<T> build_toy_resnet(std::span<const StageConfig> stages, InputShape input_shape,
                               int num_classes, std::uint64_t seed, ResNetOptions options = {});

// Sequential conv-BN-ReLU chain; a 2x2 average pool follows every conv whose
// successor changes width. Global average pool and a linear head finish it.
template <typename T>
ModelGraph<T> build_toy_vgg(std::span<const int> widths, InputShape input_shape, int num_classes,
                            std::uint64_t seed);

// Per-sample activation shape (C, H, W) of every layer, indexed like `layers`.
// Linear outputs and global-pool outputs have H = W = 1.
template <typename T>
std::vector<InputShape> infer_activation_shapes(const ModelGraph<T>& g);

struct Violation {
  std::string message;
  std::vector<int> layer_ids;
};

// Every channel-dimension mismatch, parameter shape error, spatial error and
// residual-stage width violation. Empty means the graph is valid.
template <typename T>
std::vector<Violation> validate_graph(const ModelGraph<T>& g);

// Conv/linear layers in graph order.
template <typename T>
std::vector<int> weighted_layer_ids(const ModelGraph<T>& g);

// The batchnorm that directly consumes a conv's output, if any.
template <typename T>
const LayerSpec<T>* batchnorm_after(const ModelGraph<T>& g, int conv_id);

// Id of the first conv in the graph (the one reading the network input).
template <typename T>
int first_conv_id(const ModelGraph<T>& g);

}  // namespace slimtrain

#endif  // SLIMTRAIN_MODEL_GRAPH_HPP_
