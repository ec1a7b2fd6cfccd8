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

#include "slimtrain/model_graph.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

namespace slimtrain {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kAvgPool: return "avgpool";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kAdd: return "add";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto kind : {LayerKind::kConv, LayerKind::kBatchNorm, LayerKind::kRelu,
                    LayerKind::kAvgPool, LayerKind::kLinear, LayerKind::kAdd}) {
    if (layer_kind_name(kind) == name) return kind;
  }
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

template <typename T>
std::size_t ModelGraph<T>::index_of(int id) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].id == id) return i;
  }
  throw ConsistencyError("layer id " + std::to_string(id) + " not in graph");
}

template <typename T>
const LayerSpec<T>* ModelGraph<T>::find(int id) const {
  for (const auto& l : layers) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

template <typename T>
LayerSpec<T>* ModelGraph<T>::find(int id) {
  for (auto& l : layers) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

template <typename T>
std::int64_t ModelGraph<T>::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& l : layers) {
    total += l.weight.size() + l.bias.size();
    if (l.kind == LayerKind::kBatchNorm) total += l.bn.gamma.size() + l.bn.beta.size();
  }
  return total;
}

namespace {

std::vector<int> iota_vector(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Appends layers with fresh ids and fan-in scaled Gaussian init.
template <typename T>
class GraphBuilder {
 public:
  GraphBuilder(InputShape input_shape, int num_classes, std::uint64_t seed) : rng_(seed) {
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    for (auto extent : input_shape) {
      if (extent < 1) throw ConfigError("input shape extents must be >= 1");
    }
    g_.input_shape = input_shape;
    g_.num_classes = num_classes;
  }

  int conv(int input, int in_ch, int out_ch, int kernel, int stride, int pad) {
    auto& l = push(LayerKind::kConv, input, in_ch, out_ch);
    l.kernel = kernel;
    l.stride = stride;
    l.pad = pad;
    l.weight = gaussian({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel);
    l.weight_momentum = Tensor<T>(l.weight.shape());
    l.in_origin = iota_vector(in_ch);
    l.out_origin = iota_vector(out_ch);
    return l.id;
  }

  int batchnorm(int input, int channels) {
    auto& l = push(LayerKind::kBatchNorm, input, channels, channels);
    l.bn = BatchNormState<T>::identity(channels);
    l.gamma_momentum = Tensor<T>({channels});
    l.beta_momentum = Tensor<T>({channels});
    return l.id;
  }

  int relu(int input, int channels) { return push(LayerKind::kRelu, input, channels, channels).id; }

  int avgpool(int input, int channels, int window) {
    auto& l = push(LayerKind::kAvgPool, input, channels, channels);
    l.kernel = window;
    return l.id;
  }

  int add(int a, int b, int channels) {
    auto& l = push(LayerKind::kAdd, a, channels, channels);
    l.inputs.push_back(b);
    return l.id;
  }

  int linear(int input, int in_features, int out_features) {
    auto& l = push(LayerKind::kLinear, input, in_features, out_features);
    l.weight = gaussian({out_features, in_features}, in_features);
    l.bias = Tensor<T>({out_features});
    l.weight_momentum = Tensor<T>(l.weight.shape());
    l.bias_momentum = Tensor<T>(l.bias.shape());
    l.in_origin = iota_vector(in_features);
    l.out_origin = iota_vector(out_features);
    return l.id;
  }

  ModelGraph<T>& graph() { return g_; }

 private:
  LayerSpec<T>& push(LayerKind kind, int input, int in_ch, int out_ch) {
    LayerSpec<T> l;
    l.id = g_.next_layer_id++;
    l.kind = kind;
    l.inputs = {input};
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    g_.layers.push_back(std::move(l));
    return g_.layers.back();
  }

  Tensor<T> gaussian(Shape shape, std::int64_t fan_in) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng_));
    return t;
  }

  ModelGraph<T> g_;
  std::mt19937_64 rng_;
};

template <typename T>
int conv_bn(GraphBuilder<T>& b, int input, int in_ch, int out_ch, int kernel, int stride, int pad) {
  const int c = b.conv(input, in_ch, out_ch, kernel, stride, pad);
  return b.batchnorm(c, out_ch);
}

}  // namespace

template <typename T>
ModelGraph<T> build_toy_resnet(std::span<const StageConfig> stages, InputShape input_shape,
                               int num_classes, std::uint64_t seed, ResNetOptions options) {
  if (stages.empty()) throw ConfigError("toy resnet needs at least one stage");
  for (const auto& s : stages) {
    if (s.width < 1) throw ConfigError("stage width must be >= 1");
    if (s.blocks < 0) throw ConfigError("stage block count must be >= 0");
  }
  GraphBuilder<T> b(input_shape, num_classes, seed);
  const int in_ch = static_cast<int>(input_shape[0]);

  int node = b.relu(conv_bn(b, kGraphInput, in_ch, stages[0].width, 3, 1, 1), stages[0].width);
  int prev_width = stages[0].width;
  std::vector<ResidualStage> built;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const int width = stages[s].width;
    ResidualStage stage;
    stage.stage_id = static_cast<int>(s);
    stage.width = width;
    if (s > 0) {
      const int proj = b.conv(node, prev_width, width, 1, 2, 0);
      stage.projection_id = proj;
      node = b.relu(b.batchnorm(proj, width), width);
    }
    stage.entry_id = node;
    for (int blk = 0; blk < stages[s].blocks; ++blk) {
      ResidualBlock block;
      auto& layers = b.graph().layers;
      const std::size_t first = layers.size();
      int out;
      if (options.bottleneck) {
        const int inner = std::max(1, width / 4);
        int x = b.relu(conv_bn(b, node, width, inner, 1, 1, 0), inner);
        x = b.relu(conv_bn(b, x, inner, inner, 3, 1, 1), inner);
        out = conv_bn(b, x, inner, width, 1, 1, 0);
      } else {
        int x = b.relu(conv_bn(b, node, width, width, 3, 1, 1), width);
        out = conv_bn(b, x, width, width, 3, 1, 1);
      }
      for (std::size_t i = first; i < b.graph().layers.size(); ++i) {
        block.path.push_back(b.graph().layers[i].id);
      }
      block.add_id = b.add(node, out, width);
      block.relu_id = b.relu(block.add_id, width);
      node = block.relu_id;
      stage.blocks.push_back(std::move(block));
    }
    built.push_back(std::move(stage));
    prev_width = width;
  }
  const int pool = b.avgpool(node, prev_width, 0);
  auto& g = b.graph();
  g.head_id = b.linear(pool, prev_width, num_classes);
  g.stages = std::move(built);
  if (auto v = validate_graph(g); !v.empty()) {
    throw ConfigError("toy resnet config produces an invalid graph: " + v.front().message);
  }
  return std::move(g);
}

template <typename T>
ModelGraph<T> build_toy_vgg(std::span<const int> widths, InputShape input_shape, int num_classes,
                            std::uint64_t seed) {
  if (widths.empty()) throw ConfigError("toy vgg needs at least one conv width");
  for (int w : widths) {
    if (w < 1) throw ConfigError("conv width must be >= 1");
  }
  GraphBuilder<T> b(input_shape, num_classes, seed);
  int x = kGraphInput;
  int channels = static_cast<int>(input_shape[0]);
  std::int64_t h = input_shape[1], w = input_shape[2];
  for (std::size_t i = 0; i < widths.size(); ++i) {
    x = b.relu(conv_bn(b, x, channels, widths[i], 3, 1, 1), widths[i]);
    channels = widths[i];
    const bool widens = i + 1 < widths.size() && widths[i + 1] != widths[i];
    if (widens && h >= 2 && w >= 2 && h % 2 == 0 && w % 2 == 0) {
      x = b.avgpool(x, channels, 2);
      h /= 2;
      w /= 2;
    }
  }
  x = b.avgpool(x, channels, 0);
  auto& g = b.graph();
  g.head_id = b.linear(x, channels, num_classes);
  if (auto v = validate_graph(g); !v.empty()) {
    throw ConfigError("toy vgg config produces an invalid graph: " + v.front().message);
  }
  return std::move(g);
}

namespace {

// Shape inference that records problems instead of throwing.
template <typename T>
std::vector<InputShape> infer_shapes_impl(const ModelGraph<T>& g, std::vector<Violation>* problems) {
  std::vector<InputShape> shapes(g.layers.size(), InputShape{0, 0, 0});
  std::unordered_map<int, std::size_t> position;
  auto report = [&](std::string msg, std::vector<int> ids) {
    if (problems) {
      problems->push_back({std::move(msg), std::move(ids)});
    } else {
      throw DimensionError(msg);
    }
  };
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    std::vector<InputShape> in;
    bool inputs_ok = true;
    for (int src : l.inputs) {
      if (src == kGraphInput) {
        in.push_back(g.input_shape);
        continue;
      }
      auto it = position.find(src);
      if (it == position.end()) {
        report("layer " + std::to_string(l.id) + " reads layer " + std::to_string(src) +
                   " which is not an earlier layer",
               {l.id, src});
        inputs_ok = false;
        continue;
      }
      in.push_back(shapes[it->second]);
    }
    position[l.id] = i;
    const std::size_t expected_inputs = l.kind == LayerKind::kAdd ? 2 : 1;
    if (l.inputs.size() != expected_inputs) {
      report("layer " + std::to_string(l.id) + " (" + std::string(layer_kind_name(l.kind)) +
                 ") has " + std::to_string(l.inputs.size()) + " inputs",
             {l.id});
      inputs_ok = false;
    }
    if (!inputs_ok || in.empty()) {
      shapes[i] = {l.out_channels, 1, 1};
      continue;
    }
    const InputShape& src = in.front();
    InputShape out{l.out_channels, src[1], src[2]};
    switch (l.kind) {
      case LayerKind::kConv:
        if (src[1] + 2 * l.pad < l.kernel || src[2] + 2 * l.pad < l.kernel || l.stride < 1) {
          report("conv layer " + std::to_string(l.id) + " has non-positive output extent", {l.id});
          out = {l.out_channels, 1, 1};
        } else {
          out[1] = (src[1] + 2 * l.pad - l.kernel) / l.stride + 1;
          out[2] = (src[2] + 2 * l.pad - l.kernel) / l.stride + 1;
        }
        break;
      case LayerKind::kAvgPool:
        if (l.kernel == 0) {
          out = {l.out_channels, 1, 1};
        } else if (l.kernel < 0 || src[1] % l.kernel != 0 || src[2] % l.kernel != 0) {
          report("avgpool layer " + std::to_string(l.id) + " window does not tile its input",
                 {l.id});
        } else {
          out[1] = src[1] / l.kernel;
          out[2] = src[2] / l.kernel;
        }
        break;
      case LayerKind::kLinear:
        if (src[1] != 1 || src[2] != 1) {
          report("linear layer " + std::to_string(l.id) + " reads a spatial activation", {l.id});
        }
        out = {l.out_channels, 1, 1};
        break;
      case LayerKind::kAdd:
        if (in.size() == 2 && (in[0][1] != in[1][1] || in[0][2] != in[1][2])) {
          report("add layer " + std::to_string(l.id) + " merges different spatial extents",
                 {l.id, l.inputs[0], l.inputs[1]});
        }
        break;
      default:
        break;
    }
    shapes[i] = out;
  }
  return shapes;
}

}  // namespace

template <typename T>
std::vector<InputShape> infer_activation_shapes(const ModelGraph<T>& g) {
  return infer_shapes_impl(g, nullptr);
}

template <typename T>
std::vector<Violation> validate_graph(const ModelGraph<T>& g) {
  std::vector<Violation> out;
  std::set<int> ids;
  for (const auto& l : g.layers) {
    if (!ids.insert(l.id).second) out.push_back({"duplicate layer id " + std::to_string(l.id), {l.id}});
  }
  infer_shapes_impl(g, &out);

  auto channels_of = [&](int src) -> std::optional<int> {
    if (src == kGraphInput) return static_cast<int>(g.input_shape[0]);
    const auto* p = g.find(src);
    if (!p) return std::nullopt;
    return p->out_channels;
  };
  for (const auto& l : g.layers) {
    const std::string name = std::string(layer_kind_name(l.kind)) + " layer " + std::to_string(l.id);
    if (l.in_channels < 1 || l.out_channels < 1) {
      out.push_back({name + " has an empty channel dimension", {l.id}});
    }
    for (int src : l.inputs) {
      auto ch = channels_of(src);
      if (!ch) continue;  // reported by shape inference
      if (*ch != l.in_channels) {
        out.push_back({"layer " + std::to_string(src) + " produces " + std::to_string(*ch) +
                           " channels but " + name + " expects " + std::to_string(l.in_channels),
                       {src, l.id}});
      }
    }
    if (l.is_channelwise() && l.in_channels != l.out_channels) {
      out.push_back({name + " must preserve its channel count", {l.id}});
    }
    switch (l.kind) {
      case LayerKind::kConv: {
        const Shape expected{l.out_channels, l.in_channels, l.kernel, l.kernel};
        if (l.weight.shape() != expected || l.weight_momentum.shape() != expected) {
          out.push_back({name + " weight/momentum shape " + shape_string(l.weight.shape()) +
                             " != " + shape_string(expected),
                         {l.id}});
        }
        break;
      }
      case LayerKind::kLinear: {
        const Shape expected{l.out_channels, l.in_channels};
        if (l.weight.shape() != expected || l.weight_momentum.shape() != expected ||
            l.bias.shape() != Shape{l.out_channels} || l.bias_momentum.shape() != Shape{l.out_channels}) {
          out.push_back({name + " parameter shapes do not match " + shape_string(expected), {l.id}});
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        const Shape expected{l.out_channels};
        if (l.bn.gamma.shape() != expected || l.bn.beta.shape() != expected ||
            l.bn.running_mean.shape() != expected || l.bn.running_var.shape() != expected ||
            l.gamma_momentum.shape() != expected || l.beta_momentum.shape() != expected) {
          out.push_back({name + " normalization arrays do not match channel count", {l.id}});
        }
        break;
      }
      default:
        break;
    }
    if (l.has_weights() &&
        (static_cast<int>(l.in_origin.size()) != l.in_channels ||
         static_cast<int>(l.out_origin.size()) != l.out_channels)) {
      out.push_back({name + " channel origin maps do not match its dimensions", {l.id}});
    }
  }

  const auto* head = g.find(g.head_id);
  if (!head || head->kind != LayerKind::kLinear) {
    out.push_back({"head " + std::to_string(g.head_id) + " is not a linear layer", {g.head_id}});
  } else if (head->out_channels != g.num_classes) {
    out.push_back({"head produces " + std::to_string(head->out_channels) + " classes, expected " +
                       std::to_string(g.num_classes),
                   {g.head_id}});
  }

  for (const auto& stage : g.stages) {
    const std::string sname = "stage " + std::to_string(stage.stage_id);
    const auto* entry = g.find(stage.entry_id);
    if (!entry) {
      out.push_back({sname + " entry layer missing", {stage.entry_id}});
    } else if (entry->out_channels != stage.width) {
      out.push_back({sname + " entry produces " + std::to_string(entry->out_channels) +
                         " channels, node width is " + std::to_string(stage.width),
                     {stage.entry_id}});
    }
    if (stage.projection_id) {
      const auto* proj = g.find(*stage.projection_id);
      if (!proj || proj->kind != LayerKind::kConv) {
        out.push_back({sname + " projection is not a conv", {*stage.projection_id}});
      } else if (proj->out_channels != stage.width) {
        out.push_back({sname + " projection width " + std::to_string(proj->out_channels) +
                           " != node width " + std::to_string(stage.width),
                       {proj->id}});
      }
    }
    for (const auto& block : stage.blocks) {
      std::vector<const LayerSpec<T>*> convs;
      for (int id : block.path) {
        const auto* p = g.find(id);
        if (!p) {
          out.push_back({sname + " block references missing layer " + std::to_string(id), {id}});
          continue;
        }
        if (p->kind == LayerKind::kConv) convs.push_back(p);
      }
      if (convs.empty()) {
        out.push_back({sname + " block has no conv on its residual path", {block.add_id}});
        continue;
      }
      if (convs.front()->in_channels != stage.width) {
        out.push_back({sname + " block first conv " + std::to_string(convs.front()->id) +
                           " reads " + std::to_string(convs.front()->in_channels) +
                           " channels, node width is " + std::to_string(stage.width),
                       {convs.front()->id}});
      }
      if (convs.back()->out_channels != stage.width) {
        out.push_back({sname + " block last conv " + std::to_string(convs.back()->id) +
                           " writes " + std::to_string(convs.back()->out_channels) +
                           " channels, node width is " + std::to_string(stage.width),
                       {convs.back()->id}});
      }
      const auto* add = g.find(block.add_id);
      const auto* relu = g.find(block.relu_id);
      if (!add || add->kind != LayerKind::kAdd || !relu || relu->kind != LayerKind::kRelu) {
        out.push_back({sname + " block merge layers missing", {block.add_id, block.relu_id}});
      } else if (add->out_channels != stage.width) {
        out.push_back({sname + " merge width " + std::to_string(add->out_channels) +
                           " != node width " + std::to_string(stage.width),
                       {add->id}});
      }
    }
  }
  return out;
}

template <typename T>
std::vector<int> weighted_layer_ids(const ModelGraph<T>& g) {
  std::vector<int> ids;
  for (const auto& l : g.layers) {
    if (l.has_weights()) ids.push_back(l.id);
  }
  return ids;
}

template <typename T>
const LayerSpec<T>* batchnorm_after(const ModelGraph<T>& g, int conv_id) {
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::kBatchNorm && l.inputs.size() == 1 && l.inputs[0] == conv_id) return &l;
  }
  return nullptr;
}

template <typename T>
int first_conv_id(const ModelGraph<T>& g) {
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::kConv) {
      for (int src : l.inputs) {
        if (src == kGraphInput) return l.id;
      }
    }
  }
  throw ConsistencyError("graph has no conv reading the network input");
}

#define SLIMTRAIN_INSTANTIATE_GRAPH(T)                                                          \
  template struct ModelGraph<T>;                                                                \
  template ModelGraph<T> build_toy_resnet<T>(std::span<const StageConfig>, InputShape, int,     \
                                             std::uint64_t, ResNetOptions);                     \
  template ModelGraph<T> build_toy_vgg<T>(std::span<const int>, InputShape, int, std::uint64_t); \
  template std::vector<InputShape> infer_activation_shapes<T>(const ModelGraph<T>&);            \
  template std::vector<Violation> validate_graph<T>(const ModelGraph<T>&);                      \
  template std::vector<int> weighted_layer_ids<T>(const ModelGraph<T>&);                        \
  template const LayerSpec<T>* batchnorm_after<T>(const ModelGraph<T>&, int);                   \
  template int first_conv_id<T>(const ModelGraph<T>&);

SLIMTRAIN_INSTANTIATE_GRAPH(float)
SLIMTRAIN_INSTANTIATE_GRAPH(double)

#undef SLIMTRAIN_INSTANTIATE_GRAPH

}  // namespace slimtrain
