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

#include "slimtrain/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <utility>

namespace slimtrain {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'P', 'T', 'C', 'K'};
constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xffu));
  }
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  return static_cast<U>(v);
}

template <typename T>
void append_tensor(std::vector<std::uint8_t>& out, const Tensor<T>& t) {
  const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(T);
  const std::size_t start = out.size();
  out.resize(start + bytes);
  if (bytes) std::memcpy(out.data() + start, t.raw(), bytes);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = start; i < out.size(); i += sizeof(T)) {
      std::reverse(out.begin() + static_cast<std::ptrdiff_t>(i),
                   out.begin() + static_cast<std::ptrdiff_t>(i + sizeof(T)));
    }
  }
}

template <typename T>
void read_tensor(const std::vector<std::uint8_t>& in, std::size_t offset, Tensor<T>& t) {
  const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(T);
  if (bytes) std::memcpy(t.raw(), in.data() + offset, bytes);
  if constexpr (std::endian::native == std::endian::big) {
    auto* p = reinterpret_cast<std::uint8_t*>(t.raw());
    for (std::size_t i = 0; i < bytes; i += sizeof(T)) std::reverse(p + i, p + i + sizeof(T));
  }
}

// Ordered (name, tensor) slots carried by a layer.
template <typename L>
auto tensor_slots(L& l) {
  using TensorRef = decltype(&l.weight);
  std::vector<std::pair<const char*, TensorRef>> slots;
  switch (l.kind) {
    case LayerKind::kConv:
      slots = {{"weight", &l.weight}, {"weight_momentum", &l.weight_momentum}};
      break;
    case LayerKind::kLinear:
      slots = {{"weight", &l.weight},
               {"bias", &l.bias},
               {"weight_momentum", &l.weight_momentum},
               {"bias_momentum", &l.bias_momentum}};
      break;
    case LayerKind::kBatchNorm:
      slots = {{"gamma", &l.bn.gamma},
               {"beta", &l.bn.beta},
               {"running_mean", &l.bn.running_mean},
               {"running_var", &l.bn.running_var},
               {"gamma_momentum", &l.gamma_momentum},
               {"beta_momentum", &l.beta_momentum}};
      break;
    default:
      break;
  }
  return slots;
}

template <typename T>
json header_json(const ModelGraph<T>& g, const CheckpointState& state) {
  json j;
  j["dtype"] = dtype_name<T>();
  j["architecture"] = architecture_to_json(g);
  j["state"] = {{"epoch", state.epoch},
                {"iteration", state.iteration},
                {"batch", state.batch},
                {"lr", state.lr},
                {"lambda", state.lambda}};
  json table = json::array();
  for (const auto& l : g.layers) {
    for (const auto& [name, t] : tensor_slots(l)) {
      table.push_back({{"layer", l.id}, {"name", name}, {"shape", t->shape()}});
    }
  }
  j["tensors"] = std::move(table);
  return j;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string(), 0);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// Validates the preamble and returns the parsed header plus payload offset.
std::pair<json, std::size_t> parse_header(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw FormatError("checkpoint truncated in magic", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  if (bytes.size() < 8) throw FormatError("checkpoint truncated in version", bytes.size());
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  if (bytes.size() < kPreambleBytes) throw FormatError("checkpoint truncated in header length", bytes.size());
  const auto length = get_le<std::uint64_t>(bytes, 8);
  if (length > bytes.size() - kPreambleBytes) {
    throw FormatError("checkpoint truncated in JSON header", bytes.size());
  }
  json header;
  try {
    header = json::parse(bytes.begin() + kPreambleBytes,
                         bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleBytes + length));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what(), kPreambleBytes);
  }
  return {std::move(header), kPreambleBytes + static_cast<std::size_t>(length)};
}

}  // namespace

template <>
std::string dtype_name<float>() {
  return "float32";
}
template <>
std::string dtype_name<double>() {
  return "float64";
}

template <typename T>
json architecture_to_json(const ModelGraph<T>& g) {
  json layers = json::array();
  for (const auto& l : g.layers) {
    json jl = {{"id", l.id},
               {"kind", std::string(layer_kind_name(l.kind))},
               {"inputs", l.inputs},
               {"in_channels", l.in_channels},
               {"out_channels", l.out_channels},
               {"kernel", l.kernel},
               {"stride", l.stride},
               {"pad", l.pad}};
    if (l.kind == LayerKind::kBatchNorm) {
      jl["epsilon"] = l.bn.epsilon;
      jl["momentum"] = l.bn.momentum;
    }
    if (l.has_weights()) {
      jl["in_origin"] = l.in_origin;
      jl["out_origin"] = l.out_origin;
    }
    layers.push_back(std::move(jl));
  }
  json stages = json::array();
  for (const auto& s : g.stages) {
    json blocks = json::array();
    for (const auto& b : s.blocks) {
      blocks.push_back({{"path", b.path}, {"add", b.add_id}, {"relu", b.relu_id}});
    }
    json js = {{"stage_id", s.stage_id}, {"width", s.width}, {"entry", s.entry_id}, {"blocks", blocks}};
    js["projection"] = s.projection_id ? json(*s.projection_id) : json(nullptr);
    stages.push_back(std::move(js));
  }
  return {{"input_shape", g.input_shape},
          {"num_classes", g.num_classes},
          {"head_id", g.head_id},
          {"next_layer_id", g.next_layer_id},
          {"layers", std::move(layers)},
          {"stages", std::move(stages)}};
}

template <typename T>
ModelGraph<T> architecture_from_json(const json& j) {
  ModelGraph<T> g;
  try {
    g.input_shape = j.at("input_shape").get<InputShape>();
    g.num_classes = j.at("num_classes").get<int>();
    g.head_id = j.at("head_id").get<int>();
    g.next_layer_id = j.at("next_layer_id").get<int>();
    for (const auto& jl : j.at("layers")) {
      LayerSpec<T> l;
      l.id = jl.at("id").get<int>();
      l.kind = parse_layer_kind(jl.at("kind").get<std::string>());
      l.inputs = jl.at("inputs").get<std::vector<int>>();
      l.in_channels = jl.at("in_channels").get<int>();
      l.out_channels = jl.at("out_channels").get<int>();
      l.kernel = jl.at("kernel").get<int>();
      l.stride = jl.at("stride").get<int>();
      l.pad = jl.at("pad").get<int>();
      if (l.in_channels < 0 || l.out_channels < 0 || l.kernel < 0) {
        throw ConfigError("negative layer dimension in architecture");
      }
      switch (l.kind) {
        case LayerKind::kConv:
          l.weight = Tensor<T>({l.out_channels, l.in_channels, l.kernel, l.kernel});
          l.weight_momentum = Tensor<T>(l.weight.shape());
          break;
        case LayerKind::kLinear:
          l.weight = Tensor<T>({l.out_channels, l.in_channels});
          l.bias = Tensor<T>({l.out_channels});
          l.weight_momentum = Tensor<T>(l.weight.shape());
          l.bias_momentum = Tensor<T>(l.bias.shape());
          break;
        case LayerKind::kBatchNorm:
          l.bn = BatchNormState<T>::identity(l.out_channels);
          l.bn.epsilon = jl.at("epsilon").get<double>();
          l.bn.momentum = jl.at("momentum").get<double>();
          l.gamma_momentum = Tensor<T>({l.out_channels});
          l.beta_momentum = Tensor<T>({l.out_channels});
          break;
        default:
          break;
      }
      if (l.has_weights()) {
        l.in_origin = jl.at("in_origin").get<std::vector<int>>();
        l.out_origin = jl.at("out_origin").get<std::vector<int>>();
      }
      g.layers.push_back(std::move(l));
    }
    for (const auto& js : j.at("stages")) {
      ResidualStage s;
      s.stage_id = js.at("stage_id").get<int>();
      s.width = js.at("width").get<int>();
      s.entry_id = js.at("entry").get<int>();
      if (!js.at("projection").is_null()) s.projection_id = js.at("projection").get<int>();
      for (const auto& jb : js.at("blocks")) {
        ResidualBlock b;
        b.path = jb.at("path").get<std::vector<int>>();
        b.add_id = jb.at("add").get<int>();
        b.relu_id = jb.at("relu").get<int>();
        s.blocks.push_back(std::move(b));
      }
      g.stages.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed architecture JSON: ") + e.what());
  }
  return g;
}

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ModelGraph<T>& g, const CheckpointState& state) {
  const std::string header = header_json(g, state).dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& l : g.layers) {
    for (const auto& [name, t] : tensor_slots(l)) append_tensor(out, *t);
  }
  return out;
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  auto [header, offset] = parse_header(bytes);
  const std::size_t header_end = offset;
  Checkpoint<T> ck;
  try {
    if (header.at("dtype").get<std::string>() != dtype_name<T>()) {
      throw FormatError("checkpoint dtype " + header.at("dtype").get<std::string>() +
                            " does not match requested " + dtype_name<T>(),
                        kPreambleBytes);
    }
    ck.graph = architecture_from_json<T>(header.at("architecture"));
    const auto& js = header.at("state");
    ck.state.epoch = js.at("epoch").get<int>();
    ck.state.iteration = js.at("iteration").get<std::int64_t>();
    ck.state.batch = js.at("batch").get<int>();
    ck.state.lr = js.at("lr").get<double>();
    ck.state.lambda = js.at("lambda").get<double>();
    const auto& table = header.at("tensors");
    std::size_t entry = 0;
    for (auto& l : ck.graph.layers) {
      for (auto& [name, t] : tensor_slots(l)) {
        if (entry >= table.size()) throw FormatError("tensor table too short", kPreambleBytes);
        const auto& te = table[entry++];
        const Shape shape = te.at("shape").get<Shape>();
        if (te.at("layer").get<int>() != l.id || te.at("name").get<std::string>() != name ||
            shape != t->shape()) {
          throw FormatError("tensor table entry " + std::to_string(entry - 1) +
                                " does not match architecture",
                            kPreambleBytes);
        }
        const std::size_t bytes_needed = static_cast<std::size_t>(t->size()) * sizeof(T);
        if (bytes.size() - offset < bytes_needed) {
          throw FormatError("checkpoint payload truncated in layer " + std::to_string(l.id) + " " +
                                name,
                            bytes.size());
        }
        read_tensor(bytes, offset, *t);
        offset += bytes_needed;
      }
    }
    if (entry != table.size()) throw FormatError("tensor table has extra entries", kPreambleBytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what(), kPreambleBytes);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), kPreambleBytes);
  }
  if (offset != bytes.size()) {
    throw FormatError("trailing bytes after checkpoint payload", offset);
  }
  if (auto v = validate_graph(ck.graph); !v.empty()) {
    throw FormatError("checkpoint architecture is invalid: " + v.front().message, header_end);
  }
  return ck;
}

template <typename T>
void save_checkpoint(const ModelGraph<T>& g, const CheckpointState& state,
                     const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(g, state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(read_file(path));
}

std::string peek_checkpoint_dtype(const std::filesystem::path& path) {
  auto [header, offset] = parse_header(read_file(path));
  try {
    return header.at("dtype").get<std::string>();
  } catch (const json::exception&) {
    throw FormatError("checkpoint header has no dtype", kPreambleBytes);
  }
}

#define SLIMTRAIN_INSTANTIATE_CHECKPOINT(T)                                                         \
  template json architecture_to_json<T>(const ModelGraph<T>&);                                     \
  template ModelGraph<T> architecture_from_json<T>(const json&);                                    \
  template std::vector<std::uint8_t> serialize_checkpoint<T>(const ModelGraph<T>&,                  \
                                                             const CheckpointState&);               \
  template Checkpoint<T> deserialize_checkpoint<T>(const std::vector<std::uint8_t>&);               \
  template void save_checkpoint<T>(const ModelGraph<T>&, const CheckpointState&,                    \
                                   const std::filesystem::path&);                                   \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

SLIMTRAIN_INSTANTIATE_CHECKPOINT(float)
SLIMTRAIN_INSTANTIATE_CHECKPOINT(double)

#undef SLIMTRAIN_INSTANTIATE_CHECKPOINT

}  // namespace slimtrain
