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

#include "slimtrain/cost.hpp"

#include <string>
#include <unordered_map>

#include "slimtrain/checkpoint.hpp"

namespace slimtrain {
namespace {

using nlohmann::json;

template <typename T>
CostReport layer_costs(const ModelGraph<T>& g, std::span<const LayerDims> dims, int batch,
                       int bytes_per_elem, std::string mode) {
  if (batch < 0) throw ConfigError("batch must be non-negative");
  if (bytes_per_elem < 1) throw ConfigError("bytes per element must be positive");
  const auto shapes = infer_activation_shapes(g);
  std::unordered_map<int, std::size_t> position;
  for (std::size_t i = 0; i < g.layers.size(); ++i) position[g.layers[i].id] = i;
  auto spatial_in = [&](const LayerSpec<T>& l) -> std::int64_t {
    const int src = l.inputs.at(0);
    if (src == kGraphInput) return g.input_shape[1] * g.input_shape[2];
    const auto& s = shapes[position.at(src)];
    return s[1] * s[2];
  };

  CostReport r;
  r.mode = std::move(mode);
  r.batch = batch;
  r.bytes_per_elem = bytes_per_elem;
  const std::int64_t n = batch;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    const std::int64_t in = dims[i].in, out = dims[i].out;
    const std::int64_t hw_out = shapes[i][1] * shapes[i][2];
    const std::int64_t out_elems = out * hw_out * n;
    LayerCost c{l.id, l.kind, dims[i].in, dims[i].out, 0, 0, 0, 0};
    switch (l.kind) {
      case LayerKind::kConv:
        c.inference_flops = 2 * out * in * l.kernel * l.kernel * hw_out * n;
        c.training_flops = 3 * c.inference_flops;
        c.params = out * in * l.kernel * l.kernel;
        break;
      case LayerKind::kLinear:
        c.inference_flops = 2 * out * in * n;
        c.training_flops = 3 * c.inference_flops;
        c.params = out * in + out;
        break;
      case LayerKind::kBatchNorm:
        c.inference_flops = kBatchNormFlopsPerElement * out_elems;
        c.training_flops = 3 * c.inference_flops;
        c.bn_traffic_bytes = (kBatchNormForwardPasses + kBatchNormBackwardPasses) * out_elems * bytes_per_elem;
        c.params = 2 * out;
        break;
      case LayerKind::kRelu:
      case LayerKind::kAdd:
        c.inference_flops = out_elems;
        c.training_flops = 2 * c.inference_flops;
        break;
      case LayerKind::kAvgPool:
        c.inference_flops = in * spatial_in(l) * n;
        c.training_flops = 2 * c.inference_flops;
        break;
    }
    r.inference_flops += c.inference_flops;
    r.training_flops += c.training_flops;
    r.bn_traffic_bytes += c.bn_traffic_bytes;
    r.params += c.params;
    r.layers.push_back(c);
  }
  return r;
}

json masks_to_json(const std::vector<ChannelMask>& masks) {
  json out = json::array();
  for (const auto& m : masks) {
    out.push_back({{"layer", m.layer_id},
                   {"direction", m.direction == MaskDirection::kOutput ? "out" : "in"},
                   {"zeroed", m.zeroed}});
  }
  return out;
}

std::vector<ChannelMask> masks_from_json(const json& j) {
  std::vector<ChannelMask> out;
  for (const auto& jm : j) {
    ChannelMask m;
    m.layer_id = jm.at("layer").get<int>();
    const auto dir = jm.at("direction").get<std::string>();
    if (dir != "in" && dir != "out") throw ConfigError("mask direction must be \"in\" or \"out\", got \"" + dir + "\"");
    m.direction = dir == "out" ? MaskDirection::kOutput : MaskDirection::kInput;
    m.zeroed = jm.at("zeroed").get<std::vector<bool>>();
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

template <typename T>
CostReport count_flops(const ModelGraph<T>& g, int batch, int bytes_per_elem) {
  std::vector<LayerDims> dims;
  for (const auto& l : g.layers) dims.push_back({l.in_channels, l.out_channels});
  return layer_costs(g, dims, batch, bytes_per_elem, "dense");
}

template <typename T>
CostReport count_flops(const ModelGraph<T>& g, const PrunePlan& plan, int batch, int bytes_per_elem) {
  const auto dims = planned_layer_dims(g, plan);
  return layer_costs(g, dims, batch, bytes_per_elem, plan_mode_name(plan.mode));
}

template <typename T>
std::int64_t flops_per_iteration(const ModelGraph<T>& g, CostMode mode, int batch) {
  return count_flops(g, batch).flops(mode);
}

template <typename T>
std::int64_t bn_memory_traffic(const ModelGraph<T>& g, int batch, int bytes_per_elem) {
  return count_flops(g, batch, bytes_per_elem).bn_traffic_bytes;
}

double allreduce_bytes_per_update(std::int64_t param_count, int devices, int bytes_per_elem) {
  if (devices < 1) throw ConfigError("device count must be at least 1");
  if (param_count < 0 || bytes_per_elem < 1) throw ConfigError("parameter count and element size must be positive");
  const double total = 2.0 * static_cast<double>(devices - 1) * static_cast<double>(param_count) *
                       static_cast<double>(bytes_per_elem);
  return total / devices;
}

double allreduce_cost(std::int64_t param_count, int devices, std::int64_t updates, int bytes_per_elem) {
  return allreduce_bytes_per_update(param_count, devices, bytes_per_elem) * static_cast<double>(updates);
}

std::int64_t updates_per_epoch(std::int64_t samples, int batch) {
  if (batch < 1) throw ConfigError("batch must be positive");
  return (samples + batch - 1) / batch;
}

void with_communication(CostReport& report, int devices, std::int64_t samples_per_epoch) {
  report.devices = devices;
  report.samples_per_epoch = samples_per_epoch;
  report.updates_per_epoch = updates_per_epoch(samples_per_epoch, report.batch);
  report.comm_bytes_per_epoch =
      allreduce_cost(report.params, devices, report.updates_per_epoch, report.bytes_per_elem);
}

json cost_report_to_json(const CostReport& r) {
  json layers = json::array();
  for (const auto& c : r.layers) {
    layers.push_back({{"layer", c.layer_id},
                      {"kind", std::string(layer_kind_name(c.kind))},
                      {"in_channels", c.in_channels},
                      {"out_channels", c.out_channels},
                      {"inference_flops", c.inference_flops},
                      {"training_flops", c.training_flops},
                      {"bn_traffic_bytes", c.bn_traffic_bytes},
                      {"params", c.params}});
  }
  return {{"mode", r.mode},
          {"batch", r.batch},
          {"bytes_per_elem", r.bytes_per_elem},
          {"layers", std::move(layers)},
          {"totals",
           {{"inference_flops", r.inference_flops},
            {"training_flops", r.training_flops},
            {"bn_traffic_bytes", r.bn_traffic_bytes},
            {"params", r.params}}},
          {"per_epoch",
           {{"devices", r.devices},
            {"samples", r.samples_per_epoch},
            {"updates", r.updates_per_epoch},
            {"comm_bytes_per_device", r.comm_bytes_per_epoch}}}};
}

json trajectory_to_json(const Trajectory& t) {
  json epochs = json::array();
  for (const auto& s : t.epochs) epochs.push_back({{"epoch", s.epoch}, {"masks", masks_to_json(s.masks)}});
  return {{"architecture", t.architecture},
          {"interval", t.interval},
          {"samples_per_epoch", t.samples_per_epoch},
          {"epochs", std::move(epochs)}};
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  try {
    t.architecture = j.at("architecture");
    t.interval = j.at("interval").get<int>();
    t.samples_per_epoch = j.at("samples_per_epoch").get<std::int64_t>();
    for (const auto& je : j.at("epochs")) {
      t.epochs.push_back({je.at("epoch").get<int>(), masks_from_json(je.at("masks"))});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed trajectory: ") + e.what());
  }
  return t;
}

CompareTable compare_one_time_vs_periodic(const Trajectory& t, int interval) {
  if (interval < 1) throw ConfigError("interval must be at least 1");
  const auto g0 = architecture_from_json<float>(t.architecture);
  const int epochs = static_cast<int>(t.epochs.size());
  const auto samples = static_cast<double>(t.samples_per_epoch);
  const auto dense = static_cast<double>(count_flops(g0, 1).training_flops);

  // Per-sample training FLOPs once the masks recorded after epoch `e` are applied.
  std::unordered_map<int, double> masked_cache;
  auto masked = [&](int e) {
    if (e < 0) return dense;
    auto it = masked_cache.find(e);
    if (it != masked_cache.end()) return it->second;
    const auto plan = plan_reconfiguration(t.epochs.at(static_cast<std::size_t>(e)).masks, g0);
    const auto v = static_cast<double>(count_flops(g0, plan, 1).training_flops);
    masked_cache.emplace(e, v);
    return v;
  };

  CompareTable table;
  table.interval = interval;
  table.dense_flops = dense * samples * epochs;
  for (int ep = 0; ep < epochs; ++ep) table.periodic_flops += masked((ep / interval) * interval - 1) * samples;
  for (int e = 0; e <= epochs; e += interval) {
    CompareRow row;
    row.epoch = e;
    for (int ep = 0; ep < epochs; ++ep) row.one_time_flops += (ep < e ? dense : masked(e - 1)) * samples;
    row.ratio = table.periodic_flops > 0.0 ? row.one_time_flops / table.periodic_flops : 1.0;
    table.rows.push_back(row);
  }
  if (table.rows.empty() || table.rows.back().epoch != epochs) {
    CompareRow row{epochs, table.dense_flops, table.periodic_flops > 0.0 ? table.dense_flops / table.periodic_flops : 1.0};
    table.rows.push_back(row);
  }
  return table;
}

json compare_table_to_json(const CompareTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"epoch", r.epoch}, {"one_time_flops", r.one_time_flops}, {"ratio", r.ratio}});
  }
  return {{"interval", table.interval},
          {"dense_flops", table.dense_flops},
          {"periodic_flops", table.periodic_flops},
          {"rows", std::move(rows)}};
}

#define SLIMTRAIN_INSTANTIATE_COST(T)                                                             \
  template CostReport count_flops<T>(const ModelGraph<T>&, int, int);                             \
  template CostReport count_flops<T>(const ModelGraph<T>&, const PrunePlan&, int, int);           \
  template std::int64_t flops_per_iteration<T>(const ModelGraph<T>&, CostMode, int);              \
  template std::int64_t bn_memory_traffic<T>(const ModelGraph<T>&, int, int);

SLIMTRAIN_INSTANTIATE_COST(float)
SLIMTRAIN_INSTANTIATE_COST(double)

#undef SLIMTRAIN_INSTANTIATE_COST

}  // namespace slimtrain
