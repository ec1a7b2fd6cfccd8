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

#include "slimtrain/lasso.hpp"

#include <cmath>
#include <string>

namespace slimtrain {
namespace {

template <typename T>
const LayerSpec<T>& checked_layer(const ModelGraph<T>& g, const LassoLayerGroups& lg) {
  const auto* l = g.find(lg.layer_id);
  if (!l || !l->has_weights() || l->weight.rank() < 2 || l->weight.dim(0) != lg.out_groups ||
      l->weight.dim(1) != lg.in_groups) {
    throw ConsistencyError("lasso group index is stale for layer " + std::to_string(lg.layer_id));
  }
  return *l;
}

template <typename T>
void add_layer_subgradient(const Tensor<T>& weight, const LassoLayerGroups& lg, double lambda,
                           Tensor<T>& grad) {
  const GroupNorms norms = weight_group_norms(weight);
  const std::int64_t k_count = weight.dim(0), c_count = weight.dim(1);
  const std::int64_t inner = weight.size() / (k_count * c_count);
  std::vector<double> inv_in(static_cast<std::size_t>(c_count), 0.0);
  for (std::int64_t c = 0; c < c_count; ++c) {
    const double n = norms.in[static_cast<std::size_t>(c)];
    if (lg.regularize_input && n > kGroupNormFloor) inv_in[static_cast<std::size_t>(c)] = 1.0 / n;
  }
  for (std::int64_t k = 0; k < k_count; ++k) {
    const double n = norms.out[static_cast<std::size_t>(k)];
    const double inv_out = (lg.regularize_output && n > kGroupNormFloor) ? 1.0 / n : 0.0;
    for (std::int64_t c = 0; c < c_count; ++c) {
      const double scale = lambda * (inv_out + inv_in[static_cast<std::size_t>(c)]);
      if (scale == 0.0) continue;
      const std::int64_t base = (k * c_count + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        grad[base + i] += static_cast<T>(scale * weight[base + i]);
      }
    }
  }
}

}  // namespace

template <typename T>
LassoGroups build_lasso_groups(const ModelGraph<T>& g, double lambda) {
  LassoGroups groups;
  groups.lambda = lambda;
  const int first = first_conv_id(g);
  for (const auto& l : g.layers) {
    if (!l.has_weights()) continue;
    LassoLayerGroups lg;
    lg.layer_id = l.id;
    lg.out_groups = l.out_channels;
    lg.in_groups = l.in_channels;
    lg.regularize_input = l.id != first;
    lg.regularize_output = l.id != g.head_id;
    groups.layers.push_back(lg);
  }
  return groups;
}

template <typename T>
GroupNorms weight_group_norms(const Tensor<T>& weight) {
  if (weight.rank() < 2) throw DimensionError("group norms need a weight of rank >= 2");
  const std::int64_t k_count = weight.dim(0), c_count = weight.dim(1);
  const std::int64_t inner = k_count * c_count == 0 ? 0 : weight.size() / (k_count * c_count);
  GroupNorms norms;
  norms.out.assign(static_cast<std::size_t>(k_count), 0.0);
  norms.in.assign(static_cast<std::size_t>(c_count), 0.0);
  for (std::int64_t k = 0; k < k_count; ++k) {
    for (std::int64_t c = 0; c < c_count; ++c) {
      double sq = 0.0;
      const T* w = weight.raw() + (k * c_count + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) sq += static_cast<double>(w[i]) * w[i];
      norms.out[static_cast<std::size_t>(k)] += sq;
      norms.in[static_cast<std::size_t>(c)] += sq;
    }
  }
  for (auto& v : norms.out) v = std::sqrt(v);
  for (auto& v : norms.in) v = std::sqrt(v);
  return norms;
}

template <typename T>
double group_lasso_raw_sum(const ModelGraph<T>& g, const LassoGroups& groups) {
  double total = 0.0;
  for (const auto& lg : groups.layers) {
    const auto& l = checked_layer(g, lg);
    const GroupNorms norms = weight_group_norms(l.weight);
    if (lg.regularize_output) {
      for (double n : norms.out) total += n;
    }
    if (lg.regularize_input) {
      for (double n : norms.in) total += n;
    }
  }
  return total;
}

template <typename T>
std::vector<LayerGradient<T>> group_lasso_subgradient(const ModelGraph<T>& g,
                                                      const LassoGroups& groups) {
  std::vector<LayerGradient<T>> out;
  for (const auto& lg : groups.layers) {
    const auto& l = checked_layer(g, lg);
    LayerGradient<T> lgrad{lg.layer_id, Tensor<T>(l.weight.shape())};
    add_layer_subgradient(l.weight, lg, groups.lambda, lgrad.grad);
    out.push_back(std::move(lgrad));
  }
  return out;
}

template <typename T>
void add_group_lasso_subgradient(const ModelGraph<T>& g, const LassoGroups& groups,
                                 std::span<ParamGrads<T>> grads) {
  if (grads.size() != g.layers.size()) throw ConsistencyError("gradient list does not match graph");
  if (groups.lambda == 0.0) return;
  for (const auto& lg : groups.layers) {
    const auto& l = checked_layer(g, lg);
    auto& slot = grads[g.index_of(lg.layer_id)].weight;
    if (slot.empty()) slot = Tensor<T>(l.weight.shape());
    add_layer_subgradient(l.weight, lg, groups.lambda, slot);
  }
}

double compute_penalty_coefficient(double class_loss, double raw_sum, double target_ratio) {
  if (!(class_loss > 0.0)) throw SetupError("penalty setup needs a positive classification loss");
  if (!(raw_sum > 0.0)) throw SetupError("penalty setup needs a positive group-norm sum");
  if (!(target_ratio >= 0.0 && target_ratio < 1.0)) {
    throw SetupError("lasso penalty ratio must lie in [0, 1)");
  }
  return target_ratio * class_loss / ((1.0 - target_ratio) * raw_sum);
}

double lasso_penalty_ratio(double lambda, double class_loss, double raw_sum) {
  const double reg = lambda * raw_sum;
  return reg / (class_loss + reg);
}

#define SLIMTRAIN_INSTANTIATE_LASSO(T)                                                            \
  template LassoGroups build_lasso_groups<T>(const ModelGraph<T>&, double);                       \
  template GroupNorms weight_group_norms<T>(const Tensor<T>&);                                    \
  template double group_lasso_raw_sum<T>(const ModelGraph<T>&, const LassoGroups&);               \
  template std::vector<LayerGradient<T>> group_lasso_subgradient<T>(const ModelGraph<T>&,         \
                                                                    const LassoGroups&);          \
  template void add_group_lasso_subgradient<T>(const ModelGraph<T>&, const LassoGroups&,          \
                                               std::span<ParamGrads<T>>);

SLIMTRAIN_INSTANTIATE_LASSO(float)
SLIMTRAIN_INSTANTIATE_LASSO(double)

#undef SLIMTRAIN_INSTANTIATE_LASSO

}  // namespace slimtrain
