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

// Channel-wise group lasso.
//
// Every conv/linear weight W (K, C, ...) is covered by two families of groups:
// output groups W[k, :, ...] and input groups W[:, c, ...]. Each weight
// therefore sits in exactly two groups. The input groups of the first conv
// and the output groups of the classifier head are excluded. A single global
// coefficient lambda scales the whole penalty:
//
//   penalty = lambda * sum over groups of ||W_group||_2
//
// lambda is solved once from the penalty ratio r = lambda S / (l + lambda S)
// at the first iteration.

#ifndef SLIMTRAIN_LASSO_HPP_
#define SLIMTRAIN_LASSO_HPP_

#include <span>
#include <vector>

#include "slimtrain/model_graph.hpp"
#include "slimtrain/network.hpp"

namespace slimtrain {

// Group norms at or below this are treated as zero by the subgradient.
inline constexpr double kGroupNormFloor = 1e-12;

struct LassoLayerGroups {
  int layer_id = 0;
  int out_groups = 0;  // K
  int in_groups = 0;   // C
  bool regularize_output = true;
  bool regularize_input = true;
};

struct LassoGroups {
  double lambda = 0.0;
  std::vector<LassoLayerGroups> layers;
};

template <typename T>
LassoGroups build_lasso_groups(const ModelGraph<T>& g, double lambda = 0.0);

// Per-group L2 norms of one layer, computed in double.
struct GroupNorms {
  std::vector<double> out;  // length K
  std::vector<double> in;   // length C
};

template <typename T>
GroupNorms weight_group_norms(const Tensor<T>& weight);

// S = sum of all regularized group norms (lambda not applied).
template <typename T>
double group_lasso_raw_sum(const ModelGraph<T>& g, const LassoGroups& groups);

template <typename T>
struct LayerGradient {
  int layer_id = 0;
  Tensor<T> grad;
};

// Subgradient of lambda * S for every regularized layer. A group with norm
// <= kGroupNormFloor contributes nothing; the two groups of a weight sum.
template <typename T>
std::vector<LayerGradient<T>> group_lasso_subgradient(const ModelGraph<T>& g,
                                                      const LassoGroups& groups);

// Same subgradient added in place into per-layer gradients indexed like g.layers.
template <typename T>
void add_group_lasso_subgradient(const ModelGraph<T>& g, const LassoGroups& groups,
                                 std::span<ParamGrads<T>> grads);

// lambda = r l0 / ((1 - r) S0). Requires l0 > 0, S0 > 0, 0 <= r < 1.
double compute_penalty_coefficient(double class_loss, double raw_sum, double target_ratio);

// lambda S / (l + lambda S).
double lasso_penalty_ratio(double lambda, double class_loss, double raw_sum);

}  // namespace slimtrain

#endif  // SLIMTRAIN_LASSO_HPP_
