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

#ifndef SLIMTRAIN_NETWORK_HPP_
#define SLIMTRAIN_NETWORK_HPP_

#include <vector>

#include "slimtrain/model_graph.hpp"

namespace slimtrain {

// Activations kept by a training forward pass, indexed like ModelGraph::layers.
template <typename T>
struct ForwardCache {
  Tensor<T> input;
  std::vector<Tensor<T>> outputs;
  std::vector<BatchNormSaved<T>> bn_saved;
};

// Parameter gradients of one layer; tensors are empty for parameter-free layers.
template <typename T>
struct ParamGrads {
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
};

// Training-mode forward: batch statistics, running statistics updated.
template <typename T>
Tensor<T> forward_train(ModelGraph<T>& g, const Tensor<T>& input, ForwardCache<T>& cache);

// Inference-mode forward with running statistics; the graph is not modified.
template <typename T>
Tensor<T> forward_inference(const ModelGraph<T>& g, const Tensor<T>& input);

// Gradients of the loss whose logit gradient is `grad_logits`, one entry per layer.
template <typename T>
std::vector<ParamGrads<T>> backward(const ModelGraph<T>& g, const ForwardCache<T>& cache,
                                    const Tensor<T>& grad_logits);

}  // namespace slimtrain

#endif  // SLIMTRAIN_NETWORK_HPP_
