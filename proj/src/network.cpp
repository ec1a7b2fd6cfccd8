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

#include "slimtrain/network.hpp"

#include <unordered_map>

namespace slimtrain {
namespace {

template <typename T>
Tensor<T> as_matrix(const Tensor<T>& x) {
  if (x.rank() == 2) return x;
  if (x.rank() == 4 && x.dim(2) == 1 && x.dim(3) == 1) return x.reshaped({x.dim(0), x.dim(1)});
  throw DimensionError("linear layer input must be (N, D), got " + shape_string(x.shape()));
}

template <typename T>
void accumulate(Tensor<T>& slot, Tensor<T>&& grad) {
  if (slot.empty()) {
    slot = std::move(grad);
    return;
  }
  if (slot.shape() != grad.shape()) throw InternalError("gradient shape mismatch while accumulating");
  for (std::int64_t i = 0; i < slot.size(); ++i) slot[i] += grad[i];
}

// Runs the graph. `cache` non-null means training mode.
template <typename T>
Tensor<T> run_forward(const ModelGraph<T>& g, std::vector<BatchNormState<T>*>* bn_states,
                      const Tensor<T>& input, ForwardCache<T>* cache) {
  if (input.rank() != 4 || input.dim(1) != g.input_shape[0] || input.dim(2) != g.input_shape[1] ||
      input.dim(3) != g.input_shape[2]) {
    throw DimensionError("network input " + shape_string(input.shape()) +
                         " does not match graph input shape");
  }
  const bool training = cache != nullptr;
  const std::size_t count = g.layers.size();
  std::unordered_map<int, std::size_t> position;
  std::vector<int> uses(count, 0);
  for (std::size_t i = 0; i < count; ++i) {
    position[g.layers[i].id] = i;
    for (int src : g.layers[i].inputs) {
      if (src != kGraphInput) ++uses[position.at(src)];
    }
  }
  std::vector<Tensor<T>> local;
  std::vector<Tensor<T>>& outputs = training ? cache->outputs : local;
  outputs.assign(count, Tensor<T>());
  if (training) {
    cache->input = input;
    cache->bn_saved.assign(count, BatchNormSaved<T>());
  }
  auto fetch = [&](int src) -> const Tensor<T>& {
    return src == kGraphInput ? input : outputs[position.at(src)];
  };
  auto release = [&](int src) {
    if (training || src == kGraphInput) return;
    const std::size_t p = position.at(src);
    if (--uses[p] == 0) outputs[p] = Tensor<T>();
  };

  for (std::size_t i = 0; i < count; ++i) {
    const auto& l = g.layers[i];
    const Tensor<T>& x = fetch(l.inputs.at(0));
    Tensor<T> y;
    switch (l.kind) {
      case LayerKind::kConv:
        y = conv2d_forward(x, l.weight, l.stride, l.pad);
        break;
      case LayerKind::kBatchNorm:
        if (training) {
          auto r = batchnorm_forward(x, *(*bn_states)[i], true);
          y = std::move(r.output);
          cache->bn_saved[i] = std::move(r.saved);
        } else {
          y = batchnorm_inference(x, l.bn);
        }
        break;
      case LayerKind::kRelu:
        y = relu_forward(x);
        break;
      case LayerKind::kAvgPool:
        y = l.kernel == 0 ? global_avgpool_forward(x) : avgpool2d_forward(x, l.kernel);
        break;
      case LayerKind::kLinear:
        y = linear_forward(as_matrix(x), l.weight, l.bias);
        break;
      case LayerKind::kAdd:
        y = add_forward(x, fetch(l.inputs.at(1)));
        break;
    }
    outputs[i] = std::move(y);
    for (int src : l.inputs) release(src);
  }
  const std::size_t head = position.at(g.head_id);
  return training ? outputs[head] : std::move(outputs[head]);
}

}  // namespace

template <typename T>
Tensor<T> forward_train(ModelGraph<T>& g, const Tensor<T>& input, ForwardCache<T>& cache) {
  std::vector<BatchNormState<T>*> states(g.layers.size(), nullptr);
  for (std::size_t i = 0; i < g.layers.size(); ++i) states[i] = &g.layers[i].bn;
  return run_forward(g, &states, input, &cache);
}

template <typename T>
Tensor<T> forward_inference(const ModelGraph<T>& g, const Tensor<T>& input) {
  return run_forward<T>(g, nullptr, input, nullptr);
}

template <typename T>
std::vector<ParamGrads<T>> backward(const ModelGraph<T>& g, const ForwardCache<T>& cache,
                                    const Tensor<T>& grad_logits) {
  const std::size_t count = g.layers.size();
  if (cache.outputs.size() != count) throw ConsistencyError("forward cache does not match graph");
  std::unordered_map<int, std::size_t> position;
  for (std::size_t i = 0; i < count; ++i) position[g.layers[i].id] = i;
  auto fetch = [&](int src) -> const Tensor<T>& {
    return src == kGraphInput ? cache.input : cache.outputs[position.at(src)];
  };

  std::vector<ParamGrads<T>> params(count);
  std::vector<Tensor<T>> grad(count);
  const std::size_t head = position.at(g.head_id);
  if (grad_logits.shape() != cache.outputs[head].shape()) {
    throw DimensionError("grad_logits shape " + shape_string(grad_logits.shape()) +
                         " does not match logits");
  }
  grad[head] = grad_logits;

  auto send = [&](int src, Tensor<T>&& g_in) {
    if (src == kGraphInput) return;
    accumulate(grad[position.at(src)], std::move(g_in));
  };

  for (std::size_t i = count; i-- > 0;) {
    if (grad[i].empty()) continue;
    const auto& l = g.layers[i];
    Tensor<T> gy = std::move(grad[i]);
    const Tensor<T>& x = fetch(l.inputs.at(0));
    switch (l.kind) {
      case LayerKind::kConv: {
        const bool need_input = l.inputs[0] != kGraphInput;
        auto r = conv2d_backward(x, l.weight, gy, l.stride, l.pad, need_input);
        params[i].weight = std::move(r.grad_weights);
        if (need_input) send(l.inputs[0], std::move(r.grad_input));
        break;
      }
      case LayerKind::kBatchNorm: {
        auto r = batchnorm_backward(cache.bn_saved[i], l.bn, gy);
        params[i].gamma = std::move(r.grad_gamma);
        params[i].beta = std::move(r.grad_beta);
        send(l.inputs[0], std::move(r.grad_input));
        break;
      }
      case LayerKind::kRelu:
        send(l.inputs[0], relu_backward(x, gy));
        break;
      case LayerKind::kAvgPool:
        send(l.inputs[0], l.kernel == 0 ? global_avgpool_backward(x.shape(), gy)
                                        : avgpool2d_backward(x.shape(), gy, l.kernel));
        break;
      case LayerKind::kLinear: {
        auto r = linear_backward(as_matrix(x), l.weight, gy);
        params[i].weight = std::move(r.grad_weights);
        params[i].bias = std::move(r.grad_bias);
        send(l.inputs[0], r.grad_input.reshaped(x.shape()));
        break;
      }
      case LayerKind::kAdd: {
        Tensor<T> copy = gy;
        send(l.inputs[0], std::move(gy));
        send(l.inputs[1], std::move(copy));
        break;
      }
    }
  }
  return params;
}

#define SLIMTRAIN_INSTANTIATE_NETWORK(T)                                                     \
  template Tensor<T> forward_train<T>(ModelGraph<T>&, const Tensor<T>&, ForwardCache<T>&);   \
  template Tensor<T> forward_inference<T>(const ModelGraph<T>&, const Tensor<T>&);           \
  template std::vector<ParamGrads<T>> backward<T>(const ModelGraph<T>&, const ForwardCache<T>&, \
                                                  const Tensor<T>&);

SLIMTRAIN_INSTANTIATE_NETWORK(float)
SLIMTRAIN_INSTANTIATE_NETWORK(double)

#undef SLIMTRAIN_INSTANTIATE_NETWORK

}  // namespace slimtrain
