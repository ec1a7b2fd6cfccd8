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

// Forward/backward kernels for the layers of the toy CNNs plus the SGD
// momentum update. All kernels are single-threaded and deterministic.
// Reductions (batch-norm statistics, pooling, losses) accumulate in double;
// the im2col GEMMs accumulate in the storage type.
//
// Instantiated for float and double.

#ifndef SLIMTRAIN_KERNELS_HPP_
#define SLIMTRAIN_KERNELS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "slimtrain/tensor.hpp"

namespace slimtrain {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding).

// Output extent along one spatial axis; throws ConfigError when it is < 1.
std::int64_t conv_output_extent(std::int64_t in, int kernel, int stride, int pad);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, int stride, int pad);

template <typename T>
struct ConvGrads {
  Tensor<T> grad_input;  // empty when not requested
  Tensor<T> grad_weights;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& grad_out, int stride, int pad,
                             bool need_grad_input = true);

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel.

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double epsilon = kBatchNormEpsilon;
  double momentum = kBatchNormMomentum;

  // gamma = 1, beta = 0, running statistics (0, 1).
  static BatchNormState identity(std::int64_t channels) {
    BatchNormState s;
    s.gamma = Tensor<T>({channels}, T(1));
    s.beta = Tensor<T>({channels}, T(0));
    s.running_mean = Tensor<T>({channels}, T(0));
    s.running_var = Tensor<T>({channels}, T(1));
    return s;
  }

  std::int64_t channels() const { return gamma.size(); }
};

// What the backward pass needs from the forward pass.
template <typename T>
struct BatchNormSaved {
  Tensor<T> xhat;               // normalized input
  std::vector<double> inv_std;  // per channel
  bool training = true;
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  BatchNormSaved<T> saved;
};

// Training mode normalizes with batch statistics and folds them into the
// running statistics (running <- (1-m) running + m batch, biased variance).
// Inference mode normalizes with the running statistics.
template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, BatchNormState<T>& state,
                                     bool training);

// Inference-only entry point that leaves the state untouched.
template <typename T>
Tensor<T> batchnorm_inference(const Tensor<T>& input, const BatchNormState<T>& state);

template <typename T>
struct BatchNormGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_gamma;
  Tensor<T> grad_beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormSaved<T>& saved, const BatchNormState<T>& state,
                                     const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Elementwise and pooling.

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

// Subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

// (N, C, H, W) -> (N, C).
template <typename T>
Tensor<T> global_avgpool_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avgpool_backward(const Shape& input_shape, const Tensor<T>& grad_out);

// Non-overlapping window x window average pooling; H and W must be divisible.
template <typename T>
Tensor<T> avgpool2d_forward(const Tensor<T>& input, int window);

template <typename T>
Tensor<T> avgpool2d_backward(const Shape& input_shape, const Tensor<T>& grad_out, int window);

template <typename T>
Tensor<T> add_forward(const Tensor<T>& a, const Tensor<T>& b);

// ---------------------------------------------------------------------------
// Fully connected.

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_weights;
  Tensor<T> grad_bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weights,
                               const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Loss and optimizer.

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad_logits;
};

// Mean over the batch of -log softmax(logits)[label]; grad = (softmax - onehot) / N.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// v <- coef * v + g;  w <- w - lr * v.
template <typename T>
void sgd_momentum_step(std::span<T> weights, std::span<const T> grads, std::span<T> momentum,
                       double lr, double momentum_coef);

}  // namespace slimtrain

#endif  // SLIMTRAIN_KERNELS_HPP_
