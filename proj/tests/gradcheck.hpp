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

// Random-instance gradient checks shared by the unit and acceptance tests.
// Each function draws one small instance, compares every analytic gradient of
// the kernel against central differences and returns the worst relative error.

#ifndef SLIMTRAIN_TESTS_GRADCHECK_HPP_
#define SLIMTRAIN_TESTS_GRADCHECK_HPP_

#include <algorithm>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "slimtrain/kernels.hpp"
#include "slimtrain/lasso.hpp"
#include "slimtrain/model_graph.hpp"

namespace gradcheck {

using slimtrain::Tensor;

inline int pick(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double conv(std::mt19937_64& rng) {
  const int n = pick(rng, 1, 2), c = pick(rng, 1, 3), k = pick(rng, 1, 3);
  const int kernel = pick(rng, 0, 1) ? 3 : 1, stride = pick(rng, 1, 2), pad = kernel == 3 ? pick(rng, 0, 1) : 0;
  const int h = pick(rng, kernel, 6), w = pick(rng, kernel, 6);
  auto x = oracle::random_tensor<double>({n, c, h, w}, rng);
  auto wt = oracle::random_tensor<double>({k, c, kernel, kernel}, rng);
  const auto y = slimtrain::conv2d_forward(x, wt, stride, pad);
  const auto r = oracle::random_tensor<double>(y.shape(), rng);
  auto loss = [&] { return oracle::weighted_sum(slimtrain::conv2d_forward(x, wt, stride, pad), r); };
  const auto grads = slimtrain::conv2d_backward(x, wt, r, stride, pad);
  return std::max(oracle::relative_error(grads.grad_input, oracle::finite_difference(x, loss)),
                  oracle::relative_error(grads.grad_weights, oracle::finite_difference(wt, loss)));
}

inline double batchnorm(std::mt19937_64& rng) {
  const int n = pick(rng, 2, 3), c = pick(rng, 1, 3), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
  auto x = oracle::random_tensor<double>({n, c, h, w}, rng);
  auto state = slimtrain::BatchNormState<double>::identity(c);
  state.gamma = oracle::random_tensor<double>({c}, rng);
  state.beta = oracle::random_tensor<double>({c}, rng);
  const auto r = oracle::random_tensor<double>(x.shape(), rng);
  auto loss = [&] {
    auto s = state;
    return oracle::weighted_sum(slimtrain::batchnorm_forward(x, s, true).output, r);
  };
  auto s = state;
  const auto fwd = slimtrain::batchnorm_forward(x, s, true);
  const auto grads = slimtrain::batchnorm_backward(fwd.saved, state, r);
  double err = oracle::relative_error(grads.grad_input, oracle::finite_difference(x, loss));
  err = std::max(err, oracle::relative_error(grads.grad_gamma, oracle::finite_difference(state.gamma, loss)));
  return std::max(err, oracle::relative_error(grads.grad_beta, oracle::finite_difference(state.beta, loss)));
}

inline double linear(std::mt19937_64& rng) {
  const int n = pick(rng, 1, 4), d = pick(rng, 1, 6), m = pick(rng, 1, 5);
  auto x = oracle::random_tensor<double>({n, d}, rng);
  auto w = oracle::random_tensor<double>({m, d}, rng);
  auto b = oracle::random_tensor<double>({m}, rng);
  const auto r = oracle::random_tensor<double>({n, m}, rng);
  auto loss = [&] { return oracle::weighted_sum(slimtrain::linear_forward(x, w, b), r); };
  const auto grads = slimtrain::linear_backward(x, w, r);
  double err = oracle::relative_error(grads.grad_input, oracle::finite_difference(x, loss));
  err = std::max(err, oracle::relative_error(grads.grad_weights, oracle::finite_difference(w, loss)));
  return std::max(err, oracle::relative_error(grads.grad_bias, oracle::finite_difference(b, loss)));
}

inline double pooling(std::mt19937_64& rng) {
  const int n = pick(rng, 1, 2), c = pick(rng, 1, 3), window = pick(rng, 1, 2);
  const int h = window * pick(rng, 1, 3), w = window * pick(rng, 1, 3);
  auto x = oracle::random_tensor<double>({n, c, h, w}, rng);
  const bool global = pick(rng, 0, 1) == 1;
  auto forward = [&] {
    return global ? slimtrain::global_avgpool_forward(x) : slimtrain::avgpool2d_forward(x, window);
  };
  const auto r = oracle::random_tensor<double>(forward().shape(), rng);
  auto loss = [&] { return oracle::weighted_sum(forward(), r); };
  const auto grad = global ? slimtrain::global_avgpool_backward(x.shape(), r)
                           : slimtrain::avgpool2d_backward(x.shape(), r, window);
  return oracle::relative_error(grad, oracle::finite_difference(x, loss));
}

inline double cross_entropy(std::mt19937_64& rng) {
  const int n = pick(rng, 1, 5), classes = pick(rng, 2, 6);
  auto logits = oracle::random_tensor<double>({n, classes}, rng, 2.0);
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) labels.push_back(pick(rng, 0, classes - 1));
  auto loss = [&] { return slimtrain::softmax_cross_entropy(logits, labels).loss; };
  const auto grad = slimtrain::softmax_cross_entropy(logits, labels).grad_logits;
  return oracle::relative_error(grad, oracle::finite_difference(logits, loss));
}

inline double relu(std::mt19937_64& rng) {
  auto x = oracle::random_tensor<double>({2, pick(rng, 1, 3), 3, 3}, rng);
  for (auto& v : x.data()) v += v >= 0 ? 0.05 : -0.05;  // keep clear of the kink
  const auto r = oracle::random_tensor<double>(x.shape(), rng);
  auto loss = [&] { return oracle::weighted_sum(slimtrain::relu_forward(x), r); };
  return oracle::relative_error(slimtrain::relu_backward(x, r), oracle::finite_difference(x, loss));
}

// Subgradient of lambda * (sum of group norms) on a small random network;
// every group norm is nonzero so the penalty is differentiable.
inline double lasso(std::mt19937_64& rng) {
  const slimtrain::StageConfig stages[] = {{1, pick(rng, 1, 3)}, {1, pick(rng, 2, 4)}};
  auto g = slimtrain::build_toy_resnet<double>(stages, {2, 4, 4}, 3, rng());
  const double lambda = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
  const auto groups = slimtrain::build_lasso_groups(g, lambda);
  const auto sub = slimtrain::group_lasso_subgradient(g, groups);
  double err = 0.0;
  for (const auto& lg : sub) {
    auto& w = g.layer(lg.layer_id).weight;
    auto penalty = [&] { return lambda * slimtrain::group_lasso_raw_sum(g, groups); };
    err = std::max(err, oracle::relative_error(lg.grad, oracle::finite_difference(w, penalty)));
  }
  return err;
}

}  // namespace gradcheck

#endif  // SLIMTRAIN_TESTS_GRADCHECK_HPP_
