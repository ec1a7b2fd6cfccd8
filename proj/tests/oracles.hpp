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

// Independent reference implementations used by the tests. Nothing here calls
// into the library kernels being checked.

#ifndef SLIMTRAIN_TESTS_ORACLES_HPP_
#define SLIMTRAIN_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "slimtrain/model_graph.hpp"
#include "slimtrain/tensor.hpp"

namespace oracle {

using slimtrain::Shape;
using slimtrain::Tensor;

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

// Direct seven-loop convolution, zero padding, cross-correlation.
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, int stride, int pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto k = w.dim(0), r = w.dim(2), s = w.dim(3);
  const auto oh = (h + 2 * pad - r) / stride + 1, ow = (wd + 2 * pad - s) / stride + 1;
  Tensor<double> y({n, k, oh, ow});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ko = 0; ko < k; ++ko)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t ry = 0; ry < r; ++ry)
              for (std::int64_t sx = 0; sx < s; ++sx) {
                const auto iy = oy * stride + ry - pad, ix = ox * stride + sx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at(b, ci, iy, ix) * w.at(ko, ci, ry, sx);
              }
          y.at(b, ko, oy, ox) = acc;
        }
  return y;
}

// Central differences of a scalar function with respect to every element of `x`.
inline Tensor<double> finite_difference(Tensor<double>& x, const std::function<double()>& f, double h = 1e-5) {
  Tensor<double> grad(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& weights) {
  double s = 0.0;
  for (std::int64_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
  return s;
}

// Step-by-step ring allreduce over `devices` ranks holding `elements` values
// each, split into `devices` contiguous segments. Returns the bytes each rank
// sends; also checks that every rank ends with the full sum.
struct RingResult {
  std::vector<std::int64_t> bytes_sent;
  bool sums_correct = true;
};

inline RingResult simulate_ring_allreduce(std::int64_t elements, int devices, int bytes_per_elem) {
  RingResult out;
  out.bytes_sent.assign(static_cast<std::size_t>(devices), 0);
  if (devices == 1) return out;
  std::vector<std::int64_t> seg_begin(static_cast<std::size_t>(devices) + 1);
  for (int i = 0; i <= devices; ++i) seg_begin[static_cast<std::size_t>(i)] = elements * i / devices;
  auto seg_len = [&](int s) { return seg_begin[static_cast<std::size_t>(s) + 1] - seg_begin[static_cast<std::size_t>(s)]; };
  // Values are tracked only when small enough to simulate cheaply.
  const bool track = elements <= 4096;
  std::vector<std::vector<double>> data;
  if (track) {
    for (int d = 0; d < devices; ++d) {
      std::vector<double> v(static_cast<std::size_t>(elements));
      for (std::int64_t e = 0; e < elements; ++e) v[static_cast<std::size_t>(e)] = static_cast<double>(d + 1) * (e + 1);
      data.push_back(std::move(v));
    }
  }
  auto mod = [devices](int v) { return ((v % devices) + devices) % devices; };
  // Reduce-scatter: at step t rank d sends segment (d - t) to rank d + 1, which accumulates.
  for (int t = 0; t < devices - 1; ++t) {
    std::vector<std::vector<double>> snapshot = data;
    for (int d = 0; d < devices; ++d) {
      const int seg = mod(d - t);
      out.bytes_sent[static_cast<std::size_t>(d)] += seg_len(seg) * bytes_per_elem;
      if (!track) continue;
      auto& dst = data[static_cast<std::size_t>(mod(d + 1))];
      for (auto e = seg_begin[static_cast<std::size_t>(seg)]; e < seg_begin[static_cast<std::size_t>(seg) + 1]; ++e) {
        dst[static_cast<std::size_t>(e)] += snapshot[static_cast<std::size_t>(d)][static_cast<std::size_t>(e)];
      }
    }
  }
  // All-gather: rank d now owns segment (d + 1); at step t it forwards segment (d + 1 - t).
  for (int t = 0; t < devices - 1; ++t) {
    std::vector<std::vector<double>> snapshot = data;
    for (int d = 0; d < devices; ++d) {
      const int seg = mod(d + 1 - t);
      out.bytes_sent[static_cast<std::size_t>(d)] += seg_len(seg) * bytes_per_elem;
      if (!track) continue;
      auto& dst = data[static_cast<std::size_t>(mod(d + 1))];
      for (auto e = seg_begin[static_cast<std::size_t>(seg)]; e < seg_begin[static_cast<std::size_t>(seg) + 1]; ++e) {
        dst[static_cast<std::size_t>(e)] = snapshot[static_cast<std::size_t>(d)][static_cast<std::size_t>(e)];
      }
    }
  }
  if (track) {
    const double factor = devices * (devices + 1) / 2.0;
    for (const auto& v : data)
      for (std::int64_t e = 0; e < elements; ++e)
        if (v[static_cast<std::size_t>(e)] != factor * (e + 1)) out.sums_correct = false;
  }
  return out;
}

// Mean bytes per rank of the simulated ring.
inline double simulated_ring_bytes_per_device(std::int64_t elements, int devices, int bytes_per_elem) {
  const auto r = simulate_ring_allreduce(elements, devices, bytes_per_elem);
  std::int64_t total = 0;
  for (auto b : r.bytes_sent) total += b;
  return static_cast<double>(total) / devices;
}

// Per-layer FLOPs recomputed from first principles: walks the graph with its
// own spatial bookkeeping instead of the library's shape inference.
struct FlopTotals {
  std::int64_t inference = 0;
  std::int64_t training = 0;
  std::int64_t params = 0;
};

template <typename T>
FlopTotals enumerate_flops(const slimtrain::ModelGraph<T>& g, std::int64_t batch, int bn_flops_per_elem) {
  using slimtrain::LayerKind;
  struct Act {
    std::int64_t c, h, w;
  };
  std::vector<std::pair<int, Act>> acts;
  auto act_of = [&](int id) -> Act {
    if (id == slimtrain::kGraphInput) return {g.input_shape[0], g.input_shape[1], g.input_shape[2]};
    for (const auto& [lid, a] : acts)
      if (lid == id) return a;
    return {0, 0, 0};
  };
  FlopTotals t;
  for (const auto& l : g.layers) {
    const Act in = act_of(l.inputs.at(0));
    Act out = in;
    std::int64_t f = 0, train_factor = 2;
    switch (l.kind) {
      case LayerKind::kConv: {
        out = {l.out_channels, (in.h + 2 * l.pad - l.kernel) / l.stride + 1, (in.w + 2 * l.pad - l.kernel) / l.stride + 1};
        f = 2LL * l.out_channels * l.in_channels * l.kernel * l.kernel * out.h * out.w * batch;
        train_factor = 3;
        t.params += static_cast<std::int64_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel;
        break;
      }
      case LayerKind::kLinear:
        out = {l.out_channels, 1, 1};
        f = 2LL * l.out_channels * l.in_channels * batch;
        train_factor = 3;
        t.params += static_cast<std::int64_t>(l.out_channels) * l.in_channels + l.out_channels;
        break;
      case LayerKind::kBatchNorm:
        f = bn_flops_per_elem * in.c * in.h * in.w * batch;
        train_factor = 3;
        t.params += 2 * in.c;
        break;
      case LayerKind::kRelu:
      case LayerKind::kAdd:
        f = in.c * in.h * in.w * batch;
        break;
      case LayerKind::kAvgPool:
        f = in.c * in.h * in.w * batch;
        out = l.kernel == 0 ? Act{in.c, 1, 1} : Act{in.c, in.h / l.kernel, in.w / l.kernel};
        break;
    }
    t.inference += f;
    t.training += train_factor * f;
    acts.emplace_back(l.id, out);
  }
  return t;
}

}  // namespace oracle

#endif  // SLIMTRAIN_TESTS_ORACLES_HPP_
