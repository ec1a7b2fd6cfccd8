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

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "slimtrain/kernels.hpp"

namespace slimtrain {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(shape));
  }
}

struct ConvGeometry {
  std::int64_t n, c, h, w, k, r, s, oh, ow;
  int stride, pad;

  bool is_pointwise() const { return r == 1 && s == 1 && stride == 1 && pad == 0; }
  std::int64_t col_rows() const { return c * r * s; }
  std::int64_t col_cols() const { return oh * ow; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weights, int stride, int pad) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(weights.shape(), 4, "conv2d weights");
  if (stride < 1) throw ConfigError("conv2d stride must be positive");
  if (pad < 0) throw ConfigError("conv2d pad must be nonnegative");
  if (input.dim(1) != weights.dim(1)) {
    throw DimensionError("conv2d: input channels " + std::to_string(input.dim(1)) +
                         " != weight in_channels " + std::to_string(weights.dim(1)));
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.k = weights.dim(0);
  g.r = weights.dim(2);
  g.s = weights.dim(3);
  g.stride = stride;
  g.pad = pad;
  g.oh = conv_output_extent(g.h, static_cast<int>(g.r), stride, pad);
  g.ow = conv_output_extent(g.w, static_cast<int>(g.s), stride, pad);
  return g;
}

// Output columns [lo, hi) whose input column ox * stride + offset lies in [0, extent).
inline std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t out_extent, std::int64_t extent,
                                                         std::int64_t stride, std::int64_t offset) {
  std::int64_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::int64_t hi = extent - offset <= 0 ? 0 : (extent - offset - 1) / stride + 1;
  lo = std::min(lo, out_extent);
  hi = std::clamp(hi, lo, out_extent);
  return {lo, hi};
}

// Unfolds one image (C, H, W) into rows of a (C*R*S, ld) row-major matrix,
// filling OH*OW columns starting at `col`.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col, std::int64_t ld) {
  for (std::int64_t c = 0; c < g.c; ++c) {
    const T* plane = image + c * g.h * g.w;
    for (std::int64_t r = 0; r < g.r; ++r) {
      for (std::int64_t s = 0; s < g.s; ++s) {
        T* row = col + ((c * g.r + r) * g.s + s) * ld;
        const auto [x_lo, x_hi] = valid_range(g.ow, g.w, g.stride, s - g.pad);
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride + r - g.pad;
          T* out = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.ow, T(0));
            continue;
          }
          const T* in_row = plane + iy * g.w + s - g.pad;
          std::fill(out, out + x_lo, T(0));
          if (g.stride == 1) {
            std::copy(in_row + x_lo, in_row + x_hi, out + x_lo);
          } else {
            for (std::int64_t ox = x_lo; ox < x_hi; ++ox) out[ox] = in_row[ox * g.stride];
          }
          std::fill(out + x_hi, out + g.ow, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a column block back into an image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* image, std::int64_t ld) {
  for (std::int64_t c = 0; c < g.c; ++c) {
    T* plane = image + c * g.h * g.w;
    for (std::int64_t r = 0; r < g.r; ++r) {
      for (std::int64_t s = 0; s < g.s; ++s) {
        const T* row = col + ((c * g.r + r) * g.s + s) * ld;
        const auto [x_lo, x_hi] = valid_range(g.ow, g.w, g.stride, s - g.pad);
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride + r - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          T* in_row = plane + iy * g.w + s - g.pad;
          const T* src = row + oy * g.ow;
          for (std::int64_t ox = x_lo; ox < x_hi; ++ox) in_row[ox * g.stride] += src[ox];
        }
      }
    }
  }
}

// Images per GEMM so that the column matrix has roughly kTargetColumns columns.
inline std::int64_t images_per_chunk(const ConvGeometry& g) {
  constexpr std::int64_t kTargetColumns = 8192;
  return std::clamp<std::int64_t>(kTargetColumns / std::max<std::int64_t>(g.col_cols(), 1), 1,
                                  std::max<std::int64_t>(g.n, 1));
}

// Reductions in double with eight independent lanes: vectorizable and independent
// of the thread count, so results are reproducible.
template <typename T, typename F>
double lane_reduce(std::int64_t n, F term) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += term(i + j);
  }
  for (; i < n; ++i) acc[i % 8] += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": shape " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t in, int kernel, int stride, int pad) {
  if (stride < 1) throw ConfigError("conv stride must be positive");
  const std::int64_t span = in + 2 * static_cast<std::int64_t>(pad) - kernel;
  if (span < 0) {
    throw ConfigError("conv output extent is non-positive (in=" + std::to_string(in) +
                      ", kernel=" + std::to_string(kernel) + ", pad=" + std::to_string(pad) + ")");
  }
  return span / stride + 1;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, int stride, int pad) {
  const ConvGeometry g = conv_geometry(input, weights, stride, pad);
  Tensor<T> out({g.n, g.k, g.oh, g.ow});
  ConstMatrixMap<T> w(weights.raw(), g.k, g.col_rows());
  const std::int64_t chunk = images_per_chunk(g);
  const std::int64_t hw = g.col_cols();
  std::vector<T> col(static_cast<std::size_t>(g.col_rows() * chunk * hw));
  RowMatrix<T> result(g.k, chunk * hw);
  for (std::int64_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::int64_t m = std::min(chunk, g.n - n0);
    const std::int64_t ld = m * hw;
    for (std::int64_t b = 0; b < m; ++b) {
      im2col(input.raw() + (n0 + b) * g.c * g.h * g.w, g, col.data() + b * hw, ld);
    }
    ConstMatrixMap<T> cols(col.data(), g.col_rows(), ld);
    auto res = result.leftCols(ld);
    res.noalias() = w * cols;
    for (std::int64_t b = 0; b < m; ++b) {
      MatrixMap<T> dst(out.raw() + (n0 + b) * g.k * hw, g.k, hw);
      dst = res.middleCols(b * hw, hw);
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& grad_out, int stride, int pad,
                             bool need_grad_input) {
  const ConvGeometry g = conv_geometry(input, weights, stride, pad);
  require_same_shape(grad_out.shape(), Shape{g.n, g.k, g.oh, g.ow}, "conv2d_backward grad_out");
  ConvGrads<T> grads;
  grads.grad_weights = Tensor<T>(weights.shape());
  if (need_grad_input) grads.grad_input = Tensor<T>(input.shape());

  ConstMatrixMap<T> w(weights.raw(), g.k, g.col_rows());
  MatrixMap<T> gw(grads.grad_weights.raw(), g.k, g.col_rows());
  const std::int64_t chunk = images_per_chunk(g);
  const std::int64_t hw = g.col_cols();
  std::vector<T> col(static_cast<std::size_t>(g.col_rows() * chunk * hw));
  // Stride-1 input gradients are a full correlation of grad_out with the
  // flipped, transposed kernel; that avoids the col2im scatter.
  const bool as_correlation = need_grad_input && g.stride == 1 && g.r == g.s && g.pad <= g.r - 1;
  if (as_correlation) {
    Tensor<T> flipped({g.c, g.k, g.r, g.s});
    for (std::int64_t k = 0; k < g.k; ++k) {
      for (std::int64_t c = 0; c < g.c; ++c) {
        for (std::int64_t r = 0; r < g.r; ++r) {
          for (std::int64_t s = 0; s < g.s; ++s) {
            flipped.at(c, k, g.r - 1 - r, g.s - 1 - s) = weights.at(k, c, r, s);
          }
        }
      }
    }
    grads.grad_input = conv2d_forward(grad_out, flipped, 1, static_cast<int>(g.r - 1 - g.pad));
  }
  const bool scatter_input = need_grad_input && !as_correlation;
  std::vector<T> grad_col(scatter_input ? col.size() : 0);
  RowMatrix<T> gout(g.k, chunk * hw);
  for (std::int64_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::int64_t m = std::min(chunk, g.n - n0);
    const std::int64_t ld = m * hw;
    for (std::int64_t b = 0; b < m; ++b) {
      im2col(input.raw() + (n0 + b) * g.c * g.h * g.w, g, col.data() + b * hw, ld);
      gout.middleCols(b * hw, hw) = ConstMatrixMap<T>(grad_out.raw() + (n0 + b) * g.k * hw, g.k, hw);
    }
    ConstMatrixMap<T> cols(col.data(), g.col_rows(), ld);
    const auto go = gout.leftCols(ld);
    gw.noalias() += go * cols.transpose();
    if (!scatter_input) continue;
    MatrixMap<T> gcol(grad_col.data(), g.col_rows(), ld);
    gcol.noalias() = w.transpose() * go;
    for (std::int64_t b = 0; b < m; ++b) {
      col2im(grad_col.data() + b * hw, g, grads.grad_input.raw() + (n0 + b) * g.c * g.h * g.w, ld);
    }
  }
  return grads;
}

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, BatchNormState<T>& state,
                                     bool training) {
  require_rank(input.shape(), 4, "batchnorm input");
  const std::int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (c != state.channels() || state.beta.size() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    throw DimensionError("batchnorm: input has " + std::to_string(c) +
                         " channels, state has " + std::to_string(state.channels()));
  }
  const std::int64_t count = n * hw;
  if (training && count < 1) throw DimensionError("batchnorm: empty batch in training mode");

  BatchNormResult<T> result;
  result.output = Tensor<T>(input.shape());
  result.saved.xhat = Tensor<T>(input.shape());
  result.saved.inv_std.assign(static_cast<std::size_t>(c), 0.0);
  result.saved.training = training;

  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    double var = 0.0;
    if (training) {
      for (std::int64_t b = 0; b < n; ++b) {
        const T* x = input.raw() + (b * c + ch) * hw;
        mean += lane_reduce<T>(hw, [x](std::int64_t i) { return static_cast<double>(x[i]); });
      }
      mean /= static_cast<double>(count);
      for (std::int64_t b = 0; b < n; ++b) {
        const T* x = input.raw() + (b * c + ch) * hw;
        var += lane_reduce<T>(hw, [x, mean](std::int64_t i) {
          const double d = x[i] - mean;
          return d * d;
        });
      }
      var /= static_cast<double>(count);
      const double m = state.momentum;
      state.running_mean[ch] = static_cast<T>((1.0 - m) * state.running_mean[ch] + m * mean);
      state.running_var[ch] = static_cast<T>((1.0 - m) * state.running_var[ch] + m * var);
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const double inv_std = 1.0 / std::sqrt(var + state.epsilon);
    result.saved.inv_std[static_cast<std::size_t>(ch)] = inv_std;
    const double gamma = state.gamma[ch];
    const double beta = state.beta[ch];
    for (std::int64_t b = 0; b < n; ++b) {
      const std::int64_t base = (b * c + ch) * hw;
      const T* x = input.raw() + base;
      T* xhat = result.saved.xhat.raw() + base;
      T* y = result.output.raw() + base;
      const T m = static_cast<T>(mean), is = static_cast<T>(inv_std);
      const T ga = static_cast<T>(gamma), be = static_cast<T>(beta);
      for (std::int64_t i = 0; i < hw; ++i) {
        const T normalized = (x[i] - m) * is;
        xhat[i] = normalized;
        y[i] = ga * normalized + be;
      }
    }
  }
  return result;
}

template <typename T>
Tensor<T> batchnorm_inference(const Tensor<T>& input, const BatchNormState<T>& state) {
  BatchNormState<T> copy = state;
  return batchnorm_forward(input, copy, /*training=*/false).output;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormSaved<T>& saved, const BatchNormState<T>& state,
                                     const Tensor<T>& grad_out) {
  require_same_shape(grad_out.shape(), saved.xhat.shape(), "batchnorm_backward grad_out");
  const std::int64_t n = grad_out.dim(0), c = grad_out.dim(1), hw = grad_out.dim(2) * grad_out.dim(3);
  if (c != state.channels() || static_cast<std::int64_t>(saved.inv_std.size()) != c) {
    throw DimensionError("batchnorm_backward: channel count mismatch");
  }
  const double count = static_cast<double>(n * hw);
  BatchNormGrads<T> grads;
  grads.grad_input = Tensor<T>(grad_out.shape());
  grads.grad_gamma = Tensor<T>({c});
  grads.grad_beta = Tensor<T>({c});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::int64_t b = 0; b < n; ++b) {
      const std::int64_t base = (b * c + ch) * hw;
      const T* dy = grad_out.raw() + base;
      const T* xhat = saved.xhat.raw() + base;
      sum_dy += lane_reduce<T>(hw, [dy](std::int64_t i) { return static_cast<double>(dy[i]); });
      sum_dy_xhat += lane_reduce<T>(hw, [dy, xhat](std::int64_t i) {
        return static_cast<double>(dy[i]) * static_cast<double>(xhat[i]);
      });
    }
    grads.grad_gamma[ch] = static_cast<T>(sum_dy_xhat);
    grads.grad_beta[ch] = static_cast<T>(sum_dy);
    const double scale = static_cast<double>(state.gamma[ch]) * saved.inv_std[static_cast<std::size_t>(ch)];
    const double mean_dy = saved.training ? sum_dy / count : 0.0;
    const double mean_dy_xhat = saved.training ? sum_dy_xhat / count : 0.0;
    for (std::int64_t b = 0; b < n; ++b) {
      const std::int64_t base = (b * c + ch) * hw;
      const T* dy = grad_out.raw() + base;
      const T* xhat = saved.xhat.raw() + base;
      T* dx = grads.grad_input.raw() + base;
      const T sc = static_cast<T>(scale), mdy = static_cast<T>(mean_dy), mdx = static_cast<T>(mean_dy_xhat);
      for (std::int64_t i = 0; i < hw; ++i) dx[i] = sc * (dy[i] - mdy - xhat[i] * mdx);
    }
  }
  return grads;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.raw();
  T* y = out.raw();
  for (std::int64_t i = 0; i < input.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  require_same_shape(input.shape(), grad_out.shape(), "relu_backward");
  Tensor<T> out(input.shape());
  const T* x = input.raw();
  const T* g = grad_out.raw();
  T* d = out.raw();
  for (std::int64_t i = 0; i < input.size(); ++i) d[i] = x[i] > T(0) ? g[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> global_avgpool_forward(const Tensor<T>& input) {
  require_rank(input.shape(), 4, "global_avgpool input");
  const std::int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (hw < 1) throw DimensionError("global_avgpool: empty spatial extent");
  Tensor<T> out({n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    const T* x = input.raw() + i * hw;
    double sum = 0.0;
    for (std::int64_t j = 0; j < hw; ++j) sum += x[j];
    out[i] = static_cast<T>(sum / static_cast<double>(hw));
  }
  return out;
}

template <typename T>
Tensor<T> global_avgpool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  require_rank(input_shape, 4, "global_avgpool_backward input");
  require_same_shape(grad_out.shape(), Shape{input_shape[0], input_shape[1]},
                     "global_avgpool_backward grad_out");
  const std::int64_t hw = input_shape[2] * input_shape[3];
  Tensor<T> out(input_shape);
  for (std::int64_t i = 0; i < grad_out.size(); ++i) {
    const T v = static_cast<T>(static_cast<double>(grad_out[i]) / static_cast<double>(hw));
    std::fill(out.raw() + i * hw, out.raw() + (i + 1) * hw, v);
  }
  return out;
}

template <typename T>
Tensor<T> avgpool2d_forward(const Tensor<T>& input, int window) {
  require_rank(input.shape(), 4, "avgpool2d input");
  if (window < 1 || input.dim(2) % window != 0 || input.dim(3) % window != 0) {
    throw DimensionError("avgpool2d: window " + std::to_string(window) +
                         " does not tile input " + shape_string(input.shape()));
  }
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::int64_t oh = h / window, ow = w / window;
  Tensor<T> out({n, c, oh, ow});
  const double norm = 1.0 / (window * window);
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* x = input.raw() + p * h * w;
    T* y = out.raw() + p * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double sum = 0.0;
        for (int dy = 0; dy < window; ++dy) {
          for (int dx = 0; dx < window; ++dx) sum += x[(oy * window + dy) * w + ox * window + dx];
        }
        y[oy * ow + ox] = static_cast<T>(sum * norm);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> avgpool2d_backward(const Shape& input_shape, const Tensor<T>& grad_out, int window) {
  require_rank(input_shape, 4, "avgpool2d_backward input");
  const std::int64_t n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const std::int64_t oh = h / window, ow = w / window;
  require_same_shape(grad_out.shape(), Shape{n, c, oh, ow}, "avgpool2d_backward grad_out");
  Tensor<T> out(input_shape);
  const double norm = 1.0 / (window * window);
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* g = grad_out.raw() + p * oh * ow;
    T* d = out.raw() + p * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        d[y * w + x] = static_cast<T>(g[(y / window) * ow + x / window] * norm);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> add_forward(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weights.shape(), 2, "linear weights");
  require_rank(bias.shape(), 1, "linear bias");
  if (input.dim(1) != weights.dim(1) || bias.dim(0) != weights.dim(0)) {
    throw DimensionError("linear: input " + shape_string(input.shape()) + ", weights " +
                         shape_string(weights.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::int64_t n = input.dim(0), d = input.dim(1), m = weights.dim(0);
  Tensor<T> out({n, m});
  ConstMatrixMap<T> x(input.raw(), n, d);
  ConstMatrixMap<T> w(weights.raw(), m, d);
  MatrixMap<T> y(out.raw(), n, m);
  y.noalias() = x * w.transpose();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) y(i, j) += bias[j];
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weights,
                               const Tensor<T>& grad_out) {
  require_rank(input.shape(), 2, "linear_backward input");
  require_rank(weights.shape(), 2, "linear_backward weights");
  const std::int64_t n = input.dim(0), d = input.dim(1), m = weights.dim(0);
  if (weights.dim(1) != d) throw DimensionError("linear_backward: weight/input mismatch");
  require_same_shape(grad_out.shape(), Shape{n, m}, "linear_backward grad_out");
  LinearGrads<T> grads;
  grads.grad_input = Tensor<T>({n, d});
  grads.grad_weights = Tensor<T>({m, d});
  grads.grad_bias = Tensor<T>({m});
  ConstMatrixMap<T> x(input.raw(), n, d);
  ConstMatrixMap<T> w(weights.raw(), m, d);
  ConstMatrixMap<T> g(grad_out.raw(), n, m);
  MatrixMap<T>(grads.grad_input.raw(), n, d).noalias() = g * w;
  MatrixMap<T>(grads.grad_weights.raw(), m, d).noalias() = g.transpose() * x;
  for (std::int64_t j = 0; j < m; ++j) {
    double sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) sum += g(i, j);
    grads.grad_bias[j] = static_cast<T>(sum);
  }
  return grads;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(n));
  }
  if (n < 1) throw DimensionError("softmax_cross_entropy: empty batch");
  LossResult<T> result;
  result.grad_logits = Tensor<T>({n, k});
  std::vector<double> prob(static_cast<std::size_t>(k));
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k) {
      throw InputError("label " + std::to_string(label) + " out of range [0, " +
                       std::to_string(k) + ")");
    }
    const T* z = logits.raw() + i * k;
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      prob[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(z[j]) - zmax);
      denom += prob[static_cast<std::size_t>(j)];
    }
    total += -((static_cast<double>(z[label]) - zmax) - std::log(denom));
    T* g = result.grad_logits.raw() + i * k;
    for (std::int64_t j = 0; j < k; ++j) {
      const double p = prob[static_cast<std::size_t>(j)] / denom;
      g[j] = static_cast<T>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  result.loss = total / static_cast<double>(n);
  return result;
}

template <typename T>
void sgd_momentum_step(std::span<T> weights, std::span<const T> grads, std::span<T> momentum,
                       double lr, double momentum_coef) {
  if (weights.size() != grads.size() || weights.size() != momentum.size()) {
    throw DimensionError("sgd_momentum_step: weights/grads/momentum length mismatch");
  }
  const T coef = static_cast<T>(momentum_coef);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    momentum[i] = coef * momentum[i] + grads[i];
    weights[i] -= rate * momentum[i];
  }
}

#define SLIMTRAIN_INSTANTIATE_KERNELS(T)                                                      \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, int, int);         \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&,                \
                                           const Tensor<T>&, int, int, bool);                 \
  template BatchNormResult<T> batchnorm_forward<T>(const Tensor<T>&, BatchNormState<T>&,      \
                                                   bool);                                     \
  template Tensor<T> batchnorm_inference<T>(const Tensor<T>&, const BatchNormState<T>&);      \
  template BatchNormGrads<T> batchnorm_backward<T>(const BatchNormSaved<T>&,                  \
                                                   const BatchNormState<T>&, const Tensor<T>&); \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                       \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> global_avgpool_forward<T>(const Tensor<T>&);                             \
  template Tensor<T> global_avgpool_backward<T>(const Shape&, const Tensor<T>&);              \
  template Tensor<T> avgpool2d_forward<T>(const Tensor<T>&, int);                             \
  template Tensor<T> avgpool2d_backward<T>(const Shape&, const Tensor<T>&, int);              \
  template Tensor<T> add_forward<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> linear_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template LinearGrads<T> linear_backward<T>(const Tensor<T>&, const Tensor<T>&,              \
                                             const Tensor<T>&);                               \
  template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);    \
  template void sgd_momentum_step<T>(std::span<T>, std::span<const T>, std::span<T>, double,  \
                                     double);

SLIMTRAIN_INSTANTIATE_KERNELS(float)
SLIMTRAIN_INSTANTIATE_KERNELS(double)

#undef SLIMTRAIN_INSTANTIATE_KERNELS

}  // namespace slimtrain
