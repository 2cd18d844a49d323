// Copyright 2026 The SpineSeg Authors. All Rights Reserved.
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

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "spineseg/core/tensor.hpp"

namespace spineseg::ops {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * kInvSqrt2Pi;
  return cdf + x * pdf;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor gelu(const Tensor& x) {
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

/// dL/dx given the pre-activation input and dL/dy.
inline Tensor gelu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor::require_same_shape(x, grad_out, "gelu_backward");
  Tensor g = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = grad_out[i] * gelu_derivative(x[i]);
  return g;
}

/// Concatenates channel-first tensors along axis 0.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank()) throw ShapeError("concat_channels: rank mismatch");
  for (std::size_t i = 1; i < a.rank(); ++i) {
    if (a.extent(i) != b.extent(i)) {
      throw ShapeError("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
  }
  Shape s = a.shape();
  s[0] += b.extent(0);
  std::vector<double> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor(std::move(s), std::move(data));
}

/// Splits a channel-first gradient into its first `channels` channels and the rest.
inline std::pair<Tensor, Tensor> split_channels(const Tensor& g, std::size_t channels) {
  if (channels == 0 || channels >= g.extent(0)) throw ShapeError("split_channels: bad split point");
  const std::size_t per = g.size() / g.extent(0);
  Shape sa = g.shape(), sb = g.shape();
  sa[0] = channels;
  sb[0] = g.extent(0) - channels;
  const auto mid = g.values().begin() + static_cast<std::ptrdiff_t>(channels * per);
  return {Tensor(sa, std::vector<double>(g.values().begin(), mid)),
          Tensor(sb, std::vector<double>(mid, g.values().end()))};
}

/// [C, N] <-> [N, C] transposition used between conv (channel-first) and
/// token (channel-last) layouts. The spatial axes are flattened into N.
inline Tensor channels_last(const Tensor& x) {
  const std::size_t c = x.extent(0);
  const std::size_t n = x.size() / c;
  Tensor y({n, c});
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double* src = x.ptr() + ci * n;
    for (std::size_t i = 0; i < n; ++i) y[i * c + ci] = src[i];
  }
  return y;
}

inline Tensor channels_first(const Tensor& tokens, const Extents3& grid) {
  const std::size_t n = tokens.extent(0);
  const std::size_t c = tokens.extent(1);
  if (n != grid.volume()) throw ShapeError("channels_first: token count does not match grid");
  Tensor y({c, grid.h, grid.w, grid.d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ci = 0; ci < c; ++ci) y[ci * n + i] = tokens[i * c + ci];
  }
  return y;
}

}  // namespace spineseg::ops
