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
#include "spineseg/ops/matrix.hpp"

namespace spineseg::ops {

/// y = x Wᵀ + b over rows of x [N, in]; W is [out, in], b is [out] or empty.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.extent(1) != x.extent(1)) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  }
  const std::size_t n = x.extent(0), in = x.extent(1), out = weight.extent(0);
  Tensor y({n, out});
  view(y.ptr(), n, out).noalias() = view(x.ptr(), n, in) * view(weight.ptr(), out, in).transpose();
  if (!bias.empty()) {
    if (bias.shape() != Shape{out}) throw ShapeError("linear: bias shape mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bias[j];
    }
  }
  return y;
}

/// Accumulates weight/bias gradients and returns dL/dx.
inline Tensor linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, Tensor& grad_weight,
                              Tensor* grad_bias) {
  const std::size_t n = x.extent(0), in = x.extent(1), out = weight.extent(0);
  if (grad_out.shape() != Shape{n, out}) throw ShapeError("linear_backward: upstream gradient shape mismatch");
  auto g = view(grad_out.ptr(), n, out);
  view(grad_weight.ptr(), out, in).noalias() += g.transpose() * view(x.ptr(), n, in);
  if (grad_bias) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < out; ++j) (*grad_bias)[j] += grad_out[i * out + j];
    }
  }
  Tensor gx({n, in});
  view(gx.ptr(), n, in).noalias() = g * view(weight.ptr(), out, in);
  return gx;
}

/// Layer normalization over the last axis of [N, C].
struct LayerNormCache {
  Tensor normalized;             // x̂
  std::vector<double> inv_std;   // per row
};

inline constexpr double kLayerNormEps = 1e-5;

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache) {
  if (x.rank() != 2 || gamma.shape() != Shape{x.extent(1)} || beta.shape() != Shape{x.extent(1)}) {
    throw ShapeError("layer_norm: input " + shape_string(x.shape()) + " vs affine " + shape_string(gamma.shape()));
  }
  const std::size_t n = x.extent(0), c = x.extent(1);
  Tensor y({n, c});
  Tensor xhat({n, c});
  std::vector<double> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.ptr() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    inv[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mean) * inv[i];
      xhat[i * c + j] = h;
      y[i * c + j] = h * gamma[j] + beta[j];
    }
  }
  if (cache) *cache = {std::move(xhat), std::move(inv)};
  return y;
}

inline Tensor layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma, const Tensor& grad_out,
                                  Tensor& grad_gamma, Tensor& grad_beta) {
  const std::size_t n = grad_out.extent(0), c = grad_out.extent(1);
  Tensor gx({n, c});
  std::vector<double> gh(c);
  for (std::size_t i = 0; i < n; ++i) {
    double sum_gh = 0.0, sum_gh_h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double g = grad_out[i * c + j];
      const double h = cache.normalized[i * c + j];
      grad_gamma[j] += g * h;
      grad_beta[j] += g;
      gh[j] = g * gamma[j];
      sum_gh += gh[j];
      sum_gh_h += gh[j] * h;
    }
    const double cn = static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = cache.normalized[i * c + j];
      gx[i * c + j] = cache.inv_std[i] * (gh[j] - sum_gh / cn - h * sum_gh_h / cn);
    }
  }
  return gx;
}

}  // namespace spineseg::ops
