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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "spineseg/core/tensor.hpp"

namespace spineseg::ops {

namespace detail {

// Visits every 1-D slice along `axis` as (first element offset, step).
template <typename Fn>
void for_each_slice(const Shape& shape, std::size_t axis, Fn&& fn) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) fn(o * n * inner + in, inner, n);
  }
}

}  // namespace detail

/// Max-subtracted softmax along `axis`.
inline Tensor softmax(const Tensor& logits, std::size_t axis) {
  if (axis >= logits.rank()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range");
  Tensor out = Tensor::zeros_like(logits);
  detail::for_each_slice(logits.shape(), axis, [&](std::size_t base, std::size_t step, std::size_t n) {
    double m = logits[base];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, logits[base + j * step]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(logits[base + j * step] - m);
      out[base + j * step] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[base + j * step] /= z;
  });
  return out;
}

/// dL/dlogits from the softmax output and dL/dprobs.
inline Tensor softmax_backward(const Tensor& probs, const Tensor& grad_out, std::size_t axis) {
  Tensor::require_same_shape(probs, grad_out, "softmax_backward");
  Tensor g = Tensor::zeros_like(probs);
  detail::for_each_slice(probs.shape(), axis, [&](std::size_t base, std::size_t step, std::size_t n) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += probs[base + j * step] * grad_out[base + j * step];
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = base + j * step;
      g[i] = probs[i] * (grad_out[i] - dot);
    }
  });
  return g;
}

}  // namespace spineseg::ops
