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

// Direct 3D cross-correlation on channel-first [C, H, W, D] tensors, lowered
// to GEMM over im2col blocks of output planes. Transposed convolution reuses
// the same kernels through the adjoint relations.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "spineseg/core/tensor.hpp"
#include "spineseg/ops/matrix.hpp"

namespace spineseg::ops {

struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

inline std::size_t conv_output_extent(std::size_t in, const ConvGeometry& g, const char* axis) {
  if (g.stride == 0 || g.kernel == 0) throw GeometryError("conv3d: kernel and stride must be positive");
  const std::int64_t span = static_cast<std::int64_t>(in + 2 * g.padding) - static_cast<std::int64_t>(g.kernel);
  if (span < 0 || span % static_cast<std::int64_t>(g.stride) != 0) {
    throw GeometryError(std::string("conv3d: axis ") + axis + " extent " + std::to_string(in) +
                        " with kernel " + std::to_string(g.kernel) + ", stride " + std::to_string(g.stride) +
                        ", padding " + std::to_string(g.padding) + " gives a non-integral output extent");
  }
  return static_cast<std::size_t>(span) / g.stride + 1;
}

namespace detail {

struct ConvDims {
  std::size_t cin, h, w, d;     // input
  std::size_t ho, wo, dd;       // output spatial
  std::size_t k, s, p;
  std::size_t rows() const { return cin * k * k * k; }
  std::size_t plane() const { return wo * dd; }
};

inline ConvDims make_dims(const Shape& input, const ConvGeometry& g) {
  if (input.size() != 4) throw ShapeError("conv3d: input must be [C,H,W,D], got " + shape_string(input));
  ConvDims c{};
  c.cin = input[0];
  c.h = input[1];
  c.w = input[2];
  c.d = input[3];
  c.k = g.kernel;
  c.s = g.stride;
  c.p = g.padding;
  c.ho = conv_output_extent(c.h, g, "H");
  c.wo = conv_output_extent(c.w, g, "W");
  c.dd = conv_output_extent(c.d, g, "D");
  return c;
}

// Valid output index range [lo, hi) along one axis for kernel tap `tap`.
inline void valid_range(std::size_t out_n, std::size_t in_n, std::size_t tap, std::size_t s, std::size_t p,
                        std::size_t& lo, std::size_t& hi) {
  const std::int64_t off = static_cast<std::int64_t>(tap) - static_cast<std::int64_t>(p);
  const auto ss = static_cast<std::int64_t>(s);
  std::int64_t l = off >= 0 ? 0 : (-off + ss - 1) / ss;
  std::int64_t last = static_cast<std::int64_t>(in_n) - 1 - off;  // o*s <= last
  std::int64_t h = last < 0 ? 0 : last / ss + 1;
  l = std::min<std::int64_t>(l, static_cast<std::int64_t>(out_n));
  h = std::clamp<std::int64_t>(h, l, static_cast<std::int64_t>(out_n));
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h);
}

inline std::size_t planes_per_block(const ConvDims& c) {
  constexpr std::size_t kBudget = std::size_t{1} << 21;  // doubles in one im2col block
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(c.rows() * c.plane(), 1), 1, c.ho);
}

template <bool Scatter>
void col_transfer(const ConvDims& c, std::size_t h0, std::size_t h1, std::conditional_t<Scatter, double*, const double*> in,
                  std::conditional_t<Scatter, const double*, double*> col) {
  const std::size_t cols = (h1 - h0) * c.plane();
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < c.cin; ++ci) {
    for (std::size_t kh = 0; kh < c.k; ++kh) {
      std::size_t hlo, hhi;
      valid_range(c.ho, c.h, kh, c.s, c.p, hlo, hhi);
      for (std::size_t kw = 0; kw < c.k; ++kw) {
        std::size_t wlo, whi;
        valid_range(c.wo, c.w, kw, c.s, c.p, wlo, whi);
        for (std::size_t kd = 0; kd < c.k; ++kd, ++r) {
          std::size_t dlo, dhi;
          valid_range(c.dd, c.d, kd, c.s, c.p, dlo, dhi);
          auto row = col + r * cols;
          if constexpr (!Scatter) std::fill(row, row + cols, 0.0);
          for (std::size_t ho = std::max(h0, hlo); ho < std::min(h1, hhi); ++ho) {
            const std::size_t ih = ho * c.s + kh - c.p;
            for (std::size_t wo = wlo; wo < whi; ++wo) {
              const std::size_t iw = wo * c.s + kw - c.p;
              const std::size_t base = ((ci * c.h + ih) * c.w + iw) * c.d + kd;
              auto dst = row + (ho - h0) * c.plane() + wo * c.dd;
              for (std::size_t o = dlo; o < dhi; ++o) {
                const std::size_t idx = base + o * c.s - c.p;
                if constexpr (Scatter) in[idx] += dst[o]; else dst[o] = in[idx];
              }
            }
          }
        }
      }
    }
  }
}

inline void check_kernel(const Shape& input, const Shape& kernel, const char* who) {
  if (kernel.size() != 5 || kernel[2] != kernel[3] || kernel[3] != kernel[4]) {
    throw ShapeError(std::string(who) + ": kernel must be cubic [Cout,Cin,k,k,k], got " + shape_string(kernel));
  }
  if (input.size() != 4 || kernel[1] != input[0]) {
    throw ShapeError(std::string(who) + ": kernel " + shape_string(kernel) + " does not match input " +
                     shape_string(input));
  }
}

}  // namespace detail

inline Shape conv3d_output_shape(const Shape& input, const Shape& kernel, const ConvGeometry& g) {
  detail::check_kernel(input, kernel, "conv3d");
  const auto c = detail::make_dims(input, g);
  return {kernel[0], c.ho, c.wo, c.dd};
}

/// Cross-correlation with optional bias (pass an empty tensor for none).
inline Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
  detail::check_kernel(input.shape(), kernel.shape(), "conv3d");
  const ConvGeometry g{kernel.extent(2), stride, padding};
  const auto c = detail::make_dims(input.shape(), g);
  const std::size_t cout = kernel.extent(0);
  if (!bias.empty() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv3d: bias " + shape_string(bias.shape()) + " expected [" + std::to_string(cout) + "]");
  }
  Tensor out({cout, c.ho, c.wo, c.dd});
  const std::size_t block = detail::planes_per_block(c);
  std::vector<double> col(c.rows() * block * c.plane());
  auto kmat = view(kernel.ptr(), cout, c.rows());
  for (std::size_t h0 = 0; h0 < c.ho; h0 += block) {
    const std::size_t h1 = std::min(c.ho, h0 + block);
    const std::size_t cols = (h1 - h0) * c.plane();
    detail::col_transfer<false>(c, h0, h1, input.ptr(), col.data());
    auto omat = view(out.ptr() + h0 * c.plane(), cout, cols, c.ho * c.plane());
    omat.noalias() = kmat * view(col.data(), c.rows(), cols);
  }
  if (!bias.empty()) {
    const std::size_t n = c.ho * c.plane();
    for (std::size_t co = 0; co < cout; ++co) {
      double* o = out.ptr() + co * n;
      for (std::size_t i = 0; i < n; ++i) o[i] += bias[co];
    }
  }
  return out;
}

/// Gradient of conv3d with respect to its input.
inline Tensor conv3d_input_grad(const Tensor& kernel, const Tensor& grad_out, const Shape& input_shape,
                                std::size_t stride, std::size_t padding) {
  detail::check_kernel(input_shape, kernel.shape(), "conv3d_input_grad");
  const ConvGeometry g{kernel.extent(2), stride, padding};
  const auto c = detail::make_dims(input_shape, g);
  const std::size_t cout = kernel.extent(0);
  if (grad_out.shape() != Shape{cout, c.ho, c.wo, c.dd}) {
    throw ShapeError("conv3d_input_grad: upstream gradient " + shape_string(grad_out.shape()));
  }
  Tensor grad_in(input_shape);
  const std::size_t block = detail::planes_per_block(c);
  std::vector<double> col(c.rows() * block * c.plane());
  auto kmat = view(kernel.ptr(), cout, c.rows());
  for (std::size_t h0 = 0; h0 < c.ho; h0 += block) {
    const std::size_t h1 = std::min(c.ho, h0 + block);
    const std::size_t cols = (h1 - h0) * c.plane();
    auto gmat = view(grad_out.ptr() + h0 * c.plane(), cout, cols, c.ho * c.plane());
    view(col.data(), c.rows(), cols).noalias() = kmat.transpose() * gmat;
    detail::col_transfer<true>(c, h0, h1, grad_in.ptr(), col.data());
  }
  return grad_in;
}

/// Accumulates dL/dkernel into `grad_kernel`.
inline void conv3d_kernel_grad(const Tensor& input, const Tensor& grad_out, std::size_t stride, std::size_t padding,
                               Tensor& grad_kernel) {
  detail::check_kernel(input.shape(), grad_kernel.shape(), "conv3d_kernel_grad");
  const ConvGeometry g{grad_kernel.extent(2), stride, padding};
  const auto c = detail::make_dims(input.shape(), g);
  const std::size_t cout = grad_kernel.extent(0);
  if (grad_out.shape() != Shape{cout, c.ho, c.wo, c.dd}) {
    throw ShapeError("conv3d_kernel_grad: upstream gradient " + shape_string(grad_out.shape()));
  }
  const std::size_t block = detail::planes_per_block(c);
  std::vector<double> col(c.rows() * block * c.plane());
  auto gk = view(grad_kernel.ptr(), cout, c.rows());
  for (std::size_t h0 = 0; h0 < c.ho; h0 += block) {
    const std::size_t h1 = std::min(c.ho, h0 + block);
    const std::size_t cols = (h1 - h0) * c.plane();
    detail::col_transfer<false>(c, h0, h1, input.ptr(), col.data());
    auto gmat = view(grad_out.ptr() + h0 * c.plane(), cout, cols, c.ho * c.plane());
    gk.noalias() += gmat * view(col.data(), c.rows(), cols).transpose();
  }
}

/// Accumulates the per-channel sum of a [C, ...] gradient into `grad_bias`.
inline void channel_sum_grad(const Tensor& grad_out, Tensor& grad_bias) {
  const std::size_t ch = grad_out.extent(0);
  if (grad_bias.shape() != Shape{ch}) throw ShapeError("bias gradient shape mismatch");
  const std::size_t n = grad_out.size() / ch;
  for (std::size_t c = 0; c < ch; ++c) {
    double s = 0.0;
    const double* g = grad_out.ptr() + c * n;
    for (std::size_t i = 0; i < n; ++i) s += g[i];
    grad_bias[c] += s;
  }
}

/// Transposed convolution (no padding). Kernel layout is [Cin, Cout, k, k, k].
inline Tensor conv_transpose3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride) {
  if (kernel.rank() != 5 || input.rank() != 4 || kernel.extent(0) != input.extent(0)) {
    throw ShapeError("conv_transpose3d: kernel " + shape_string(kernel.shape()) + " does not match input " +
                     shape_string(input.shape()));
  }
  const std::size_t k = kernel.extent(2);
  const Shape out_shape{kernel.extent(1), (input.extent(1) - 1) * stride + k, (input.extent(2) - 1) * stride + k,
                        (input.extent(3) - 1) * stride + k};
  Tensor out = conv3d_input_grad(kernel, input, out_shape, stride, 0);
  if (!bias.empty()) {
    if (bias.shape() != Shape{out_shape[0]}) throw ShapeError("conv_transpose3d: bias shape mismatch");
    const std::size_t n = out.size() / out_shape[0];
    for (std::size_t co = 0; co < out_shape[0]; ++co) {
      double* o = out.ptr() + co * n;
      for (std::size_t i = 0; i < n; ++i) o[i] += bias[co];
    }
  }
  return out;
}

inline Tensor conv_transpose3d_input_grad(const Tensor& kernel, const Tensor& grad_out, std::size_t stride) {
  return conv3d(grad_out, kernel, Tensor{}, stride, 0);
}

/// Accumulates dL/dkernel for conv_transpose3d into `grad_kernel` ([Cin, Cout, k, k, k]).
inline void conv_transpose3d_kernel_grad(const Tensor& input, const Tensor& grad_out, std::size_t stride,
                                         Tensor& grad_kernel) {
  conv3d_kernel_grad(grad_out, input, stride, 0, grad_kernel);
}

}  // namespace spineseg::ops
