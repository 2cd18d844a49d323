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

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "spineseg/core/tensor.hpp"

namespace spineseg::ops {

namespace detail {

struct AxisTaps {
  std::vector<std::size_t> lo;
  std::vector<double> frac;  // weight of lo + 1
};

// Align-corners sampling positions: target index i maps to i * (S - 1) / (T - 1).
inline AxisTaps axis_taps(std::size_t source, std::size_t target) {
  AxisTaps t;
  t.lo.resize(target);
  t.frac.resize(target);
  for (std::size_t i = 0; i < target; ++i) {
    const double pos = target == 1 ? 0.0
                                   : static_cast<double>(i) * static_cast<double>(source - 1) /
                                         static_cast<double>(target - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= source - 1) lo = source - 1;
    t.lo[i] = lo;
    t.frac[i] = lo + 1 < source ? pos - static_cast<double>(lo) : 0.0;
  }
  return t;
}

template <typename Fn>
void for_each_tap(const Extents3& src, const Extents3& dst, Fn&& fn) {
  const auto th = axis_taps(src.h, dst.h), tw = axis_taps(src.w, dst.w), td = axis_taps(src.d, dst.d);
  for (std::size_t i = 0; i < dst.h; ++i) {
    for (std::size_t j = 0; j < dst.w; ++j) {
      for (std::size_t k = 0; k < dst.d; ++k) {
        const std::size_t out = (i * dst.w + j) * dst.d + k;
        const std::array<double, 2> wh{1.0 - th.frac[i], th.frac[i]};
        const std::array<double, 2> ww{1.0 - tw.frac[j], tw.frac[j]};
        const std::array<double, 2> wd{1.0 - td.frac[k], td.frac[k]};
        for (std::size_t a = 0; a < 2; ++a) {
          if (a && wh[1] == 0.0) continue;
          for (std::size_t b = 0; b < 2; ++b) {
            if (b && ww[1] == 0.0) continue;
            for (std::size_t c = 0; c < 2; ++c) {
              if (c && wd[1] == 0.0) continue;
              const std::size_t in = ((th.lo[i] + a) * src.w + tw.lo[j] + b) * src.d + td.lo[k] + c;
              fn(out, in, wh[a] * ww[b] * wd[c]);
            }
          }
        }
      }
    }
  }
}

inline void check_target(const Extents3& t) {
  if (t.h == 0 || t.w == 0 || t.d == 0) throw GeometryError("trilinear_resample: target extents must be positive");
}

}  // namespace detail

/// Align-corners trilinear interpolation of [C, H, W, D] to new spatial extents.
inline Tensor trilinear_resample(const Tensor& input, const Extents3& target) {
  detail::check_target(target);
  const Extents3 src = spatial_extents(input);
  if (src == target) return input;
  const std::size_t ch = input.extent(0);
  Tensor out({ch, target.h, target.w, target.d});
  const std::size_t ns = src.volume(), nt = target.volume();
  detail::for_each_tap(src, target, [&](std::size_t o, std::size_t i, double w) {
    for (std::size_t c = 0; c < ch; ++c) out[c * nt + o] += w * input[c * ns + i];
  });
  return out;
}

/// Transpose of the interpolation operator applied to dL/doutput.
inline Tensor trilinear_resample_backward(const Tensor& grad_out, const Extents3& source) {
  detail::check_target(source);
  const Extents3 target = spatial_extents(grad_out);
  if (source == target) return grad_out;
  const std::size_t ch = grad_out.extent(0);
  Tensor gin({ch, source.h, source.w, source.d});
  const std::size_t ns = source.volume(), nt = target.volume();
  detail::for_each_tap(source, target, [&](std::size_t o, std::size_t i, double w) {
    for (std::size_t c = 0; c < ch; ++c) gin[c * ns + i] += w * grad_out[c * nt + o];
  });
  return gin;
}

}  // namespace spineseg::ops
