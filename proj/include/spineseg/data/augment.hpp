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

// Training-time augmentation, applied in a fixed order:
//   1. optional 3x3x3 mean denoise (intensity only)
//   2. gamma contrast remap over the volume's [min, max] (intensity only)
//   3. rotation by a multiple of 90 degrees about a random axis
//   4. random crop to crop_fraction of each extent, zero-padded back in place
// Geometric steps move labels with the same index map (nearest neighbour).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "spineseg/core/random.hpp"
#include "spineseg/core/tensor.hpp"
#include "spineseg/data/label_volume.hpp"
#include "spineseg/data/phantom.hpp"

namespace spineseg {

struct AugmentSpec {
  double rotate_max_deg = 0.0;
  double crop_fraction = 1.0;
  double gamma_lo = 1.0;
  double gamma_hi = 1.0;
  bool denoise = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(rotate_max_deg >= 0.0)) throw ConfigError("augment.rotate_max_deg must be non-negative");
    if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) throw ConfigError("augment.crop_fraction must be in (0, 1]");
    if (!(gamma_lo > 0.0 && gamma_lo <= gamma_hi)) throw ConfigError("augment gamma range must satisfy 0 < lo <= hi");
  }
};

/// 3x3x3 box mean with the window clipped at the borders, per channel.
inline Tensor box_denoise(const Tensor& vol) {
  const Extents3 e = spatial_extents(vol);
  Tensor out = Tensor::zeros_like(vol);
  const std::size_t n = e.volume();
  for (std::size_t c = 0; c < vol.extent(0); ++c) {
    const double* src = vol.ptr() + c * n;
    for (std::size_t i = 0; i < e.h; ++i)
      for (std::size_t j = 0; j < e.w; ++j)
        for (std::size_t k = 0; k < e.d; ++k) {
          double s = 0.0;
          std::size_t cnt = 0;
          for (std::size_t a = i ? i - 1 : 0; a <= std::min(i + 1, e.h - 1); ++a)
            for (std::size_t b = j ? j - 1 : 0; b <= std::min(j + 1, e.w - 1); ++b)
              for (std::size_t d = k ? k - 1 : 0; d <= std::min(k + 1, e.d - 1); ++d) {
                s += src[(a * e.w + b) * e.d + d];
                ++cnt;
              }
          out[c * n + (i * e.w + j) * e.d + k] = s / static_cast<double>(cnt);
        }
  }
  return out;
}

/// v' = lo + (hi - lo) * ((v - lo) / (hi - lo))^gamma with [lo, hi] the volume range.
inline Tensor gamma_contrast(const Tensor& vol, double gamma) {
  if (gamma == 1.0) return vol;
  const auto [mn, mx] = std::minmax_element(vol.values().begin(), vol.values().end());
  const double lo = *mn, span = *mx - *mn;
  if (span <= 0.0) return vol;
  Tensor out = Tensor::zeros_like(vol);
  for (std::size_t i = 0; i < vol.size(); ++i) out[i] = lo + span * std::pow((vol[i] - lo) / span, gamma);
  return out;
}

namespace detail {

// One 90-degree rotation about `axis` (0 = H, 1 = W, 2 = D) of a [C, H, W, D]
// grid stored in `src`. In the rotation plane (p, q):
//   out[u, v] = in[E_p - 1 - v, u]   with out extents (E_q, E_p).
template <typename T>
std::vector<T> rotate90_once(const std::vector<T>& src, std::size_t channels, Extents3& e, std::size_t axis) {
  std::array<std::size_t, 3> ext{e.h, e.w, e.d};
  const std::size_t p = axis == 0 ? 1 : 0;
  const std::size_t q = axis == 2 ? 1 : 2;
  std::array<std::size_t, 3> out_ext = ext;
  std::swap(out_ext[p], out_ext[q]);
  std::vector<T> out(src.size());
  const std::size_t n = e.volume();
  std::array<std::size_t, 3> o{}, in{};
  for (o[0] = 0; o[0] < out_ext[0]; ++o[0])
    for (o[1] = 0; o[1] < out_ext[1]; ++o[1])
      for (o[2] = 0; o[2] < out_ext[2]; ++o[2]) {
        in = o;
        in[p] = ext[p] - 1 - o[q];
        in[q] = o[p];
        const std::size_t so = (in[0] * ext[1] + in[1]) * ext[2] + in[2];
        const std::size_t oo = (o[0] * out_ext[1] + o[1]) * out_ext[2] + o[2];
        for (std::size_t c = 0; c < channels; ++c) out[c * n + oo] = src[c * n + so];
      }
  e = {out_ext[0], out_ext[1], out_ext[2]};
  return out;
}

}  // namespace detail

/// Rotates [C, H, W, D] by k * 90 degrees about `axis`.
inline Tensor rotate90(const Tensor& vol, std::size_t axis, std::size_t k) {
  if (axis > 2) throw ArgumentError("rotate90: axis must be 0, 1 or 2");
  Extents3 e = spatial_extents(vol);
  std::vector<double> data = vol.values();
  for (std::size_t i = 0; i < k % 4; ++i) data = detail::rotate90_once(data, vol.extent(0), e, axis);
  return Tensor({vol.extent(0), e.h, e.w, e.d}, std::move(data));
}

inline LabelVolume rotate90(const LabelVolume& labels, std::size_t axis, std::size_t k) {
  if (axis > 2) throw ArgumentError("rotate90: axis must be 0, 1 or 2");
  Extents3 e = labels.extents();
  std::vector<std::uint8_t> data(labels.data().begin(), labels.data().end());
  for (std::size_t i = 0; i < k % 4; ++i) data = detail::rotate90_once(data, 1, e, axis);
  return LabelVolume(e, std::move(data));
}

struct CropBox {
  Extents3 origin, size;
};

/// Keeps the box and zeroes everything outside it (intensity 0, background label).
inline void crop_in_place(Tensor& vol, LabelVolume& labels, const CropBox& box) {
  const Extents3 e = labels.extents();
  const std::size_t n = e.volume();
  for (std::size_t i = 0; i < e.h; ++i)
    for (std::size_t j = 0; j < e.w; ++j)
      for (std::size_t k = 0; k < e.d; ++k) {
        const bool inside = i >= box.origin.h && i < box.origin.h + box.size.h && j >= box.origin.w &&
                            j < box.origin.w + box.size.w && k >= box.origin.d && k < box.origin.d + box.size.d;
        if (inside) continue;
        const std::size_t v = (i * e.w + j) * e.d + k;
        labels[v] = kBackground;
        for (std::size_t c = 0; c < vol.extent(0); ++c) vol[c * n + v] = 0.0;
      }
}

inline LabeledVolume augment(const LabeledVolume& in, const AugmentSpec& spec) {
  spec.validate();
  if (!(spatial_extents(in.volume) == in.labels.extents())) throw ShapeError("augment: volume and labels differ");
  Rng rng = derive_rng(spec.seed, {0xa09});
  LabeledVolume out = in;

  if (spec.denoise) out.volume = box_denoise(out.volume);
  const double gamma = spec.gamma_lo < spec.gamma_hi ? uniform(rng, spec.gamma_lo, spec.gamma_hi) : spec.gamma_lo;
  out.volume = gamma_contrast(out.volume, gamma);

  const auto max_quarters = static_cast<std::size_t>(std::floor(spec.rotate_max_deg / 90.0));
  if (max_quarters > 0) {
    const std::size_t k = uniform_index(rng, std::min<std::size_t>(max_quarters, 3) + 1);
    const std::size_t axis = uniform_index(rng, 3);
    out.volume = rotate90(out.volume, axis, k);
    out.labels = rotate90(out.labels, axis, k);
    if (k % 2 == 1) {
      const std::size_t p = axis == 0 ? 1 : 0, q = axis == 2 ? 1 : 2;
      std::swap(out.spacing[p], out.spacing[q]);
    }
  }

  if (spec.crop_fraction < 1.0) {
    const Extents3 e = out.labels.extents();
    auto crop_extent = [&](std::size_t n) {
      const auto c = static_cast<std::size_t>(std::llround(spec.crop_fraction * static_cast<double>(n)));
      if (c < 1) throw GeometryError("augment: crop_fraction leaves less than one voxel");
      return std::min(c, n);
    };
    CropBox box;
    box.size = {crop_extent(e.h), crop_extent(e.w), crop_extent(e.d)};
    box.origin = {uniform_index(rng, e.h - box.size.h + 1), uniform_index(rng, e.w - box.size.w + 1),
                  uniform_index(rng, e.d - box.size.d + 1)};
    crop_in_place(out.volume, out.labels, box);
  }
  return out;
}

}  // namespace spineseg
