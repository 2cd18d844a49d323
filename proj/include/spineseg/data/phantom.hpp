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

// Procedural spine phantom: a column of ellipsoidal vertebral bodies stacked
// along D, disc slabs between neighbouring bodies and a tubular canal running
// behind them, over a noisy background.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "spineseg/core/random.hpp"
#include "spineseg/core/tensor.hpp"
#include "spineseg/data/label_volume.hpp"

namespace spineseg {

enum PhantomClass : std::uint8_t {
  kBackground = 0,
  kVertebralBody = 1,
  kDisc = 2,
  kCanal = 3,
};
inline constexpr std::size_t kPhantomClasses = 4;

/// Intensity volume [C, H, W, D] with its class map and voxel spacing.
struct LabeledVolume {
  Tensor volume;
  LabelVolume labels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

struct PhantomSpec {
  Extents3 dims{32, 32, 32};
  std::size_t n_vertebrae = 3;
  double noise_sigma = 0.05;
};

/// Nominal body shape as fractions of the grid (radius_d is a fraction of the
/// per-vertebra pitch D / n). Per-sample jitter is within ±5% of each radius.
struct PhantomGeometry {
  static constexpr double kBodyCenterH = 0.40;
  static constexpr double kBodyRadiusH = 0.20;
  static constexpr double kBodyRadiusW = 0.25;
  static constexpr double kBodyRadiusD = 0.32;
  static constexpr double kRadiusJitter = 0.05;
  static constexpr double kCanalCenterH = 0.72;
  static constexpr double kCanalRadius = 0.07;
  static constexpr double kDiscScale = 0.9;
};

struct Ellipsoid {
  double ch, cw, cd;
  double rh, rw, rd;

  double volume() const { return 4.0 / 3.0 * 3.14159265358979323846 * rh * rw * rd; }
};

struct PhantomLayout {
  std::vector<Ellipsoid> bodies;
  double canal_h = 0.0, canal_w = 0.0, canal_radius = 0.0;
  std::array<double, kPhantomClasses> mean_intensity{};
};

inline void check_phantom_spec(const PhantomSpec& spec) {
  if (spec.dims.volume() == 0) throw GeometryError("phantom dims must be positive");
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("phantom noise_sigma must be non-negative");
  if (spec.n_vertebrae > 0) {
    if (spec.dims.h < 8 || spec.dims.w < 8 || spec.dims.d < 4 * spec.n_vertebrae) {
      throw GeometryError("phantom dims " + std::to_string(spec.dims.h) + "x" + std::to_string(spec.dims.w) + "x" +
                          std::to_string(spec.dims.d) + " cannot fit " + std::to_string(spec.n_vertebrae) +
                          " vertebrae (need H, W >= 8 and D >= 4 per vertebra)");
    }
  }
}

inline PhantomLayout phantom_layout(const PhantomSpec& spec, std::uint64_t seed) {
  check_phantom_spec(spec);
  using G = PhantomGeometry;
  Rng rng = derive_rng(seed, {0x9a17});
  PhantomLayout layout;
  const double h = static_cast<double>(spec.dims.h), w = static_cast<double>(spec.dims.w);
  const double pitch = static_cast<double>(spec.dims.d) / static_cast<double>(std::max<std::size_t>(spec.n_vertebrae, 1));
  auto jitter = [&] { return 1.0 + uniform(rng, -G::kRadiusJitter, G::kRadiusJitter); };
  for (std::size_t i = 0; i < spec.n_vertebrae; ++i) {
    Ellipsoid e{};
    e.ch = G::kBodyCenterH * h + uniform(rng, -0.02, 0.02) * h;
    e.cw = 0.5 * w + uniform(rng, -0.02, 0.02) * w;
    e.cd = (static_cast<double>(i) + 0.5) * pitch;
    e.rh = G::kBodyRadiusH * h * jitter();
    e.rw = G::kBodyRadiusW * w * jitter();
    e.rd = G::kBodyRadiusD * pitch * jitter();
    layout.bodies.push_back(e);
  }
  layout.canal_h = G::kCanalCenterH * h;
  layout.canal_w = 0.5 * w;
  layout.canal_radius = std::max(1.5, G::kCanalRadius * std::min(h, w));
  const std::array<double, kPhantomClasses> base{0.20, 0.85, 0.55, 0.05};
  for (std::size_t c = 0; c < kPhantomClasses; ++c) layout.mean_intensity[c] = base[c] + uniform(rng, -0.03, 0.03);
  return layout;
}

/// Class of the voxel centred at (h, w, d) (voxel-index units + 0.5).
inline std::uint8_t phantom_class_at(const PhantomLayout& layout, double h, double w, double d) {
  if (layout.bodies.empty()) return kBackground;
  const double dh = h - layout.canal_h, dw = w - layout.canal_w;
  if (dh * dh + dw * dw <= layout.canal_radius * layout.canal_radius) return kCanal;
  for (const auto& b : layout.bodies) {
    const double x = (h - b.ch) / b.rh, y = (w - b.cw) / b.rw, z = (d - b.cd) / b.rd;
    if (x * x + y * y + z * z <= 1.0) return kVertebralBody;
  }
  for (std::size_t i = 0; i + 1 < layout.bodies.size(); ++i) {
    const auto& lo = layout.bodies[i];
    const auto& hi = layout.bodies[i + 1];
    if (d <= lo.cd || d >= hi.cd) continue;
    const double ch = 0.5 * (lo.ch + hi.ch), cw = 0.5 * (lo.cw + hi.cw);
    const double rh = PhantomGeometry::kDiscScale * 0.5 * (lo.rh + hi.rh);
    const double rw = PhantomGeometry::kDiscScale * 0.5 * (lo.rw + hi.rw);
    const double x = (h - ch) / rh, y = (w - cw) / rw;
    if (x * x + y * y <= 1.0) return kDisc;
  }
  return kBackground;
}

/// Fully determined by (spec, seed). Output volume is [1, H, W, D].
inline LabeledVolume generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  const PhantomLayout layout = phantom_layout(spec, seed);
  Rng noise = derive_rng(seed, {0x4015e});
  const Extents3 e = spec.dims;
  LabeledVolume out{Tensor({1, e.h, e.w, e.d}), LabelVolume(e), {1.0, 1.0, 1.0}};
  for (std::size_t i = 0; i < e.h; ++i) {
    for (std::size_t j = 0; j < e.w; ++j) {
      for (std::size_t k = 0; k < e.d; ++k) {
        const std::size_t v = (i * e.w + j) * e.d + k;
        const std::uint8_t c = phantom_class_at(layout, i + 0.5, j + 0.5, k + 0.5);
        out.labels[v] = c;
        const double n = spec.noise_sigma > 0.0 ? normal(noise, 0.0, spec.noise_sigma) : 0.0;
        out.volume[v] = layout.mean_intensity[c] + n;
      }
    }
  }
  return out;
}

}  // namespace spineseg
