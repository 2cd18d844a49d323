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

// Input / ground-truth / prediction slice triptychs as binary PGM (P5) and
// PPM (P6) images.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "spineseg/core/tensor.hpp"
#include "spineseg/data/label_volume.hpp"
#include "spineseg/data/volume_io.hpp"

namespace spineseg {

using Rgb = std::array<std::uint8_t, 3>;

/// Fixed palette; class 0 is black, classes beyond the table cycle through 1..7.
inline Rgb class_color(std::size_t c) {
  static constexpr std::array<Rgb, 8> kPalette{{{0, 0, 0},
                                                {230, 25, 75},
                                                {60, 180, 75},
                                                {0, 130, 200},
                                                {255, 225, 25},
                                                {145, 30, 180},
                                                {70, 240, 240},
                                                {240, 50, 230}}};
  if (c == 0) return kPalette[0];
  return kPalette[1 + (c - 1) % (kPalette.size() - 1)];
}

struct Image {
  std::size_t rows = 0, cols = 0, channels = 1;
  std::vector<std::uint8_t> pixels;
};

inline std::vector<std::uint8_t> encode_pnm(const Image& img) {
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.cols) + " " +
                             std::to_string(img.rows) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

namespace detail {

// (row, col) of the slice plane -> flat grid index.
struct SlicePlane {
  std::size_t rows, cols;
  std::size_t axis, index;
  Extents3 e;

  std::size_t voxel(std::size_t r, std::size_t c) const {
    std::array<std::size_t, 3> p{};
    p[axis] = index;
    const std::size_t a = axis == 0 ? 1 : 0, b = axis == 2 ? 1 : 2;
    p[a] = r;
    p[b] = c;
    return (p[0] * e.w + p[1]) * e.d + p[2];
  }
};

inline SlicePlane make_plane(const Extents3& e, std::size_t axis, std::size_t index) {
  if (axis > 2) throw ArgumentError("export_slices: axis " + std::to_string(axis) + " is out of range [0, 2]");
  const std::array<std::size_t, 3> ext{e.h, e.w, e.d};
  if (index >= ext[axis]) throw ArgumentError("export_slices: slice index " + std::to_string(index) + " out of range");
  const std::size_t a = axis == 0 ? 1 : 0, b = axis == 2 ? 1 : 2;
  return {ext[a], ext[b], axis, index, e};
}

}  // namespace detail

/// Grayscale slice of channel 0, scaled by the volume's global [min, max].
inline Image grayscale_slice(const Tensor& vol, std::size_t axis, std::size_t index) {
  const Extents3 e = spatial_extents(vol);
  const auto plane = detail::make_plane(e, axis, index);
  const std::size_t n = e.volume();
  const auto [mn, mx] = std::minmax_element(vol.values().begin(), vol.values().begin() + static_cast<std::ptrdiff_t>(n));
  const double lo = *mn, span = *mx - *mn;
  Image img{plane.rows, plane.cols, 1, {}};
  img.pixels.reserve(plane.rows * plane.cols);
  for (std::size_t r = 0; r < plane.rows; ++r) {
    for (std::size_t c = 0; c < plane.cols; ++c) {
      const double t = span > 0.0 ? (vol[plane.voxel(r, c)] - lo) / span : 0.0;
      img.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)));
    }
  }
  return img;
}

inline Image label_slice(const LabelVolume& labels, std::size_t axis, std::size_t index) {
  const auto plane = detail::make_plane(labels.extents(), axis, index);
  Image img{plane.rows, plane.cols, 3, {}};
  img.pixels.reserve(3 * plane.rows * plane.cols);
  for (std::size_t r = 0; r < plane.rows; ++r) {
    for (std::size_t c = 0; c < plane.cols; ++c) {
      const Rgb rgb = class_color(labels[plane.voxel(r, c)]);
      img.pixels.insert(img.pixels.end(), rgb.begin(), rgb.end());
    }
  }
  return img;
}

/// Writes <prefix>_axis<a>_slice<iii>_{input.pgm, truth.ppm, pred.ppm} for each index.
inline std::vector<std::filesystem::path> export_slices(const Tensor& vol, const LabelVolume& truth,
                                                        const LabelVolume& pred, std::size_t axis,
                                                        const std::vector<std::size_t>& indices,
                                                        const std::filesystem::path& out_dir,
                                                        const std::string& prefix = "sample") {
  if (!(spatial_extents(vol) == truth.extents()) || !(truth.extents() == pred.extents())) {
    throw ShapeError("export_slices: volume, truth and prediction grids differ");
  }
  if (axis > 2) throw ArgumentError("export_slices: axis " + std::to_string(axis) + " is out of range [0, 2]");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> files;
  for (std::size_t idx : indices) {
    char stem[96];
    std::snprintf(stem, sizeof stem, "%s_axis%zu_slice%03zu", prefix.c_str(), axis, idx);
    const auto in_path = out_dir / (std::string(stem) + "_input.pgm");
    const auto gt_path = out_dir / (std::string(stem) + "_truth.ppm");
    const auto pr_path = out_dir / (std::string(stem) + "_pred.ppm");
    io::write_file(in_path, encode_pnm(grayscale_slice(vol, axis, idx)));
    io::write_file(gt_path, encode_pnm(label_slice(truth, axis, idx)));
    io::write_file(pr_path, encode_pnm(label_slice(pred, axis, idx)));
    files.insert(files.end(), {in_path, gt_path, pr_path});
  }
  return files;
}

}  // namespace spineseg
