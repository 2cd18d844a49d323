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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spineseg/core/tensor.hpp"

namespace spineseg {

/// Integer class map over an (H, W, D) grid, row-major.
class LabelVolume {
 public:
  LabelVolume() = default;

  explicit LabelVolume(Extents3 extents, std::uint8_t fill = 0)
      : extents_(extents), data_(extents.volume(), fill) {
    check_extents();
  }

  LabelVolume(Extents3 extents, std::vector<std::uint8_t> data) : extents_(extents), data_(std::move(data)) {
    check_extents();
    if (data_.size() != extents_.volume()) throw ShapeError("label volume data length does not match extents");
  }

  const Extents3& extents() const noexcept { return extents_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::uint8_t& operator[](std::size_t i) noexcept { return data_[i]; }
  std::uint8_t operator[](std::size_t i) const noexcept { return data_[i]; }

  std::uint8_t& at(std::size_t h, std::size_t w, std::size_t d) { return data_[(h * extents_.w + w) * extents_.d + d]; }
  std::uint8_t at(std::size_t h, std::size_t w, std::size_t d) const {
    return data_[(h * extents_.w + w) * extents_.d + d];
  }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  /// Throws LabelError when any value is outside [0, num_classes).
  void validate(std::size_t num_classes) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (data_[i] >= num_classes) {
        throw LabelError("label " + std::to_string(data_[i]) + " at voxel " + std::to_string(i) +
                         " is outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }

  std::vector<std::size_t> histogram(std::size_t num_classes) const {
    std::vector<std::size_t> h(num_classes, 0);
    for (auto v : data_) {
      if (v < num_classes) ++h[v];
    }
    return h;
  }

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  void check_extents() const {
    if (extents_.volume() == 0) throw ShapeError("label volume extents must be positive");
  }

  Extents3 extents_{};
  std::vector<std::uint8_t> data_;
};

}  // namespace spineseg
