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
#include <cstdint>
#include <string>

#include "spineseg/core/parameter_store.hpp"
#include "spineseg/core/random.hpp"

namespace spineseg {

/// Registers parameters and draws their initial values from a single
/// seeded stream, so the store is a pure function of (architecture, seed).
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(derive_rng(seed, {0x1417})) {}

  /// Uniform in ±sqrt(3 * gain / fan_in): gain 1 keeps unit variance through
  /// a linear map, gain 2 (He) through a rectifier-like activation.
  std::size_t uniform(ParameterStore& store, std::string name, Shape shape, std::size_t fan_in, double gain = 1.0) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(3.0 * gain / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = spineseg::uniform(rng_, -bound, bound);
    return store.add(std::move(name), std::move(t));
  }

  std::size_t constant(ParameterStore& store, std::string name, Shape shape, double value) {
    return store.add(std::move(name), Tensor(std::move(shape), value));
  }

 private:
  Rng rng_;
};

}  // namespace spineseg
