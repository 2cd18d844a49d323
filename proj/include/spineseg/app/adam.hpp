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

#include "spineseg/app/checkpoint.hpp"
#include "spineseg/app/config.hpp"
#include "spineseg/core/parameter_store.hpp"

namespace spineseg::app {

/// Zero first/second moments named after `params`.
inline TrainState make_train_state(const ParameterStore& params) {
  TrainState s;
  for (const auto& e : params.entries()) {
    s.moments.add(e.name + ".m1", Tensor::zeros_like(e.value));
    s.moments.add(e.name + ".m2", Tensor::zeros_like(e.value));
  }
  return s;
}

/// One Adam update from the gradients currently held in `params`.
inline void adam_step(ParameterStore& params, TrainState& state, const TrainConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.value(i).data();
    auto g = params.grad(i).data();
    auto m = state.moments.value(2 * i).data();
    auto v = state.moments.value(2 * i + 1).data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      if (cfg.lr != 0.0) p[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
}

}  // namespace spineseg::app
