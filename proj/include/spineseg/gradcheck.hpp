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
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "spineseg/core/parameter_store.hpp"
#include "spineseg/core/random.hpp"

namespace spineseg {

/// Central-difference stencil: f' ~ (f(x+h) - f(x-h)) / 2h, or the
/// fourth-order form using x±h and x±2h.
enum class Stencil { kThreePoint, kFivePoint };

struct GradcheckOptions {
  std::size_t probes = 5;    // coordinates per tensor (all of them if the tensor is smaller)
  double step = 1e-4;        // central-difference step h
  Stencil stencil = Stencil::kFivePoint;
  double abs_floor = 1e-6;   // denominator floor for the relative error
  std::uint64_t seed = 0;
};

struct TensorCheck {
  std::string name;
  std::size_t probes = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradcheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0.0;
  std::string worst_tensor;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients against central differences.
///
/// `value` evaluates the scalar objective at the current parameter values;
/// `gradient` must fill the store's gradients (they are zeroed first).
inline GradcheckReport gradcheck(const std::function<double(ParameterStore&)>& value,
                                 const std::function<void(ParameterStore&)>& gradient, ParameterStore& params,
                                 const GradcheckOptions& opts = {}) {
  if (opts.probes == 0) throw ConfigError("gradcheck: no probes requested");
  params.zero_grad();
  gradient(params);

  auto eval = [&](const std::string& where) {
    const double v = value(params);
    if (!std::isfinite(v)) throw CheckFailedError("gradcheck: objective is non-finite at " + where);
    return v;
  };
  eval("the base point");

  Rng rng = derive_rng(opts.seed, {0x6c});
  GradcheckReport report;
  for (auto& entry : params.entries()) {
    std::vector<std::size_t> coords(entry.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opts.probes) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.probes);
    }
    TensorCheck check{entry.name, coords.size(), 0.0, 0.0};
    for (std::size_t c : coords) {
      const double saved = entry.value[c];
      auto at = [&](double offset) {
        entry.value[c] = saved + offset;
        const double v = eval(entry.name);
        entry.value[c] = saved;
        return v;
      };
      const double h = opts.step;
      double numeric = 0.0;
      if (opts.stencil == Stencil::kThreePoint) {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      } else {
        const double p1 = at(h), m1 = at(-h), p2 = at(2.0 * h), m2 = at(-2.0 * h);
        numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
      }
      const double analytic = entry.grad[c];
      check.max_abs_error = std::max(check.max_abs_error, std::abs(analytic - numeric));
      check.max_rel_error = std::max(check.max_rel_error, relative_error(analytic, numeric, opts.abs_floor));
    }
    if (check.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = check.max_rel_error;
      report.worst_tensor = check.name;
    }
    report.tensors.push_back(std::move(check));
  }
  return report;
}

}  // namespace spineseg
