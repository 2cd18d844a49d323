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

// Compound segmentation loss L = L_CE + lambda * L_Dice on per-voxel class
// probabilities, with exact gradients back to the logits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "spineseg/core/tensor.hpp"
#include "spineseg/data/label_volume.hpp"
#include "spineseg/ops/softmax.hpp"

namespace spineseg {

inline constexpr double kLogClamp = 1e-12;
inline constexpr double kDiceSmooth = 1e-7;

/// Per-voxel class distribution, [K, H, W, D].
struct ProbVolume {
  Tensor probs;

  static ProbVolume from_logits(const Tensor& logits) { return {ops::softmax(logits, 0)}; }

  static ProbVolume one_hot(const LabelVolume& labels, std::size_t num_classes) {
    labels.validate(num_classes);
    const Extents3 e = labels.extents();
    Tensor p({num_classes, e.h, e.w, e.d});
    for (std::size_t v = 0; v < labels.size(); ++v) p[labels[v] * labels.size() + v] = 1.0;
    return {std::move(p)};
  }

  std::size_t classes() const { return probs.extent(0); }
  Extents3 extents() const { return spatial_extents(probs); }
};

enum class DiceMode {
  kPerClass,      // mean soft Dice over classes present in the truth
  kGlobalBinary,  // single foreground (label != 0) vs background Dice
};

struct LossValue {
  double total = 0.0;
  double ce = 0.0;
  double dice = 0.0;
};

namespace detail {

inline void check_pair(const ProbVolume& pred, const LabelVolume& truth, const char* who) {
  if (pred.probs.rank() != 4 || !(pred.extents() == truth.extents())) {
    throw ShapeError(std::string(who) + ": prediction " + shape_string(pred.probs.shape()) +
                     " does not match label grid");
  }
  truth.validate(pred.classes());
}

}  // namespace detail

/// Mean over voxels of -log(max(p[true class], 1e-12)).
inline double cross_entropy(const ProbVolume& pred, const LabelVolume& truth) {
  detail::check_pair(pred, truth, "cross_entropy");
  const std::size_t n = truth.size();
  long double s = 0.0L;
  for (std::size_t v = 0; v < n; ++v) s -= std::log(std::max(pred.probs[truth[v] * n + v], kLogClamp));
  return static_cast<double>(s) / static_cast<double>(n);
}

/// dL_CE/dprobs. Zero where the clamp is active.
inline Tensor cross_entropy_grad(const ProbVolume& pred, const LabelVolume& truth) {
  detail::check_pair(pred, truth, "cross_entropy_grad");
  const std::size_t n = truth.size();
  Tensor g = Tensor::zeros_like(pred.probs);
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t i = truth[v] * n + v;
    if (pred.probs[i] > kLogClamp) g[i] = -1.0 / (static_cast<double>(n) * pred.probs[i]);
  }
  return g;
}

namespace detail {

// Evaluates the Dice loss and, if `grad` is non-null, writes dL/dprobs.
inline double dice_impl(const ProbVolume& pred, const LabelVolume& truth, DiceMode mode, Tensor* grad) {
  check_pair(pred, truth, "dice_loss");
  const std::size_t n = truth.size(), k = pred.classes();
  if (grad) *grad = Tensor::zeros_like(pred.probs);
  if (mode == DiceMode::kGlobalBinary) {
    long double inter = 0.0L, sum_y = 0.0L, sum_p = 0.0L;
    for (std::size_t v = 0; v < n; ++v) {
      double fg = 0.0;
      for (std::size_t c = 1; c < k; ++c) fg += pred.probs[c * n + v];
      const double y = truth[v] != 0 ? 1.0 : 0.0;
      inter += y * fg;
      sum_y += y;
      sum_p += fg;
    }
    const double denom = static_cast<double>(sum_y + sum_p) + kDiceSmooth;
    if (grad) {
      for (std::size_t v = 0; v < n; ++v) {
        const double y = truth[v] != 0 ? 1.0 : 0.0;
        const double d = -2.0 * y / denom + 2.0 * static_cast<double>(inter) / (denom * denom);
        for (std::size_t c = 1; c < k; ++c) (*grad)[c * n + v] = d;
      }
    }
    return 1.0 - 2.0 * static_cast<double>(inter) / denom;
  }

  std::vector<long double> inter(k, 0.0L), sum_y(k, 0.0L), sum_p(k, 0.0L);
  for (std::size_t c = 0; c < k; ++c) {
    const double* p = pred.probs.ptr() + c * n;
    for (std::size_t v = 0; v < n; ++v) {
      const bool y = truth[v] == c;
      sum_p[c] += p[v];
      if (y) {
        inter[c] += p[v];
        sum_y[c] += 1.0;
      }
    }
  }
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) present += sum_y[c] > 0.0;
  double loss = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (sum_y[c] == 0.0) continue;
    const double denom = static_cast<double>(sum_y[c] + sum_p[c]) + kDiceSmooth;
    loss += 1.0 - 2.0 * static_cast<double>(inter[c]) / denom;
    if (grad) {
      const double scale = 1.0 / static_cast<double>(present);
      const double common = 2.0 * static_cast<double>(inter[c]) / (denom * denom);
      for (std::size_t v = 0; v < n; ++v) {
        const double y = truth[v] == c ? 1.0 : 0.0;
        (*grad)[c * n + v] = scale * (-2.0 * y / denom + common);
      }
    }
  }
  return loss / static_cast<double>(present);
}

}  // namespace detail

inline double dice_loss(const ProbVolume& pred, const LabelVolume& truth, DiceMode mode = DiceMode::kPerClass) {
  return detail::dice_impl(pred, truth, mode, nullptr);
}

inline Tensor dice_loss_grad(const ProbVolume& pred, const LabelVolume& truth, DiceMode mode = DiceMode::kPerClass) {
  Tensor g;
  detail::dice_impl(pred, truth, mode, &g);
  return g;
}

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("loss.lambda must be a finite non-negative number, got " + std::to_string(lambda));
  }
}

/// L = L_CE + lambda * L_Dice.
inline LossValue combined_loss(const ProbVolume& pred, const LabelVolume& truth, double lambda,
                               DiceMode mode = DiceMode::kPerClass) {
  check_lambda(lambda);
  LossValue v;
  v.ce = cross_entropy(pred, truth);
  v.dice = dice_loss(pred, truth, mode);
  v.total = v.ce + lambda * v.dice;
  return v;
}

struct LossWithGrad {
  LossValue value;
  Tensor grad_logits;
};

/// Combined loss on softmax(logits) with dL/dlogits.
inline LossWithGrad combined_loss_from_logits(const Tensor& logits, const LabelVolume& truth, double lambda,
                                              DiceMode mode = DiceMode::kPerClass) {
  check_lambda(lambda);
  const ProbVolume pred = ProbVolume::from_logits(logits);
  LossWithGrad r;
  r.value.ce = cross_entropy(pred, truth);
  Tensor grad_probs = cross_entropy_grad(pred, truth);
  Tensor dice_grad;
  r.value.dice = detail::dice_impl(pred, truth, mode, &dice_grad);
  r.value.total = r.value.ce + lambda * r.value.dice;
  for (std::size_t i = 0; i < grad_probs.size(); ++i) grad_probs[i] += lambda * dice_grad[i];
  r.grad_logits = ops::softmax_backward(pred.probs, grad_probs, 0);
  return r;
}

}  // namespace spineseg
