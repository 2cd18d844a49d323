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

// Multi-scale convolution branches and their softmax-weighted fusion:
//   F = sum_i w_i * F_i,   w = softmax(logits).

#include <cstddef>
#include <string>
#include <vector>

#include "spineseg/core/init.hpp"
#include "spineseg/core/parallel.hpp"
#include "spineseg/core/parameter_store.hpp"
#include "spineseg/ops/conv3d.hpp"
#include "spineseg/ops/softmax.hpp"

namespace spineseg {

struct FusionConfig {
  std::vector<std::size_t> kernel_sizes{1, 3, 5};
  std::size_t in_channels = 1;
  std::size_t out_channels = 8;

  void validate() const {
    if (kernel_sizes.empty()) throw ConfigError("fusion.kernel_sizes: at least one branch is required");
    for (std::size_t k : kernel_sizes) {
      if (k % 2 == 0) throw ConfigError("fusion.kernel_sizes: kernel size " + std::to_string(k) + " is not odd");
    }
    if (in_channels == 0) throw ConfigError("fusion.in_channels must be positive");
    if (out_channels == 0) throw ConfigError("fusion.out_channels must be positive");
  }
};

/// Trainable fusion logits; the effective weights are their softmax.
struct FusionWeights {
  Tensor logits;

  Tensor weights() const { return ops::softmax(logits, 0); }
};

namespace fusion_names {
inline std::string branch_weight(const std::string& prefix, std::size_t i) {
  return prefix + ".branch" + std::to_string(i) + ".weight";
}
inline std::string branch_bias(const std::string& prefix, std::size_t i) {
  return prefix + ".branch" + std::to_string(i) + ".bias";
}
inline std::string logits(const std::string& prefix) { return prefix + ".logits"; }
}  // namespace fusion_names

inline void register_fusion_params(ParameterStore& store, Initializer& init, const std::string& prefix,
                                   const FusionConfig& cfg) {
  cfg.validate();
  for (std::size_t i = 0; i < cfg.kernel_sizes.size(); ++i) {
    const std::size_t k = cfg.kernel_sizes[i];
    init.uniform(store, fusion_names::branch_weight(prefix, i), {cfg.out_channels, cfg.in_channels, k, k, k},
                 cfg.in_channels * k * k * k, 2.0);
    init.constant(store, fusion_names::branch_bias(prefix, i), {cfg.out_channels}, 0.0);
  }
  init.constant(store, fusion_names::logits(prefix), {cfg.kernel_sizes.size()}, 0.0);
}

/// Runs every branch as a stride-1 same-padded convolution so all F_i share
/// the input's spatial extents.
inline std::vector<Tensor> multiscale_extract(const Tensor& input, const FusionConfig& cfg,
                                              const ParameterStore& params, const std::string& prefix = "stem",
                                              int threads = 1) {
  cfg.validate();
  if (input.rank() != 4 || input.extent(0) != cfg.in_channels) {
    throw ShapeError("multiscale_extract: input " + shape_string(input.shape()) + " expected " +
                     std::to_string(cfg.in_channels) + " channels");
  }
  std::vector<Tensor> features(cfg.kernel_sizes.size());
  parallel_for(features.size(), threads, [&](std::size_t i) {
    features[i] = ops::conv3d(input, params.value(fusion_names::branch_weight(prefix, i)),
                              params.value(fusion_names::branch_bias(prefix, i)), 1, (cfg.kernel_sizes[i] - 1) / 2);
  });
  return features;
}

inline void require_common_shape(const std::vector<Tensor>& features) {
  if (features.empty()) throw ShapeError("adaptive_fuse: no features");
  for (const auto& f : features) {
    if (f.shape() != features.front().shape()) {
      throw ShapeError("adaptive_fuse: heterogeneous feature shapes " + shape_string(features.front().shape()) +
                       " vs " + shape_string(f.shape()));
    }
  }
}

inline Tensor adaptive_fuse(const std::vector<Tensor>& features, const FusionWeights& weights) {
  require_common_shape(features);
  if (weights.logits.shape() != Shape{features.size()}) {
    throw ShapeError("adaptive_fuse: " + std::to_string(features.size()) + " features but logits " +
                     shape_string(weights.logits.shape()));
  }
  const Tensor w = weights.weights();
  Tensor out = Tensor::zeros_like(features.front());
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Tensor& f = features[i];
    for (std::size_t v = 0; v < out.size(); ++v) out[v] += w[i] * f[v];
  }
  return out;
}

struct FuseGrads {
  std::vector<Tensor> features;
  Tensor logits;
};

inline FuseGrads adaptive_fuse_backward(const std::vector<Tensor>& features, const FusionWeights& weights,
                                        const Tensor& grad_out) {
  require_common_shape(features);
  const Tensor w = weights.weights();
  FuseGrads g;
  Tensor grad_w({features.size()});
  for (std::size_t i = 0; i < features.size(); ++i) {
    Tensor gf = grad_out;
    gf *= w[i];
    g.features.push_back(std::move(gf));
    double dot = 0.0;
    for (std::size_t v = 0; v < grad_out.size(); ++v) dot += grad_out[v] * features[i][v];
    grad_w[i] = dot;
  }
  g.logits = ops::softmax_backward(w, grad_w, 0);
  return g;
}

/// Stateful layer: caches branch inputs/outputs for backward.
class MultiScaleFusion {
 public:
  MultiScaleFusion() = default;
  MultiScaleFusion(FusionConfig cfg, std::string prefix) : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {}

  Tensor forward(const ParameterStore& params, const Tensor& input, int threads = 1) {
    input_ = input;
    features_ = multiscale_extract(input, cfg_, params, prefix_, threads);
    return adaptive_fuse(features_, FusionWeights{params.value(fusion_names::logits(prefix_))});
  }

  Tensor backward(ParameterStore& params, const Tensor& grad_out, int threads = 1) {
    auto g = adaptive_fuse_backward(features_, FusionWeights{params.value(fusion_names::logits(prefix_))}, grad_out);
    params.grad(fusion_names::logits(prefix_)) += g.logits;
    std::vector<Tensor> grad_inputs(features_.size());
    // Branch parameters are disjoint, so branches can run concurrently.
    std::vector<std::size_t> w_idx, b_idx;
    for (std::size_t i = 0; i < features_.size(); ++i) {
      w_idx.push_back(params.index_of(fusion_names::branch_weight(prefix_, i)));
      b_idx.push_back(params.index_of(fusion_names::branch_bias(prefix_, i)));
    }
    parallel_for(features_.size(), threads, [&](std::size_t i) {
      const std::size_t pad = (cfg_.kernel_sizes[i] - 1) / 2;
      ops::conv3d_kernel_grad(input_, g.features[i], 1, pad, params.grad(w_idx[i]));
      ops::channel_sum_grad(g.features[i], params.grad(b_idx[i]));
      grad_inputs[i] = ops::conv3d_input_grad(params.value(w_idx[i]), g.features[i], input_.shape(), 1, pad);
    });
    Tensor grad_in = std::move(grad_inputs[0]);
    for (std::size_t i = 1; i < grad_inputs.size(); ++i) grad_in += grad_inputs[i];
    return grad_in;
  }

  const std::vector<Tensor>& features() const noexcept { return features_; }

 private:
  FusionConfig cfg_;
  std::string prefix_;
  Tensor input_;
  std::vector<Tensor> features_;
};

}  // namespace spineseg
