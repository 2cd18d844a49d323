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

// Full segmentation model:
//
//   stem      multi-scale fusion (or a single 3x3x3 conv when ablated) + GELU
//   embed     patch_size-strided conv to embed_dim tokens
//   encoder   per stage: [2x2x2 stride-2 downsample conv] + depth Swin blocks,
//             alternating window shift 0 and window/2; channels double per stage
//   decoder   per level: transposed-conv x2 upsampling, 1x1x1 skip projection,
//             concatenation, two 3x3x3 conv + GELU
//   head      1x1x1 conv to num_classes logits

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spineseg/attention.hpp"
#include "spineseg/core/init.hpp"
#include "spineseg/core/parameter_store.hpp"
#include "spineseg/fusion.hpp"
#include "spineseg/loss.hpp"
#include "spineseg/ops/activation.hpp"
#include "spineseg/ops/conv3d.hpp"

namespace spineseg {

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 4;
  std::size_t patch_size = 2;
  std::size_t embed_dim = 24;
  std::vector<std::size_t> depths{2, 2};
  std::vector<std::size_t> heads{3, 3};
  std::size_t window = 2;
  std::size_t mlp_ratio = 4;
  FusionConfig fusion{};
  double lambda = 1.0;
  DiceMode dice_mode = DiceMode::kPerClass;
  bool use_multiscale = true;
  bool use_adaptive = true;
  std::uint64_t seed = 0;

  std::size_t stages() const noexcept { return depths.size(); }
  std::size_t stage_dim(std::size_t s) const noexcept { return embed_dim << s; }
  std::size_t stem_channels() const noexcept { return fusion.out_channels; }

  /// Every input extent must be a multiple of this.
  std::size_t input_multiple() const noexcept { return patch_size * (std::size_t{1} << (stages() - 1)) * window; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (in_channels == 0) fail("model.in_channels must be positive");
    if (num_classes < 2 || num_classes > 255) fail("model.num_classes must be in [2, 255]");
    if (patch_size == 0) fail("model.patch_size must be positive");
    if (embed_dim == 0) fail("model.embed_dim must be positive");
    if (depths.empty()) fail("model.depths must list at least one stage");
    if (heads.size() != depths.size()) fail("model.heads must have one entry per stage (model.depths)");
    for (std::size_t s = 0; s < depths.size(); ++s) {
      if (depths[s] == 0) fail("model.depths entries must be positive");
      if (heads[s] == 0 || embed_dim % heads[s] != 0) {
        fail("model.embed_dim " + std::to_string(embed_dim) + " is not divisible by model.heads[" +
             std::to_string(s) + "] = " + std::to_string(heads[s]));
      }
    }
    if (window == 0) fail("model.window must be positive");
    if (mlp_ratio == 0) fail("model.mlp_ratio must be positive");
    if (fusion.in_channels != in_channels) fail("fusion.in_channels must equal model.in_channels");
    fusion.validate();
    if (!(lambda >= 0.0)) fail("loss.lambda must be non-negative");
  }

  void validate_input(const Tensor& volume) const {
    if (volume.rank() != 4 || volume.extent(0) != in_channels) {
      throw ShapeError("model input " + shape_string(volume.shape()) + " must be [" + std::to_string(in_channels) +
                       ",H,W,D]");
    }
    const std::size_t m = input_multiple();
    const char* names[] = {"H", "W", "D"};
    for (std::size_t a = 0; a < 3; ++a) {
      if (volume.extent(a + 1) % m != 0) {
        throw GeometryError("input axis " + std::string(names[a]) + " extent " + std::to_string(volume.extent(a + 1)) +
                            " must be divisible by " + std::to_string(m) +
                            " (patch_size x 2^(stages-1) x window)");
      }
    }
  }
};

enum class AblationTarget { kMultiscale, kAdaptive, kBoth };

inline ModelConfig ablate(ModelConfig cfg, AblationTarget which) {
  if (which != AblationTarget::kAdaptive) cfg.use_multiscale = false;
  if (which != AblationTarget::kMultiscale) cfg.use_adaptive = false;
  return cfg;
}

namespace detail {

struct ConvLayer {
  std::size_t weight = 0, bias = 0, stride = 1, padding = 0;
  Tensor input;

  static ConvLayer make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t cin,
                        std::size_t cout, std::size_t k, std::size_t stride, std::size_t padding) {
    ConvLayer l;
    l.weight = init.uniform(store, name + ".weight", {cout, cin, k, k, k}, cin * k * k * k, 2.0);
    l.bias = init.constant(store, name + ".bias", {cout}, 0.0);
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  Tensor forward(const ParameterStore& p, const Tensor& x) {
    input = x;
    return ops::conv3d(x, p.value(weight), p.value(bias), stride, padding);
  }

  Tensor backward(ParameterStore& p, const Tensor& g, bool need_input_grad = true) {
    ops::conv3d_kernel_grad(input, g, stride, padding, p.grad(weight));
    ops::channel_sum_grad(g, p.grad(bias));
    if (!need_input_grad) return {};
    return ops::conv3d_input_grad(p.value(weight), g, input.shape(), stride, padding);
  }
};

struct UpLayer {
  std::size_t weight = 0, bias = 0, stride = 2;
  Tensor input;

  static UpLayer make(ParameterStore& store, Initializer& init, const std::string& name, std::size_t cin,
                      std::size_t cout, std::size_t k) {
    UpLayer l;
    l.weight = init.uniform(store, name + ".weight", {cin, cout, k, k, k}, cin, 2.0);
    l.bias = init.constant(store, name + ".bias", {cout}, 0.0);
    l.stride = k;
    return l;
  }

  Tensor forward(const ParameterStore& p, const Tensor& x) {
    input = x;
    return ops::conv_transpose3d(x, p.value(weight), p.value(bias), stride);
  }

  Tensor backward(ParameterStore& p, const Tensor& g) {
    ops::conv_transpose3d_kernel_grad(input, g, stride, p.grad(weight));
    ops::channel_sum_grad(g, p.grad(bias));
    return ops::conv_transpose3d_input_grad(p.value(weight), g, stride);
  }
};

struct DecoderLevel {
  UpLayer up;
  ConvLayer skip, conv1, conv2;
  std::size_t up_channels = 0;
  Tensor pre1, pre2;
};

struct Stage {
  std::optional<ConvLayer> down;
  std::vector<SwinBlock> blocks;
  Extents3 grid{};
};

}  // namespace detail

class SegmentationModel {
 public:
  explicit SegmentationModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Initializer init(cfg_.seed);
    const std::size_t f = cfg_.stem_channels();

    if (cfg_.use_multiscale) {
      register_fusion_params(params_, init, "stem", cfg_.fusion);
      fusion_ = MultiScaleFusion(cfg_.fusion, "stem");
    } else {
      stem_conv_ = detail::ConvLayer::make(params_, init, "stem.conv", cfg_.in_channels, f, 3, 1, 1);
    }
    embed_ = detail::ConvLayer::make(params_, init, "embed", f, cfg_.embed_dim, cfg_.patch_size, cfg_.patch_size, 0);

    for (std::size_t s = 0; s < cfg_.stages(); ++s) {
      detail::Stage stage;
      const std::string prefix = "encoder.stage" + std::to_string(s);
      const std::size_t dim = cfg_.stage_dim(s);
      if (s > 0) stage.down = detail::ConvLayer::make(params_, init, prefix + ".down", cfg_.stage_dim(s - 1), dim, 2, 2, 0);
      for (std::size_t b = 0; b < cfg_.depths[s]; ++b) {
        const SwinBlockConfig bc{dim, cfg_.heads[s], dim * cfg_.mlp_ratio,
                                 WindowSpec{cfg_.window, b % 2 == 1 ? cfg_.window / 2 : 0}, cfg_.use_adaptive};
        const std::string name = prefix + ".block" + std::to_string(b);
        SwinBlock::register_params(params_, init, name, bc);
        stage.blocks.emplace_back(params_, name, bc);
      }
      stages_.push_back(std::move(stage));
    }

    // Deepest level first; the last level returns to full resolution.
    for (std::size_t s = cfg_.stages(); s-- > 0;) {
      const std::string prefix = "decoder.level" + std::to_string(decoder_.size());
      const std::size_t cin = cfg_.stage_dim(s);
      const std::size_t cout = s > 0 ? cfg_.stage_dim(s - 1) : f;
      const std::size_t k = s > 0 ? 2 : cfg_.patch_size;
      detail::DecoderLevel lvl;
      lvl.up = detail::UpLayer::make(params_, init, prefix + ".up", cin, cout, k);
      lvl.skip = detail::ConvLayer::make(params_, init, prefix + ".skip", cout, cout, 1, 1, 0);
      lvl.conv1 = detail::ConvLayer::make(params_, init, prefix + ".conv1", 2 * cout, cout, 3, 1, 1);
      lvl.conv2 = detail::ConvLayer::make(params_, init, prefix + ".conv2", cout, cout, 3, 1, 1);
      lvl.up_channels = cout;
      decoder_.push_back(std::move(lvl));
    }
    head_ = detail::ConvLayer::make(params_, init, "head", f, cfg_.num_classes, 1, 1, 0);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }

  /// Worker count for window attention and fusion branches (1 = serial).
  void set_threads(int threads) noexcept { threads_ = threads < 1 ? 1 : threads; }

  /// Multiplies the head-bias gradient by `factor` after every backward.
  /// Exists only to exercise gradient-check failure paths.
  void inject_gradient_fault(double factor) noexcept { grad_fault_ = factor; }

  /// [C, H, W, D] -> logits [K, H, W, D]. Caches activations for backward.
  Tensor forward(const Tensor& volume) {
    cfg_.validate_input(volume);
    input_shape_ = volume.shape();
    stem_pre_ = cfg_.use_multiscale ? fusion_.forward(params_, volume, threads_) : stem_conv_.forward(params_, volume);
    stem_out_ = ops::gelu(stem_pre_);

    Tensor t = embed_.forward(params_, stem_out_);
    skips_.clear();
    for (auto& stage : stages_) {
      if (stage.down) t = stage.down->forward(params_, t);
      stage.grid = spatial_extents(t);
      Tensor tokens = ops::channels_last(t);
      for (auto& block : stage.blocks) tokens = block.forward(params_, tokens, stage.grid, threads_);
      t = ops::channels_first(tokens, stage.grid);
      skips_.push_back(t);
    }

    Tensor d = skips_.back();
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
      auto& lvl = decoder_[l];
      const Tensor& skip = l + 1 < decoder_.size() ? skips_[skips_.size() - 2 - l] : stem_out_;
      Tensor up = lvl.up.forward(params_, d);
      Tensor cat = ops::concat_channels(up, lvl.skip.forward(params_, skip));
      lvl.pre1 = lvl.conv1.forward(params_, cat);
      lvl.pre2 = lvl.conv2.forward(params_, ops::gelu(lvl.pre1));
      d = ops::gelu(lvl.pre2);
    }
    Tensor logits = head_.forward(params_, d);
    require_finite(logits, "forward");
    has_cache_ = true;
    return logits;
  }

  /// Accumulates parameter gradients for dL/dlogits. Requires a preceding
  /// forward; each forward supports exactly one backward.
  void backward(const Tensor& grad_logits, bool want_input_grad = false) {
    if (!has_cache_) throw StateError("backward called without a preceding forward");
    has_cache_ = false;
    if (grad_logits.shape() != Shape{cfg_.num_classes, input_shape_[1], input_shape_[2], input_shape_[3]}) {
      throw ShapeError("backward: upstream gradient " + shape_string(grad_logits.shape()));
    }

    Tensor g = head_.backward(params_, grad_logits);
    std::vector<Tensor> skip_grads(skips_.size());
    Tensor stem_grad;
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const std::size_t l = decoder_.size() - 1 - i;  // walk from the full-resolution level upwards
      auto& lvl = decoder_[l];
      g = ops::gelu_backward(lvl.pre2, g);
      g = lvl.conv2.backward(params_, g);
      g = ops::gelu_backward(lvl.pre1, g);
      g = lvl.conv1.backward(params_, g);
      auto [g_up, g_skip] = ops::split_channels(g, lvl.up_channels);
      Tensor g_skip_in = lvl.skip.backward(params_, g_skip);
      if (l + 1 < decoder_.size()) {
        skip_grads[skips_.size() - 2 - l] = std::move(g_skip_in);
      } else {
        stem_grad = std::move(g_skip_in);
      }
      g = lvl.up.backward(params_, g_up);
    }

    for (std::size_t s = stages_.size(); s-- > 0;) {
      auto& stage = stages_[s];
      if (!skip_grads[s].empty()) g += skip_grads[s];
      Tensor tokens = ops::channels_last(g);
      for (std::size_t b = stage.blocks.size(); b-- > 0;) tokens = stage.blocks[b].backward(params_, tokens, threads_);
      g = ops::channels_first(tokens, stage.grid);
      if (stage.down) g = stage.down->backward(params_, g);
    }
    stem_grad += embed_.backward(params_, g);
    stem_grad = ops::gelu_backward(stem_pre_, stem_grad);
    if (cfg_.use_multiscale) {
      input_grad_ = fusion_.backward(params_, stem_grad, threads_);
    } else {
      input_grad_ = stem_conv_.backward(params_, stem_grad, want_input_grad);
    }
    if (!want_input_grad) input_grad_ = Tensor{};
    if (grad_fault_ != 1.0) params_.grad(head_.bias) *= grad_fault_;
  }

  /// dL/dinput from the last backward(…, want_input_grad = true).
  const Tensor& input_grad() const {
    if (input_grad_.empty()) throw StateError("input gradient was not requested in the last backward");
    return input_grad_;
  }

  /// Parameters of the Swin blocks, for inspection: [stage][block].
  const SwinBlock& block(std::size_t stage, std::size_t index) const { return stages_.at(stage).blocks.at(index); }

 private:
  ModelConfig cfg_;
  ParameterStore params_;
  int threads_ = 1;
  double grad_fault_ = 1.0;

  MultiScaleFusion fusion_;
  detail::ConvLayer stem_conv_, embed_, head_;
  std::vector<detail::Stage> stages_;
  std::vector<detail::DecoderLevel> decoder_;

  bool has_cache_ = false;
  Shape input_shape_;
  Tensor stem_pre_, stem_out_, input_grad_;
  std::vector<Tensor> skips_;
};

inline SegmentationModel init_model(const ModelConfig& cfg) { return SegmentationModel(cfg); }

/// Argmax over the class axis of [K, H, W, D] logits.
inline LabelVolume argmax_labels(const Tensor& logits) {
  const Extents3 e = spatial_extents(logits);
  const std::size_t k = logits.extent(0), n = e.volume();
  LabelVolume out(e);
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[c * n + v] > logits[best * n + v]) best = c;
    }
    out[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace spineseg
