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

// Shifted-window self-attention over a 3D token grid with a per-window,
// per-head sigmoid gate on the attention output.
//
// Token tensors inside a block are channel-last [N, C] with N = H*W*D in
// row-major grid order. Windows wrap cyclically when shifted; there is no
// attention mask and no relative position bias.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "spineseg/core/init.hpp"
#include "spineseg/core/parallel.hpp"
#include "spineseg/core/parameter_store.hpp"
#include "spineseg/ops/activation.hpp"
#include "spineseg/ops/linear.hpp"

namespace spineseg {

struct WindowSpec {
  std::size_t window = 2;
  std::size_t shift = 0;
};

/// Flat source index of every windowed token: entry [w * T + t] is the grid
/// position of token t in window w. Windows are ordered lexicographically by
/// origin; a shift s reads the grid rolled by -s along each axis.
inline std::vector<std::size_t> window_token_order(const Extents3& grid, const WindowSpec& spec) {
  const std::size_t w = spec.window;
  if (w == 0) throw GeometryError("window size must be positive");
  if (spec.shift >= w) throw GeometryError("window shift must be smaller than the window");
  const char* names[] = {"H", "W", "D"};
  const std::size_t ext[] = {grid.h, grid.w, grid.d};
  for (int a = 0; a < 3; ++a) {
    if (ext[a] % w != 0) {
      throw GeometryError(std::string("token grid axis ") + names[a] + " extent " + std::to_string(ext[a]) +
                          " is not divisible by window " + std::to_string(w));
    }
  }
  std::vector<std::size_t> order;
  order.reserve(grid.volume());
  const std::size_t s = spec.shift;
  for (std::size_t oh = 0; oh < grid.h; oh += w)
    for (std::size_t ow = 0; ow < grid.w; ow += w)
      for (std::size_t od = 0; od < grid.d; od += w)
        for (std::size_t a = 0; a < w; ++a)
          for (std::size_t b = 0; b < w; ++b)
            for (std::size_t c = 0; c < w; ++c) {
              const std::size_t h = (oh + a + s) % grid.h;
              const std::size_t ww = (ow + b + s) % grid.w;
              const std::size_t d = (od + c + s) % grid.d;
              order.push_back((h * grid.w + ww) * grid.d + d);
            }
  return order;
}

/// Splits [C, H, W, D] into windows of [T, C] tokens, T = window³.
inline std::vector<Tensor> window_partition(const Tensor& tokens, const WindowSpec& spec) {
  const Extents3 grid = spatial_extents(tokens);
  const auto order = window_token_order(grid, spec);
  const std::size_t c = tokens.extent(0), n = grid.volume();
  const std::size_t t = spec.window * spec.window * spec.window;
  std::vector<Tensor> windows;
  windows.reserve(n / t);
  for (std::size_t w = 0; w < n / t; ++w) {
    Tensor win({t, c});
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) win[i * c + ch] = tokens[ch * n + order[w * t + i]];
    }
    windows.push_back(std::move(win));
  }
  return windows;
}

/// Exact inverse of window_partition, including the cyclic shift.
inline Tensor window_reverse(const std::vector<Tensor>& windows, const WindowSpec& spec, const Extents3& grid) {
  const auto order = window_token_order(grid, spec);
  const std::size_t t = spec.window * spec.window * spec.window;
  const std::size_t n = grid.volume();
  if (windows.size() != n / t) {
    throw ShapeError("window_reverse: expected " + std::to_string(n / t) + " windows, got " +
                     std::to_string(windows.size()));
  }
  if (windows.front().rank() != 2) throw ShapeError("window_reverse: windows must be [T, C]");
  const std::size_t c = windows.front().extent(1);
  Tensor out({c, grid.h, grid.w, grid.d});
  for (std::size_t w = 0; w < windows.size(); ++w) {
    if (windows[w].shape() != Shape{t, c}) {
      throw ShapeError("window_reverse: window " + std::to_string(w) + " has shape " +
                       shape_string(windows[w].shape()));
    }
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) out[ch * n + order[w * t + i]] = windows[w][i * c + ch];
    }
  }
  return out;
}

namespace detail {

// a = softmax(q kᵀ / sqrt(dk)) row-wise, o = a v. All buffers row-major.
inline void attention_forward(const double* q, const double* k, const double* v, std::size_t t, std::size_t dk,
                              double* a, double* o) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t i = 0; i < t; ++i) {
    double* row = a + i * t;
    double m = -INFINITY;
    for (std::size_t j = 0; j < t; ++j) {
      double s = 0.0;
      for (std::size_t x = 0; x < dk; ++x) s += q[i * dk + x] * k[j * dk + x];
      row[j] = s * scale;
      m = std::max(m, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      row[j] = std::exp(row[j] - m);
      z += row[j];
    }
    for (std::size_t j = 0; j < t; ++j) row[j] /= z;
    for (std::size_t x = 0; x < dk; ++x) {
      double s = 0.0;
      for (std::size_t j = 0; j < t; ++j) s += row[j] * v[j * dk + x];
      o[i * dk + x] = s;
    }
  }
}

// Overwrites gq, gk, gv. `scratch` must hold t*t doubles.
inline void attention_backward(const double* q, const double* k, const double* v, const double* a, const double* go,
                               std::size_t t, std::size_t dk, double* gq, double* gk, double* gv, double* scratch) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t j = 0; j < t; ++j) {
    for (std::size_t x = 0; x < dk; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < t; ++i) s += a[i * t + j] * go[i * dk + x];
      gv[j * dk + x] = s;
    }
  }
  // scratch <- dL/dlogits (already including the 1/sqrt(dk) factor)
  for (std::size_t i = 0; i < t; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      double ga = 0.0;
      for (std::size_t x = 0; x < dk; ++x) ga += go[i * dk + x] * v[j * dk + x];
      scratch[i * t + j] = ga;
      dot += ga * a[i * t + j];
    }
    for (std::size_t j = 0; j < t; ++j) scratch[i * t + j] = a[i * t + j] * (scratch[i * t + j] - dot) * scale;
  }
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t x = 0; x < dk; ++x) {
      double s = 0.0;
      for (std::size_t j = 0; j < t; ++j) s += scratch[i * t + j] * k[j * dk + x];
      gq[i * dk + x] = s;
    }
  }
  for (std::size_t j = 0; j < t; ++j) {
    for (std::size_t x = 0; x < dk; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < t; ++i) s += scratch[i * t + j] * q[i * dk + x];
      gk[j * dk + x] = s;
    }
  }
}

inline void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("scaled_dot_attention: Q " + shape_string(q.shape()) + ", K " + shape_string(k.shape()) +
                     ", V " + shape_string(v.shape()));
  }
}

}  // namespace detail

struct AttentionOutput {
  Tensor out;  // [T, d_k]
  Tensor attn; // [T, T]
};

/// A = softmax(Q Kᵀ / sqrt(d_k)), out = A V.
inline AttentionOutput scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  detail::check_qkv(q, k, v);
  const std::size_t t = q.extent(0), dk = q.extent(1);
  AttentionOutput r{Tensor({t, dk}), Tensor({t, t})};
  detail::attention_forward(q.ptr(), k.ptr(), v.ptr(), t, dk, r.attn.ptr(), r.out.ptr());
  return r;
}

struct AttentionGrads {
  Tensor q, k, v;
};

inline AttentionGrads scaled_dot_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                                                    const Tensor& attn, const Tensor& grad_out) {
  detail::check_qkv(q, k, v);
  if (grad_out.shape() != q.shape()) throw ShapeError("scaled_dot_attention_backward: upstream gradient shape");
  const std::size_t t = q.extent(0), dk = q.extent(1);
  AttentionGrads g{Tensor({t, dk}), Tensor({t, dk}), Tensor({t, dk})};
  std::vector<double> scratch(t * t);
  detail::attention_backward(q.ptr(), k.ptr(), v.ptr(), attn.ptr(), grad_out.ptr(), t, dk, g.q.ptr(), g.k.ptr(),
                             g.v.ptr(), scratch.data());
  return g;
}

/// Gate MLP weights: dim -> dim/2 (GELU) -> heads, followed by a sigmoid.
struct GateParams {
  const Tensor& fc1_weight;
  const Tensor& fc1_bias;
  const Tensor& fc2_weight;
  const Tensor& fc2_bias;
};

inline std::size_t gate_hidden(std::size_t dim) { return std::max<std::size_t>(1, dim / 2); }

/// g = sigmoid(MLP(mean over tokens)), one value per head.
inline Tensor adaptive_gate(const Tensor& window_tokens, const GateParams& p) {
  if (window_tokens.rank() != 2) throw ShapeError("adaptive_gate: expected [T, dim] tokens");
  const std::size_t t = window_tokens.extent(0), dim = window_tokens.extent(1);
  Tensor pooled({1, dim});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t c = 0; c < dim; ++c) pooled[c] += window_tokens[i * dim + c];
  }
  pooled *= 1.0 / static_cast<double>(t);
  const Tensor hidden = ops::gelu(ops::linear(pooled, p.fc1_weight, p.fc1_bias));
  const Tensor logits = ops::linear(hidden, p.fc2_weight, p.fc2_bias);
  Tensor g({logits.extent(1)});
  for (std::size_t h = 0; h < g.size(); ++h) g[h] = ops::sigmoid(logits[h]);
  return g;
}

struct SwinBlockConfig {
  std::size_t dim = 24;
  std::size_t heads = 3;
  std::size_t mlp_hidden = 96;
  WindowSpec window{};
  bool adaptive = true;  // false: gate fixed at 1 (plain Swin block)

  std::size_t head_dim() const { return dim / heads; }
};

/// Pre-norm Swin block:
///   x <- x + W_O (g ⊙ WindowAttention(LN1(x)))
///   x <- x + MLP(LN2(x))
class SwinBlock {
 public:
  static void register_params(ParameterStore& store, Initializer& init, const std::string& prefix,
                              const SwinBlockConfig& cfg) {
    if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
      throw ConfigError("attention: dim " + std::to_string(cfg.dim) + " is not divisible by heads " +
                        std::to_string(cfg.heads));
    }
    const std::size_t d = cfg.dim;
    init.constant(store, prefix + ".ln1.gamma", {d}, 1.0);
    init.constant(store, prefix + ".ln1.beta", {d}, 0.0);
    for (const char* m : {"q", "k", "v"}) init.uniform(store, prefix + ".attn." + m, {d, d}, d);
    init.uniform(store, prefix + ".attn.o", {d, d}, d);
    if (cfg.adaptive) {
      const std::size_t gh = gate_hidden(d);
      init.uniform(store, prefix + ".gate.fc1.weight", {gh, d}, d);
      init.constant(store, prefix + ".gate.fc1.bias", {gh}, 0.0);
      init.uniform(store, prefix + ".gate.fc2.weight", {cfg.heads, gh}, gh);
      init.constant(store, prefix + ".gate.fc2.bias", {cfg.heads}, 0.0);
    }
    init.constant(store, prefix + ".ln2.gamma", {d}, 1.0);
    init.constant(store, prefix + ".ln2.beta", {d}, 0.0);
    init.uniform(store, prefix + ".mlp.fc1.weight", {cfg.mlp_hidden, d}, d);
    init.constant(store, prefix + ".mlp.fc1.bias", {cfg.mlp_hidden}, 0.0);
    init.uniform(store, prefix + ".mlp.fc2.weight", {d, cfg.mlp_hidden}, cfg.mlp_hidden);
    init.constant(store, prefix + ".mlp.fc2.bias", {d}, 0.0);
  }

  SwinBlock() = default;

  /// Binds to already-registered parameters. With cfg.adaptive == false the
  /// gate parameters are never looked up, even if present.
  SwinBlock(const ParameterStore& store, const std::string& prefix, SwinBlockConfig cfg) : cfg_(cfg) {
    auto idx = [&](const std::string& n) { return store.index_of(prefix + n); };
    ln1_g_ = idx(".ln1.gamma");
    ln1_b_ = idx(".ln1.beta");
    wq_ = idx(".attn.q");
    wk_ = idx(".attn.k");
    wv_ = idx(".attn.v");
    wo_ = idx(".attn.o");
    if (cfg_.adaptive) {
      g1w_ = idx(".gate.fc1.weight");
      g1b_ = idx(".gate.fc1.bias");
      g2w_ = idx(".gate.fc2.weight");
      g2b_ = idx(".gate.fc2.bias");
    }
    ln2_g_ = idx(".ln2.gamma");
    ln2_b_ = idx(".ln2.beta");
    m1w_ = idx(".mlp.fc1.weight");
    m1b_ = idx(".mlp.fc1.bias");
    m2w_ = idx(".mlp.fc2.weight");
    m2b_ = idx(".mlp.fc2.bias");
  }

  Tensor forward(const ParameterStore& p, const Tensor& x, const Extents3& grid, int threads = 1) {
    const std::size_t c = cfg_.dim, heads = cfg_.heads, dk = cfg_.head_dim();
    if (x.rank() != 2 || x.extent(1) != c || x.extent(0) != grid.volume()) {
      throw ShapeError("swin block: tokens " + shape_string(x.shape()) + " do not match dim " + std::to_string(c));
    }
    order_ = window_token_order(grid, cfg_.window);
    const std::size_t t = tokens_per_window(), nw = grid.volume() / t;

    y1_ = ops::layer_norm(x, p.value(ln1_g_), p.value(ln1_b_), &ln1_);
    q_ = ops::linear(y1_, p.value(wq_), Tensor{});
    k_ = ops::linear(y1_, p.value(wk_), Tensor{});
    v_ = ops::linear(y1_, p.value(wv_), Tensor{});

    if (cfg_.adaptive) {
      pooled_ = Tensor({nw, c});
      for (std::size_t w = 0; w < nw; ++w) {
        for (std::size_t i = 0; i < t; ++i) {
          const double* row = y1_.ptr() + order_[w * t + i] * c;
          for (std::size_t ch = 0; ch < c; ++ch) pooled_[w * c + ch] += row[ch];
        }
      }
      pooled_ *= 1.0 / static_cast<double>(t);
      gate_pre_ = ops::linear(pooled_, p.value(g1w_), p.value(g1b_));
      gate_hidden_ = ops::gelu(gate_pre_);
      gate_ = ops::linear(gate_hidden_, p.value(g2w_), p.value(g2b_));
      for (std::size_t i = 0; i < gate_.size(); ++i) gate_[i] = ops::sigmoid(gate_[i]);
    } else {
      gate_ = Tensor({nw, heads}, 1.0);
    }

    attn_ = Tensor({nw, heads, t, t});
    head_out_ = Tensor({grid.volume(), c});
    z_ = Tensor({grid.volume(), c});
    parallel_for(nw, threads, [&](std::size_t w) {
      std::vector<double> qb(t * dk), kb(t * dk), vb(t * dk), ob(t * dk);
      for (std::size_t h = 0; h < heads; ++h) {
        gather(w, h, q_, qb);
        gather(w, h, k_, kb);
        gather(w, h, v_, vb);
        double* a = attn_.ptr() + (w * heads + h) * t * t;
        detail::attention_forward(qb.data(), kb.data(), vb.data(), t, dk, a, ob.data());
        const double g = gate_[w * heads + h];
        for (std::size_t i = 0; i < t; ++i) {
          const std::size_t base = order_[w * t + i] * c + h * dk;
          for (std::size_t x2 = 0; x2 < dk; ++x2) {
            head_out_[base + x2] = ob[i * dk + x2];
            z_[base + x2] = g * ob[i * dk + x2];
          }
        }
      }
    });

    Tensor x2 = ops::linear(z_, p.value(wo_), Tensor{});
    x2 += x;
    y2_ = ops::layer_norm(x2, p.value(ln2_g_), p.value(ln2_b_), &ln2_);
    m1_ = ops::linear(y2_, p.value(m1w_), p.value(m1b_));
    m1_act_ = ops::gelu(m1_);
    Tensor out = ops::linear(m1_act_, p.value(m2w_), p.value(m2b_));
    out += x2;
    return out;
  }

  Tensor backward(ParameterStore& p, const Tensor& grad_out, int threads = 1) {
    const std::size_t c = cfg_.dim, heads = cfg_.heads, dk = cfg_.head_dim();
    const std::size_t t = tokens_per_window(), n = y1_.extent(0), nw = n / t;

    Tensor g_m1a = ops::linear_backward(m1_act_, p.value(m2w_), grad_out, p.grad(m2w_), &p.grad(m2b_));
    Tensor g_m1 = ops::gelu_backward(m1_, g_m1a);
    Tensor g_y2 = ops::linear_backward(y2_, p.value(m1w_), g_m1, p.grad(m1w_), &p.grad(m1b_));
    Tensor g_x2 = ops::layer_norm_backward(ln2_, p.value(ln2_g_), g_y2, p.grad(ln2_g_), p.grad(ln2_b_));
    g_x2 += grad_out;

    Tensor g_z = ops::linear_backward(z_, p.value(wo_), g_x2, p.grad(wo_), nullptr);
    Tensor g_q({n, c}), g_k({n, c}), g_v({n, c});
    Tensor g_gate({nw, heads});
    parallel_for(nw, threads, [&](std::size_t w) {
      std::vector<double> qb(t * dk), kb(t * dk), vb(t * dk), go(t * dk), gq(t * dk), gk(t * dk), gv(t * dk),
          scratch(t * t);
      for (std::size_t h = 0; h < heads; ++h) {
        const double g = gate_[w * heads + h];
        double gg = 0.0;
        for (std::size_t i = 0; i < t; ++i) {
          const std::size_t base = order_[w * t + i] * c + h * dk;
          for (std::size_t x = 0; x < dk; ++x) {
            go[i * dk + x] = g * g_z[base + x];
            gg += g_z[base + x] * head_out_[base + x];
          }
        }
        g_gate[w * heads + h] = gg;
        gather(w, h, q_, qb);
        gather(w, h, k_, kb);
        gather(w, h, v_, vb);
        const double* a = attn_.ptr() + (w * heads + h) * t * t;
        detail::attention_backward(qb.data(), kb.data(), vb.data(), a, go.data(), t, dk, gq.data(), gk.data(),
                                   gv.data(), scratch.data());
        scatter(w, h, gq, g_q);
        scatter(w, h, gk, g_k);
        scatter(w, h, gv, g_v);
      }
    });

    Tensor g_y1 = ops::linear_backward(y1_, p.value(wq_), g_q, p.grad(wq_), nullptr);
    g_y1 += ops::linear_backward(y1_, p.value(wk_), g_k, p.grad(wk_), nullptr);
    g_y1 += ops::linear_backward(y1_, p.value(wv_), g_v, p.grad(wv_), nullptr);

    if (cfg_.adaptive) {
      Tensor g_logit = Tensor::zeros_like(gate_);
      for (std::size_t i = 0; i < gate_.size(); ++i) g_logit[i] = g_gate[i] * gate_[i] * (1.0 - gate_[i]);
      Tensor g_hidden = ops::linear_backward(gate_hidden_, p.value(g2w_), g_logit, p.grad(g2w_), &p.grad(g2b_));
      Tensor g_pre = ops::gelu_backward(gate_pre_, g_hidden);
      Tensor g_pooled = ops::linear_backward(pooled_, p.value(g1w_), g_pre, p.grad(g1w_), &p.grad(g1b_));
      const double inv_t = 1.0 / static_cast<double>(t);
      for (std::size_t w = 0; w < nw; ++w) {
        for (std::size_t i = 0; i < t; ++i) {
          double* row = g_y1.ptr() + order_[w * t + i] * c;
          for (std::size_t ch = 0; ch < c; ++ch) row[ch] += g_pooled[w * c + ch] * inv_t;
        }
      }
    }

    Tensor g_x = ops::layer_norm_backward(ln1_, p.value(ln1_g_), g_y1, p.grad(ln1_g_), p.grad(ln1_b_));
    g_x += g_x2;
    return g_x;
  }

  const SwinBlockConfig& config() const noexcept { return cfg_; }
  /// Attention matrices of the last forward, [windows, heads, T, T].
  const Tensor& attention() const noexcept { return attn_; }
  /// Gate values of the last forward, [windows, heads].
  const Tensor& gates() const noexcept { return gate_; }

 private:
  std::size_t tokens_per_window() const { return cfg_.window.window * cfg_.window.window * cfg_.window.window; }

  void gather(std::size_t w, std::size_t h, const Tensor& src, std::vector<double>& dst) const {
    const std::size_t t = tokens_per_window(), c = cfg_.dim, dk = cfg_.head_dim();
    for (std::size_t i = 0; i < t; ++i) {
      const double* row = src.ptr() + order_[w * t + i] * c + h * dk;
      std::copy(row, row + dk, dst.begin() + static_cast<std::ptrdiff_t>(i * dk));
    }
  }

  void scatter(std::size_t w, std::size_t h, const std::vector<double>& src, Tensor& dst) const {
    const std::size_t t = tokens_per_window(), c = cfg_.dim, dk = cfg_.head_dim();
    for (std::size_t i = 0; i < t; ++i) {
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(i * dk),
                src.begin() + static_cast<std::ptrdiff_t>((i + 1) * dk), dst.ptr() + order_[w * t + i] * c + h * dk);
    }
  }

  SwinBlockConfig cfg_;
  std::size_t ln1_g_ = 0, ln1_b_ = 0, wq_ = 0, wk_ = 0, wv_ = 0, wo_ = 0;
  std::size_t g1w_ = 0, g1b_ = 0, g2w_ = 0, g2b_ = 0;
  std::size_t ln2_g_ = 0, ln2_b_ = 0, m1w_ = 0, m1b_ = 0, m2w_ = 0, m2b_ = 0;

  std::vector<std::size_t> order_;
  ops::LayerNormCache ln1_, ln2_;
  Tensor y1_, q_, k_, v_, pooled_, gate_pre_, gate_hidden_, gate_, attn_, head_out_, z_;
  Tensor y2_, m1_, m1_act_;
};

/// One Swin block applied to a channel-first [C, H, W, D] tensor.
/// `ablate_adaptive` fixes the gate at 1 regardless of stored gate weights.
inline Tensor swin_block(const Tensor& tokens, const WindowSpec& spec, const ParameterStore& params,
                         const std::string& prefix, std::size_t heads, std::size_t mlp_hidden, bool ablate_adaptive) {
  const Extents3 grid = spatial_extents(tokens);
  SwinBlockConfig cfg{tokens.extent(0), heads, mlp_hidden, spec, !ablate_adaptive};
  SwinBlock block(params, prefix, cfg);
  return ops::channels_first(block.forward(params, ops::channels_last(tokens), grid), grid);
}

}  // namespace spineseg
