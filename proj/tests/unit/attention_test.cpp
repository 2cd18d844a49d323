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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spineseg/attention.hpp"
#include "spineseg/ops/activation.hpp"
#include "spineseg/ops/linear.hpp"
#include "test_util.hpp"

namespace spineseg {
namespace {

using testing::dot;
using testing::fd_error;
using testing::random_tensor;

TEST(WindowPartition, CountsWindows) {
  const auto w = window_partition(Tensor({3, 4, 4, 4}), {2, 0});
  ASSERT_EQ(w.size(), 8u);
  EXPECT_EQ(w[0].shape(), (Shape{8, 3}));
}

TEST(WindowPartition, ShiftedTokenLandsInWrappedWindow) {
  // Window 7 has origin (2,2,2) in the rolled grid, i.e. (3,3,3) before the roll.
  const auto order = window_token_order({4, 4, 4}, {2, 1});
  const auto it = std::find(order.begin(), order.end(), std::size_t{0});
  const std::size_t pos = static_cast<std::size_t>(it - order.begin());
  EXPECT_EQ(pos / 8, 7u);
  EXPECT_EQ(pos % 8, 7u);
  // The window's first token sits at the pre-roll origin (3,3,3).
  EXPECT_EQ(order[7 * 8], (3u * 4 + 3) * 4 + 3);
}

TEST(WindowPartition, RoundTripIsExact) {
  Rng rng = derive_rng(1, {});
  for (std::size_t window : {1u, 2u, 4u}) {
    for (std::size_t shift : {std::size_t{0}, window / 2}) {
      if (shift >= window) continue;
      const Tensor x = random_tensor({3, 4, 8, 4}, rng);
      EXPECT_EQ(window_reverse(window_partition(x, {window, shift}), {window, shift}, {4, 8, 4}), x);
    }
  }
}

TEST(WindowPartition, ShiftedRoundTripIsIdentityPermutation) {
  Tensor idx({1, 4, 4, 4});
  std::iota(idx.data().begin(), idx.data().end(), 0.0);
  const auto order = window_token_order({4, 4, 4}, {2, 1});
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(window_reverse(window_partition(idx, {2, 1}), {2, 1}, {4, 4, 4}), idx);
}

TEST(WindowPartition, SingleWindowIsReshape) {
  Rng rng = derive_rng(2, {});
  const Tensor x = random_tensor({2, 2, 2, 2}, rng);
  const auto w = window_partition(x, {2, 0});
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0], ops::channels_last(x));
}

TEST(WindowPartition, Errors) {
  EXPECT_THROW(window_partition(Tensor({1, 4, 3, 4}), {2, 0}), GeometryError);
  EXPECT_THROW(window_token_order({4, 4, 4}, {2, 2}), GeometryError);
  auto w = window_partition(Tensor({1, 4, 4, 4}), {2, 0});
  w.pop_back();
  EXPECT_THROW(window_reverse(w, {2, 0}, {4, 4, 4}), ShapeError);
}

TEST(ScaledDotAttention, Examples) {
  Rng rng = derive_rng(3, {});
  const Tensor v1 = random_tensor({1, 3}, rng);
  const auto single = scaled_dot_attention(random_tensor({1, 3}, rng), random_tensor({1, 3}, rng), v1);
  EXPECT_EQ(single.attn[0], 1.0);
  EXPECT_EQ(single.out, v1);

  const Tensor v = random_tensor({4, 2}, rng);
  const auto zero_q = scaled_dot_attention(Tensor({4, 2}), random_tensor({4, 2}, rng), v);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(zero_q.attn[i * 4 + j], 0.25, 1e-15);
    for (std::size_t c = 0; c < 2; ++c) {
      const double mean = (v[c] + v[2 + c] + v[4 + c] + v[6 + c]) / 4.0;
      EXPECT_NEAR(zero_q.out[i * 2 + c], mean, 1e-15);
    }
  }

  Tensor q({2, 1}), k({2, 1});
  q[0] = 1.0;
  k[0] = 1.0;
  const auto r = scaled_dot_attention(q, k, random_tensor({2, 1}, rng));
  const double e = std::exp(1.0);
  EXPECT_NEAR(r.attn[0], e / (e + 1.0), 1e-15);
  EXPECT_NEAR(r.attn[1], 1.0 / (e + 1.0), 1e-15);
  EXPECT_NEAR(r.attn[0], 0.7311, 5e-5);

  EXPECT_THROW(scaled_dot_attention(Tensor({2, 1}), Tensor({3, 1}), Tensor({2, 1})), ShapeError);
}

TEST(ScaledDotAttention, RowsSumToOneAndRowShiftInvariant) {
  Rng rng = derive_rng(4, {});
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = 1 + uniform_index(rng, 10), dk = 1 + uniform_index(rng, 6);
    const Tensor q = random_tensor({t, dk}, rng, -4, 4), k = random_tensor({t, dk}, rng, -4, 4);
    const auto r = scaled_dot_attention(q, k, random_tensor({t, dk}, rng));
    for (std::size_t i = 0; i < t; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < t; ++j) s += r.attn[i * t + j];
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    // Adding the same vector u to every key adds q_i·u to logit row i.
    Tensor k2 = k;
    const Tensor u = random_tensor({dk}, rng);
    for (std::size_t j = 0; j < t; ++j)
      for (std::size_t c = 0; c < dk; ++c) k2[j * dk + c] += u[c];
    const auto r2 = scaled_dot_attention(q, k2, random_tensor({t, dk}, rng));
    EXPECT_LT(max_abs_diff(r.attn, r2.attn), 1e-12);
  }
}

TEST(ScaledDotAttention, BackwardMatchesFiniteDifferences) {
  Rng rng = derive_rng(5, {});
  ParameterStore st;
  st.add("q", random_tensor({5, 3}, rng));
  st.add("k", random_tensor({5, 3}, rng));
  st.add("v", random_tensor({5, 3}, rng));
  const Tensor probe = random_tensor({5, 3}, rng);
  auto value = [&] { return dot(scaled_dot_attention(st.value("q"), st.value("k"), st.value("v")).out, probe); };
  auto grad = [&] {
    const auto f = scaled_dot_attention(st.value("q"), st.value("k"), st.value("v"));
    const auto g = scaled_dot_attention_backward(st.value("q"), st.value("k"), st.value("v"), f.attn, probe);
    st.grad("q") += g.q;
    st.grad("k") += g.k;
    st.grad("v") += g.v;
  };
  EXPECT_LT(fd_error(st, value, grad), 1e-7);
}

ParameterStore gate_store(std::size_t dim, std::size_t heads, std::uint64_t seed) {
  ParameterStore st;
  Rng rng = derive_rng(seed, {});
  const std::size_t h = gate_hidden(dim);
  st.add("fc1.w", random_tensor({h, dim}, rng));
  st.add("fc1.b", random_tensor({h}, rng));
  st.add("fc2.w", random_tensor({heads, h}, rng));
  st.add("fc2.b", random_tensor({heads}, rng));
  return st;
}

GateParams gate_params(const ParameterStore& st) {
  return {st.value("fc1.w"), st.value("fc1.b"), st.value("fc2.w"), st.value("fc2.b")};
}

TEST(AdaptiveGate, ZeroMlpGivesHalf) {
  ParameterStore st = gate_store(6, 3, 1);
  for (auto& e : st.entries()) e.value.fill(0.0);
  Rng rng = derive_rng(6, {});
  const Tensor g = adaptive_gate(random_tensor({8, 6}, rng), gate_params(st));
  ASSERT_EQ(g.shape(), (Shape{3}));
  for (double v : g.data()) EXPECT_EQ(v, 0.5);
}

TEST(AdaptiveGate, MatchesHandComposedOracleAndStaysInUnitInterval) {
  Rng rng = derive_rng(7, {});
  for (int trial = 0; trial < 50; ++trial) {
    const ParameterStore st = gate_store(6, 2, 100 + trial);
    const Tensor tokens = random_tensor({8, 6}, rng, -10.0, 10.0);
    const Tensor g = adaptive_gate(tokens, gate_params(st));
    std::vector<double> mean(6, 0.0);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t c = 0; c < 6; ++c) mean[c] += tokens[i * 6 + c] / 8.0;
    std::vector<double> hid(3);
    for (std::size_t j = 0; j < 3; ++j) {
      double a = st.value("fc1.b")[j];
      for (std::size_t c = 0; c < 6; ++c) a += st.value("fc1.w")[j * 6 + c] * mean[c];
      hid[j] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
    }
    for (std::size_t h = 0; h < 2; ++h) {
      double a = st.value("fc2.b")[h];
      for (std::size_t j = 0; j < 3; ++j) a += st.value("fc2.w")[h * 3 + j] * hid[j];
      EXPECT_NEAR(g[h], 1.0 / (1.0 + std::exp(-a)), 1e-14);
      EXPECT_GT(g[h], 0.0);
      EXPECT_LT(g[h], 1.0);
    }
  }
}

TEST(AdaptiveGate, ConstantTranslationOnlyMovesThePooledMean) {
  Rng rng = derive_rng(8, {});
  const ParameterStore st = gate_store(4, 2, 9);
  const Tensor tokens = random_tensor({8, 4}, rng);
  Tensor shifted = tokens;
  for (double& v : shifted.data()) v += 0.75;
  Tensor pooled_shift({1, 4});
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < 8; ++i) pooled_shift[c] += shifted[i * 4 + c] / 8.0;
  }
  // A single token equal to the shifted mean gives the same gate.
  EXPECT_LT(max_abs_diff(adaptive_gate(shifted, gate_params(st)), adaptive_gate(pooled_shift, gate_params(st))),
            1e-15);
}

SwinBlockConfig block_config(bool adaptive, std::size_t shift) {
  return SwinBlockConfig{6, 2, 12, {2, shift}, adaptive};
}

TEST(SwinBlock, ZeroProjectionsAreResidualIdentity) {
  ParameterStore st;
  Initializer init(1);
  SwinBlock::register_params(st, init, "b", block_config(true, 1));
  for (const char* n : {"b.attn.o", "b.mlp.fc2.weight", "b.mlp.fc2.bias"}) st.value(n).fill(0.0);
  Rng rng = derive_rng(9, {});
  const Tensor x = random_tensor({6, 4, 4, 2}, rng);
  const Tensor y = swin_block(x, {2, 1}, st, "b", 2, 12, false);
  EXPECT_EQ(y, x);
}

TEST(SwinBlock, AttentionRowsAndGatesOnRealBlock) {
  ParameterStore st;
  Initializer init(2);
  SwinBlock::register_params(st, init, "b", block_config(true, 1));
  Rng rng = derive_rng(10, {});
  SwinBlock block(st, "b", block_config(true, 1));
  const Tensor y = block.forward(st, random_tensor({32, 6}, rng, -3, 3), {4, 4, 2});
  EXPECT_EQ(y.shape(), (Shape{32, 6}));
  const Tensor& a = block.attention();
  ASSERT_EQ(a.shape(), (Shape{4, 2, 8, 8}));
  for (std::size_t r = 0; r < a.size() / 8; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 8; ++j) s += a[r * 8 + j];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  ASSERT_EQ(block.gates().shape(), (Shape{4, 2}));
  for (double g : block.gates().data()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
}

TEST(SwinBlock, AblatedGateIgnoresGateParameters) {
  ParameterStore st;
  Initializer init(3);
  SwinBlock::register_params(st, init, "b", block_config(true, 0));
  Rng rng = derive_rng(11, {});
  const Tensor x = random_tensor({6, 4, 2, 4}, rng);
  const Tensor before = swin_block(x, {2, 0}, st, "b", 2, 12, true);
  for (const char* n : {"b.gate.fc1.weight", "b.gate.fc1.bias", "b.gate.fc2.weight", "b.gate.fc2.bias"}) {
    for (double& v : st.value(n).data()) v = uniform(rng, -50.0, 50.0);
  }
  EXPECT_EQ(swin_block(x, {2, 0}, st, "b", 2, 12, true), before);
  EXPECT_NE(swin_block(x, {2, 0}, st, "b", 2, 12, false), before);
}

TEST(SwinBlock, AblatedRegistrationHasNoGate) {
  ParameterStore a, b;
  Initializer ia(4), ib(4);
  SwinBlock::register_params(a, ia, "b", block_config(true, 0));
  SwinBlock::register_params(b, ib, "b", block_config(false, 0));
  EXPECT_TRUE(a.find("b.gate.fc1.weight"));
  EXPECT_FALSE(b.find("b.gate.fc1.weight"));
  const std::size_t gh = gate_hidden(6);
  EXPECT_EQ(a.scalar_count() - b.scalar_count(), gh * 6 + gh + 2 * gh + 2);
}

class SwinBlockGradient : public ::testing::TestWithParam<std::tuple<bool, std::size_t>> {};

TEST_P(SwinBlockGradient, MatchesFiniteDifferences) {
  const auto [adaptive, shift] = GetParam();
  const SwinBlockConfig cfg = block_config(adaptive, shift);
  ParameterStore st;
  Initializer init(5);
  SwinBlock::register_params(st, init, "b", cfg);
  Rng rng = derive_rng(12, {});
  for (auto& e : st.entries()) {
    for (double& v : e.value.data()) v += uniform(rng, -0.2, 0.2);
  }
  st.add("x", random_tensor({32, 6}, rng, -2, 2));
  const Tensor probe = random_tensor({32, 6}, rng);
  SwinBlock block(st, "b", cfg);
  const Extents3 grid{4, 2, 4};
  auto value = [&] { return dot(block.forward(st, st.value("x"), grid), probe); };
  auto grad = [&] {
    block.forward(st, st.value("x"), grid, 2);
    st.grad("x") += block.backward(st, probe, 2);
  };
  EXPECT_LT(fd_error(st, value, grad, 12, Stencil::kFivePoint), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Variants, SwinBlockGradient,
                         ::testing::Combine(::testing::Bool(), ::testing::Values(std::size_t{0}, std::size_t{1})));

TEST(SwinBlock, ThreadCountDoesNotChangeResults) {
  const SwinBlockConfig cfg = block_config(true, 1);
  ParameterStore a;
  Initializer init(6);
  SwinBlock::register_params(a, init, "b", cfg);
  ParameterStore b = a;
  Rng rng = derive_rng(13, {});
  const Tensor x = random_tensor({64, 6}, rng), g = random_tensor({64, 6}, rng);
  SwinBlock ba(a, "b", cfg), bb(b, "b", cfg);
  EXPECT_EQ(ba.forward(a, x, {4, 4, 4}, 1), bb.forward(b, x, {4, 4, 4}, 4));
  EXPECT_EQ(ba.backward(a, g, 1), bb.backward(b, g, 4));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.grad(i), b.grad(i));
}

}  // namespace
}  // namespace spineseg
