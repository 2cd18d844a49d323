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

#include "spineseg/network.hpp"
#include "test_util.hpp"

namespace spineseg {
namespace {

using testing::random_tensor;

ModelConfig tiny() {
  ModelConfig c;
  c.embed_dim = 8;
  c.depths = {2};
  c.heads = {2};
  c.window = 2;
  c.num_classes = 3;
  return c;
}

ModelConfig small_two_stage() {
  ModelConfig c;
  c.embed_dim = 6;
  c.depths = {1, 1};
  c.heads = {2, 3};
  c.fusion.out_channels = 4;
  return c;
}

TEST(ModelConfig, ValidationNamesTheConstraint) {
  ModelConfig c = tiny();
  c.heads = {3};
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("heads"), std::string::npos);
  }
  c = tiny();
  c.heads = {2, 2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.fusion.kernel_sizes = {2};
  EXPECT_THROW(SegmentationModel{c}, ConfigError);
}

TEST(SegmentationModel, InitIsDeterministic) {
  const ModelConfig c = small_two_stage();
  EXPECT_TRUE(init_model(c).params() == init_model(c).params());
  ModelConfig other = c;
  other.seed = 1;
  EXPECT_FALSE(init_model(c).params() == init_model(other).params());
}

TEST(SegmentationModel, AblationRemovesParameters) {
  const ModelConfig c = small_two_stage();
  const auto full = init_model(c);
  const auto no_ms = init_model(ablate(c, AblationTarget::kMultiscale));
  const auto no_ad = init_model(ablate(c, AblationTarget::kAdaptive));
  const auto base = init_model(ablate(c, AblationTarget::kBoth));
  EXPECT_FALSE(no_ms.params().find("stem.logits"));
  EXPECT_FALSE(no_ms.params().find("stem.branch0.weight"));
  EXPECT_FALSE(no_ad.params().find("encoder.stage0.block0.gate.fc1.weight"));
  EXPECT_TRUE(full.params().find("encoder.stage1.block0.gate.fc2.bias"));

  // Oracle: fusion branches minus the replacement 3x3x3 conv; gate MLPs per block.
  const std::size_t f = c.fusion.out_channels;
  std::size_t fusion = c.fusion.kernel_sizes.size();
  for (std::size_t k : c.fusion.kernel_sizes) fusion += f * k * k * k + f;
  const std::size_t stem_conv = f * 27 + f;
  std::size_t gates = 0;
  for (std::size_t s = 0; s < c.stages(); ++s) {
    const std::size_t d = c.stage_dim(s), h = gate_hidden(d);
    gates += c.depths[s] * (h * d + h + c.heads[s] * h + c.heads[s]);
  }
  const std::size_t n = full.params().scalar_count();
  EXPECT_EQ(n - no_ms.params().scalar_count(), fusion - stem_conv);
  EXPECT_EQ(n - no_ad.params().scalar_count(), gates);
  EXPECT_EQ(n - base.params().scalar_count(), fusion - stem_conv + gates);
  EXPECT_LT(base.params().scalar_count(), no_ms.params().scalar_count());
  EXPECT_LT(base.params().scalar_count(), no_ad.params().scalar_count());
  EXPECT_LT(no_ms.params().scalar_count(), n);
  EXPECT_LT(no_ad.params().scalar_count(), n);
}

TEST(Ablate, FlagSemanticsAndComposition) {
  const ModelConfig c = small_two_stage();
  const ModelConfig m = ablate(c, AblationTarget::kMultiscale);
  EXPECT_FALSE(m.use_multiscale);
  EXPECT_TRUE(m.use_adaptive);
  const ModelConfig a = ablate(c, AblationTarget::kAdaptive);
  EXPECT_TRUE(a.use_multiscale);
  EXPECT_FALSE(a.use_adaptive);
  const ModelConfig both = ablate(c, AblationTarget::kBoth);
  const ModelConfig composed = ablate(ablate(c, AblationTarget::kMultiscale), AblationTarget::kAdaptive);
  EXPECT_EQ(both.use_multiscale, composed.use_multiscale);
  EXPECT_EQ(both.use_adaptive, composed.use_adaptive);
  EXPECT_FALSE(both.use_multiscale || both.use_adaptive);
}

TEST(SegmentationModel, ForwardShapeAndDeterminism) {
  for (const ModelConfig& c : {tiny(), small_two_stage(), ablate(small_two_stage(), AblationTarget::kBoth)}) {
    SegmentationModel m(c);
    Rng rng = derive_rng(1, {});
    const std::size_t e = c.input_multiple();
    const Tensor x = random_tensor({1, 2 * e, e, 3 * e}, rng);
    const Tensor y = m.forward(x);
    EXPECT_EQ(y.shape(), (Shape{c.num_classes, 2 * e, e, 3 * e}));
    EXPECT_EQ(m.forward(x), y);
  }
}

TEST(SegmentationModel, SoftmaxOfLogitsSumsToOne) {
  SegmentationModel m(tiny());
  Rng rng = derive_rng(2, {});
  const ProbVolume p = ProbVolume::from_logits(m.forward(random_tensor({1, 8, 8, 8}, rng)));
  const std::size_t n = 512;
  for (std::size_t v = 0; v < n; ++v) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += p.probs[c * n + v];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SegmentationModel, GeometryErrorNamesAxis) {
  SegmentationModel m(small_two_stage());  // multiple 8
  try {
    m.forward(Tensor({1, 8, 12, 8}));
    FAIL();
  } catch (const GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("axis W"), std::string::npos);
  }
  EXPECT_THROW(m.forward(Tensor({2, 8, 8, 8})), ShapeError);
}

TEST(SegmentationModel, BackwardContracts) {
  SegmentationModel m(tiny());
  const Tensor g({3, 8, 8, 8});
  EXPECT_THROW(m.backward(g), StateError);
  Rng rng = derive_rng(3, {});
  m.forward(random_tensor({1, 8, 8, 8}, rng));
  m.params().zero_grad();
  m.backward(g);
  for (const auto& e : m.params().entries()) {
    for (double v : e.grad.data()) ASSERT_EQ(v, 0.0) << e.name;
  }
  EXPECT_THROW(m.backward(g), StateError);
  m.forward(random_tensor({1, 8, 8, 8}, rng));
  EXPECT_THROW(m.backward(Tensor({3, 8, 8, 4})), ShapeError);
}

TEST(SegmentationModel, InputGradientOnRequest) {
  SegmentationModel m(tiny());
  Rng rng = derive_rng(4, {});
  ParameterStore holder;
  holder.add("x", random_tensor({1, 8, 8, 8}, rng));
  const Tensor probe = random_tensor({3, 8, 8, 8}, rng);
  m.forward(holder.value("x"));
  m.backward(probe);
  EXPECT_THROW(m.input_grad(), StateError);
  auto value = [&] { return testing::dot(m.forward(holder.value("x")), probe); };
  auto grad = [&] {
    m.forward(holder.value("x"));
    m.backward(probe, true);
    holder.grad("x") += m.input_grad();
  };
  EXPECT_LT(testing::fd_error(holder, value, grad, 10, Stencil::kFivePoint), 1e-5);
}

class ModelGradient : public ::testing::TestWithParam<int> {};

TEST_P(ModelGradient, EndToEndLossGradcheck) {
  ModelConfig c = GetParam() < 2 ? tiny() : small_two_stage();
  if (GetParam() == 1) c = ablate(c, AblationTarget::kBoth);
  c.seed = 11;
  SegmentationModel m(c);
  Rng rng = derive_rng(5, {});
  const std::size_t e = c.input_multiple();
  const Tensor x = random_tensor({1, e, e, e}, rng);
  LabelVolume y({e, e, e});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::uint8_t>(uniform_index(rng, c.num_classes));
  auto value = [&](ParameterStore&) { return combined_loss_from_logits(m.forward(x), y, 1.0).value.total; };
  auto grad = [&](ParameterStore&) { m.backward(combined_loss_from_logits(m.forward(x), y, 1.0).grad_logits); };
  GradcheckOptions o;
  o.probes = 5;
  o.seed = 3;
  const auto r = gradcheck(value, grad, m.params(), o);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_tensor;
}

INSTANTIATE_TEST_SUITE_P(Configs, ModelGradient, ::testing::Values(0, 1, 2));

TEST(SegmentationModel, ThreadsDoNotChangeResults) {
  const ModelConfig c = small_two_stage();
  SegmentationModel a(c), b(c);
  b.set_threads(3);
  Rng rng = derive_rng(6, {});
  const Tensor x = random_tensor({1, 8, 8, 8}, rng), g = random_tensor({4, 8, 8, 8}, rng);
  EXPECT_EQ(a.forward(x), b.forward(x));
  a.backward(g);
  b.backward(g);
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params().grad(i), b.params().grad(i));
}

TEST(ArgmaxLabels, PicksFirstMaximum) {
  Tensor logits({3, 1, 1, 2});
  logits[0] = 1.0;  // voxel 0: class 0 vs 1 tie -> 0
  logits[2] = 1.0;
  logits[1] = -1.0;  // voxel 1: class 2 wins
  logits[5] = 4.0;
  const LabelVolume l = argmax_labels(logits);
  EXPECT_EQ(l[0], 0);
  EXPECT_EQ(l[1], 2);
}

}  // namespace
}  // namespace spineseg
