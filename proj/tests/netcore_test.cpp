/*
 * Copyright 2026 The dpulab Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "dpulab/netcore.hpp"
#include "loss_fixtures.hpp"
#include "oracles.hpp"

namespace dpulab {
namespace {

void set_slot(ModelParams& p, const AffineSlot& s, std::vector<double> w, std::vector<double> b) {
  ASSERT_EQ(w.size(), s.out * s.in);
  ASSERT_EQ(b.size(), s.out);
  for (std::size_t i = 0; i < w.size(); ++i) p.values[s.weight_offset + i] = w[i];
  for (std::size_t i = 0; i < b.size(); ++i) p.values[s.bias_offset + i] = b[i];
}

ModelDims dims_2x16() {
  ModelDims d;
  d.input_dims = {16, 16};
  d.classes = 3;
  return d;
}

MultimodalBatch random_batch(const ModelDims& d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  MultimodalBatch b;
  for (std::size_t k = 0; k < d.num_modalities(); ++k) {
    Mat64 x(n, d.input_dims[k]);
    for (double& v : x.data()) v = rng.normal();
    b.modalities.push_back(std::move(x));
  }
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(i % d.classes));
  return b;
}

TEST(Forward, ZeroNetworkIsUniform) {
  ModelParams p(dims_2x16());
  const ForwardCache c = forward(p, random_batch(p.dims, 5, 1));
  for (double v : c.joint_probs.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  for (const Mat64& m : c.mod_probs) {
    for (double v : m.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

// Two modalities, every width 1 except C = 2.
//   m0: x=2   pre=0.5*2+0.1=1.1  F=2*1.1-0.2=2.0   z=[2.0, -2.0+0.5]
//   m1: x=-1  pre=-1*-1+0.3=1.3  F=1.3             z=[0.65, 1.3]
//   joint: [1 1; -1 2][2.0, 1.3] + [0.1, 0] = [3.4, 0.6]
TEST(Forward, HandComputedTinyNet) {
  ModelDims d;
  d.input_dims = {1, 1};
  d.hidden = 1;
  d.embed = 1;
  d.classes = 2;
  ModelParams p(d);
  set_slot(p, p.layout.encoder1(0), {0.5}, {0.1});
  set_slot(p, p.layout.encoder2(0), {2.0}, {-0.2});
  set_slot(p, p.layout.head(0), {1.0, -1.0}, {0.0, 0.5});
  set_slot(p, p.layout.encoder1(1), {-1.0}, {0.3});
  set_slot(p, p.layout.encoder2(1), {1.0}, {0.0});
  set_slot(p, p.layout.head(1), {0.5, 1.0}, {0.0, 0.0});
  set_slot(p, p.layout.joint(), {1.0, 1.0, -1.0, 2.0}, {0.1, 0.0});
  MultimodalBatch b;
  b.modalities = {Mat64(1, 1), Mat64(1, 1)};
  b.modalities[0](0, 0) = 2.0;
  b.modalities[1](0, 0) = -1.0;
  b.labels = {0};
  const ForwardCache c = forward(p, b);
  EXPECT_NEAR(c.embeddings[0](0, 0), 2.0, 1e-15);
  EXPECT_NEAR(c.embeddings[1](0, 0), 1.3, 1e-15);
  EXPECT_NEAR(c.mod_logits[0](0, 0), 2.0, 1e-15);
  EXPECT_NEAR(c.mod_logits[0](0, 1), -1.5, 1e-15);
  EXPECT_NEAR(c.mod_logits[1](0, 0), 0.65, 1e-15);
  EXPECT_NEAR(c.mod_logits[1](0, 1), 1.3, 1e-15);
  EXPECT_NEAR(c.joint_logits(0, 0), 3.4, 1e-15);
  EXPECT_NEAR(c.joint_logits(0, 1), 0.6, 1e-15);
  EXPECT_NEAR(c.joint_probs(0, 0), 1.0 / (1.0 + std::exp(-2.8)), 1e-15);
}

TEST(Forward, NegativePreActivationIsCut) {
  ModelDims d;
  d.input_dims = {1, 1};
  d.hidden = 1;
  d.embed = 1;
  d.classes = 2;
  ModelParams p(d);
  set_slot(p, p.layout.encoder1(0), {1.0}, {0.0});
  set_slot(p, p.layout.encoder2(0), {1.0}, {0.25});
  MultimodalBatch b;
  b.modalities = {Mat64(1, 1), Mat64(1, 1)};
  b.modalities[0](0, 0) = -3.0;
  b.labels = {0};
  EXPECT_EQ(forward(p, b).embeddings[0](0, 0), 0.25);
}

TEST(Forward, CacheShapes) {
  const ModelParams p = init_params(dims_2x16(), 3);
  const ForwardCache c = forward(p, random_batch(p.dims, 7, 2));
  EXPECT_EQ(c.batch, 7u);
  EXPECT_EQ(c.joint_probs.rows(), 7u);
  ASSERT_EQ(c.mod_probs.size(), 2u);
  for (const Mat64& m : c.mod_probs) EXPECT_EQ(m.rows(), 7u);
  for (const Mat64& e : c.embeddings) EXPECT_EQ(e.cols(), 16u);
  EXPECT_EQ(c.joint_features(0).size(), 32u);
}

TEST(Forward, DeterministicAndPure) {
  const ModelParams p = init_params(dims_2x16(), 3);
  const ModelParams copy = p;
  const MultimodalBatch b = random_batch(p.dims, 4, 9);
  const ForwardCache a = forward(p, b), c = forward(p, b);
  EXPECT_EQ(a.joint_logits, c.joint_logits);
  EXPECT_EQ(a.embeddings, c.embeddings);
  EXPECT_TRUE(p == copy);
}

TEST(Forward, DimensionMismatchThrows) {
  const ModelParams p = init_params(dims_2x16(), 3);
  MultimodalBatch b = random_batch(p.dims, 4, 9);
  b.modalities[1] = Mat64(4, 15);
  EXPECT_THROW(forward(p, b), DimensionError);
  b.modalities.pop_back();
  EXPECT_THROW(forward(p, b), DimensionError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  const ModelParams p = init_params(dims_2x16(), 3);
  const ForwardCache c = forward(p, random_batch(p.dims, 4, 9));
  for (double g : backward(p, c, Upstream::zeros_like(c)).values) EXPECT_EQ(g, 0.0);
}

Upstream random_upstream(const ForwardCache& c, std::uint64_t seed) {
  Rng rng(seed);
  Upstream u = Upstream::zeros_like(c);
  auto fill = [&](Mat64& m) {
    for (double& v : m.data()) v = rng.normal();
  };
  fill(u.joint_logits);
  fill(u.joint_probs);
  for (std::size_t k = 0; k < c.num_modalities(); ++k) {
    fill(u.mod_logits[k]);
    fill(u.mod_probs[k]);
    fill(u.embeddings[k]);
  }
  return u;
}

TEST(Backward, LinearInUpstream) {
  const ModelParams p = init_params(dims_2x16(), 3);
  const ForwardCache c = forward(p, random_batch(p.dims, 4, 9));
  Upstream u = random_upstream(c, 1);
  const GradBuffer g1 = backward(p, c, u);
  u.scale(2.0);
  const GradBuffer g2 = backward(p, c, u);
  for (std::size_t i = 0; i < g1.values.size(); ++i) EXPECT_EQ(g2.values[i], 2.0 * g1.values[i]);
}

TEST(Backward, ShapeMismatchThrows) {
  const ModelParams p = init_params(dims_2x16(), 3);
  const ForwardCache c = forward(p, random_batch(p.dims, 4, 9));
  Upstream u = Upstream::zeros_like(c);
  u.embeddings[0] = Mat64(4, 3);
  EXPECT_THROW(backward(p, c, u), DimensionError);
}

// Linear functional of every cached output, checked against central
// differences on random tiny nets.
TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const oracle::TinyProblem tp = oracle::random_tiny_problem(seed);
    const Upstream u = random_upstream(forward(tp.params, tp.batch), seed + 100);
    auto value = [&](const ModelParams& q) {
      const ForwardCache c = forward(q, tp.batch);
      double s = 0.0;
      auto dotm = [&](const Mat64& a, const Mat64& b) {
        for (std::size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * b.data()[i];
      };
      dotm(c.joint_logits, u.joint_logits);
      dotm(c.joint_probs, u.joint_probs);
      for (std::size_t k = 0; k < c.num_modalities(); ++k) {
        dotm(c.mod_logits[k], u.mod_logits[k]);
        dotm(c.mod_probs[k], u.mod_probs[k]);
        dotm(c.embeddings[k], u.embeddings[k]);
      }
      return s;
    };
    const GradBuffer g = backward(tp.params, forward(tp.params, tp.batch), u);
    const auto check = oracle::compare_gradients(g.values, oracle::finite_difference(value, tp.params));
    EXPECT_LT(check.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Init, DeterministicGlorotWithZeroBias) {
  const ModelDims d = dims_2x16();
  const ModelParams a = init_params(d, 11), b = init_params(d, 11);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == init_params(d, 12));
  for (const AffineSlot& s : a.layout.all()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    for (std::size_t i = 0; i < s.out * s.in; ++i) {
      EXPECT_LE(std::abs(a.values[s.weight_offset + i]), limit);
    }
    for (std::size_t o = 0; o < s.out; ++o) EXPECT_EQ(a.values[s.bias_offset + o], 0.0);
  }
}

TEST(Init, RejectsInvalidDims) {
  ModelDims d = dims_2x16();
  d.classes = 1;
  EXPECT_THROW(init_params(d, 0), ConfigError);
}

TEST(Layout, SlotsTileTheVector) {
  const ModelParams p(dims_2x16());
  std::size_t total = 0;
  for (const AffineSlot& s : p.layout.all()) total += s.out * s.in + s.out;
  EXPECT_EQ(total, p.layout.size());
  EXPECT_EQ(p.values.size(), p.layout.size());
  EXPECT_EQ(p.layout.joint().in, 32u);
}

ModelParams scalar_params(double theta) {
  ModelDims d;
  d.input_dims = {1, 1};
  d.hidden = 1;
  d.embed = 1;
  d.classes = 2;
  ModelParams p(d);
  p.values[0] = theta;
  return p;
}

TEST(AdamW, FirstStepByHand) {
  ModelParams p = scalar_params(0.5);
  AdamWState s(p);
  s.weight_decay = 0.0;
  GradBuffer g(p);
  g.values[0] = 1.0;
  adamw_step(s, p, g);
  // m_hat = v_hat = 1 -> step lr / (1 + eps)
  EXPECT_NEAR(p.values[0], 0.5 - 1e-4 / (1.0 + 1e-8), 1e-17);
  EXPECT_EQ(s.step, 1u);
  for (std::size_t i = 1; i < p.values.size(); ++i) EXPECT_EQ(p.values[i], 0.0);
}

TEST(AdamW, ZeroGradientFixedPointAndDecay) {
  ModelParams p = scalar_params(0.5);
  AdamWState s(p);
  s.weight_decay = 0.0;
  adamw_step(s, p, GradBuffer(p));
  EXPECT_EQ(p.values[0], 0.5);
  s.weight_decay = 1e-2;
  adamw_step(s, p, GradBuffer(p));
  EXPECT_NEAR(p.values[0], 0.5 * (1.0 - 1e-4 * 1e-2), 1e-17);
}

TEST(AdamW, ZeroLearningRateChangesNothing) {
  ModelParams p = init_params(dims_2x16(), 4);
  const ModelParams before = p;
  AdamWState s(p);
  s.lr = 0.0;
  GradBuffer g(p);
  for (double& v : g.values) v = 0.3;
  adamw_step(s, p, g);
  EXPECT_TRUE(p == before);
  EXPECT_EQ(s.step, 1u);
}

TEST(AdamW, NonFiniteGradientDiverges) {
  ModelParams p = scalar_params(0.5);
  AdamWState s(p);
  GradBuffer g(p);
  g.values[2] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(adamw_step(s, p, g), DivergenceError);
  EXPECT_EQ(s.step, 0u);
}

TEST(AdamW, StateRoundTripsThroughJson) {
  ModelParams p = init_params(dims_2x16(), 4);
  AdamWState s(p);
  GradBuffer g(p);
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = std::sin(double(i));
  adamw_step(s, p, g);
  const AdamWState back = nlohmann::json(s).get<AdamWState>();
  EXPECT_EQ(back.step, s.step);
  EXPECT_EQ(back.m, s.m);
  EXPECT_EQ(back.v, s.v);
  EXPECT_EQ(back.lr, s.lr);
}

}  // namespace
}  // namespace dpulab
