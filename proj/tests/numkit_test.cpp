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
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "dpulab/errors.hpp"
#include "dpulab/numkit.hpp"
#include "dpulab/rng.hpp"

namespace dpulab {
namespace {

TEST(Softmax, LargeLogitsStayFinite) {
  const Vec64 p = softmax(std::vector<double>{1000.0, 999.0});
  // 1 / (1 + e^-1), 40-digit reference
  EXPECT_NEAR(p[0], 0.7310585786300048792, 1e-15);
  EXPECT_NEAR(p[1], 0.2689414213699951207, 1e-15);
}

TEST(Softmax, SumsToOneAndKeepsOrder) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Vec64 z(1 + rng.index(9));
    for (double& v : z) v = rng.uniform(-50.0, 50.0);
    const Vec64 p = softmax(z);
    double s = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(argmax(p), argmax(z));
  }
}

TEST(Softmax, ShiftInvariant) {
  const Vec64 a = softmax(std::vector<double>{0.3, -1.2, 2.0});
  const Vec64 b = softmax(std::vector<double>{100.3, 98.8, 102.0});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(Logsumexp, MatchesDirectSum) {
  const std::vector<double> x = {0.5, -0.25, 1.75};
  EXPECT_NEAR(logsumexp(x), std::log(std::exp(0.5) + std::exp(-0.25) + std::exp(1.75)), 1e-15);
  EXPECT_NEAR(logsumexp(std::vector<double>{800.0, 800.0}), 800.0 + std::log(2.0), 1e-12);
}

TEST(Sigmoid, StableAtExtremes) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_EQ(sigmoid(800.0), 1.0);
  EXPECT_NEAR(sigmoid(2.0) + sigmoid(-2.0), 1.0, 1e-15);
}

TEST(Hellinger, ReferenceValue) {
  const std::vector<double> p = {0.5, 0.5}, q = {0.9, 0.1};
  EXPECT_NEAR(hellinger(p, q), 0.32491969623290632616, 1e-15);
}

TEST(Hellinger, SymmetricBoundedAndZeroOnSelf) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Vec64 a(4), b(4);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const Vec64 p = softmax(a), q = softmax(b);
    const double h = hellinger(p, q);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0);
    EXPECT_DOUBLE_EQ(h, hellinger(q, p));
    EXPECT_EQ(hellinger(p, p), 0.0);
  }
}

TEST(Hellinger, DisjointSupportIsOne) {
  EXPECT_NEAR(hellinger(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0}), 1.0, 1e-15);
}

TEST(Hellinger, LengthMismatchThrows) {
  EXPECT_THROW(hellinger(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}), DimensionError);
}

TEST(Entropy, ReferenceValueAndZeroTerms) {
  EXPECT_NEAR(entropy(std::vector<double>{0.75, 0.25}), 0.56233514461880835029, 1e-15);
  EXPECT_EQ(entropy(std::vector<double>{1.0, 0.0, 0.0}), 0.0);
  EXPECT_NEAR(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}), std::log(4.0), 1e-15);
}

TEST(Cosine, AngleOfDiagonal) {
  EXPECT_NEAR(angle_between(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 1.0}),
              std::numbers::pi / 4, 1e-15);
  EXPECT_NEAR(cosine_similarity(std::vector<double>{2.0, 0.0}, std::vector<double>{-3.0, 0.0}),
              -1.0, 1e-15);
}

TEST(Cosine, ZeroVectorThrows) {
  EXPECT_THROW(cosine_similarity(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 0.0}),
               DegenerateVectorError);
}

TEST(Cosine, AngleStaysInRangeForNearlyParallel) {
  const std::vector<double> a = {1.0, 1e-9}, b = {1.0, 0.0};
  const double th = angle_between(a, b);
  EXPECT_GE(th, 0.0);
  EXPECT_LT(th, 1e-8);
  EXPECT_EQ(angle_between(b, b), 0.0);
}

TEST(Percentile, LinearInterpolation) {
  const std::vector<double> x = {4.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(percentile(x, 0.0), 1.0);
  EXPECT_EQ(percentile(x, 100.0), 4.0);
  EXPECT_NEAR(percentile(x, 50.0), 2.5, 1e-15);
  EXPECT_NEAR(percentile(x, 90.0), 3.7, 1e-15);
}

TEST(Percentile, EmptyThrowsAndRankClamps) {
  EXPECT_THROW(percentile(std::vector<double>{}, 50.0), DimensionError);
  EXPECT_EQ(percentile(std::vector<double>{1.0, 2.0}, 150.0), 2.0);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{2.0, 2.0}), 0u);
}

TEST(Moments, MeanAndPopulationVariance) {
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  EXPECT_EQ(mean(x), 2.5);
  EXPECT_EQ(population_variance(x), 1.25);
}

TEST(Finite, DetectsNanAndInf) {
  EXPECT_TRUE(all_finite(std::vector<double>{0.0, 1.0}));
  EXPECT_FALSE(all_finite(std::vector<double>{0.0, std::nan("")}));
  EXPECT_FALSE(all_finite(std::vector<double>{std::numeric_limits<double>::infinity()}));
}

// Logit-space gradients against central differences of the composed value.
TEST(LogitGradients, HellingerAndEntropy) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Vec64 za(4), zb(4);
    for (double& v : za) v = rng.normal();
    for (double& v : zb) v = rng.normal();
    const Vec64 q = softmax(zb);
    const Vec64 gh = hellinger_grad_logits(softmax(za), q);
    const Vec64 ge = entropy_grad_logits(softmax(za));
    const double h = 1e-6;
    for (std::size_t i = 0; i < za.size(); ++i) {
      Vec64 up = za, dn = za;
      up[i] += h;
      dn[i] -= h;
      EXPECT_NEAR(gh[i], (hellinger(softmax(up), q) - hellinger(softmax(dn), q)) / (2 * h), 1e-7);
      EXPECT_NEAR(ge[i], (entropy(softmax(up)) - entropy(softmax(dn))) / (2 * h), 1e-7);
    }
  }
}

TEST(LogitGradients, HellingerIsZeroAtCoincidence) {
  const Vec64 p = softmax(std::vector<double>{0.1, 0.2, 0.3});
  for (double g : hellinger_grad_logits(p, p)) EXPECT_EQ(g, 0.0);
}

TEST(Softmax, SmallCases) {
  for (double v : softmax(std::vector<double>{0.0, 0.0, 0.0, 0.0})) EXPECT_EQ(v, 0.25);
  const Vec64 p = softmax(std::vector<double>{std::log(2.0), 0.0});
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
  EXPECT_THROW(softmax(std::vector<double>{}), DimensionError);
}

TEST(Hellinger, TriangleInequalityOnRandomTriples) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    Vec64 a(5), b(5), c(5);
    for (double& v : a) v = 2.0 * rng.normal();
    for (double& v : b) v = 2.0 * rng.normal();
    for (double& v : c) v = 2.0 * rng.normal();
    const Vec64 p = softmax(a), q = softmax(b), r = softmax(c);
    EXPECT_LE(hellinger(p, r), hellinger(p, q) + hellinger(q, r) + 1e-12);
  }
}

TEST(Cosine, AngleIgnoresPositiveScaling) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    Vec64 a(6), b(6);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const double s = rng.uniform(0.01, 100.0), t = rng.uniform(0.01, 100.0);
    Vec64 sa = a, tb = b;
    for (double& v : sa) v *= s;
    for (double& v : tb) v *= t;
    EXPECT_NEAR(angle_between(a, b), angle_between(sa, tb), 1e-10);
  }
  EXPECT_NEAR(angle_between(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0}),
              std::numbers::pi / 2, 1e-15);
}

TEST(Moments, VarianceReferenceValues) {
  EXPECT_EQ(population_variance(std::vector<double>{4.0, 4.0, 4.0}), 0.0);
  EXPECT_EQ(population_variance(std::vector<double>{7.5}), 0.0);
  EXPECT_NEAR(population_variance(std::vector<double>{1.0, 2.0, 3.0}), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(population_variance(std::vector<double>{}), DimensionError);
}

TEST(Moments, VarianceShiftAndScale) {
  Rng rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    Vec64 x(1 + rng.index(10));
    for (double& v : x) v = rng.normal();
    const double c = rng.uniform(-10.0, 10.0), k = rng.uniform(-5.0, 5.0);
    Vec64 shifted = x, scaled = x;
    for (double& v : shifted) v += c;
    for (double& v : scaled) v *= k;
    const double var = population_variance(x);
    EXPECT_NEAR(population_variance(shifted), var, 1e-11);
    EXPECT_NEAR(population_variance(scaled), k * k * var, 1e-11 * (1.0 + k * k));
  }
}

TEST(Mat64, RowMajorLayout) {
  Mat64 m(2, 3);
  m(1, 2) = 7.0;
  EXPECT_EQ(m.data()[5], 7.0);
  EXPECT_EQ(m.row(1)[2], 7.0);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
}

}  // namespace
}  // namespace dpulab
