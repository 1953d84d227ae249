// Copyright 2026 The dpfed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dpfed/param_vector.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "gtest/gtest.h"
#include "test_util.hpp"

namespace dpfed {
namespace {

using ::dpfed::testing::MaxAbsDiff;
using ::dpfed::testing::RandomParamVector;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kTrials = 1000;

ParamVector TwoLayers(std::vector<double> a, std::vector<double> b) {
  return ParamVector({Layer{"a", std::move(a)}, Layer{"b", std::move(b)}});
}

TEST(ParamVectorTest, ZerosHasShape) {
  const Shape shape = {{"w", 3}, {"b", 2}};
  const ParamVector v = ParamVector::Zeros(shape);
  EXPECT_EQ(v.num_layers(), 2u);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.shape(), shape);
  EXPECT_EQ(FlatNorm(v), 0.0);
}

TEST(ParamVectorTest, ArithmeticIsLayerwise) {
  ParamVector a = TwoLayers({1, 2}, {3});
  const ParamVector b = TwoLayers({0.5, -1}, {2});
  EXPECT_EQ(a + b, TwoLayers({1.5, 1}, {5}));
  EXPECT_EQ(a - b, TwoLayers({0.5, 3}, {1}));
  EXPECT_EQ(2.0 * a, TwoLayers({2, 4}, {6}));
  a.AddScaled(b, 2.0);
  EXPECT_EQ(a, TwoLayers({2, 0}, {7}));
  ParamVector c = ParamVector::Zeros(a.shape());
  c.AssignSum(a, b);
  EXPECT_EQ(c, TwoLayers({2.5, -1}, {9}));
}

TEST(ParamVectorTest, ShapeMismatchThrows) {
  ParamVector a = TwoLayers({1, 2}, {3});
  const ParamVector longer = TwoLayers({1, 2, 3}, {3});
  const ParamVector renamed({Layer{"a", {1, 2}}, Layer{"c", {3}}});
  EXPECT_THROW(a += longer, ShapeError);
  EXPECT_THROW(a -= renamed, ShapeError);
  EXPECT_THROW(ParamVector(std::vector<Layer>{}), ShapeError);
}

TEST(ParamVectorTest, FlatNormMatchesConcatenation) {
  const ParamVector v = TwoLayers({3, 0}, {4});
  EXPECT_DOUBLE_EQ(FlatNorm(v), 5.0);
  EXPECT_DOUBLE_EQ(LayerNorm(v, 0), 3.0);
  EXPECT_DOUBLE_EQ(LayerNorm(v, 1), 4.0);
}

TEST(FlatClipTest, ScalesOnlyWhenOutsideBall) {
  const ParamVector v = TwoLayers({3, 0}, {4});
  EXPECT_EQ(FlatClip(v, 10.0), v);
  EXPECT_EQ(FlatClip(v, 5.0), v);
  const ParamVector c = FlatClip(v, 1.0);
  EXPECT_LE(FlatNorm(c), 1.0);
  EXPECT_NEAR(c.values(0)[0], 0.6, 1e-15);
  EXPECT_NEAR(c.values(1)[0], 0.8, 1e-15);
  EXPECT_EQ(FlatClip(v, kInf), v);
}

TEST(FlatClipTest, ZeroVectorIsFixed) {
  const ParamVector z = ParamVector::Zeros({{"w", 4}});
  EXPECT_EQ(FlatClip(z, 1e-9), z);
}

TEST(FlatClipTest, RejectsBadInput) {
  const ParamVector v = TwoLayers({1}, {1});
  EXPECT_THROW(FlatClip(v, 0.0), ConfigError);
  EXPECT_THROW(FlatClip(v, -1.0), ConfigError);
  ParamVector bad = v;
  bad.mutable_values(1)[0] = std::nan("");
  EXPECT_THROW(FlatClip(bad, 1.0), NumericError);
  bad.mutable_values(1)[0] = kInf;
  EXPECT_THROW(FlatClip(bad, 1.0), NumericError);
}

TEST(FlatClipTest, RandomVectorsSatisfyClipLaws) {
  Rng rng(7);
  std::uniform_real_distribution<double> log_bound(-2.0, 2.0);
  for (int t = 0; t < kTrials; ++t) {
    const ParamVector v = RandomParamVector(rng);
    const double s = std::pow(10.0, log_bound(rng));
    const ParamVector c = FlatClip(v, s);
    EXPECT_LE(FlatNorm(c), s);
    EXPECT_EQ(FlatClip(c, s), c);
    const double norm = FlatNorm(v);
    if (norm <= s) {
      EXPECT_EQ(c, v);
    } else {
      const double ratio = FlatNorm(c) / norm;
      EXPECT_NEAR(FlatNorm(c), s, 1e-12 * s);
      EXPECT_LE(MaxAbsDiff(c, ratio * v), 1e-12 * s);
    }
  }
}

TEST(PerLayerClipTest, EachLayerWithinItsBound) {
  Rng rng(11);
  std::uniform_real_distribution<double> log_bound(-2.0, 2.0);
  for (int t = 0; t < kTrials; ++t) {
    const ParamVector v = RandomParamVector(rng);
    std::vector<double> bounds(v.num_layers());
    double total_sq = 0.0;
    for (double& b : bounds) {
      b = std::pow(10.0, log_bound(rng));
      total_sq += b * b;
    }
    const ParamVector c = PerLayerClip(v, bounds);
    for (std::size_t j = 0; j < bounds.size(); ++j) EXPECT_LE(LayerNorm(c, j), bounds[j]);
    EXPECT_LE(FlatNorm(c), std::sqrt(total_sq) + 1e-12);
    EXPECT_EQ(PerLayerClip(c, bounds), c);
  }
}

TEST(PerLayerClipTest, SingleLayerMatchesFlat) {
  Rng rng(13);
  for (int t = 0; t < kTrials; ++t) {
    const ParamVector v = RandomParamVector(rng, 1);
    const std::vector<double> bound = {0.5};
    EXPECT_LE(MaxAbsDiff(PerLayerClip(v, bound), FlatClip(v, 0.5)), 1e-12);
  }
}

TEST(PerLayerClipTest, RejectsWrongBoundCount) {
  const ParamVector v = TwoLayers({1}, {1});
  const std::vector<double> one = {1.0};
  EXPECT_THROW(PerLayerClip(v, one), ConfigError);
  EXPECT_THROW(ApplyClip(v, ClipConfig::PerLayer(std::vector<double>{1.0})), ConfigError);
}

TEST(ClipConfigTest, EvenSplitRecoversTotal) {
  const ClipConfig cfg = ClipConfig::PerLayer(6.0, 4);
  ASSERT_EQ(cfg.layer_bounds().size(), 4u);
  EXPECT_DOUBLE_EQ(cfg.layer_bounds()[0], 3.0);
  EXPECT_DOUBLE_EQ(cfg.total_bound(), 6.0);
  EXPECT_FALSE(ClipConfig::None().enabled());
  EXPECT_TRUE(ClipConfig::Flat(1.0).enabled());
}

TEST(ClipConfigTest, ApplyClipReportsNormAndFlag) {
  const ParamVector v = TwoLayers({3, 0}, {4});
  const ClipResult r = ApplyClip(v, ClipConfig::Flat(2.0));
  EXPECT_DOUBLE_EQ(r.norm_before, 5.0);
  EXPECT_TRUE(r.clipped);
  const ClipResult untouched = ApplyClip(v, ClipConfig::None());
  EXPECT_FALSE(untouched.clipped);
  EXPECT_EQ(untouched.value, v);
}

TEST(NoiseTest, MomentsOfMillionDraws) {
  Rng rng(2024);
  const ParamVector noised =
      AddGaussianNoise(ParamVector::Zeros({{"w", 1000000}}), 1.0, rng);
  double sum = 0.0, sq = 0.0;
  for (double x : noised.values(0)) {
    sum += x;
    sq += x * x;
  }
  const double n = 1e6;
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_LT(std::abs(mean), 4e-3);
  EXPECT_LT(std::abs(var - 1.0), 0.01);
}

TEST(NoiseTest, ZeroSigmaIsIdentityAndNegativeIsError) {
  Rng rng(1);
  const ParamVector v = TwoLayers({1, 2}, {3});
  EXPECT_EQ(AddGaussianNoise(v, 0.0, rng), v);
  EXPECT_THROW(AddGaussianNoise(v, -1.0, rng), ConfigError);
  EXPECT_THROW(AddGaussianNoise(v, kInf, rng), ConfigError);
}

TEST(SerializationTest, RoundTripIsBitExact) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const ParamVector v = RandomParamVector(rng);
    const ParamVector back = ParamVectorFromJson(nlohmann::json::parse(ToJson(v).dump()));
    EXPECT_EQ(back, v);
  }
}

TEST(SerializationTest, RejectsMismatchedLength) {
  nlohmann::json j = ToJson(TwoLayers({1, 2}, {3}));
  j["layers"][0]["length"] = 5;
  EXPECT_THROW(ParamVectorFromJson(j), ConfigError);
  EXPECT_THROW(ParamVectorFromJson(nlohmann::json{{"format", "other"}}), ConfigError);
}

}  // namespace
}  // namespace dpfed
