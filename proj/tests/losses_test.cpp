// Copyright 2026 The Crashcast Authors.
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

#include "crashcast/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sample_fixtures.hpp"

namespace ad = crashcast::autodiff;
namespace ls = crashcast::losses;
using crashcast::CounterRng;
using crashcast::Error;

namespace {

ad::Tensor logits(std::vector<double> flat) {
  const std::size_t rows = flat.size() / 2;
  return ad::Tensor({rows, 2}, std::move(flat));
}

double ce(double a, double b, int label) {
  const double mx = std::max(a, b);
  const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
  return lse - (label == 1 ? b : a);
}

}  // namespace

TEST(PositiveWeight, HandValueAndBoundary) {
  EXPECT_NEAR(ls::positive_weight(30, 50, 10.0), std::exp(-1.9), 1e-15);
  EXPECT_NEAR(ls::positive_weight(30, 50, 10.0), 0.14957, 1e-5);
  EXPECT_EQ(ls::positive_weight(49, 50, 10.0), 1.0);
  EXPECT_EQ(ls::positive_weight(60, 50, 10.0), 1.0);
  EXPECT_NEAR(ls::positive_weight(48, 50, 10.0, ls::WeightUnits::kFrames), std::exp(-1.0), 1e-15);
}

TEST(PositiveWeight, NondecreasingInTimeAndBounded) {
  for (int tau = 1; tau <= 50; ++tau) {
    double prev = 0.0;
    for (std::size_t t = 0; t < 50; ++t) {
      const double w = ls::positive_weight(t, tau, 10.0);
      EXPECT_GT(w, 0.0);
      EXPECT_LE(w, 1.0);
      EXPECT_GE(w, prev);
      prev = w;
    }
  }
}

TEST(FrameLoss, NegativeIsPlainMeanCrossEntropy) {
  ad::Tape tape;
  const std::vector<double> v{0.3, -0.2, 1.0, 0.5, -1.0, 2.0};
  ls::LossItem item{tape.constant(logits(v)), 0, std::nullopt};
  const double got = ls::frame_loss(std::span(&item, 1), {}).value().item();
  const double want = (ce(0.3, -0.2, 0) + ce(1.0, 0.5, 0) + ce(-1.0, 2.0, 0)) / 3.0;
  EXPECT_NEAR(got, want, 1e-14);
}

TEST(FrameLoss, PositiveUsesOnsetWeights) {
  ad::Tape tape;
  const std::vector<double> v{0.3, -0.2, 1.0, 0.5, -1.0, 2.0};
  ls::LossItem items[] = {{tape.constant(logits(v)), 1, 3}, {tape.constant(logits(v)), 0, std::nullopt}};
  const double got = ls::frame_loss(items, {}).value().item();
  double want = 0.0;
  for (std::size_t t = 0; t < 3; ++t) {
    const double w = std::exp(-std::max(0.0, (3.0 - t - 1.0) / 10.0));
    want += w * ce(v[2 * t], v[2 * t + 1], 1) + ce(v[2 * t], v[2 * t + 1], 0);
  }
  EXPECT_NEAR(got, want / 6.0, 1e-14);
  ls::LossItem bad{tape.constant(logits(v)), 1, std::nullopt};
  EXPECT_THROW(ls::frame_loss(std::span(&bad, 1), {}), Error);
}

TEST(VideoLoss, TieChoosesFirstFrame) {
  ad::Tape tape;
  ls::LossItem item{tape.constant(logits({0, 0, 1, 0})), 1, 2};
  EXPECT_NEAR(ls::video_loss(std::span(&item, 1)).value().item(), std::log(2.0), 1e-15);
}

TEST(VideoLoss, PoolOfOneIsFirstFrame) {
  ad::Tape tape;
  ls::LossItem item{tape.constant(logits({0.4, -0.3, 0, 9})), 1, 1};
  EXPECT_NEAR(ls::video_loss(std::span(&item, 1)).value().item(), ce(0.4, -0.3, 1), 1e-15);
}

TEST(VideoLoss, SaturatedFrameInsidePoolGivesNearZero) {
  ad::Tape tape;
  ls::LossItem item{tape.constant(logits({0, 0, 0, 50, 0, 0})), 1, 3};
  EXPECT_LT(ls::video_loss(std::span(&item, 1)).value().item(), 1e-15);
  // a saturated frame at or after the onset is outside the pool
  ls::LossItem late{tape.constant(logits({0, 0, 0, 0, 0, 50})), 1, 2};
  EXPECT_NEAR(ls::video_loss(std::span(&late, 1)).value().item(), std::log(2.0), 1e-15);
}

TEST(AlignLoss, OrthogonalPairsHandValue) {
  ad::Tape tape;
  auto e = tape.constant(ad::Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}));
  ls::LossConfig cfg;
  cfg.tau_c = 1.0;
  const double got = ls::align_loss(e, e, ad::Tensor({2, 2}, 1.0), cfg).value().item();
  EXPECT_NEAR(got, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-15);
  EXPECT_NEAR(got, 0.31326, 1e-5);
}

TEST(AlignLoss, LonePairAndFullMaskAreZero) {
  ad::Tape tape;
  auto one = tape.constant(ad::Tensor({1, 2}, std::vector<double>{0.6, 0.8}));
  EXPECT_NEAR(ls::align_loss(one, one, ad::Tensor({1, 1}, 1.0), {}).value().item(), 0.0, 1e-15);
  auto e = tape.constant(ad::Tensor({3, 2}, std::vector<double>{1, 0, 0, 1, 0.6, 0.8}));
  ad::Tensor diag({3, 3});
  for (std::size_t i = 0; i < 3; ++i) diag.at(i, i) = 1.0;
  EXPECT_NEAR(ls::align_loss(e, e, diag, {}).value().item(), 0.0, 1e-15);
}

TEST(AlignLoss, SymmetricInArgumentsAndNonnegative) {
  CounterRng rng(7, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    ad::Tensor a({n, 3}), b({n, 3});
    for (auto& x : a.values()) x = rng.normal();
    for (auto& x : b.values()) x = rng.normal();
    ad::Tape tape;
    auto va = ad::l2_normalize_lastdim(tape.constant(a)), vb = ad::l2_normalize_lastdim(tape.constant(b));
    std::vector<std::size_t> video(n), frame(n);
    for (std::size_t i = 0; i < n; ++i) {
      video[i] = i % 2;
      frame[i] = i / 2;
    }
    const auto mask = ls::neighbor_mask(video, frame, 1);
    const double ab = ls::align_loss(va, vb, mask, {}).value().item();
    const double ba = ls::align_loss(vb, va, mask, {}).value().item();
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_GE(ab, -1e-15);
  }
}

TEST(NeighborMask, DropsOnlyNearbyFramesOfTheSameVideo) {
  const std::vector<std::size_t> video{0, 0, 0, 0, 1}, frame{0, 1, 2, 3, 0};
  const auto m = ls::neighbor_mask(video, frame, 2);
  EXPECT_EQ(m.at(0, 0), 1.0);
  EXPECT_EQ(m.at(0, 1), 0.0);
  EXPECT_EQ(m.at(0, 2), 0.0);
  EXPECT_EQ(m.at(0, 3), 1.0);
  EXPECT_EQ(m.at(0, 4), 1.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(m.at(i, j), m.at(j, i));
}

TEST(TotalLoss, Weighting) {
  ad::Tape tape;
  auto c = [&](double v) { return tape.constant(ad::Tensor::scalar(v)); };
  EXPECT_NEAR(ls::total_loss(c(0), c(0.01), c(0), 50.0).value().item(), 0.5, 1e-15);
  EXPECT_NEAR(ls::total_loss(c(0.2), c(0), c(0.3), 50.0).value().item(), 0.5, 1e-15);
  EXPECT_EQ(ls::total_loss(c(0), c(0), c(0), 50.0).value().item(), 0.0);
}

TEST(BatchLoss, ComponentsAreNonnegativeAndConsistent) {
  crashcast::riskmodel::ModelConfig mcfg;
  mcfg.objects = 3;
  mcfg.dim = 4;
  auto p = crashcast::riskmodel::init_params(mcfg);
  const auto a = crashcast::testing::random_sample(8, 3, 4, 1, 1, 6);
  const auto b = crashcast::testing::random_sample(8, 3, 4, 2, 0);
  const crashcast::features::Sample* batch[] = {&a, &b};
  ad::Tape tape;
  const auto r = ls::batch_loss(batch, p, mcfg, {}, tape);
  EXPECT_GE(r.values.l1, 0.0);
  EXPECT_GE(r.values.l2, 0.0);
  EXPECT_GE(r.values.l3, 0.0);
  EXPECT_NEAR(r.values.total, r.values.l1 + 8.0 * r.values.l2 + r.values.l3, 1e-12);
}
