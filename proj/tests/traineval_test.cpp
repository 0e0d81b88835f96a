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

#include "crashcast/traineval.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "sample_fixtures.hpp"

namespace ad = crashcast::autodiff;
namespace rm = crashcast::riskmodel;
namespace te = crashcast::traineval;
namespace ft = crashcast::features;
using crashcast::CounterRng;
using crashcast::Error;
using crashcast::ErrorKind;
using crashcast::testing::random_sample;

namespace {

rm::ModelConfig tiny_model() {
  rm::ModelConfig c;
  c.objects = 3;
  c.dim = 4;
  return c;
}

std::vector<ft::Sample> tiny_dataset(std::size_t n) {
  std::vector<ft::Sample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(random_sample(8, 3, 4, 40 + i, i % 2 == 0 ? 1 : 0, i % 2 == 0 ? std::optional<int>(6) : std::nullopt));
  return out;
}

bool same_params(const rm::ModelParams& a, const rm::ModelParams& b) {
  const auto pa = a.all(), pb = b.all();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(pa[i]->value == pb[i]->value)) return false;
  return true;
}

// Exact rational arithmetic for the brute-force oracles.
struct Frac {
  long long n = 0, d = 1;
};

Frac reduce(Frac f) {
  const long long g = std::gcd(f.n, f.d);
  return g ? Frac{f.n / g, f.d / g} : f;
}

Frac add(Frac a, Frac b) { return reduce({a.n * b.d + b.n * a.d, a.d * b.d}); }
Frac mul(Frac a, Frac b) { return reduce({a.n * b.n, a.d * b.d}); }
double to_double(Frac f) { return static_cast<double>(f.n) / static_cast<double>(f.d); }

// PR curve by thresholding at every distinct score, highest first.
double brute_force_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> thresholds = s;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  const long long positives = std::count(y.begin(), y.end(), 1);
  Frac ap, prev_recall;
  for (double th : thresholds) {
    long long tp = 0, predicted = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= th) {
        ++predicted;
        tp += y[i];
      }
    const Frac recall = reduce({tp, positives});
    ap = add(ap, mul(add(recall, {-prev_recall.n, prev_recall.d}), reduce({tp, predicted})));
    prev_recall = recall;
  }
  return to_double(ap);
}

// Threshold-grid mTTA computed by scanning each curve independently.
double brute_force_mtta(const std::vector<te::VideoCurve>& videos, double fps) {
  std::vector<double> per_threshold;
  for (int k = 1; k <= 99; ++k) {
    const double delta = k / 100.0;
    std::vector<double> ttas;
    for (const auto& v : videos) {
      if (v.label != 1) continue;
      for (std::size_t m = 1; m < v.curve.size(); ++m)
        if (v.curve[m - 1] >= delta) {
          ttas.push_back(std::max(0.0, (*v.accident_frame - static_cast<double>(m)) / fps));
          break;
        }
    }
    if (!ttas.empty()) per_threshold.push_back(std::accumulate(ttas.begin(), ttas.end(), 0.0) / ttas.size());
  }
  if (per_threshold.empty()) return 0.0;
  return std::accumulate(per_threshold.begin(), per_threshold.end(), 0.0) / per_threshold.size();
}

}  // namespace

TEST(Split, RoughlyOneQuarterHeldOut) {
  int test = 0;
  for (int i = 0; i < 4000; ++i) test += te::is_test_id(crashcast::scenario::scenario_id(i));
  EXPECT_NEAR(test, 1000, 3 * std::sqrt(4000 * 0.25 * 0.75));
  EXPECT_EQ(te::is_test_id("scn-000001"), te::is_test_id("scn-000001"));
}

TEST(Adam, FirstStepMatchesHandUpdate) {
  auto s = te::TrainState::fresh(tiny_model());
  te::TrainConfig cfg;
  auto params = s.params.all();
  const auto before = rm::snapshot(s.params);
  for (auto* p : params) std::fill(p->grad.values().begin(), p->grad.values().end(), 0.0);
  params[0]->grad[0] = 0.5;
  params[0]->grad[1] = -2.0;
  te::adam_step(s, cfg);
  // bias-corrected first step moves each coordinate by lr * g / (|g| + eps)
  EXPECT_NEAR(params[0]->value[0], before[0].tensor[0] - 1e-3 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(params[0]->value[1], before[0].tensor[1] + 1e-3 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(params[0]->value[2], before[0].tensor[2]);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ClipsGlobalNorm) {
  auto s = te::TrainState::fresh(tiny_model());
  te::TrainConfig cfg;
  for (auto* p : s.params.all()) p->zero_grad();
  s.params.all()[0]->grad[0] = 30.0;
  s.params.all()[0]->grad[1] = 40.0;
  te::adam_step(s, cfg);
  EXPECT_NEAR(s.m[0][0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(s.m[0][1], 0.1 * 4.0, 1e-12);
  s.params.all()[0]->grad[0] = std::nan("");
  EXPECT_THROW(te::adam_step(s, cfg), Error);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto data = tiny_dataset(4);
  auto s = te::TrainState::fresh(tiny_model());
  const auto start = s.params;
  te::TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  te::train(data, {}, s, tiny_model(), {}, cfg);
  EXPECT_TRUE(same_params(s.params, start));
  EXPECT_EQ(s.step, 4u);
}

TEST(Train, LossDecreasesOnSeparableVideo) {
  const std::vector<ft::Sample> data{random_sample(8, 3, 4, 3, 1, 5)};
  auto s = te::TrainState::fresh(tiny_model());
  te::TrainConfig cfg;
  cfg.epochs = 50;
  std::vector<double> totals;
  te::train(data, {}, s, tiny_model(), {}, cfg,
            [&](std::size_t, std::size_t, const crashcast::losses::LossValues& v) { totals.push_back(v.total); });
  ASSERT_EQ(totals.size(), 50u);
  for (std::size_t i = 1; i < 10; ++i) EXPECT_LT(totals[i], totals[i - 1]) << "step " << i;
  EXPECT_LT(totals.back(), totals.front());
}

TEST(Train, DeterministicForFixedSeed) {
  const auto data = tiny_dataset(6);
  te::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 9;
  auto a = te::TrainState::fresh(tiny_model()), b = te::TrainState::fresh(tiny_model());
  const auto la = te::train(data, data, a, tiny_model(), {}, cfg);
  const auto lb = te::train(data, data, b, tiny_model(), {}, cfg);
  EXPECT_TRUE(same_params(a.params, b.params));
  ASSERT_EQ(la.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(la[i].train.total, lb[i].train.total);
    ASSERT_TRUE(la[i].validation.has_value());
    EXPECT_EQ(la[i].validation->total, lb[i].validation->total);
  }
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto data = tiny_dataset(6);
  te::TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.seed = 2;
  auto full = te::TrainState::fresh(tiny_model());
  const auto full_log = te::train(data, {}, full, tiny_model(), {}, cfg);

  auto half = te::TrainState::fresh(tiny_model());
  auto first = cfg;
  first.epochs = 2;
  te::train(data, {}, half, tiny_model(), {}, first);
  const auto path = std::filesystem::temp_directory_path() / "crashcast_resume_test.bin";
  ad::write_checkpoint(path.string(), te::to_checkpoint(half));
  auto resumed = te::from_checkpoint(ad::read_checkpoint(path.string()), tiny_model());
  std::filesystem::remove(path);
  EXPECT_EQ(resumed.epoch, 2u);
  const auto rest = te::train(data, {}, resumed, tiny_model(), {}, cfg);
  ASSERT_EQ(rest.size(), 2u);
  EXPECT_TRUE(same_params(full.params, resumed.params));
  EXPECT_NEAR(rest.back().train.total, full_log.back().train.total, 1e-9);
  EXPECT_EQ(resumed.step, full.step);
}

TEST(Train, DivergenceIsReported) {
  const auto data = tiny_dataset(2);
  auto s = te::TrainState::fresh(tiny_model());
  s.params.head_b2.value[1] = std::nan("");
  te::TrainConfig cfg;
  cfg.epochs = 1;
  try {
    te::train(data, {}, s, tiny_model(), {}, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
  }
}

TEST(Train, RejectsBadConfig) {
  const auto data = tiny_dataset(2);
  auto s = te::TrainState::fresh(tiny_model());
  te::TrainConfig cfg;
  cfg.beta1 = 1.0;
  EXPECT_THROW(te::train(data, {}, s, tiny_model(), {}, cfg), Error);
  EXPECT_THROW(te::train({}, {}, s, tiny_model(), {}, te::TrainConfig{}), Error);
}

TEST(TriggerFrame, HandCases) {
  const std::vector<double> c{0.1, 0.4, 0.6, 0.8};
  EXPECT_EQ(te::trigger_frame(c, 0.5), 3);
  EXPECT_EQ(te::trigger_frame(c, 0.0), 1);
  EXPECT_FALSE(te::trigger_frame(c, 0.9).has_value());
  // only the last frame crosses, which is not before the end of the clip
  EXPECT_FALSE(te::trigger_frame(c, 0.7).has_value());
}

TEST(TriggerFrame, MonotoneInThreshold) {
  CounterRng rng(1, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> c(10);
    for (auto& v : c) v = rng.uniform();
    for (int k = 1; k < 100; ++k) {
      const auto lo = te::trigger_frame(c, (k - 1) / 100.0), hi = te::trigger_frame(c, k / 100.0);
      if (lo && hi) ASSERT_LE(*lo, *hi);
      if (hi) ASSERT_TRUE(lo.has_value());
    }
  }
}

TEST(Tta, HandCases) {
  EXPECT_EQ(te::tta(50, 50, 10.0), 0.0);
  EXPECT_DOUBLE_EQ(te::tta(30, 50, 10.0), 2.0);
  EXPECT_EQ(te::tta(52, 50, 10.0), 0.0);
}

TEST(VideoScore, UsesFramesBeforeOnsetForPositives) {
  const std::vector<double> c{0.1, 0.3, 0.2, 0.9, 0.95};
  EXPECT_EQ(te::video_score(c, 4), 0.3);
  EXPECT_EQ(te::video_score(c, std::nullopt), 0.95);
  EXPECT_EQ(te::video_score(c, 1), 0.0);
}

TEST(AveragePrecision, HandCases) {
  EXPECT_DOUBLE_EQ(te::average_precision(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(te::average_precision(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1, 0}), 0.5);
  // inverted ranking: precision 1/3 at recall 1/2, then 2/4 at recall 1
  EXPECT_NEAR(te::average_precision(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{1, 1, 0, 0}),
              5.0 / 12.0, 1e-15);
  EXPECT_THROW(te::average_precision(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), Error);
  EXPECT_THROW(te::average_precision(std::vector<double>{0.1}, std::vector<int>{1, 0}), Error);
}

TEST(AveragePrecision, MatchesBruteForceAndIsRankStatistic) {
  CounterRng rng(17, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(12);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.below(6) / 5.0;  // coarse grid to force ties
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 1;
    y[1] = 0;
    const double ap = te::average_precision(s, y);
    EXPECT_NEAR(ap, brute_force_ap(s, y), 1e-15);
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
    std::vector<double> moved(n);
    for (std::size_t i = 0; i < n; ++i) moved[i] = std::exp(3.0 * s[i]) - 7.0;
    EXPECT_NEAR(te::average_precision(moved, y), ap, 1e-15);
  }
}

TEST(Mtta, HandCases) {
  std::vector<te::VideoCurve> v{{"a", 1, 20, std::vector<double>(50, 1.0)},
                                {"b", 1, 40, std::vector<double>(50, 1.0)},
                                {"c", 0, std::nullopt, std::vector<double>(50, 1.0)}};
  // every positive triggers at frame 1 for every threshold
  EXPECT_NEAR(te::mtta(v, 10.0), ((20 - 1) / 10.0 + (40 - 1) / 10.0) / 2.0, 1e-12);
  for (auto& x : v) std::fill(x.curve.begin(), x.curve.end(), 0.0);
  EXPECT_EQ(te::mtta(v, 10.0), 0.0);
}

TEST(Mtta, TwoStepCurvesMatchHandAverage) {
  // a: 0.3 from frame 11, onset 40; b: 0.7 from frame 21, onset 30
  std::vector<double> a(50, 0.0), b(50, 0.0);
  for (std::size_t t = 10; t < 50; ++t) a[t] = 0.3;
  for (std::size_t t = 20; t < 50; ++t) b[t] = 0.7;
  const std::vector<te::VideoCurve> v{{"a", 1, 40, a}, {"b", 1, 30, b}};
  // thresholds .01-.30: both trigger, mean (2.9 + 0.9) / 2 = 1.9
  // thresholds .31-.70: only b, 0.9; above .70 nothing
  const double want = (30 * 1.9 + 40 * 0.9) / 70.0;
  EXPECT_NEAR(te::mtta(v, 10.0), want, 1e-12);
}

TEST(Mtta, MatchesBruteForceGrid) {
  CounterRng rng(23, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<te::VideoCurve> v;
    const std::size_t n = 2 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
      te::VideoCurve c{"v" + std::to_string(i), static_cast<int>(rng.below(2)), std::nullopt, {}};
      const std::size_t len = 5 + rng.below(20);
      for (std::size_t t = 0; t < len; ++t) c.curve.push_back(rng.below(21) / 20.0);
      if (c.label == 1) c.accident_frame = 1 + static_cast<int>(rng.below(len));
      v.push_back(std::move(c));
    }
    const double got = te::mtta(v, 10.0);
    EXPECT_NEAR(got, brute_force_mtta(v, 10.0), 1e-12);
    EXPECT_GE(got, 0.0);
  }
}

TEST(Evaluate, ReportFields) {
  const std::vector<te::VideoCurve> v{{"p", 1, 4, {0.1, 0.6, 0.7, 0.9, 0.9}}, {"n", 0, std::nullopt, {0.2, 0.3, 0.1, 0.2, 0.4}}};
  const auto r = te::evaluate(v, 10.0, 0.5);
  EXPECT_EQ(r.ap, 1.0);
  EXPECT_EQ(r.sweep.size(), 99u);
  ASSERT_EQ(r.videos.size(), 2u);
  EXPECT_EQ(r.videos[0].trigger, 2);
  EXPECT_NEAR(*r.videos[0].tta, 0.2, 1e-15);
  EXPECT_FALSE(r.videos[1].trigger.has_value());
  EXPECT_FALSE(r.videos[1].tta.has_value());
  EXPECT_EQ(r.sweep[49].triggered_positives, 1u);
  EXPECT_EQ(r.sweep[0].triggered_negatives, 1u);
}
