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

#ifndef CRASHCAST_TRAINEVAL_HPP_
#define CRASHCAST_TRAINEVAL_HPP_

// Adam training with resumable state, and the evaluation metrics: trigger
// frames, time-to-accident, average precision and mean TTA.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crashcast/autodiff.hpp"
#include "crashcast/error.hpp"
#include "crashcast/features.hpp"
#include "crashcast/losses.hpp"
#include "crashcast/random.hpp"
#include "crashcast/riskmodel.hpp"

namespace crashcast::traineval {

using autodiff::Tensor;

// ---- split -----------------------------------------------------------------

/// 75/25 train/test assignment from the scenario id alone.
inline bool is_test_id(std::string_view id) { return fnv1a64(id) % 4 == 0; }

// ---- training --------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw Error(ErrorKind::kInvalidValue, "learning rate must be finite and >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw Error(ErrorKind::kInvalidValue, "moment decays must lie in (0, 1)");
    if (batch_size < 1) throw Error(ErrorKind::kInvalidValue, "batch size must be >= 1");
    if (!(clip_norm > 0.0)) throw Error(ErrorKind::kInvalidValue, "clip norm must be > 0");
  }
};

/// Parameters plus optimizer moments; enough to resume bit-exactly.
struct TrainState {
  riskmodel::ModelParams params;
  std::vector<Tensor> m, v;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // Adam steps taken

  static TrainState fresh(const riskmodel::ModelConfig& cfg) {
    TrainState s{riskmodel::init_params(cfg), {}, {}, 0, 0};
    for (auto* p : s.params.all()) {
      s.m.emplace_back(p->value.shape());
      s.v.emplace_back(p->value.shape());
    }
    return s;
  }
};

inline std::vector<autodiff::NamedTensor> to_checkpoint(const TrainState& s) {
  auto out = riskmodel::snapshot(s.params);
  const auto ps = s.params.all();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out.push_back({"adam.m." + ps[i]->name, s.m[i]});
    out.push_back({"adam.v." + ps[i]->name, s.v[i]});
  }
  out.push_back({"state.epoch", Tensor::scalar(static_cast<double>(s.epoch))});
  out.push_back({"state.step", Tensor::scalar(static_cast<double>(s.step))});
  return out;
}

inline TrainState from_checkpoint(const std::vector<autodiff::NamedTensor>& tensors,
                                  const riskmodel::ModelConfig& cfg) {
  TrainState s = TrainState::fresh(cfg);
  riskmodel::restore(s.params, tensors);
  auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  };
  const auto ps = s.params.all();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (const auto* m = find("adam.m." + ps[i]->name); m && m->shape() == s.m[i].shape()) s.m[i] = *m;
    if (const auto* v = find("adam.v." + ps[i]->name); v && v->shape() == s.v[i].shape()) s.v[i] = *v;
  }
  if (const auto* e = find("state.epoch")) s.epoch = static_cast<std::size_t>(e->item());
  if (const auto* st = find("state.step")) s.step = static_cast<std::size_t>(st->item());
  return s;
}

/// Global-norm clipping followed by one Adam update.
inline void adam_step(TrainState& s, const TrainConfig& cfg) {
  auto ps = s.params.all();
  double sq = 0.0;
  for (auto* p : ps)
    for (double g : p->grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Error(ErrorKind::kDivergence, "non-finite gradient norm");
  const double clip = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
  ++s.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = *ps[i];
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k] * clip;
      s.m[i][k] = cfg.beta1 * s.m[i][k] + (1.0 - cfg.beta1) * g;
      s.v[i][k] = cfg.beta2 * s.v[i][k] + (1.0 - cfg.beta2) * g * g;
      const double update = cfg.learning_rate * (s.m[i][k] / c1) / (std::sqrt(s.v[i][k] / c2) + cfg.epsilon);
      p.value[k] -= update;
    }
  }
}

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  losses::LossValues train;
  std::optional<losses::LossValues> validation;
};

/// Loss components averaged over mini-batches without updating anything.
inline losses::LossValues evaluate_loss(std::span<const features::Sample> samples, riskmodel::ModelParams& params,
                                        const riskmodel::ModelConfig& mcfg, const losses::LossConfig& lcfg,
                                        std::size_t batch_size) {
  losses::LossValues sum;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<const features::Sample*> batch;
    for (std::size_t k = start; k < std::min(samples.size(), start + batch_size); ++k) batch.push_back(&samples[k]);
    autodiff::Tape tape;
    const auto v = losses::batch_loss(batch, params, mcfg, lcfg, tape).values;
    sum.l1 += v.l1;
    sum.l2 += v.l2;
    sum.l3 += v.l3;
    sum.total += v.total;
    ++batches;
  }
  if (batches) {
    const double n = static_cast<double>(batches);
    sum = {sum.l1 / n, sum.l2 / n, sum.l3 / n, sum.total / n};
  }
  return sum;
}

/// Per-step callback: (epoch, step, values).
using StepHook = std::function<void(std::size_t, std::size_t, const losses::LossValues&)>;

/// Runs epochs state.epoch+1 .. cfg.epochs. Batch order per epoch depends
/// only on (seed, epoch), so a resumed run repeats an uninterrupted one.
inline std::vector<EpochLog> train(std::span<const features::Sample> train_set,
                                   std::span<const features::Sample> validation_set, TrainState& state,
                                   const riskmodel::ModelConfig& mcfg, const losses::LossConfig& lcfg,
                                   const TrainConfig& cfg, const StepHook& hook = {}) {
  cfg.validate();
  lcfg.validate();
  if (train_set.empty()) throw Error(ErrorKind::kInvalidValue, "training set is empty");
  std::vector<EpochLog> log;
  const CounterRng base(cfg.seed, 0x7a11);
  while (state.epoch < cfg.epochs) {
    const std::size_t epoch = state.epoch + 1;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng = base.split(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    losses::LossValues sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const features::Sample*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(&train_set[order[k]]);
      for (auto* p : state.params.all()) p->zero_grad();
      autodiff::Tape tape;
      auto bl = losses::batch_loss(batch, state.params, mcfg, lcfg, tape);
      if (!std::isfinite(bl.values.total))
        throw Error(ErrorKind::kDivergence, "loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                                std::to_string(state.step + 1) + " (L1=" +
                                                std::to_string(bl.values.l1) + ", L2=" + std::to_string(bl.values.l2) +
                                                ", L3=" + std::to_string(bl.values.l3) + ")");
      tape.backward(bl.total);
      adam_step(state, cfg);
      if (hook) hook(epoch, state.step, bl.values);
      sum.l1 += bl.values.l1;
      sum.l2 += bl.values.l2;
      sum.l3 += bl.values.l3;
      sum.total += bl.values.total;
      ++batches;
    }
    const double n = static_cast<double>(batches);
    EpochLog row{epoch, {sum.l1 / n, sum.l2 / n, sum.l3 / n, sum.total / n}, std::nullopt};
    if (!validation_set.empty())
      row.validation = evaluate_loss(validation_set, state.params, mcfg, lcfg, cfg.batch_size);
    log.push_back(row);
    state.epoch = epoch;
  }
  return log;
}

// ---- metrics ---------------------------------------------------------------

/// Smallest 1-based m < T with u_m >= delta.
inline std::optional<int> trigger_frame(std::span<const double> curve, double delta) {
  for (std::size_t m = 0; m + 1 < curve.size(); ++m)
    if (curve[m] >= delta) return static_cast<int>(m) + 1;
  return std::nullopt;
}

/// (lambda_acc - m) / fps, clipped at zero.
inline double tta(int trigger, int accident_frame, double fps) {
  return std::max(0.0, static_cast<double>(accident_frame - trigger) / fps);
}

/// Max risk over frames strictly before the onset (positives) or over the
/// whole clip (negatives).
inline double video_score(std::span<const double> curve, std::optional<int> accident_frame) {
  std::size_t end = curve.size();
  if (accident_frame) end = std::min(end, static_cast<std::size_t>(std::max(*accident_frame - 1, 0)));
  double best = 0.0;
  for (std::size_t t = 0; t < end; ++t) best = std::max(best, curve[t]);
  return best;
}

/// Step-interpolated area under the precision-recall curve: sum over
/// distinct score thresholds of (recall gain) x precision.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorKind::kShapeMismatch, "scores and labels differ in length");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(labels.size()))
    throw Error(ErrorKind::kInvalidValue, "average precision needs both positive and negative videos");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, tp = 0.0, seen = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] == 1;
      seen += 1.0;
      ++j;
    }
    const double recall = tp / static_cast<double>(positives);
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

struct VideoCurve {
  std::string id;
  int label = 0;
  std::optional<int> accident_frame;
  std::vector<double> curve;
};

/// Mean TTA over triggering positives at one threshold; nullopt if none
/// trigger.
inline std::optional<double> mean_tta_at(std::span<const VideoCurve> videos, double delta, double fps) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& v : videos) {
    if (v.label != 1 || !v.accident_frame) continue;
    if (auto m = trigger_frame(v.curve, delta)) {
      sum += tta(*m, *v.accident_frame, fps);
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

/// Threshold grid 0.01 .. 0.99; mean over thresholds where some positive
/// triggers, 0 when none ever does.
inline double mtta(std::span<const VideoCurve> videos, double fps) {
  double sum = 0.0;
  std::size_t count = 0;
  for (int k = 1; k <= 99; ++k)
    if (auto m = mean_tta_at(videos, k / 100.0, fps)) {
      sum += *m;
      ++count;
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

struct SweepRow {
  double threshold = 0.0;
  std::size_t triggered_positives = 0;
  std::size_t triggered_negatives = 0;
  std::optional<double> mean_tta;
};

struct VideoResult {
  std::string id;
  int label = 0;
  std::optional<int> accident_frame;
  double score = 0.0;
  std::optional<int> trigger;
  std::optional<double> tta;
};

struct EvalReport {
  double ap = 0.0;
  double mtta = 0.0;
  std::optional<double> threshold;
  std::vector<SweepRow> sweep;
  std::vector<VideoResult> videos;
};

inline EvalReport evaluate(std::span<const VideoCurve> videos, double fps, std::optional<double> threshold) {
  EvalReport r;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& v : videos) {
    scores.push_back(video_score(v.curve, v.accident_frame));
    labels.push_back(v.label);
  }
  r.ap = average_precision(scores, labels);
  r.mtta = mtta(videos, fps);
  r.threshold = threshold;
  for (int k = 1; k <= 99; ++k) {
    const double delta = k / 100.0;
    SweepRow row{delta, 0, 0, mean_tta_at(videos, delta, fps)};
    for (const auto& v : videos)
      if (trigger_frame(v.curve, delta)) ++(v.label == 1 ? row.triggered_positives : row.triggered_negatives);
    r.sweep.push_back(row);
  }
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& v = videos[i];
    VideoResult res{v.id, v.label, v.accident_frame, scores[i], std::nullopt, std::nullopt};
    if (threshold) {
      res.trigger = trigger_frame(v.curve, *threshold);
      if (res.trigger && v.label == 1 && v.accident_frame) res.tta = tta(*res.trigger, *v.accident_frame, fps);
    }
    r.videos.push_back(std::move(res));
  }
  return r;
}

}  // namespace crashcast::traineval

#endif  // CRASHCAST_TRAINEVAL_HPP_
