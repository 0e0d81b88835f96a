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

#ifndef CRASHCAST_LOSSES_HPP_
#define CRASHCAST_LOSSES_HPP_

// Training objectives: time-weighted frame loss, video-level loss at the
// most confident frame, and a bidirectional InfoNCE alignment loss.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "crashcast/autodiff.hpp"
#include "crashcast/error.hpp"
#include "crashcast/riskmodel.hpp"

namespace crashcast::losses {

using autodiff::Tape;
using autodiff::Tensor;
using autodiff::Var;
namespace ad = autodiff;

enum class WeightUnits { kSeconds, kFrames };

struct LossConfig {
  double fps = 10.0;
  double tau_c = 0.1;                 // alignment temperature
  std::size_t neighbor_radius = 2;    // frames masked around each anchor
  WeightUnits weight_units = WeightUnits::kSeconds;

  void validate() const {
    if (!(fps > 0.0) || !(tau_c > 0.0)) throw Error(ErrorKind::kInvalidValue, "fps and tau_c must be > 0");
  }
};

/// One video's contribution: its logits and label.
struct LossItem {
  Var logits;                          // [T, 2]
  int label = 0;
  std::optional<int> accident_frame;   // 1-based onset
};

/// w_t = exp(-max(0, (tau_acc - t - 1) / fps)) for a 0-based frame index t
/// and 1-based onset tau_acc; exactly 1 from the frame before the onset on.
inline double positive_weight(std::size_t t, int tau_acc, double fps, WeightUnits units = WeightUnits::kSeconds) {
  const double gap = std::max(0.0, static_cast<double>(tau_acc) - static_cast<double>(t) - 1.0);
  return std::exp(-(units == WeightUnits::kSeconds ? gap / fps : gap));
}

/// L1: (1/BT) sum over videos and frames of the (weighted) frame CE.
inline Var frame_loss(std::span<const LossItem> batch, const LossConfig& cfg) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidValue, "empty batch");
  std::size_t total_frames = 0;
  for (const auto& item : batch) total_frames += item.logits.shape()[0];
  const double norm = 1.0 / static_cast<double>(total_frames);
  std::optional<Var> acc;
  for (const auto& item : batch) {
    const std::size_t t_len = item.logits.shape()[0];
    if (item.label == 1 && !item.accident_frame)
      throw Error(ErrorKind::kInvalidValue, "positive video without accident frame");
    std::vector<std::size_t> labels(t_len, static_cast<std::size_t>(item.label));
    std::vector<double> weights(t_len, norm);
    if (item.label == 1)
      for (std::size_t t = 0; t < t_len; ++t)
        weights[t] *= positive_weight(t, *item.accident_frame, cfg.fps, cfg.weight_units);
    auto l = ad::cross_entropy_logits(item.logits, labels, weights);
    acc = acc ? ad::add(*acc, l) : l;
  }
  return *acc;
}

/// Frame pool size: the onset for positives, the whole clip otherwise.
inline std::size_t pool_frames(const LossItem& item) {
  const std::size_t t_len = item.logits.shape()[0];
  if (item.label == 1 && item.accident_frame)
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(*item.accident_frame, 1)), 1, t_len);
  return t_len;
}

/// L2: mean CE at the frame whose positive-class logit is largest within
/// the pool (first on ties).
inline Var video_loss(std::span<const LossItem> batch, const LossConfig& = {}) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidValue, "empty batch");
  std::optional<Var> acc;
  for (const auto& item : batch) {
    const auto& lv = item.logits.value();
    const std::size_t pool = pool_frames(item);
    std::size_t best = 0;
    for (std::size_t t = 1; t < pool; ++t)
      if (lv.at(t, 1) > lv.at(best, 1)) best = t;
    auto row = ad::slice(item.logits, best, best + 1);
    auto l = ad::cross_entropy_logits(row, {static_cast<std::size_t>(item.label)},
                                      {1.0 / static_cast<double>(batch.size())});
    acc = acc ? ad::add(*acc, l) : l;
  }
  return *acc;
}

/// Alignment head: relu MLP on l2-normalized inputs, normalized again.
inline Var project_alignment(riskmodel::ModelParams& p, Tape& tape, const Var& x) {
  auto hid = ad::relu(ad::add_bias(ad::matmul(ad::l2_normalize_lastdim(x), tape.param(p.align_w1)),
                                   tape.param(p.align_b1)));
  return ad::l2_normalize_lastdim(ad::add_bias(ad::matmul(hid, tape.param(p.align_w2)), tape.param(p.align_b2)));
}

/// Candidate mask for InfoNCE over N = sum of video lengths: the matching
/// pair is always kept; other frames of the same video within `radius`
/// are dropped.
inline Tensor neighbor_mask(std::span<const std::size_t> video, std::span<const std::size_t> frame,
                            std::size_t radius) {
  const std::size_t n = video.size();
  Tensor m({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && video[i] == video[j]) {
        const std::size_t gap = frame[i] > frame[j] ? frame[i] - frame[j] : frame[j] - frame[i];
        if (gap <= radius) m.at(i, j) = 0.0;
      }
  return m;
}

/// L3: mean over anchors of (L_{v->t} + L_{t->v}) / 2 on unit embeddings
/// a, b [N, D] with temperature tau_c.
inline Var align_loss(const Var& a, const Var& b, const Tensor& mask, const LossConfig& cfg) {
  if (a.shape() != b.shape() || a.value().rank() != 2)
    throw Error(ErrorKind::kShapeMismatch, "alignment embeddings must be matching [N, D]");
  const std::size_t n = a.shape()[0];
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  auto a2b = ad::log_softmax_lastdim(ad::scale(ad::matmul_nt(a, b), 1.0 / cfg.tau_c), &mask);
  auto b2a = ad::log_softmax_lastdim(ad::scale(ad::matmul_nt(b, a), 1.0 / cfg.tau_c), &mask);
  auto both = ad::add(ad::pick(a2b, diag), ad::pick(b2a, diag));
  return ad::scale(ad::sum(both), -0.5 / static_cast<double>(n));
}

/// L = L1 + gamma L2 + L3 with gamma = T.
inline Var total_loss(const Var& l1, const Var& l2, const Var& l3, double gamma) {
  return ad::add(ad::add(l1, ad::scale(l2, gamma)), l3);
}

struct LossValues {
  double l1 = 0.0, l2 = 0.0, l3 = 0.0, total = 0.0;
};

struct BatchLoss {
  Var total;
  LossValues values;
};

/// Runs the model on a batch and assembles all three terms on one tape.
inline BatchLoss batch_loss(std::span<const features::Sample* const> samples, riskmodel::ModelParams& p,
                            const riskmodel::ModelConfig& mcfg, const LossConfig& cfg, Tape& tape) {
  std::vector<LossItem> items;
  std::vector<Var> vis, text;
  std::vector<std::size_t> video, frame;
  std::size_t t_len = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = *samples[k];
    auto out = riskmodel::forward(s, p, mcfg, tape);
    items.push_back({out.logits, s.label, s.accident_frame});
    vis.push_back(out.frame_vis);
    text.push_back(out.frame_text);
    for (std::size_t t = 0; t < s.frames; ++t) {
      video.push_back(k);
      frame.push_back(t);
    }
    t_len = std::max(t_len, s.frames);
  }
  auto l1 = frame_loss(items, cfg);
  auto l2 = video_loss(items, cfg);
  auto pv = project_alignment(p, tape, ad::concat_rows(vis));
  auto pt = project_alignment(p, tape, ad::concat_rows(text));
  auto l3 = align_loss(pv, pt, neighbor_mask(video, frame, cfg.neighbor_radius), cfg);
  auto total = total_loss(l1, l2, l3, static_cast<double>(t_len));
  return {total, {l1.value().item(), l2.value().item(), l3.value().item(), total.value().item()}};
}

}  // namespace crashcast::losses

#endif  // CRASHCAST_LOSSES_HPP_
