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

#ifndef CRASHCAST_FEATURES_HPP_
#define CRASHCAST_FEATURES_HPP_

// Per-frame model inputs built from scenario records: synthetic visual and
// text embeddings, geometric distance/velocity matrices, and the
// differentiable edge-weight and gated-fusion maps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crashcast/autodiff.hpp"
#include "crashcast/error.hpp"
#include "crashcast/random.hpp"
#include "crashcast/scenario.hpp"

namespace crashcast::features {

using autodiff::Tensor;
using autodiff::Var;

enum class VelocitySign { kAsPrinted, kNegated };

inline std::string to_string(VelocitySign s) { return s == VelocitySign::kAsPrinted ? "as-printed" : "negated"; }

inline VelocitySign parse_velocity_sign(std::string_view s) {
  if (s == "as-printed") return VelocitySign::kAsPrinted;
  if (s == "negated") return VelocitySign::kNegated;
  throw Error(ErrorKind::kInvalidValue, "velocity_sign must be as-printed or negated, got '" + std::string(s) + "'");
}

struct FeatureConfig {
  std::size_t dim = 32;          // F
  std::size_t max_objects = 19;  // O
  double image_width = 1280.0;
  double image_height = 720.0;
  double scale = 1.0 / 1280.0;   // s in the combined distance
  double tau_text = 0.5;
  double visual_noise = 0.05;
  double text_noise = 0.01;
  VelocitySign velocity_sign = VelocitySign::kAsPrinted;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 2 || max_objects < 1) throw Error(ErrorKind::kInvalidValue, "feature dim >= 2 and objects >= 1 required");
    if (!(tau_text > 0.0)) throw Error(ErrorKind::kInvalidValue, "tau_text must be > 0");
    if (!(scale > 0.0)) throw Error(ErrorKind::kInvalidValue, "distance scale must be > 0");
  }
};

// ---- geometry --------------------------------------------------------------

/// d_ij = s^2 |c_i - c_j|^2 + (z_i - z_j)^2 over O objects.
inline Tensor pairwise_distance(const std::vector<scenario::Point>& centers, const std::vector<double>& depths,
                                double s) {
  if (centers.size() != depths.size()) throw Error(ErrorKind::kShapeMismatch, "centers and depths differ in count");
  const std::size_t o = centers.size();
  Tensor d({o, o});
  for (std::size_t i = 0; i < o; ++i)
    for (std::size_t j = i + 1; j < o; ++j) {
      const double dx = centers[i].x - centers[j].x, dy = centers[i].y - centers[j].y, dz = depths[i] - depths[j];
      d.at(i, j) = d.at(j, i) = s * s * (dx * dx + dy * dy) + dz * dz;
    }
  return d;
}

/// v_t = d_t - d_prev; zeros when there is no previous frame.
inline Tensor relative_velocity(const Tensor& d_t, const Tensor* d_prev) {
  if (!d_prev) return Tensor(d_t.shape());
  if (d_prev->shape() != d_t.shape()) throw Error(ErrorKind::kShapeMismatch, "velocity: frame shapes differ");
  Tensor v(d_t.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = d_t[i] - (*d_prev)[i];
  return v;
}

/// Divides by the largest |entry|; an all-zero matrix stays zero.
inline Tensor max_abs_normalize(Tensor m) {
  double top = 0.0;
  for (double v : m.values()) top = std::max(top, std::abs(v));
  if (top > 0.0)
    for (auto& v : m.values()) v /= top;
  return m;
}

// ---- differentiable maps ---------------------------------------------------

/// alpha * exp(-d) + (1 - alpha) * v, with alpha a one-element Var.
inline Var geo_weights(const Var& exp_neg_d, const Var& vbar, const Var& alpha) {
  auto one_minus = autodiff::add_scalar(autodiff::scale(alpha, -1.0), 1.0);
  return autodiff::add(autodiff::mul_scalar(alpha, exp_neg_d), autodiff::mul_scalar(one_minus, vbar));
}

/// Row softmax of cosine similarity / tau over [..., O, F] embeddings.
/// `mask` ([..., O, O]) excludes padded pairs.
inline Var text_weights(const Var& emb, double tau, const Tensor* mask = nullptr) {
  auto unit = autodiff::l2_normalize_lastdim(emb);
  Var sim;
  if (unit.value().rank() == 2) {
    sim = autodiff::matmul_nt(unit, unit);
  } else {
    // batched: build x x^T per leading index
    const std::size_t t = unit.shape()[0];
    std::vector<Var> rows;
    for (std::size_t i = 0; i < t; ++i) {
      auto xi = autodiff::reshape(autodiff::slice(unit, i, i + 1), {unit.shape()[1], unit.shape()[2]});
      rows.push_back(autodiff::reshape(autodiff::matmul_nt(xi, xi), {1, unit.shape()[1], unit.shape()[1]}));
    }
    sim = autodiff::concat_rows(rows);
  }
  return autodiff::softmax_lastdim(autodiff::scale(sim, 1.0 / tau), mask);
}

/// (1 - sigmoid(beta)) W_geo + sigmoid(beta) W_text.
inline Var fuse_weights(const Var& w_geo, const Var& w_text, const Var& beta) {
  auto lambda = autodiff::sigmoid(beta);
  auto keep = autodiff::add_scalar(autodiff::scale(lambda, -1.0), 1.0);
  return autodiff::add(autodiff::mul_scalar(keep, w_geo), autodiff::mul_scalar(lambda, w_text));
}

/// g = sigmoid([x_vis, x_text] W_g + b_g); g * x_vis + (1 - g) * x_text.
/// Inputs are [R, F]; W_g is [2F, F].
inline Var gated_fuse(const Var& x_vis, const Var& x_text, const Var& w_g, const Var& b_g) {
  auto g = autodiff::sigmoid(autodiff::add_bias(autodiff::matmul(autodiff::concat_lastdim({x_vis, x_text}), w_g), b_g));
  // x_text + g * (x_vis - x_text)
  return autodiff::add(x_text, autodiff::mul(g, autodiff::sub(x_vis, x_text)));
}

// ---- synthetic embeddings --------------------------------------------------

inline constexpr std::size_t kObjectRaw = 7;
inline constexpr std::size_t kFrameRaw = 8;

/// Seeded random projections and the label embedding table.
class Embedder {
 public:
  explicit Embedder(const FeatureConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    CounterRng rng(cfg.seed, 0xfea7);
    const double so = 1.0 / std::sqrt(static_cast<double>(kObjectRaw));
    const double sf = 1.0 / std::sqrt(static_cast<double>(kFrameRaw));
    object_proj_ = Tensor({kObjectRaw, cfg.dim});
    for (auto& v : object_proj_.values()) v = so * rng.normal();
    frame_proj_ = Tensor({kFrameRaw, cfg.dim});
    for (auto& v : frame_proj_.values()) v = sf * rng.normal();
    std::vector<std::string> vocab(std::begin(scenario::kBehaviorLabels), std::end(scenario::kBehaviorLabels));
    vocab.insert(vocab.end(), std::begin(scenario::kSceneLabels), std::end(scenario::kSceneLabels));
    const scenario::EnvironmentConfig env;
    for (const auto* cat : {&env.weather, &env.lighting, &env.road_type})
      vocab.insert(vocab.end(), cat->values.begin(), cat->values.end());
    for (const auto& label : vocab) {
      CounterRng lr = rng.split(fnv1a64(label));
      std::vector<double> e(cfg.dim);
      for (auto& v : e) v = lr.normal();
      normalize(e);
      table_.emplace(label, std::move(e));
    }
  }

  const FeatureConfig& config() const { return cfg_; }

  const std::vector<double>& label_embedding(std::string_view label) const {
    auto it = table_.find(std::string(label));
    if (it == table_.end()) throw Error(ErrorKind::kInvalidValue, "unknown label '" + std::string(label) + "'");
    return it->second;
  }

  /// Object slot: projection of camera-space state plus Gaussian noise.
  std::vector<double> object_visual(const scenario::ObjectObservation& o, CounterRng& rng, double noise) const {
    const double raw[kObjectRaw] = {o.cx / cfg_.image_width - 0.5,  o.depth / 50.0,
                                    o.speed / 10.0,                 std::cos(o.heading),
                                    std::sin(o.heading),            scenario::object_size(o.id) / 5.0,
                                    o.cy / cfg_.image_height - 0.5};
    return project(raw, object_proj_, rng, noise);
  }

  /// Frame slot: projection of scene aggregates.
  std::vector<double> frame_visual(const std::vector<scenario::ObjectObservation>& objs, CounterRng& rng,
                                   double noise) const {
    double mean_depth = 0, min_depth = 1e9, mean_speed = 0, max_speed = 0, spread = 0, closest = 1.0;
    for (const auto& o : objs) {
      mean_depth += o.depth;
      min_depth = std::min(min_depth, o.depth);
      mean_speed += o.speed;
      max_speed = std::max(max_speed, o.speed);
      spread += std::abs(o.cx / cfg_.image_width - 0.5);
    }
    const double n = std::max<double>(1.0, static_cast<double>(objs.size()));
    for (std::size_t i = 0; i < objs.size(); ++i)
      for (std::size_t j = i + 1; j < objs.size(); ++j)
        closest = std::min(closest, std::hypot(objs[i].x - objs[j].x, objs[i].y - objs[j].y) / 20.0);
    const double raw[kFrameRaw] = {static_cast<double>(objs.size()) / static_cast<double>(cfg_.max_objects),
                                   mean_depth / n / 50.0,
                                   (objs.empty() ? 0.0 : min_depth) / 50.0,
                                   mean_speed / n / 10.0,
                                   max_speed / 10.0,
                                   closest,
                                   spread / n,
                                   1.0};
    return project(raw, frame_proj_, rng, noise);
  }

  /// Unit-norm label embedding plus noise, renormalized.
  std::vector<double> text(std::span<const std::string> labels, CounterRng& rng, double noise) const {
    std::vector<double> e(cfg_.dim, 0.0);
    for (std::size_t k = 0; k < labels.size(); ++k) {
      const auto& v = label_embedding(labels[k]);
      const double w = k == 0 ? 1.0 : 0.5;  // first label dominates
      for (std::size_t i = 0; i < e.size(); ++i) e[i] += w * v[i];
    }
    for (auto& v : e) v += noise * rng.normal();
    normalize(e);
    return e;
  }

 private:
  static void normalize(std::vector<double>& e) {
    double n = 0.0;
    for (double v : e) n += v * v;
    n = std::sqrt(n);
    if (n > 0.0)
      for (auto& v : e) v /= n;
  }

  std::vector<double> project(std::span<const double> raw, const Tensor& proj, CounterRng& rng, double noise) const {
    std::vector<double> out(cfg_.dim, 0.0);
    for (std::size_t r = 0; r < raw.size(); ++r)
      for (std::size_t c = 0; c < cfg_.dim; ++c) out[c] += raw[r] * proj.at(r, c);
    if (noise > 0.0)
      for (auto& v : out) v += noise * rng.normal();
    return out;
  }

  FeatureConfig cfg_;
  Tensor object_proj_;
  Tensor frame_proj_;
  std::unordered_map<std::string, std::vector<double>> table_;
};

// ---- per-video model input -------------------------------------------------

/// Everything the model consumes for one video; padded slots are zero and
/// masked out.
struct Sample {
  std::string id;
  int label = 0;
  std::optional<int> accident_frame;  // 1-based
  double fps = 10.0;
  std::size_t frames = 0;   // T
  std::size_t objects = 0;  // O
  std::size_t dim = 0;      // F
  Tensor obj_vis;     // [T, O, F]
  Tensor obj_text;    // [T, O, F]
  Tensor frame_vis;   // [T, F]
  Tensor frame_text;  // [T, F]
  Tensor mask;        // [T, O]
  Tensor pair_mask;   // [T, O, O]
  Tensor exp_neg_d;   // [T, O, O], exp(-d̄) on valid pairs
  Tensor vbar;        // [T, O, O], signed per velocity_sign
  Tensor w_text;      // [T, O, O]
};

/// Builds the model input for a record. Objects beyond O are dropped in
/// depth order (records store them nearest first).
inline Sample build_sample(const scenario::ScenarioRecord& rec, const Embedder& emb) {
  const auto& cfg = emb.config();
  const std::size_t t_count = rec.objects.size(), o_count = cfg.max_objects, f = cfg.dim;
  Sample s;
  s.id = rec.id;
  s.label = rec.positive ? 1 : 0;
  s.accident_frame = rec.accident_frame;
  s.fps = rec.fps;
  s.frames = t_count;
  s.objects = o_count;
  s.dim = f;
  s.obj_vis = Tensor({t_count, o_count, f});
  s.obj_text = Tensor({t_count, o_count, f});
  s.frame_vis = Tensor({t_count, f});
  s.frame_text = Tensor({t_count, f});
  s.mask = Tensor({t_count, o_count});
  s.pair_mask = Tensor({t_count, o_count, o_count});
  s.exp_neg_d = Tensor({t_count, o_count, o_count});
  s.vbar = Tensor({t_count, o_count, o_count});
  s.w_text = Tensor({t_count, o_count, o_count});
  const double sign = cfg.velocity_sign == VelocitySign::kAsPrinted ? 1.0 : -1.0;
  CounterRng base = CounterRng(cfg.seed, 0x5a3b1e).split(fnv1a64(rec.id));

  std::vector<int> prev_ids;
  Tensor prev_d;
  for (std::size_t t = 0; t < t_count; ++t) {
    CounterRng rng = base.split(t);
    const auto& all = rec.objects[t];
    const std::size_t n = std::min(all.size(), o_count);
    std::vector<scenario::ObjectObservation> objs(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<scenario::Point> centers;
    std::vector<double> depths;
    std::vector<int> ids;
    Tensor text_rows({std::max<std::size_t>(n, 1), f});
    for (std::size_t i = 0; i < n; ++i) {
      const auto& o = objs[i];
      const auto vis = emb.object_visual(o, rng, cfg.visual_noise);
      const std::string labels[] = {o.behavior};
      const auto txt = emb.text(labels, rng, cfg.text_noise);
      for (std::size_t k = 0; k < f; ++k) {
        s.obj_vis[(t * o_count + i) * f + k] = vis[k];
        s.obj_text[(t * o_count + i) * f + k] = txt[k];
        text_rows.at(i, k) = txt[k];
      }
      s.mask[t * o_count + i] = 1.0;
      centers.push_back({o.cx, o.cy});
      depths.push_back(o.depth);
      ids.push_back(o.id);
    }
    const auto fv = emb.frame_visual(objs, rng, cfg.visual_noise);
    const std::string frame_labels[] = {rec.scene_labels.at(t), rec.environment.weather, rec.environment.lighting,
                                        rec.environment.road_type};
    const auto ft = emb.text(frame_labels, rng, cfg.text_noise);
    for (std::size_t k = 0; k < f; ++k) {
      s.frame_vis[t * f + k] = fv[k];
      s.frame_text[t * f + k] = ft[k];
    }

    const Tensor d = pairwise_distance(centers, depths, cfg.scale);
    // velocity over pairs present in both frames, matched by object id
    Tensor v({n, n});
    if (t > 0) {
      std::vector<std::optional<std::size_t>> back(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < prev_ids.size(); ++k)
          if (prev_ids[k] == ids[i]) back[i] = k;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (back[i] && back[j]) v.at(i, j) = d.at(i, j) - prev_d.at(*back[i], *back[j]);
    }
    const Tensor dbar = max_abs_normalize(d), vb = max_abs_normalize(v);

    autodiff::Tape tape;
    Tensor rows = n ? Tensor({n, f}, std::vector<double>(text_rows.values().begin(),
                                                         text_rows.values().begin() + static_cast<std::ptrdiff_t>(n * f)))
                    : Tensor();
    const Tensor wt = n ? text_weights(tape.constant(rows), cfg.tau_text).value() : Tensor();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t at = (t * o_count + i) * o_count + j;
        s.pair_mask[at] = 1.0;
        s.exp_neg_d[at] = std::exp(-dbar.at(i, j));
        s.vbar[at] = sign * vb.at(i, j);
        s.w_text[at] = wt.at(i, j);
      }
    prev_ids = std::move(ids);
    prev_d = d;
  }
  return s;
}

}  // namespace crashcast::features

#endif  // CRASHCAST_FEATURES_HPP_
