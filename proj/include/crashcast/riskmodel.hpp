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

#ifndef CRASHCAST_RISKMODEL_HPP_
#define CRASHCAST_RISKMODEL_HPP_

// The anticipation network: learned adjacency, edge-weighted GCN, node
// pooling, frame fusion, causal TCN, GRU and a per-frame two-way head.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crashcast/autodiff.hpp"
#include "crashcast/error.hpp"
#include "crashcast/features.hpp"
#include "crashcast/random.hpp"
#include "json.hpp"

namespace crashcast::riskmodel {

using autodiff::Parameter;
using autodiff::Tape;
using autodiff::Tensor;
using autodiff::Var;
namespace ad = autodiff;

struct ModelConfig {
  std::size_t dim = 32;      // F
  std::size_t objects = 19;  // O
  std::size_t tcn_kernel = 3;
  std::vector<std::size_t> tcn_dilations{1, 2, 4};
  double init_balance = 1.0;  // a; alpha = a / (a + 1)
  double init_beta = 0.0;
  std::uint64_t seed = 0;

  std::size_t hidden() const { return 2 * dim; }
  std::size_t align_dim() const { return std::max<std::size_t>(1, dim / 2); }

  void validate() const {
    if (dim < 2 || objects < 1 || tcn_kernel < 1 || tcn_dilations.empty())
      throw Error(ErrorKind::kInvalidValue, "model dims must be positive");
    if (!(init_balance > 0.0)) throw Error(ErrorKind::kInvalidValue, "balance a must be > 0");
  }
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"objects", c.objects},
          {"tcn_kernel", c.tcn_kernel},
          {"tcn_dilations", c.tcn_dilations},
          {"init_balance", c.init_balance},
          {"init_beta", c.init_beta},
          {"seed", c.seed},
          {"gcn_layers", 2},
          {"gcn_activation", "relu"},
          {"head_activation", "relu"}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = j.at("dim").get<std::size_t>();
  c.objects = j.at("objects").get<std::size_t>();
  c.tcn_kernel = j.value("tcn_kernel", c.tcn_kernel);
  c.tcn_dilations = j.value("tcn_dilations", c.tcn_dilations);
  c.init_balance = j.value("init_balance", c.init_balance);
  c.init_beta = j.value("init_beta", c.init_beta);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

/// All trainable tensors, in a fixed order (the checkpoint order).
struct ModelParams {
  Parameter u, v;               // adjacency factors [O, O]
  Parameter rho;                // alpha = sigmoid(rho)
  Parameter beta;               // edge-weight gate
  Parameter gate_obj_w, gate_obj_b;
  Parameter gate_frame_w, gate_frame_b;
  Parameter psi1, psi2;         // GCN [F, F]
  std::vector<Parameter> tcn_w, tcn_b;
  Parameter gru_w, gru_u, gru_b;
  Parameter head_w1, head_b1, head_w2, head_b2;
  Parameter align_w1, align_b1, align_w2, align_b2;

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out{&u, &v, &rho, &beta, &gate_obj_w, &gate_obj_b, &gate_frame_w, &gate_frame_b, &psi1, &psi2};
    for (std::size_t i = 0; i < tcn_w.size(); ++i) {
      out.push_back(&tcn_w[i]);
      out.push_back(&tcn_b[i]);
    }
    for (auto* p : {&gru_w, &gru_u, &gru_b, &head_w1, &head_b1, &head_w2, &head_b2, &align_w1, &align_b1, &align_w2,
                    &align_b2})
      out.push_back(p);
    return out;
  }

  std::vector<const Parameter*> all() const {
    std::vector<const Parameter*> out;
    for (auto* p : const_cast<ModelParams*>(this)->all()) out.push_back(p);
    return out;
  }
};

namespace detail {

inline Tensor glorot(CounterRng& rng, autodiff::Shape shape, std::size_t fan_in, std::size_t fan_out) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace detail

inline ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  CounterRng rng(cfg.seed, 0x30de1);
  const std::size_t f = cfg.dim, o = cfg.objects, h = cfg.hidden(), a = cfg.align_dim();
  ModelParams p;
  Tensor u({o, o}), v({o, o});
  for (auto& x : u.values()) x = 0.1 * rng.normal();
  for (auto& x : v.values()) x = 0.1 * rng.normal();
  p.u = Parameter("adjacency.u", u);
  p.v = Parameter("adjacency.v", v);
  p.rho = Parameter("geometry.rho", Tensor::scalar(std::log(cfg.init_balance)));
  p.beta = Parameter("edge_gate.beta", Tensor::scalar(cfg.init_beta));
  p.gate_obj_w = Parameter("object_gate.w", detail::glorot(rng, {2 * f, f}, 2 * f, f));
  p.gate_obj_b = Parameter("object_gate.b", Tensor({f}));
  p.gate_frame_w = Parameter("frame_gate.w", detail::glorot(rng, {2 * f, f}, 2 * f, f));
  p.gate_frame_b = Parameter("frame_gate.b", Tensor({f}));
  p.psi1 = Parameter("gcn.psi1", detail::glorot(rng, {f, f}, f, f));
  p.psi2 = Parameter("gcn.psi2", detail::glorot(rng, {f, f}, f, f));
  for (std::size_t i = 0; i < cfg.tcn_dilations.size(); ++i) {
    Tensor w = detail::glorot(rng, {cfg.tcn_kernel, h, h}, cfg.tcn_kernel * h, h);
    for (auto& x : w.values()) x *= 0.5;  // keep residual blocks near identity at start
    p.tcn_w.emplace_back("tcn" + std::to_string(i) + ".w", w);
    p.tcn_b.emplace_back("tcn" + std::to_string(i) + ".b", Tensor({h}));
  }
  p.gru_w = Parameter("gru.w", detail::glorot(rng, {h, 3 * h}, h, h));
  p.gru_u = Parameter("gru.u", detail::glorot(rng, {h, 3 * h}, h, h));
  p.gru_b = Parameter("gru.b", Tensor({3 * h}));
  p.head_w1 = Parameter("head.w1", detail::glorot(rng, {h, f}, h, f));
  p.head_b1 = Parameter("head.b1", Tensor({f}));
  p.head_w2 = Parameter("head.w2", detail::glorot(rng, {f, 2}, f, 2));
  p.head_b2 = Parameter("head.b2", Tensor({2}));
  p.align_w1 = Parameter("align.w1", detail::glorot(rng, {f, f}, f, f));
  p.align_b1 = Parameter("align.b1", Tensor({f}));
  p.align_w2 = Parameter("align.w2", detail::glorot(rng, {f, a}, f, a));
  p.align_b2 = Parameter("align.b2", Tensor({a}));
  return p;
}

inline std::vector<autodiff::NamedTensor> snapshot(const ModelParams& p) {
  std::vector<autodiff::NamedTensor> out;
  for (const auto* q : p.all()) out.push_back({q->name, q->value});
  return out;
}

/// Loads tensors by name; every parameter must be present with its shape.
inline void restore(ModelParams& p, const std::vector<autodiff::NamedTensor>& tensors) {
  for (auto* q : p.all()) {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == q->name; });
    if (it == tensors.end()) throw Error(ErrorKind::kShapeMismatch, "checkpoint lacks tensor '" + q->name + "'");
    if (it->tensor.shape() != q->value.shape())
      throw Error(ErrorKind::kShapeMismatch, "tensor '" + q->name + "' has shape " +
                                                 autodiff::shape_string(it->tensor.shape()) + ", model expects " +
                                                 autodiff::shape_string(q->value.shape()));
    q->value = it->tensor;
    q->grad = Tensor(q->value.shape());
  }
}

// ---- building blocks -------------------------------------------------------

/// Ã = D^{-1/2} (A + I) D^{-1/2} with A = row-softmax(U V). With a
/// [.., O, O] mask the softmax runs over valid pairs only; masked rows of A
/// are zero.
inline Var adjacency(const Var& u, const Var& v, const Tensor* pair_mask = nullptr) {
  const std::size_t o = u.shape()[0];
  Var logits = ad::matmul(u, v);
  Tensor eye;
  if (pair_mask && pair_mask->rank() == 3) {
    const std::size_t t = pair_mask->dim(0);
    logits = ad::broadcast_leading(logits, t);
    eye = Tensor({t, o, o});
    for (std::size_t k = 0; k < t; ++k)
      for (std::size_t i = 0; i < o; ++i) eye[(k * o + i) * o + i] = 1.0;
  } else {
    eye = Tensor({o, o});
    for (std::size_t i = 0; i < o; ++i) eye.at(i, i) = 1.0;
  }
  auto a = ad::softmax_lastdim(logits, pair_mask);
  return ad::sym_normalize(ad::add(a, u.tape().constant(std::move(eye))));
}

/// relu((W ⊙ Ã) H Ψ) for H [.., O, F] (rank 2 or batched rank 3).
inline Var gcn_layer(const Var& h, const Var& a_tilde, const Var& w, const Var& psi) {
  auto m = ad::mul(w, a_tilde);
  if (h.value().rank() == 2) return ad::relu(ad::matmul(ad::matmul(m, h), psi));
  const auto shape = h.shape();
  auto mh = ad::bmm(m, h);
  auto flat = ad::reshape(mh, {shape[0] * shape[1], shape[2]});
  return ad::reshape(ad::relu(ad::matmul(flat, psi)), shape);
}

/// Mean over nodes of H [O, F].
inline Var pool_nodes(const Var& h) { return ad::mean_axis(h, 0); }

// ---- forward ---------------------------------------------------------------

struct RiskOutput {
  Var logits;      // [T, 2]
  Var probs;       // [T, 2]
  Var pooled;      // [T, F]
  Var z;           // [T, 2F] after the TCN
  Var hidden;      // [T, 2F]
  Var frame_vis;   // [T, F] raw frame embeddings (alignment inputs)
  Var frame_text;  // [T, F]

  std::vector<double> risk() const {
    std::vector<double> u;
    const auto& p = probs.value();
    for (std::size_t t = 0; t < p.dim(0); ++t) u.push_back(p.at(t, 1));
    return u;
  }
};

inline Var head(const ModelParams& prm, Tape& tape, const Var& h) {
  auto& p = const_cast<ModelParams&>(prm);
  auto hid = ad::relu(ad::add_bias(ad::matmul(h, tape.param(p.head_w1)), tape.param(p.head_b1)));
  return ad::add_bias(ad::matmul(hid, tape.param(p.head_w2)), tape.param(p.head_b2));
}

/// Full forward pass for one video. Parameters are read-only here; their
/// gradients accumulate only when the caller runs backward on the tape.
inline RiskOutput forward(const features::Sample& s, ModelParams& p, const ModelConfig& cfg, Tape& tape) {
  const std::size_t t_len = s.frames, o = s.objects, f = s.dim;
  if (o != cfg.objects || f != cfg.dim)
    throw Error(ErrorKind::kShapeMismatch, "sample has O=" + std::to_string(o) + ", F=" + std::to_string(f) +
                                               "; model expects O=" + std::to_string(cfg.objects) +
                                               ", F=" + std::to_string(cfg.dim));
  if (t_len == 0) throw Error(ErrorKind::kShapeMismatch, "video has no frames");

  // object-level gated fusion; padded slots are zero in both modalities
  // and stay zero
  auto obj_vis = tape.constant(s.obj_vis.reshaped({t_len * o, f}));
  auto obj_text = tape.constant(s.obj_text.reshaped({t_len * o, f}));
  auto x = features::gated_fuse(obj_vis, obj_text, tape.param(p.gate_obj_w), tape.param(p.gate_obj_b));
  Var h = ad::reshape(x, {t_len, o, f});

  // per-frame edge weights W_t and the shared learned structure
  auto a_tilde = adjacency(tape.param(p.u), tape.param(p.v), &s.pair_mask);
  auto alpha = ad::sigmoid(tape.param(p.rho));
  auto w_geo = features::geo_weights(tape.constant(s.exp_neg_d), tape.constant(s.vbar), alpha);
  auto w = features::fuse_weights(w_geo, tape.constant(s.w_text), tape.param(p.beta));

  h = gcn_layer(h, a_tilde, w, tape.param(p.psi1));
  h = gcn_layer(h, a_tilde, w, tape.param(p.psi2));
  auto pooled = ad::masked_mean_axis1(h, s.mask);

  auto frame_vis = tape.constant(s.frame_vis);
  auto frame_text = tape.constant(s.frame_text);
  auto frame = features::gated_fuse(frame_vis, frame_text, tape.param(p.gate_frame_w), tape.param(p.gate_frame_b));
  Var z = ad::concat_lastdim({pooled, frame});

  for (std::size_t i = 0; i < p.tcn_w.size(); ++i)
    z = ad::add(z, ad::relu(ad::causal_dilated_conv1d(z, tape.param(p.tcn_w[i]), tape.param(p.tcn_b[i]),
                                                      cfg.tcn_dilations[i])));

  auto gw = tape.param(p.gru_w), gu = tape.param(p.gru_u), gb = tape.param(p.gru_b);
  Var state = tape.constant(Tensor({1, cfg.hidden()}));
  std::vector<Var> states;
  states.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    state = ad::gru_cell(ad::slice(z, t, t + 1), state, gw, gu, gb);
    states.push_back(state);
  }
  auto hidden = ad::concat_rows(states);
  auto logits = head(p, tape, hidden);
  return {logits, ad::softmax_lastdim(logits), pooled, z, hidden, frame_vis, frame_text};
}

/// Risk curve without keeping a tape around.
inline std::vector<double> predict(const features::Sample& s, ModelParams& p, const ModelConfig& cfg) {
  Tape tape;
  return forward(s, p, cfg, tape).risk();
}

}  // namespace crashcast::riskmodel

#endif  // CRASHCAST_RISKMODEL_HPP_
