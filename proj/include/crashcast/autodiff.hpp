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

#ifndef CRASHCAST_AUTODIFF_HPP_
#define CRASHCAST_AUTODIFF_HPP_

// Dense 64-bit tensors with tape-based reverse-mode differentiation. The
// op set is exactly what the risk model and its losses use.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "crashcast/error.hpp"
#include "crashcast/random.hpp"

namespace crashcast::autodiff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

/// Row-major dense tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_))
      throw Error(ErrorKind::kShapeMismatch, "value count " + std::to_string(data_.size()) +
                                                 " does not fit shape " + shape_string(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }

  double item() const {
    if (data_.size() != 1) throw Error(ErrorKind::kShapeMismatch, "item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw Error(ErrorKind::kShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Trainable leaf: value plus a gradient accumulator of the same shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() { std::fill(grad.values().begin(), grad.values().end(), 0.0); }
};

class Tape;

/// Handle to a tape node.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered op record. backward() replays it once in reverse.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  Var param(Parameter& p) {
    Var v = push(p.value, p.trainable, nullptr);
    nodes_[v.id()].param = &p;
    return v;
  }

  /// Records an op result. `backward` reads the node's grad and
  /// accumulates into its inputs; it is dropped when no input needs grad.
  Var record(Tensor value, bool needs_grad, Backward backward) {
#ifndef NDEBUG
    if (!value.all_finite()) throw Error(ErrorKind::kDomain, "non-finite value produced on tape");
#endif
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr);
  }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// grad of node `id`, allocating zeros on first use.
  Tensor& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  /// Reverse sweep from a scalar root; parameter gradients are added to
  /// Parameter::grad.
  void backward(Var root) {
    if (root.value().size() != 1)
      throw Error(ErrorKind::kShapeMismatch, "backward needs a scalar root, got " + shape_string(root.shape()));
    if (backward_done_) throw Error(ErrorKind::kInvalidValue, "tape already differentiated; reset before reuse");
    backward_done_ = true;
    grad(root.id())[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& pg = n.param->grad;
        if (pg.size() != n.grad.size()) pg = Tensor(n.param->value.shape());
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

 private:
  Var push(Tensor value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward), nullptr, needs_grad});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                                               shape_string(b.shape()));
}

inline void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank)
    throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                               shape_string(a.shape()));
}

inline void accumulate(Tape& tape, const Var& v, const Tensor& contribution) {
  if (!tape.needs_grad(v)) return;
  auto& g = tape.grad(v.id());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

template <class Forward, class Derivative>
Var unary(const Var& x, Forward f, Derivative df) {
  Tape& tape = x.tape();
  Tensor out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return tape.record(std::move(out), tape.needs_grad(x), [x, df](Tape& t, std::size_t self) {
    auto& g = t.grad(x.id());
    const auto& gy = t.node(self).grad;
    const auto& xin = t.node(x.id()).value;
    const auto& y = t.node(self).value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * df(xin[i], y[i]);
  });
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tape& tape = a.tape();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return tape.record(std::move(out), tape.needs_grad(a) || tape.needs_grad(b), [a, b](Tape& t, std::size_t self) {
    const Tensor g = t.node(self).grad;
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tape& tape = a.tape();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return tape.record(std::move(out), tape.needs_grad(a) || tape.needs_grad(b), [a, b](Tape& t, std::size_t self) {
    Tensor g = t.node(self).grad;
    detail::accumulate(t, a, g);
    for (auto& v : g.values()) v = -v;
    detail::accumulate(t, b, g);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tape& tape = a.tape();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return tape.record(std::move(out), tape.needs_grad(a) || tape.needs_grad(b), [a, b](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    const std::size_t n = g.size();
    if (t.needs_grad(a)) {
      auto& ga = t.grad(a.id());
      const auto& bv = t.node(b.id()).value;
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto& gb = t.grad(b.id());
      const auto& av = t.node(a.id()).value;
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// x * c for a constant c.
inline Var scale(const Var& x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

/// x + c for a constant c.
inline Var add_scalar(const Var& x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

/// s * x where s is a one-element Var.
inline Var mul_scalar(const Var& s, const Var& x) {
  if (s.value().size() != 1) throw Error(ErrorKind::kShapeMismatch, "mul_scalar: scale must have one element");
  Tape& tape = x.tape();
  const double sv = s.value()[0];
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * x.value()[i];
  return tape.record(std::move(out), tape.needs_grad(s) || tape.needs_grad(x), [s, x](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    const auto& xv = t.node(x.id()).value;
    if (t.needs_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      t.grad(s.id())[0] += acc;
    }
    if (t.needs_grad(x)) {
      const double sv = t.node(s.id()).value[0];
      auto& gx = t.grad(x.id());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
    }
  });
}

inline Var exp(const Var& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  for (double v : x.value().values())
    if (!(v > 0.0)) throw Error(ErrorKind::kDomain, "log of nonpositive value " + std::to_string(v));
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Var sigmoid(const Var& x) {
  return detail::unary(x, [](double v) { return sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// ---- linear algebra --------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

// C[m,k] += G[m,n] * B[k,n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      const double* grow = g + i * n;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
}

// C[k,n] += A[m,k]^T * G[m,n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* grow = g + i * n;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
}

}  // namespace detail

/// [m,k] x [k,n] -> [m,n]
inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw Error(ErrorKind::kShapeMismatch, "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tape& tape = a.tape();
  Tensor out({m, n});
  detail::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
  return tape.record(std::move(out), tape.needs_grad(a) || tape.needs_grad(b), [a, b, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(a)) detail::gemm_nt(g.data(), t.node(b.id()).value.data(), t.grad(a.id()).data(), m, n, k);
    if (t.needs_grad(b)) detail::gemm_tn(t.node(a.id()).value.data(), g.data(), t.grad(b.id()).data(), m, k, n);
  });
}

/// [m,k] x [n,k]^T -> [m,n]
inline Var matmul_nt(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k)
    throw Error(ErrorKind::kShapeMismatch, "matmul_nt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  Tape& tape = a.tape();
  Tensor out({m, n});
  // out = a * b^T: reuse gemm_nt with roles (a as G[m,k], b as B[n,k])
  detail::gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
  return tape.record(std::move(out), tape.needs_grad(a) || tape.needs_grad(b), [a, b, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    if (t.needs_grad(a)) detail::gemm_nn(g.data(), t.node(b.id()).value.data(), t.grad(a.id()).data(), m, n, k);
    if (t.needs_grad(b)) detail::gemm_tn(g.data(), t.node(a.id()).value.data(), t.grad(b.id()).data(), m, n, k);
  });
}

/// Batched [B,m,k] x [B,k,n] -> [B,m,n]
inline Var bmm(const Var& a, const Var& b) {
  detail::require_rank(a, 3, "bmm");
  detail::require_rank(b, 3, "bmm");
  const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  if (b.shape()[0] != batch || b.shape()[1] != k)
    throw Error(ErrorKind::kShapeMismatch, "bmm: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tape& tape = a.tape();
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i)
    detail::gemm_nn(a.value().data() + i * m * k, b.value().data() + i * k * n, out.data() + i * m * n, m, k, n);
  return tape.record(std::move(out), tape.needs_grad(a) || tape.needs_grad(b),
                     [a, b, batch, m, k, n](Tape& t, std::size_t self) {
                       const auto& g = t.node(self).grad;
                       for (std::size_t i = 0; i < batch; ++i) {
                         if (t.needs_grad(a))
                           detail::gemm_nt(g.data() + i * m * n, t.node(b.id()).value.data() + i * k * n,
                                           t.grad(a.id()).data() + i * m * k, m, n, k);
                         if (t.needs_grad(b))
                           detail::gemm_tn(t.node(a.id()).value.data() + i * m * k, g.data() + i * m * n,
                                           t.grad(b.id()).data() + i * k * n, m, k, n);
                       }
                     });
}

/// x[..., n] + bias[n]
inline Var add_bias(const Var& x, const Var& bias) {
  const std::size_t n = bias.value().size();
  if (x.shape().empty() || x.shape().back() != n)
    throw Error(ErrorKind::kShapeMismatch, "add_bias: " + shape_string(x.shape()) + " + " + shape_string(bias.shape()));
  Tape& tape = x.tape();
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % n];
  return tape.record(std::move(out), tape.needs_grad(x) || tape.needs_grad(bias), [x, bias, n](Tape& t, std::size_t self) {
    const Tensor g = t.node(self).grad;
    detail::accumulate(t, x, g);
    if (t.needs_grad(bias)) {
      auto& gb = t.grad(bias.id());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

// ---- shape ops -------------------------------------------------------------

inline Var reshape(const Var& x, Shape shape) {
  Tape& tape = x.tape();
  return tape.record(x.value().reshaped(std::move(shape)), tape.needs_grad(x), [x](Tape& t, std::size_t self) {
    detail::accumulate(t, x, t.node(self).grad);
  });
}

/// Concatenates along the last dimension; leading dims must agree.
inline Var concat_lastdim(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kShapeMismatch, "concat_lastdim of nothing");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  bool needs = false;
  for (const auto& p : parts) {
    Shape l = p.shape();
    widths.push_back(l.back());
    l.pop_back();
    if (l != lead) throw Error(ErrorKind::kShapeMismatch, "concat_lastdim: leading dims differ");
    total += widths.back();
    needs = needs || p.tape().needs_grad(p);
  }
  const std::size_t rows = shape_size(lead);
  Shape shape = lead;
  shape.push_back(total);
  Tensor out(shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  Tape& tape = parts[0].tape();
  return tape.record(std::move(out), needs, [parts, widths, rows, total](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (t.needs_grad(parts[k])) {
        auto& gp = t.grad(parts[k].id());
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) gp[r * widths[k] + j] += g[r * total + offset + j];
      }
      offset += widths[k];
    }
  });
}

/// Concatenates along axis 0; trailing dims must agree.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kShapeMismatch, "concat_rows of nothing");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail)
      throw Error(ErrorKind::kShapeMismatch, "concat_rows: trailing dims differ");
    rows += p.shape()[0];
    needs = needs || p.tape().needs_grad(p);
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + offset);
    offset += p.value().size();
  }
  Tape& tape = parts[0].tape();
  return tape.record(std::move(out), needs, [parts](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t n = p.value().size();
      if (t.needs_grad(p)) {
        auto& gp = t.grad(p.id());
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

/// Rows [begin, end) along axis 0.
inline Var slice(const Var& x, std::size_t begin, std::size_t end) {
  if (x.shape().empty() || begin > end || end > x.shape()[0])
    throw Error(ErrorKind::kShapeMismatch, "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                                               shape_string(x.shape()));
  const std::size_t stride = x.value().size() / x.shape()[0];
  Shape shape = x.shape();
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy_n(x.value().data() + begin * stride, (end - begin) * stride, out.data());
  Tape& tape = x.tape();
  return tape.record(std::move(out), tape.needs_grad(x), [x, begin, stride](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    auto& gx = t.grad(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * stride + i] += g[i];
  });
}

/// Tiles x into `count` copies along a new leading axis.
inline Var broadcast_leading(const Var& x, std::size_t count) {
  Shape shape{count};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t n = x.value().size();
  Tensor out(shape);
  for (std::size_t c = 0; c < count; ++c) std::copy_n(x.value().data(), n, out.data() + c * n);
  Tape& tape = x.tape();
  return tape.record(std::move(out), tape.needs_grad(x), [x, count, n](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    auto& gx = t.grad(x.id());
    for (std::size_t c = 0; c < count; ++c)
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[c * n + i];
  });
}

/// x[r, index[r]] for a rank-2 x.
inline Var pick(const Var& x, std::vector<std::size_t> index) {
  detail::require_rank(x, 2, "pick");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (index.size() != rows) throw Error(ErrorKind::kShapeMismatch, "pick: index count differs from rows");
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) throw Error(ErrorKind::kShapeMismatch, "pick: column out of range");
    out[r] = x.value().at(r, index[r]);
  }
  Tape& tape = x.tape();
  return tape.record(std::move(out), tape.needs_grad(x), [x, index = std::move(index), cols](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    auto& gx = t.grad(x.id());
    for (std::size_t r = 0; r < index.size(); ++r) gx[r * cols + index[r]] += g[r];
  });
}

// ---- reductions ------------------------------------------------------------

inline Var sum(const Var& x) {
  Tape& tape = x.tape();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return tape.record(Tensor::scalar(s), tape.needs_grad(x), [x](Tape& t, std::size_t self) {
    const double g = t.node(self).grad[0];
    for (auto& v : t.grad(x.id()).values()) v += g;
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Mean over one axis; the axis is removed from the shape.
inline Var mean_axis(const Var& x, std::size_t axis) {
  const Shape& in = x.shape();
  if (axis >= in.size()) throw Error(ErrorKind::kShapeMismatch, "mean_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t len = in[axis];
  Shape shape = in;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < len; ++a)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x.value()[(o * len + a) * inner + i] / static_cast<double>(len);
  Tape& tape = x.tape();
  return tape.record(std::move(out), tape.needs_grad(x), [x, outer, inner, len](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    auto& gx = t.grad(x.id());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < len; ++a)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * len + a) * inner + i] += g[o * inner + i] / static_cast<double>(len);
  });
}

/// Mean over axis 1 of x[A,B,C] restricted to mask[A,B] == 1. Rows with an
/// empty mask give zeros.
inline Var masked_mean_axis1(const Var& x, const Tensor& mask) {
  detail::require_rank(x, 3, "masked_mean_axis1");
  const std::size_t a = x.shape()[0], b = x.shape()[1], c = x.shape()[2];
  if (mask.shape() != Shape{a, b}) throw Error(ErrorKind::kShapeMismatch, "masked_mean_axis1: mask shape");
  std::vector<double> inv(a, 0.0);
  for (std::size_t i = 0; i < a; ++i) {
    double count = 0.0;
    for (std::size_t j = 0; j < b; ++j) count += mask[i * b + j];
    inv[i] = count > 0.0 ? 1.0 / count : 0.0;
  }
  Tensor out({a, c});
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const double w = mask[i * b + j] * inv[i];
      if (w == 0.0) continue;
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] += w * x.value()[(i * b + j) * c + k];
    }
  Tape& tape = x.tape();
  return tape.record(std::move(out), tape.needs_grad(x), [x, mask, inv, a, b, c](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    auto& gx = t.grad(x.id());
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        const double w = mask[i * b + j] * inv[i];
        if (w == 0.0) continue;
        for (std::size_t k = 0; k < c; ++k) gx[(i * b + j) * c + k] += w * g[i * c + k];
      }
  });
}

// ---- normalizations --------------------------------------------------------

/// Softmax over the last dimension. Entries with mask == 0 get probability
/// 0 (as if their logit were -inf); fully masked rows are all zeros.
inline Var softmax_lastdim(const Var& x, const Tensor* mask = nullptr) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().size() / n;
  if (mask && mask->size() != x.value().size()) throw Error(ErrorKind::kShapeMismatch, "softmax mask shape");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.value().data() + r * n;
    double* o = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!mask || (*mask)[r * n + j] != 0.0) mx = std::max(mx, in[j]);
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = (!mask || (*mask)[r * n + j] != 0.0) ? std::exp(in[j] - mx) : 0.0;
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  Tape& tape = x.tape();
  return tape.record(std::move(out), tape.needs_grad(x), [x, n, rows](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    const auto& y = t.node(self).value;
    auto& gx = t.grad(x.id());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

/// Log-softmax over the last dimension with the log-sum-exp shift. Masked
/// entries are excluded from the normalizer and report 0.
inline Var log_softmax_lastdim(const Var& x, const Tensor* mask = nullptr) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().size() / n;
  if (mask && mask->size() != x.value().size()) throw Error(ErrorKind::kShapeMismatch, "log_softmax mask shape");
  auto kept = [mask, n](std::size_t r, std::size_t j) { return !mask || (*mask)[r * n + j] != 0.0; };
  Tensor out(x.shape());
  Tensor prob(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.value().data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (kept(r, j)) mx = std::max(mx, in[j]);
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (kept(r, j)) z += std::exp(in[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j)
      if (kept(r, j)) {
        out[r * n + j] = in[j] - lse;
        prob[r * n + j] = std::exp(out[r * n + j]);
      }
  }
  Tape& tape = x.tape();
  return tape.record(std::move(out), tape.needs_grad(x), [x, n, rows, prob](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    auto& gx = t.grad(x.id());
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (prob[r * n + j] > 0.0) total += g[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        if (prob[r * n + j] > 0.0) gx[r * n + j] += g[r * n + j] - prob[r * n + j] * total;
    }
  });
}

/// Rows scaled to unit Euclidean norm over the last dimension.
inline Var l2_normalize_lastdim(const Var& x, double eps = 1e-12) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().size() / n;
  Tensor out(x.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x.value()[r * n + j] * x.value()[r * n + j];
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x.value()[r * n + j] / norms[r];
  }
  Tape& tape = x.tape();
  return tape.record(std::move(out), tape.needs_grad(x), [x, n, rows, norms](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    const auto& y = t.node(self).value;
    auto& gx = t.grad(x.id());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += (g[r * n + j] - y[r * n + j] * dot) / norms[r];
    }
  });
}

/// D^{-1/2} M D^{-1/2} for each trailing square matrix of M, with D the
/// diagonal of row sums. Row sums must be positive.
inline Var sym_normalize(const Var& m) {
  const Shape& s = m.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2])
    throw Error(ErrorKind::kShapeMismatch, "sym_normalize needs square trailing dims, got " + shape_string(s));
  const std::size_t o = s.back();
  const std::size_t batch = m.value().size() / (o * o);
  std::vector<double> r(batch * o);
  Tensor out(s);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* in = m.value().data() + b * o * o;
    for (std::size_t i = 0; i < o; ++i) {
      double rs = 0.0;
      for (std::size_t j = 0; j < o; ++j) rs += in[i * o + j];
      if (!(rs > 0.0)) throw Error(ErrorKind::kDomain, "sym_normalize: nonpositive row sum");
      r[b * o + i] = 1.0 / std::sqrt(rs);
    }
    for (std::size_t i = 0; i < o; ++i)
      for (std::size_t j = 0; j < o; ++j) out[b * o * o + i * o + j] = in[i * o + j] * r[b * o + i] * r[b * o + j];
  }
  Tape& tape = m.tape();
  return tape.record(std::move(out), tape.needs_grad(m), [m, o, batch, r](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    const auto& mv = t.node(m.id()).value;
    auto& gm = t.grad(m.id());
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = b * o * o;
      const double* rr = r.data() + b * o;
      // c[a] = sum_j G[a,j] M[a,j] r_j + sum_i G[i,a] M[i,a] r_i
      std::vector<double> c(o, 0.0);
      for (std::size_t i = 0; i < o; ++i)
        for (std::size_t j = 0; j < o; ++j) {
          const double gmv = g[base + i * o + j] * mv[base + i * o + j];
          c[i] += gmv * rr[j];
          c[j] += gmv * rr[i];
        }
      for (std::size_t a = 0; a < o; ++a) {
        const double shift = -0.5 * rr[a] * rr[a] * rr[a] * c[a];
        for (std::size_t j = 0; j < o; ++j) gm[base + a * o + j] += g[base + a * o + j] * rr[a] * rr[j] + shift;
      }
    }
  });
}

// ---- sequence ops ----------------------------------------------------------

/// Causal dilated 1-D convolution. x[T,Cin], w[K,Cin,Cout], bias[Cout];
/// out[t] = bias + sum_k x[t - k*dilation] * w[k], zero-padded on the left,
/// so out[t] never reads inputs after t.
inline Var causal_dilated_conv1d(const Var& x, const Var& w, const Var& bias, std::size_t dilation) {
  detail::require_rank(x, 2, "conv1d input");
  detail::require_rank(w, 3, "conv1d kernel");
  const std::size_t steps = x.shape()[0], cin = x.shape()[1];
  const std::size_t taps = w.shape()[0], cout = w.shape()[2];
  if (w.shape()[1] != cin || bias.value().size() != cout)
    throw Error(ErrorKind::kShapeMismatch, "conv1d: input " + shape_string(x.shape()) + ", kernel " +
                                               shape_string(w.shape()) + ", bias " + shape_string(bias.shape()));
  Tensor out({steps, cout});
  for (std::size_t t = 0; t < steps; ++t) {
    double* o = out.data() + t * cout;
    std::copy_n(bias.value().data(), cout, o);
    for (std::size_t k = 0; k < taps; ++k) {
      if (k * dilation > t) break;
      detail::gemm_nn(x.value().data() + (t - k * dilation) * cin, w.value().data() + k * cin * cout, o, 1, cin, cout);
    }
  }
  Tape& tape = x.tape();
  const bool needs = tape.needs_grad(x) || tape.needs_grad(w) || tape.needs_grad(bias);
  return tape.record(std::move(out), needs, [x, w, bias, dilation, steps, cin, taps, cout](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    const auto& xv = t.node(x.id()).value;
    const auto& wv = t.node(w.id()).value;
    for (std::size_t s = 0; s < steps; ++s) {
      const double* gs = g.data() + s * cout;
      if (t.needs_grad(bias)) {
        auto& gb = t.grad(bias.id());
        for (std::size_t c = 0; c < cout; ++c) gb[c] += gs[c];
      }
      for (std::size_t k = 0; k < taps; ++k) {
        if (k * dilation > s) break;
        const std::size_t src = s - k * dilation;
        if (t.needs_grad(x))
          detail::gemm_nt(gs, wv.data() + k * cin * cout, t.grad(x.id()).data() + src * cin, 1, cout, cin);
        if (t.needs_grad(w))
          detail::gemm_tn(xv.data() + src * cin, gs, t.grad(w.id()).data() + k * cin * cout, 1, cin, cout);
      }
    }
  });
}

/// One GRU step (update/reset/candidate gating):
///   z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br)
///   n = tanh(x Wn + (r * h) Un + bn), h' = (1 - z) * h + z * n
/// x[1,C], h[1,H], W[C,3H], U[H,3H], b[3H]; gate blocks ordered z|r|n.
inline Var gru_cell(const Var& x, const Var& h, const Var& w, const Var& u, const Var& b) {
  const std::size_t cin = x.value().size(), hid = h.value().size();
  if (w.shape() != Shape{cin, 3 * hid} || u.shape() != Shape{hid, 3 * hid} || b.value().size() != 3 * hid)
    throw Error(ErrorKind::kShapeMismatch, "gru_cell: x" + shape_string(x.shape()) + " h" + shape_string(h.shape()) +
                                               " W" + shape_string(w.shape()) + " U" + shape_string(u.shape()));
  const std::size_t g3 = 3 * hid;
  // xw = x W + b (all three blocks); hu = h U for the z and r blocks
  std::vector<double> xw(b.value().values().begin(), b.value().values().end());
  detail::gemm_nn(x.value().data(), w.value().data(), xw.data(), 1, cin, g3);
  std::vector<double> hu(g3, 0.0);
  detail::gemm_nn(h.value().data(), u.value().data(), hu.data(), 1, hid, g3);
  std::vector<double> z(hid), r(hid), rh(hid), n(hid);
  for (std::size_t j = 0; j < hid; ++j) {
    z[j] = sigmoid(xw[j] + hu[j]);
    r[j] = sigmoid(xw[hid + j] + hu[hid + j]);
    rh[j] = r[j] * h.value()[j];
  }
  // candidate uses (r*h) Un rather than h Un
  std::vector<double> rhu(hid, 0.0);
  for (std::size_t p = 0; p < hid; ++p) {
    const double v = rh[p];
    if (v == 0.0) continue;
    const double* urow = u.value().data() + p * g3 + 2 * hid;
    for (std::size_t j = 0; j < hid; ++j) rhu[j] += v * urow[j];
  }
  Tensor out({1, hid});
  for (std::size_t j = 0; j < hid; ++j) {
    n[j] = std::tanh(xw[2 * hid + j] + rhu[j]);
    out[j] = (1.0 - z[j]) * h.value()[j] + z[j] * n[j];
  }
  Tape& tape = x.tape();
  const bool needs = tape.needs_grad(x) || tape.needs_grad(h) || tape.needs_grad(w) || tape.needs_grad(u) ||
                     tape.needs_grad(b);
  return tape.record(
      std::move(out), needs,
      [x, h, w, u, b, cin, hid, g3, z = std::move(z), r = std::move(r), rh = std::move(rh), n = std::move(n)](
          Tape& t, std::size_t self) {
        const auto& gy = t.node(self).grad;
        const auto& hv = t.node(h.id()).value;
        const auto& uv = t.node(u.id()).value;
        // pre-activation gradients for the three blocks
        std::vector<double> da(g3, 0.0);
        std::vector<double> dh(hid, 0.0);
        for (std::size_t j = 0; j < hid; ++j) {
          const double dz = gy[j] * (n[j] - hv[j]);
          const double dn = gy[j] * z[j];
          dh[j] += gy[j] * (1.0 - z[j]);
          da[j] = dz * z[j] * (1.0 - z[j]);
          da[2 * hid + j] = dn * (1.0 - n[j] * n[j]);
        }
        // through (r*h) Un
        std::vector<double> drh(hid, 0.0);
        for (std::size_t p = 0; p < hid; ++p) {
          const double* urow = uv.data() + p * g3 + 2 * hid;
          double acc = 0.0;
          for (std::size_t j = 0; j < hid; ++j) acc += da[2 * hid + j] * urow[j];
          drh[p] = acc;
        }
        for (std::size_t j = 0; j < hid; ++j) {
          const double dr = drh[j] * hv[j];
          dh[j] += drh[j] * r[j];
          da[hid + j] = dr * r[j] * (1.0 - r[j]);
        }
        if (t.needs_grad(b)) {
          auto& gb = t.grad(b.id());
          for (std::size_t j = 0; j < g3; ++j) gb[j] += da[j];
        }
        if (t.needs_grad(w)) detail::gemm_tn(t.node(x.id()).value.data(), da.data(), t.grad(w.id()).data(), 1, cin, g3);
        if (t.needs_grad(x)) detail::gemm_nt(da.data(), t.node(w.id()).value.data(), t.grad(x.id()).data(), 1, g3, cin);
        if (t.needs_grad(u)) {
          auto& gu = t.grad(u.id());
          for (std::size_t p = 0; p < hid; ++p) {
            double* row = gu.data() + p * g3;
            for (std::size_t j = 0; j < 2 * hid; ++j) row[j] += hv[p] * da[j];
            for (std::size_t j = 0; j < hid; ++j) row[2 * hid + j] += rh[p] * da[2 * hid + j];
          }
        }
        if (t.needs_grad(h)) {
          // z and r blocks see h directly
          for (std::size_t p = 0; p < hid; ++p) {
            const double* urow = uv.data() + p * g3;
            double acc = 0.0;
            for (std::size_t j = 0; j < 2 * hid; ++j) acc += da[j] * urow[j];
            dh[p] += acc;
          }
          auto& gh = t.grad(h.id());
          for (std::size_t j = 0; j < hid; ++j) gh[j] += dh[j];
        }
      });
}

// ---- losses ----------------------------------------------------------------

/// sum_r weight[r] * -log softmax(logits[r])[label[r]], log-sum-exp
/// stabilized. logits[R,C].
inline Var cross_entropy_logits(const Var& logits, const std::vector<std::size_t>& labels,
                                const std::vector<double>& weights) {
  detail::require_rank(logits, 2, "cross_entropy_logits");
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  if (labels.size() != rows || weights.size() != rows)
    throw Error(ErrorKind::kShapeMismatch, "cross_entropy_logits: labels/weights must match rows");
  Tensor prob({rows, cols});
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= cols) throw Error(ErrorKind::kShapeMismatch, "cross_entropy_logits: label out of range");
    const double* in = logits.value().data() + r * cols;
    const std::size_t top = static_cast<std::size_t>(std::max_element(in, in + cols) - in);
    const double mx = in[top];
    // log(1 + rest) keeps precision when the label dominates
    double rest = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      if (j != top) rest += std::exp(in[j] - mx);
    const double log_z = std::log1p(rest);
    for (std::size_t j = 0; j < cols; ++j) prob[r * cols + j] = std::exp(in[j] - mx - log_z);
    total += weights[r] * ((mx - in[labels[r]]) + log_z);
  }
  Tape& tape = logits.tape();
  return tape.record(Tensor::scalar(total), tape.needs_grad(logits),
                     [logits, labels, weights, prob, rows, cols](Tape& t, std::size_t self) {
                       const double g = t.node(self).grad[0];
                       auto& gl = t.grad(logits.id());
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < cols; ++j)
                           gl[r * cols + j] += g * weights[r] * (prob[r * cols + j] - (j == labels[r] ? 1.0 : 0.0));
                     });
}

/// Convenience overload: one row, unit weight.
inline Var cross_entropy_logits(const Var& logits, std::size_t label) {
  return cross_entropy_logits(reshape(logits, {1, logits.value().size()}), {label}, {1.0});
}

// ---- gradient checking -----------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients with central differences
/// (f(p + eps) - f(p - eps)) / 2 eps on up to `max_coordinates` sampled
/// coordinates. Relative error is |a - n| / max(|a|, |n|, floor); the
/// floor keeps near-zero gradients, where difference quotients are pure
/// roundoff (about 1e-16 |f| / eps), from dominating the maximum.
inline GradCheckResult grad_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                                  double eps = 1e-5, std::size_t max_coordinates = 200, std::uint64_t seed = 0,
                                  double floor = 1e-4) {
  for (auto* p : params) {
    p->grad = Tensor(p->value.shape());
  }
  {
    Tape tape;
    tape.backward(f(tape));
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t k = 0; k < params[i]->value.size(); ++k) coords.emplace_back(i, k);
  CounterRng rng(seed, 0x6772616463686bULL);
  for (std::size_t i = coords.size(); i > 1; --i) std::swap(coords[i - 1], coords[rng.below(i)]);
  if (coords.size() > max_coordinates) coords.resize(max_coordinates);

  auto evaluate = [&]() {
    Tape tape;
    return f(tape).value().item();
  };
  GradCheckResult result;
  for (const auto& [pi, k] : coords) {
    Parameter& p = *params[pi];
    const double original = p.value[k];
    p.value[k] = original + eps;
    const double up = evaluate();
    p.value[k] = original - eps;
    const double down = evaluate();
    p.value[k] = original;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = p.grad[k];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
    ++result.coordinates;
  }
  return result;
}


// ---- checkpoints -----------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'C', 'R', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

template <class T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    std::memcpy(&bits, &value, sizeof(T));
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in, const std::string& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw Error(ErrorKind::kMalformed, path + ": truncated checkpoint");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_floating_point_v<T>) {
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace detail

/// Little-endian layout: magic, u32 version, u32 count, then per tensor
/// u32 name length, name bytes, u32 rank, u64 dims, f64 values.
inline void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto d : tensor.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : tensor.values()) detail::put_le<double>(out, v);
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path);
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw Error(ErrorKind::kMalformed, path + ": not a checkpoint");
  const auto version = detail::get_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::kMalformed, path + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(in, path);
  std::vector<NamedTensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_le<std::uint32_t>(in, path);
    if (len > (1u << 16)) throw Error(ErrorKind::kMalformed, path + ": implausible name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw Error(ErrorKind::kMalformed, path + ": truncated checkpoint");
    const auto rank = detail::get_le<std::uint32_t>(in, path);
    if (rank > 8) throw Error(ErrorKind::kMalformed, path + ": implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(in, path));
    if (shape_size(shape) > (std::size_t{1} << 28)) throw Error(ErrorKind::kMalformed, path + ": tensor too large");
    Tensor t(shape);
    for (auto& v : t.values()) v = detail::get_le<double>(in, path);
    tensors.push_back({std::move(name), std::move(t)});
  }
  return tensors;
}

}  // namespace crashcast::autodiff

#endif  // CRASHCAST_AUTODIFF_HPP_
