// Copyright 2026 The GMRL Authors.
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

#include "gmrl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gmrl {

// ---- parameters -------------------------------------------------------------

void Parameter::initialize(std::mt19937_64& rng) {
  switch (init.kind) {
    case InitSpec::Kind::kUniformScaled:
    case InitSpec::Kind::kUniform: {
      const double bound = init.kind == InitSpec::Kind::kUniform
                               ? init.value
                               : 1.0 / std::sqrt(std::max(1.0, init.value));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Index i = 0; i < value.size(); ++i) value[i] = dist(rng);
      break;
    }
    case InitSpec::Kind::kZeros:
      value.array().setZero();
      break;
    case InitSpec::Kind::kConstant:
      value.array().setConstant(init.value);
      break;
  }
  grad.array().setZero();
}

Parameter& ParameterSet::add(const std::string& id, const Shape& shape, InitSpec init) {
  if (contains(id)) throw std::invalid_argument("duplicate parameter id '" + id + "'");
  auto p = std::make_unique<Parameter>();
  p->id = id;
  p->value = Tensor(shape);
  p->grad = Tensor(shape);
  p->init = init;
  index_.emplace(id, params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& id) {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + id + "'");
  return *params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + id + "'");
  return *params_[it->second];
}

Index ParameterSet::total_elements() const {
  Index n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::initialize(std::uint64_t seed) {
  for (auto& p : params_) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : p->id) {
      h ^= ch;
      h *= 0x100000001b3ull;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::mt19937_64 rng(seq);
    p->initialize(rng);
  }
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.array().setZero();
}

std::vector<Tensor> ParameterSet::snapshot_values() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ParameterSet::restore_values(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) {
    throw std::invalid_argument("snapshot holds " + std::to_string(values.size()) +
                                " tensors for " + std::to_string(params_.size()) + " parameters");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i].shape() == params_[i]->value.shape())) {
      throw ShapeError("snapshot shape " + values[i].shape().str() + " for parameter '" +
                       params_[i]->id + "' of shape " + params_[i]->value.shape().str());
    }
    params_[i]->value = values[i];
  }
}

// ---- graph ------------------------------------------------------------------

const Tensor& Var::value() const { return graph->value(index); }

Var Graph::constant(Tensor value) { return record("constant", std::move(value), {}, nullptr); }

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return {this, it->second};
  Var v = record("param", p.value, {}, nullptr);
  nodes_[v.index].requires_grad = true;
  nodes_[v.index].param = &p;
  param_nodes_.emplace(&p, v.index);
  return v;
}

Var Graph::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op + " with shape " +
                       value.shape().str());
  }
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.graph != this) throw std::invalid_argument(std::string(op) + ": operand from another graph");
    n.inputs.push_back(v.index);
    n.requires_grad = n.requires_grad || nodes_[v.index].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor& Graph::ensure_grad(Node& n) {
  if (!n.grad_allocated) {
    n.grad = Tensor(n.value.shape());
    n.grad_allocated = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[v.index];
  if (!n.grad_allocated) throw std::logic_error("no gradient recorded for node");
  return n.grad;
}

void Graph::backward(Var loss, ParameterSet& params) {
  params.zero_grad();
  backward(loss);
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::invalid_argument("backward: loss from another graph");
  const Tensor& lv = nodes_[loss.index].value;
  if (lv.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + lv.shape().str());
  }
  for (auto& n : nodes_) {
    n.grad_allocated = false;
    if (n.param) n.param->grad.array().setZero();
  }
  ensure_grad(nodes_[loss.index])[0] = 1.0;

  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad_allocated || !n.requires_grad) continue;
    if (n.param) {
      n.param->grad.array() += n.grad.array();
      continue;
    }
    if (!n.backward) continue;
    BackwardContext ctx{n.value, n.grad, {}, {}};
    ctx.in_values.reserve(n.inputs.size());
    ctx.in_grads.reserve(n.inputs.size());
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      ctx.in_values.push_back(&src.value);
      ctx.in_grads.push_back(src.requires_grad ? &ensure_grad(src) : nullptr);
    }
    n.backward(ctx);
  }
}

// ---- helpers ----------------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.shape().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     t.shape().str());
  }
}

void require_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     s.str());
  }
}

// Walks `shape` in row-major order and calls f(flat, mapped) where `mapped`
// is the offset under `mapped_strides` (one stride per axis of `shape`).
template <typename F>
void for_each_mapped(const Shape& shape, const std::vector<Index>& mapped_strides, F&& f) {
  const std::size_t rank = shape.rank();
  const Index n = shape.numel();
  if (rank == 0) {
    f(Index{0}, Index{0});
    return;
  }
  std::vector<Index> counter(rank, 0);
  Index mapped = 0;
  const Index last = shape[rank - 1];
  const Index last_stride = mapped_strides[rank - 1];
  for (Index flat = 0; flat < n;) {
    for (Index j = 0; j < last; ++j, ++flat) f(flat, mapped + j * last_stride);
    // carry into the higher axes
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++counter[ax];
      mapped += mapped_strides[ax];
      if (counter[ax] < shape[ax]) break;
      mapped -= counter[ax] * mapped_strides[ax];
      counter[ax] = 0;
    }
  }
}

struct AxisSplit {
  Index outer, extent, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.rank(); ++i) r.inner *= s[i];
  return r;
}

template <typename Fwd, typename Bwd>
Var unary(const char* op, Var x, Fwd fwd, Bwd bwd) {
  Tensor out(x.shape());
  out.array() = fwd(x.value().array());
  return x.graph->record(op, std::move(out), {x}, [bwd](const BackwardContext& c) {
    if (c.in_grads[0]) c.in_grads[0]->array() += bwd(*c.in_values[0], c.out_value, c.out_grad);
  });
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out(a.shape());
  out.array() = a.value().array() + b.value().array();
  return a.graph->record("add", std::move(out), {a, b}, [](const BackwardContext& c) {
    if (c.in_grads[0]) c.in_grads[0]->array() += c.out_grad.array();
    if (c.in_grads[1]) c.in_grads[1]->array() += c.out_grad.array();
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out(a.shape());
  out.array() = a.value().array() - b.value().array();
  return a.graph->record("sub", std::move(out), {a, b}, [](const BackwardContext& c) {
    if (c.in_grads[0]) c.in_grads[0]->array() += c.out_grad.array();
    if (c.in_grads[1]) c.in_grads[1]->array() -= c.out_grad.array();
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out(a.shape());
  out.array() = a.value().array() * b.value().array();
  return a.graph->record("mul", std::move(out), {a, b}, [](const BackwardContext& c) {
    if (c.in_grads[0]) c.in_grads[0]->array() += c.out_grad.array() * c.in_values[1]->array();
    if (c.in_grads[1]) c.in_grads[1]->array() += c.out_grad.array() * c.in_values[0]->array();
  });
}

Var div(Var a, Var b) {
  require_same_shape("div", a.value(), b.value());
  Tensor out(a.shape());
  out.array() = a.value().array() / b.value().array();
  return a.graph->record("div", std::move(out), {a, b}, [](const BackwardContext& c) {
    const auto& bv = c.in_values[1]->array();
    if (c.in_grads[0]) c.in_grads[0]->array() += c.out_grad.array() / bv;
    if (c.in_grads[1]) c.in_grads[1]->array() -= c.out_grad.array() * c.out_value.array() / bv;
  });
}

Var scale(Var x, double s) {
  return unary(
      "scale", x, [s](const auto& a) { return a * s; },
      [s](const Tensor&, const Tensor&, const Tensor& g) { return g.array() * s; });
}

Var add_scalar(Var x, double s) {
  return unary(
      "add_scalar", x, [s](const auto& a) { return a + s; },
      [](const Tensor&, const Tensor&, const Tensor& g) { return g.array(); });
}

Var exp(Var x) {
  return unary(
      "exp", x, [](const auto& a) { return a.exp(); },
      [](const Tensor&, const Tensor& y, const Tensor& g) { return g.array() * y.array(); });
}

Var log(Var x) {
  if ((x.value().array() <= 0.0).any()) throw NumericError("log of a non-positive value");
  return unary(
      "log", x, [](const auto& a) { return a.log(); },
      [](const Tensor& in, const Tensor&, const Tensor& g) { return g.array() / in.array(); });
}

Var log_clamped(Var x, double floor) {
  return unary(
      "log_clamped", x, [floor](const auto& a) { return a.max(floor).log(); },
      [floor](const Tensor& in, const Tensor&, const Tensor& g) {
        return (in.array() > floor).select(g.array() / in.array(), 0.0);
      });
}

Var tanh(Var x) {
  return unary(
      "tanh", x, [](const auto& a) { return a.tanh(); },
      [](const Tensor&, const Tensor& y, const Tensor& g) {
        return g.array() * (1.0 - y.array().square());
      });
}

Var sigmoid(Var x) {
  Tensor out(x.shape());
  const auto& in = x.value();
  for (Index i = 0; i < in.size(); ++i) {
    const double v = in[i];
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return x.graph->record("sigmoid", std::move(out), {x}, [](const BackwardContext& c) {
    const auto& y = c.out_value.array();
    if (c.in_grads[0]) c.in_grads[0]->array() += c.out_grad.array() * y * (1.0 - y);
  });
}

Var relu(Var x) {
  return unary(
      "relu", x, [](const auto& a) { return a.max(0.0); },
      [](const Tensor& in, const Tensor&, const Tensor& g) {
        return (in.array() > 0.0).select(g.array(), 0.0);
      });
}

Var square(Var x) {
  return unary(
      "square", x, [](const auto& a) { return a.square(); },
      [](const Tensor& in, const Tensor&, const Tensor& g) {
        return 2.0 * in.array() * g.array();
      });
}

// ---- softmax ----------------------------------------------------------------

namespace {

// Row-wise (along `axis`) log-sum-exp normalisation. Inputs are finite by the
// graph invariant, so the row maximum is always finite.
Tensor log_softmax_values(const Tensor& in, std::size_t axis) {
  const AxisSplit s = split_at(in.shape(), axis);
  Tensor out(in.shape());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < s.extent; ++k) mx = std::max(mx, in[base + k * s.inner]);
      double total = 0.0;
      for (Index k = 0; k < s.extent; ++k) total += std::exp(in[base + k * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (Index k = 0; k < s.extent; ++k) out[base + k * s.inner] = in[base + k * s.inner] - lse;
    }
  }
  return out;
}

// d/dx given y = softmax: g - sum(g*y) applied per row, optionally multiplied by y.
void softmax_backward(const Tensor& y_soft, const Tensor& g, Tensor& gx, std::size_t axis,
                      bool log_variant) {
  const AxisSplit s = split_at(y_soft.shape(), axis);
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      double dot = 0.0;
      for (Index k = 0; k < s.extent; ++k) {
        const Index at = base + k * s.inner;
        dot += log_variant ? g[at] : g[at] * y_soft[at];
      }
      for (Index k = 0; k < s.extent; ++k) {
        const Index at = base + k * s.inner;
        gx[at] += log_variant ? g[at] - y_soft[at] * dot : y_soft[at] * (g[at] - dot);
      }
    }
  }
}

}  // namespace

Var softmax(Var x, std::size_t axis) {
  require_axis("softmax", x.shape(), axis);
  Tensor out = log_softmax_values(x.value(), axis);
  out.array() = out.array().exp();
  return x.graph->record("softmax", std::move(out), {x}, [axis](const BackwardContext& c) {
    if (c.in_grads[0]) softmax_backward(c.out_value, c.out_grad, *c.in_grads[0], axis, false);
  });
}

Var log_softmax(Var x, std::size_t axis) {
  require_axis("log_softmax", x.shape(), axis);
  Tensor out = log_softmax_values(x.value(), axis);
  return x.graph->record("log_softmax", std::move(out), {x}, [axis](const BackwardContext& c) {
    if (!c.in_grads[0]) return;
    Tensor soft(c.out_value.shape());
    soft.array() = c.out_value.array().exp();
    softmax_backward(soft, c.out_grad, *c.in_grads[0], axis, true);
  });
}

// ---- linear algebra ---------------------------------------------------------

Var matmul(Var a, Var b, bool transpose_b) {
  require_rank("matmul", a.value(), 2);
  require_rank("matmul", b.value(), 2);
  const Index m = a.shape()[0];
  const Index k = a.shape()[1];
  const Index bk = transpose_b ? b.shape()[1] : b.shape()[0];
  const Index n = transpose_b ? b.shape()[0] : b.shape()[1];
  if (k != bk) {
    throw ShapeError("matmul: inner extents differ " + a.shape().str() + " x " + b.shape().str() +
                     (transpose_b ? "^T" : ""));
  }
  Tensor out(Shape{m, n});
  const auto am = a.value().matrix(m, k);
  const auto bm = b.value().matrix(b.shape()[0], b.shape()[1]);
  if (transpose_b) {
    out.matrix(m, n).noalias() = am * bm.transpose();
  } else {
    out.matrix(m, n).noalias() = am * bm;
  }
  return a.graph->record(
      "matmul", std::move(out), {a, b}, [m, k, n, transpose_b](const BackwardContext& c) {
        const auto g = c.out_grad.matrix(m, n);
        const auto av = c.in_values[0]->matrix(m, k);
        const Tensor& bt = *c.in_values[1];
        const auto bv = bt.matrix(bt.shape()[0], bt.shape()[1]);
        if (c.in_grads[0]) {
          auto ga = c.in_grads[0]->matrix(m, k);
          if (transpose_b) {
            ga.noalias() += g * bv;
          } else {
            ga.noalias() += g * bv.transpose();
          }
        }
        if (c.in_grads[1]) {
          auto gb = c.in_grads[1]->matrix(bt.shape()[0], bt.shape()[1]);
          if (transpose_b) {
            gb.noalias() += g.transpose() * av;
          } else {
            gb.noalias() += av.transpose() * g;
          }
        }
      });
}

Var linear(Var x, Var w) {
  require_rank("linear", w.value(), 2);
  const Shape& xs = x.shape();
  if (xs.rank() == 0 || xs[xs.rank() - 1] != w.shape()[0]) {
    throw ShapeError("linear: input " + xs.str() + " does not end in weight rows " +
                     w.shape().str());
  }
  const Index in = w.shape()[0];
  const Index outf = w.shape()[1];
  std::vector<Index> out_dims = xs.dims();
  out_dims.back() = outf;
  Var flat = reshape(x, Shape{xs.numel() / in, in});
  return reshape(matmul(flat, w), Shape(out_dims));
}

Var linear(Var x, Var w, Var bias) {
  Var y = linear(x, w);
  if (bias.shape().rank() != 1 || bias.shape()[0] != w.shape()[1]) {
    throw ShapeError("linear: bias " + bias.shape().str() + " does not match weight " +
                     w.shape().str());
  }
  return add(y, broadcast(bias, y.shape(), {y.shape().rank() - 1}));
}

Var channel_linear(Var x, Var w) {
  require_rank("channel_linear", x.value(), 3);
  require_rank("channel_linear", w.value(), 3);
  const Index batch = x.shape()[0];
  const Index n = x.shape()[1];
  const Index ch = x.shape()[2];
  const Index k = w.shape()[0];
  if (w.shape()[1] != ch || w.shape()[2] != n) {
    throw ShapeError("channel_linear: weight " + w.shape().str() + " incompatible with input " +
                     x.shape().str());
  }
  // Channel-major copy so each dot product runs over contiguous memory.
  RowMatrix<double> xt(batch * ch, n);
  const Tensor& xv = x.value();
  for (Index b = 0; b < batch; ++b)
    for (Index p = 0; p < n; ++p)
      for (Index c = 0; c < ch; ++c) xt(b * ch + c, p) = xv[(b * n + p) * ch + c];

  Tensor out(Shape{batch, k, ch});
  const auto wm = w.value().matrix(k * ch, n);
  for (Index b = 0; b < batch; ++b)
    for (Index kk = 0; kk < k; ++kk)
      for (Index c = 0; c < ch; ++c)
        out[(b * k + kk) * ch + c] = wm.row(kk * ch + c).dot(xt.row(b * ch + c));

  return x.graph->record(
      "channel_linear", std::move(out), {x, w},
      [batch, n, ch, k, xt = std::move(xt)](const BackwardContext& c) {
        const Tensor& g = c.out_grad;
        if (c.in_grads[1]) {
          auto gw = c.in_grads[1]->matrix(k * ch, n);
          for (Index b = 0; b < batch; ++b)
            for (Index kk = 0; kk < k; ++kk)
              for (Index cc = 0; cc < ch; ++cc)
                gw.row(kk * ch + cc) += g[(b * k + kk) * ch + cc] * xt.row(b * ch + cc);
        }
        if (c.in_grads[0]) {
          const auto wm = c.in_values[1]->matrix(k * ch, n);
          RowMatrix<double> gxt = RowMatrix<double>::Zero(batch * ch, n);
          for (Index b = 0; b < batch; ++b)
            for (Index kk = 0; kk < k; ++kk)
              for (Index cc = 0; cc < ch; ++cc)
                gxt.row(b * ch + cc) += g[(b * k + kk) * ch + cc] * wm.row(kk * ch + cc);
          Tensor& gx = *c.in_grads[0];
          for (Index b = 0; b < batch; ++b)
            for (Index p = 0; p < n; ++p)
              for (Index cc = 0; cc < ch; ++cc) gx[(b * n + p) * ch + cc] += gxt(b * ch + cc, p);
        }
      });
}

// ---- structural -------------------------------------------------------------

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts[0].shape();
  require_axis("concat", first, axis);
  std::vector<Index> dims = first.dims();
  dims[axis] = 0;
  std::vector<Index> extents;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.rank() == first.rank();
    for (std::size_t i = 0; ok && i < s.rank(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shape " + s.str() + " incompatible with " + first.str() +
                       " along axis " + std::to_string(axis));
    }
    extents.push_back(s[axis]);
    dims[axis] += s[axis];
  }
  Tensor out{Shape(dims)};
  const AxisSplit os = split_at(out.shape(), axis);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& v = parts[i].value();
    const Index block = extents[i] * os.inner;
    for (Index o = 0; o < os.outer; ++o) {
      std::copy_n(v.data() + o * block, block, out.data() + o * os.extent * os.inner + offset);
    }
    offset += block;
  }
  return parts[0].graph->record(
      "concat", std::move(out), parts, [os, extents](const BackwardContext& c) {
        Index offset = 0;
        for (std::size_t i = 0; i < extents.size(); ++i) {
          const Index block = extents[i] * os.inner;
          if (Tensor* gi = c.in_grads[i]) {
            for (Index o = 0; o < os.outer; ++o) {
              const double* src = c.out_grad.data() + o * os.extent * os.inner + offset;
              double* dst = gi->data() + o * block;
              for (Index j = 0; j < block; ++j) dst[j] += src[j];
            }
          }
          offset += block;
        }
      });
}

Var slice(Var x, std::size_t axis, Index start, Index length) {
  require_axis("slice", x.shape(), axis);
  const AxisSplit s = split_at(x.shape(), axis);
  if (start < 0 || length < 1 || start + length > s.extent) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis " + std::to_string(axis) + " of " +
                     x.shape().str());
  }
  std::vector<Index> dims = x.shape().dims();
  dims[axis] = length;
  Tensor out{Shape(dims)};
  const Index block = length * s.inner;
  for (Index o = 0; o < s.outer; ++o) {
    std::copy_n(x.value().data() + o * s.extent * s.inner + start * s.inner, block,
                out.data() + o * block);
  }
  return x.graph->record("slice", std::move(out), {x}, [s, start, block](const BackwardContext& c) {
    if (!c.in_grads[0]) return;
    for (Index o = 0; o < s.outer; ++o) {
      double* dst = c.in_grads[0]->data() + o * s.extent * s.inner + start * s.inner;
      const double* src = c.out_grad.data() + o * block;
      for (Index j = 0; j < block; ++j) dst[j] += src[j];
    }
  });
}

std::vector<Var> split(Var x, std::size_t axis, const std::vector<Index>& lengths) {
  require_axis("split", x.shape(), axis);
  Index total = std::accumulate(lengths.begin(), lengths.end(), Index{0});
  if (total != x.shape()[axis]) {
    throw ShapeError("split: lengths sum to " + std::to_string(total) + " but axis has extent " +
                     std::to_string(x.shape()[axis]));
  }
  std::vector<Var> parts;
  Index start = 0;
  for (Index len : lengths) {
    parts.push_back(slice(x, axis, start, len));
    start += len;
  }
  return parts;
}

// ---- reductions -------------------------------------------------------------

Var sum(Var x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  std::vector<bool> reduced(in.rank(), false);
  for (std::size_t a : axes) {
    require_axis("sum", in, a);
    reduced[a] = true;
  }
  std::vector<Index> out_dims;
  for (std::size_t i = 0; i < in.rank(); ++i)
    if (!reduced[i]) out_dims.push_back(in[i]);
  Shape out_shape(out_dims);
  // strides of the output expressed per input axis (0 on reduced axes)
  std::vector<Index> mapped(in.rank(), 0);
  {
    const std::vector<Index> os = out_shape.strides();
    std::size_t j = 0;
    for (std::size_t i = 0; i < in.rank(); ++i)
      if (!reduced[i]) mapped[i] = os[j++];
  }
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  for_each_mapped(in, mapped, [&](Index flat, Index o) { out[o] += xv[flat]; });
  return x.graph->record("sum", std::move(out), {x}, [in, mapped](const BackwardContext& c) {
    if (!c.in_grads[0]) return;
    Tensor& gx = *c.in_grads[0];
    for_each_mapped(in, mapped, [&](Index flat, Index o) { gx[flat] += c.out_grad[o]; });
  });
}

Var mean(Var x, const std::vector<std::size_t>& axes) {
  Index count = 1;
  for (std::size_t a : axes) {
    require_axis("mean", x.shape(), a);
    count *= x.shape()[a];
  }
  return scale(sum(x, axes), 1.0 / static_cast<double>(count));
}

Var sum_all(Var x) {
  std::vector<std::size_t> axes(x.shape().rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return sum(x, axes);
}

Var mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.value().size())); }

// ---- indexing ---------------------------------------------------------------

Var gather(Var x, std::vector<Index> indices, Shape out_shape) {
  if (static_cast<Index>(indices.size()) != out_shape.numel()) {
    throw ShapeError("gather: " + std::to_string(indices.size()) + " indices for output shape " +
                     out_shape.str());
  }
  const Tensor& xv = x.value();
  Tensor out(out_shape);
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const Index src = indices[j];
    if (src < 0 || src >= xv.size()) {
      throw ShapeError("gather: index " + std::to_string(src) + " out of range for " +
                       xv.shape().str());
    }
    out[static_cast<Index>(j)] = xv[src];
  }
  return x.graph->record("gather", std::move(out), {x},
                         [indices = std::move(indices)](const BackwardContext& c) {
                           if (!c.in_grads[0]) return;
                           Tensor& gx = *c.in_grads[0];
                           for (std::size_t j = 0; j < indices.size(); ++j)
                             gx[indices[j]] += c.out_grad[static_cast<Index>(j)];
                         });
}

// ---- convolution ------------------------------------------------------------

Var dilated_causal_conv1d(Var x, Var kernel, Index dilation) {
  require_rank("dilated_causal_conv1d", x.value(), 4);
  require_rank("dilated_causal_conv1d", kernel.value(), 3);
  const Index batch = x.shape()[0];
  const Index steps = x.shape()[1];
  const Index pos = x.shape()[2];
  const Index cin = x.shape()[3];
  const Index taps = kernel.shape()[0];
  const Index cout = kernel.shape()[2];
  if (kernel.shape()[1] != cin) {
    throw ShapeError("dilated_causal_conv1d: kernel " + kernel.shape().str() +
                     " does not accept input " + x.shape().str());
  }
  if (dilation < 1) throw ShapeError("dilated_causal_conv1d: dilation must be >= 1");

  Tensor out(Shape{batch, steps, pos, cout});
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  for (Index j = 0; j < taps; ++j) {
    const Index shift = dilation * (taps - 1 - j);
    if (shift >= steps) continue;
    const Index rows = (steps - shift) * pos;
    const auto wj = Eigen::Map<const RowMatrix<double>>(kv.data() + j * cin * cout, cin, cout);
    for (Index b = 0; b < batch; ++b) {
      const auto xin =
          Eigen::Map<const RowMatrix<double>>(xv.data() + b * steps * pos * cin, rows, cin);
      auto dst = Eigen::Map<RowMatrix<double>>(
          out.data() + (b * steps + shift) * pos * cout, rows, cout);
      dst.noalias() += xin * wj;
    }
  }
  return x.graph->record(
      "dilated_causal_conv1d", std::move(out), {x, kernel},
      [=](const BackwardContext& c) {
        const Tensor& xv = *c.in_values[0];
        const Tensor& kv = *c.in_values[1];
        for (Index j = 0; j < taps; ++j) {
          const Index shift = dilation * (taps - 1 - j);
          if (shift >= steps) continue;
          const Index rows = (steps - shift) * pos;
          const auto wj =
              Eigen::Map<const RowMatrix<double>>(kv.data() + j * cin * cout, cin, cout);
          for (Index b = 0; b < batch; ++b) {
            const auto g = Eigen::Map<const RowMatrix<double>>(
                c.out_grad.data() + (b * steps + shift) * pos * cout, rows, cout);
            if (c.in_grads[0]) {
              auto gx = Eigen::Map<RowMatrix<double>>(
                  c.in_grads[0]->data() + b * steps * pos * cin, rows, cin);
              gx.noalias() += g * wj.transpose();
            }
            if (c.in_grads[1]) {
              const auto xin = Eigen::Map<const RowMatrix<double>>(
                  xv.data() + b * steps * pos * cin, rows, cin);
              auto gw = Eigen::Map<RowMatrix<double>>(c.in_grads[1]->data() + j * cin * cout,
                                                      cin, cout);
              gw.noalias() += xin.transpose() * g;
            }
          }
        }
      });
}

// ---- layout -----------------------------------------------------------------

Var broadcast(Var x, Shape out_shape, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  if (axes.size() != in.rank()) {
    throw ShapeError("broadcast: " + std::to_string(axes.size()) + " axis mappings for input " +
                     in.str());
  }
  std::vector<Index> mapped(out_shape.rank(), 0);
  const std::vector<Index> is = in.strides();
  std::vector<bool> used(out_shape.rank(), false);
  for (std::size_t i = 0; i < axes.size(); ++i) {
    const std::size_t a = axes[i];
    if (a >= out_shape.rank() || used[a] || out_shape[a] != in[i]) {
      throw ShapeError("broadcast: cannot map " + in.str() + " onto " + out_shape.str());
    }
    used[a] = true;
    mapped[a] = is[i];
  }
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  for_each_mapped(out_shape, mapped, [&](Index flat, Index src) { out[flat] = xv[src]; });
  return x.graph->record("broadcast", std::move(out), {x},
                         [out_shape, mapped](const BackwardContext& c) {
                           if (!c.in_grads[0]) return;
                           Tensor& gx = *c.in_grads[0];
                           for_each_mapped(out_shape, mapped, [&](Index flat, Index src) {
                             gx[src] += c.out_grad[flat];
                           });
                         });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph->record("reshape", std::move(out), {x}, [](const BackwardContext& c) {
    if (c.in_grads[0]) c.in_grads[0]->array() += c.out_grad.array();
  });
}

Var permute(Var x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  if (order.size() != in.rank()) {
    throw ShapeError("permute: order of length " + std::to_string(order.size()) + " for " +
                     in.str());
  }
  std::vector<bool> seen(in.rank(), false);
  std::vector<Index> dims(in.rank());
  std::vector<Index> mapped(in.rank());
  const std::vector<Index> is = in.strides();
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= in.rank() || seen[order[i]]) throw ShapeError("permute: invalid axis order");
    seen[order[i]] = true;
    dims[i] = in[order[i]];
    mapped[i] = is[order[i]];
  }
  Shape out_shape(dims);
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  for_each_mapped(out_shape, mapped, [&](Index flat, Index src) { out[flat] = xv[src]; });
  return x.graph->record("permute", std::move(out), {x},
                         [out_shape, mapped](const BackwardContext& c) {
                           if (!c.in_grads[0]) return;
                           Tensor& gx = *c.in_grads[0];
                           for_each_mapped(out_shape, mapped, [&](Index flat, Index src) {
                             gx[src] += c.out_grad[flat];
                           });
                         });
}

}  // namespace gmrl
