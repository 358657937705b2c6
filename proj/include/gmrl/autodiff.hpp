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

// Tape-based reverse-mode differentiation over the closed set of primitives
// the forecaster needs. Every primitive records an exact vector-Jacobian
// product; there is no general-purpose operator overloading.

#ifndef GMRL_AUTODIFF_HPP_
#define GMRL_AUTODIFF_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gmrl/tensor.hpp"

namespace gmrl {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InitSpec {
  enum class Kind { kUniformScaled, kUniform, kZeros, kConstant };
  Kind kind = Kind::kZeros;
  double value = 0.0;  // fan_in for kUniformScaled, bound for kUniform, c for kConstant

  static InitSpec uniform_scaled(Index fan_in) {
    return {Kind::kUniformScaled, static_cast<double>(fan_in)};
  }
  static InitSpec uniform(double bound) { return {Kind::kUniform, bound}; }
  static InitSpec zeros() { return {Kind::kZeros, 0.0}; }
  static InitSpec constant(double c) { return {Kind::kConstant, c}; }
};

struct Parameter {
  std::string id;
  Tensor value;
  Tensor grad;
  InitSpec init;

  void initialize(std::mt19937_64& rng);
};

/// Owns the parameters of one model. Addresses are stable for the set's lifetime.
class ParameterSet {
 public:
  Parameter& add(const std::string& id, const Shape& shape, InitSpec init);

  Parameter& get(const std::string& id);
  const Parameter& get(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) > 0; }

  std::size_t size() const { return params_.size(); }
  Index total_elements() const;

  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  /// Each parameter draws from its own stream keyed on (seed, id), so a
  /// parameter's initial value does not depend on which others exist.
  void initialize(std::uint64_t seed);
  void zero_grad();

  std::vector<Tensor> snapshot_values() const;
  void restore_values(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t index = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph != nullptr; }
};

struct BackwardContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;  // nullptr where the input needs no gradient
};

using BackwardFn = std::function<void(const BackwardContext&)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter; repeated calls with the same parameter return the same node.
  Var param(Parameter& p);

  /// Appends a node. Throws NumericError if `value` holds NaN/Inf.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Zeroes the gradients of every parameter bound in this graph, then
  /// back-propagates from a scalar loss.
  void backward(Var loss);
  /// As above, but zeroes every parameter in `params` first so unused ones read exactly zero.
  void backward(Var loss, ParameterSet& params);

  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.index].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_allocated = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Tensor& ensure_grad(Node& n);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// ---- primitives -----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var exp(Var x);
Var log(Var x);
/// log(max(x, floor)); zero gradient where clamped.
Var log_clamped(Var x, double floor);
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var square(Var x);

Var softmax(Var x, std::size_t axis);
Var log_softmax(Var x, std::size_t axis);

/// (M,K) x (K,N) -> (M,N); with transpose_b, b is (N,K).
Var matmul(Var a, Var b, bool transpose_b = false);
/// x (..., in) * w (in, out) + bias (out) -> (..., out)
Var linear(Var x, Var w, Var bias);
Var linear(Var x, Var w);

/// Per-channel linear scores: x (B,N,C), w (K,C,N) -> (B,K,C) with
/// out[b,k,c] = sum_n w[k,c,n] * x[b,n,c].
Var channel_linear(Var x, Var w);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, Index start, Index length);
std::vector<Var> split(Var x, std::size_t axis, const std::vector<Index>& lengths);

Var sum(Var x, const std::vector<std::size_t>& axes);
Var mean(Var x, const std::vector<std::size_t>& axes);
Var sum_all(Var x);
Var mean_all(Var x);

/// out.flat[j] = x.flat[indices[j]]; backward scatter-adds.
Var gather(Var x, std::vector<Index> indices, Shape out_shape);

/// x (B,T,P,Cin), kernel (Ksz,Cin,Cout) -> (B,T,P,Cout). Tap j reads time
/// t - dilation*(Ksz-1-j); indices before 0 read the implicit left zero padding.
Var dilated_causal_conv1d(Var x, Var kernel, Index dilation);

/// Broadcast x to out_shape; x's axis i maps to output axis axes[i], other
/// output axes are replicated. Mapping need not be monotone.
Var broadcast(Var x, Shape out_shape, const std::vector<std::size_t>& axes);
Var reshape(Var x, Shape shape);
Var permute(Var x, const std::vector<std::size_t>& order);

}  // namespace gmrl

#endif  // GMRL_AUTODIFF_HPP_
