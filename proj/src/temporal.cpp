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


#include "gmrl/temporal.hpp"

namespace gmrl {

TeLayer::TeLayer(ParameterSet& params, const std::string& prefix, const TeConfig& config)
    : config_(config) {
  const Index c = config.channels, k = config.kernel_size;
  if (c < 1 || k < 1 || config.dilation < 1) {
    throw ShapeError("TeLayer: channels, kernel_size and dilation must be >= 1");
  }
  const Shape kernel{k, 2 * c, c};
  w_filter_ = &params.add(prefix + ".w_filter", kernel, InitSpec::uniform_scaled(k * 2 * c));
  w_gate_ = &params.add(prefix + ".w_gate", kernel, InitSpec::uniform_scaled(k * 2 * c));
  w_out_ = &params.add(prefix + ".w_out", Shape{c, c}, InitSpec::uniform_scaled(c));
  b_out_ = &params.add(prefix + ".b_out", Shape{c}, InitSpec::zeros());
}

TeOutput TeLayer::forward(Var x) const {
  const Shape s = x.shape();
  if (s.rank() != 4 || s[3] != 2 * config_.channels) {
    throw ShapeError("TeLayer: expected (B, T, P, " + std::to_string(2 * config_.channels) +
                     "), got " + s.str());
  }
  Graph& g = *x.graph;
  TeOutput out;
  out.filter = tanh(dilated_causal_conv1d(x, g.param(*w_filter_), config_.dilation));
  out.gate = sigmoid(dilated_causal_conv1d(x, g.param(*w_gate_), config_.dilation));
  out.out = linear(mul(out.filter, out.gate), g.param(*w_out_), g.param(*b_out_));
  return out;
}

Index receptive_field(Index kernel_size, std::span<const Index> dilations, std::size_t depth) {
  if (depth > dilations.size()) {
    throw ShapeError("receptive_field: depth " + std::to_string(depth) + " exceeds " +
                     std::to_string(dilations.size()) + " layers");
  }
  Index field = 1;
  for (std::size_t i = 0; i < depth; ++i) field += dilations[i] * (kernel_size - 1);
  return field;
}

}  // namespace gmrl
