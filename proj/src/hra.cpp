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


#include "gmrl/hra.hpp"

#include <vector>

namespace gmrl {

HraLayer::HraLayer(ParameterSet& params, const std::string& prefix, const HraConfig& config)
    : config_(config) {
  const Index l = config.locations, s = config.sources, c = config.channels;
  const Index m = config.slots, dm = config.memory_dim;
  if (l < 1 || s < 1 || c < 1 || m < 1 || dm < 1) {
    throw ShapeError("HraLayer: all extents must be >= 1");
  }
  const Index q_in = config.per_position_query ? c : l * s * c;
  memory_ = &params.add(prefix + ".memory", Shape{m, dm}, InitSpec::uniform_scaled(dm));
  w_q_ = &params.add(prefix + ".w_q", Shape{q_in, dm}, InitSpec::uniform_scaled(q_in));
  b_q_ = &params.add(prefix + ".b_q", Shape{dm}, InitSpec::zeros());
  w_v_ = &params.add(prefix + ".w_v", Shape{dm, dm}, InitSpec::uniform_scaled(dm));
  b_v_ = &params.add(prefix + ".b_v", Shape{dm}, InitSpec::zeros());
}

HraOutput HraLayer::forward(Var h_sc) const {
  const Shape s = h_sc.shape();
  const Index l = config_.locations, src = config_.sources, c = config_.channels;
  if (s.rank() != 4 || s[1] != l || s[2] != src || s[3] != c) {
    throw ShapeError("HraLayer: expected (B, " + std::to_string(l) + ", " + std::to_string(src) +
                     ", " + std::to_string(c) + "), got " + s.str());
  }
  Graph& g = *h_sc.graph;
  const Index b = s[0], dm = config_.memory_dim;
  Var memory = g.param(*memory_);

  Var queries = config_.per_position_query ? reshape(h_sc, Shape{b * l * src, c})
                                           : reshape(h_sc, Shape{b, l * src * c});
  Var q = linear(queries, g.param(*w_q_), g.param(*b_q_));
  HraOutput out;
  out.phi = softmax(matmul(q, memory, /*transpose_b=*/true), 1);
  out.prototype = matmul(out.phi, memory);
  Var me = linear(out.prototype, g.param(*w_v_), g.param(*b_v_));
  const Shape me_shape{b, l, src, dm};
  out.memory_out = config_.per_position_query ? reshape(me, me_shape)
                                              : broadcast(me, me_shape, {0, 3});
  out.augmented = concat({h_sc, out.memory_out}, 3);
  return out;
}

nlohmann::json attention_diagnostics(const HraOutput& out) {
  const Tensor& phi = out.phi.value();
  const Index rows = phi.dim(0), m = phi.dim(1);
  std::vector<std::vector<double>> table(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) table[r].assign(phi.data() + r * m, phi.data() + (r + 1) * m);
  return {{"phi", table}};
}

}  // namespace gmrl
