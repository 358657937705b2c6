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


// Gated dilated causal convolution block over the time axis.
//
//   H_te = Conv1x1( tanh(H_gm * W_dc1) . sigmoid(H_gm * W_dc2) )
//
// Convolutions run along time only, with (location, source) positions
// treated as independent rows. The gated paths carry no bias; the pointwise
// projection does.

#ifndef GMRL_TEMPORAL_HPP_
#define GMRL_TEMPORAL_HPP_

#include <span>
#include <string>

#include "gmrl/autodiff.hpp"

namespace gmrl {

struct TeConfig {
  Index channels = 48;  // d_k; the input carries 2 * d_k channels
  Index kernel_size = 2;
  Index dilation = 2;
};

struct TeOutput {
  Var out;     // (B, T, P, d_k)
  Var filter;  // tanh path
  Var gate;    // sigmoid path
};

class TeLayer {
 public:
  TeLayer(ParameterSet& params, const std::string& prefix, const TeConfig& config);

  const TeConfig& config() const { return config_; }

  /// x is (B, T, P, 2 * d_k).
  TeOutput forward(Var x) const;

 private:
  TeConfig config_;
  Parameter* w_filter_ = nullptr;
  Parameter* w_gate_ = nullptr;
  Parameter* w_out_ = nullptr;
  Parameter* b_out_ = nullptr;
};

/// 1 + sum over the first `depth` layers of dilation * (kernel_size - 1).
Index receptive_field(Index kernel_size, std::span<const Index> dilations, std::size_t depth);

}  // namespace gmrl

#endif  // GMRL_TEMPORAL_HPP_
