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


// Hidden representation augmenter: attention over a learned memory bank.
//
//   Q    = flatten(H_sc) W_Q + b_Q                    (d_m)
//   phi  = softmax_j(Q . M[j])                        (m), unscaled scores
//   V    = sum_j phi_j M[j]
//   H_me = V W_V + b_V, repeated at every (l, s)
//   H_aug = [H_sc, H_me]
//
// With per_position_query set, every (l, s) row of H_sc issues its own query
// through a d_k x d_m projection and receives its own prototype.

#ifndef GMRL_HRA_HPP_
#define GMRL_HRA_HPP_

#include <string>

#include "gmrl/autodiff.hpp"
#include "json.hpp"

namespace gmrl {

struct HraConfig {
  Index locations = 1;
  Index sources = 1;
  Index channels = 48;    // d_k
  Index slots = 8;        // m
  Index memory_dim = 48;  // d_m
  bool per_position_query = false;
};

struct HraOutput {
  Var augmented;   // (B, L, S, d_k + d_m)
  Var memory_out;  // (B, L, S, d_m)
  Var phi;         // (B, m), or (B * L * S, m) with per-position queries
  Var prototype;   // (B, d_m), or (B * L * S, d_m)
};

class HraLayer {
 public:
  HraLayer(ParameterSet& params, const std::string& prefix, const HraConfig& config);

  const HraConfig& config() const { return config_; }

  /// h_sc is (B, L, S, d_k).
  HraOutput forward(Var h_sc) const;

 private:
  HraConfig config_;
  Parameter* memory_ = nullptr;
  Parameter* w_q_ = nullptr;
  Parameter* b_q_ = nullptr;
  Parameter* w_v_ = nullptr;
  Parameter* b_v_ = nullptr;
};

/// Attention weights of one forward pass as nested arrays, one row per query.
nlohmann::json attention_diagnostics(const HraOutput& out);

}  // namespace gmrl

#endif  // GMRL_HRA_HPP_
