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

#ifndef GMRL_GRADCHECK_HPP_
#define GMRL_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gmrl/autodiff.hpp"

namespace gmrl {

struct GradCheckOptions {
  double delta = 1e-4;
  double tolerance = 1e-3;
  /// Entries sampled per parameter; 0 checks every entry.
  Index max_entries_per_parameter = 0;
  std::uint64_t seed = 0;
  /// Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  /// Optional fingerprint of the loss function's discrete choices (argmax
  /// selections, ReLU signs), read after every evaluation. Entries whose
  /// perturbation changes it sit on a boundary; they are skipped and, when
  /// sampling, replaced by other entries.
  std::function<std::uint64_t()> discrete_state;
};

struct ParameterCheck {
  std::string id;
  Index entries_checked = 0;
  Index entries_skipped = 0;
  double max_rel_error = 0.0;
  Index worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
  std::string to_text() const;
};

using LossFn = std::function<Var(Graph&)>;

/// Compares reverse-mode gradients against central differences
/// (f(θ+δe_i) − f(θ−δe_i)) / 2δ. Throws NumericError if two identical
/// forward passes disagree.
GradCheckReport grad_check(const LossFn& loss_fn, ParameterSet& params,
                           const GradCheckOptions& options = {});

}  // namespace gmrl

#endif  // GMRL_GRADCHECK_HPP_
