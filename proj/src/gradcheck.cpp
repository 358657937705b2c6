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

#include "gmrl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace gmrl {
namespace {

double evaluate(const LossFn& fn) {
  Graph g;
  return fn(g).value().item();
}

}  // namespace

std::string GradCheckReport::to_text() const {
  std::string out;
  char line[256];
  for (const auto& p : parameters) {
    std::snprintf(line, sizeof(line),
                  "%-24s entries=%-6ld skipped=%-4ld max_rel=%.3e (entry %ld: %.6e vs %.6e)\n",
                  p.id.c_str(), static_cast<long>(p.entries_checked),
                  static_cast<long>(p.entries_skipped), p.max_rel_error,
                  static_cast<long>(p.worst_entry), p.analytic, p.numeric);
    out += line;
  }
  std::snprintf(line, sizeof(line), "overall max_rel=%.3e tolerance=%.1e %s\n", max_rel_error,
                tolerance, passed() ? "PASS" : "FAIL");
  out += line;
  return out;
}

GradCheckReport grad_check(const LossFn& loss_fn, ParameterSet& params,
                           const GradCheckOptions& options) {
  if (!(options.delta > 0)) throw std::invalid_argument("grad_check: delta must be positive");

  auto state = [&]() -> std::uint64_t {
    return options.discrete_state ? options.discrete_state() : 0;
  };
  double reference = 0.0;
  std::uint64_t reference_state = 0;
  std::vector<Tensor> analytic;
  {
    Graph g;
    Var loss = loss_fn(g);
    reference = loss.value().item();
    reference_state = state();
    g.backward(loss, params);
    for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params[i].grad);
  }
  const double repeat = evaluate(loss_fn);
  if (repeat != reference) {
    throw NumericError("grad_check: loss function is not deterministic (" +
                       std::to_string(reference) + " vs " + std::to_string(repeat) + ")");
  }

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    std::vector<Index> entries(static_cast<std::size_t>(p.value.size()));
    std::iota(entries.begin(), entries.end(), Index{0});
    const bool sampled = options.max_entries_per_parameter > 0 &&
                         static_cast<Index>(entries.size()) > options.max_entries_per_parameter;
    if (sampled) std::shuffle(entries.begin(), entries.end(), rng);
    ParameterCheck check;
    check.id = p.id;
    for (Index e : entries) {
      if (sampled && check.entries_checked >= options.max_entries_per_parameter) break;
      const double saved = p.value[e];
      p.value[e] = saved + options.delta;
      const double up = evaluate(loss_fn);
      const bool up_moved = state() != reference_state;
      p.value[e] = saved - options.delta;
      const double down = evaluate(loss_fn);
      const bool down_moved = state() != reference_state;
      p.value[e] = saved;
      if (up_moved || down_moved) {
        ++check.entries_skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * options.delta);
      const double a = analytic[pi][e];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > check.max_rel_error || check.entries_checked == 0) {
        check.max_rel_error = rel;
        check.worst_entry = e;
        check.analytic = a;
        check.numeric = numeric;
      }
      ++check.entries_checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.parameters.push_back(check);
  }
  // leave grads as the analytic result
  for (std::size_t i = 0; i < params.size(); ++i) params[i].grad = analytic[i];
  return report;
}

}  // namespace gmrl
