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


// Forecast error accounting per (source, horizon) on denormalised values.

#ifndef GMRL_METRICS_HPP_
#define GMRL_METRICS_HPP_

#include <string>
#include <vector>

#include "gmrl/tensor.hpp"
#include "json.hpp"

namespace gmrl {

struct MetricCell {
  std::string source;  // "all" on aggregate rows
  Index horizon = 0;   // 1-based; 0 on the overall row
  double mae = 0.0;
  double rmse = 0.0;
  Index count = 0;
};

struct ForecastReport {
  std::string label;
  std::vector<MetricCell> cells;      // source-major, horizon-minor
  std::vector<MetricCell> horizons;   // every source pooled, one row per horizon
  MetricCell overall;

  double mae() const { return overall.mae; }
  double rmse() const { return overall.rmse; }
  const MetricCell& cell(const std::string& source, Index horizon) const;

  nlohmann::json to_json() const;
  /// Aligned columns: source, horizon, MAE, RMSE.
  std::string to_text() const;
};

/// Accumulates absolute and squared residuals of (B, O, L, S) forecasts.
class MetricAccumulator {
 public:
  MetricAccumulator(std::vector<std::string> source_ids, Index horizon);

  void add(const Tensor& prediction, const Tensor& target);
  Index samples() const { return samples_; }

  /// Throws std::invalid_argument when nothing was added.
  ForecastReport report(const std::string& label) const;

 private:
  std::vector<std::string> sources_;
  Index horizon_;
  std::vector<double> abs_sum_;  // (O, S)
  std::vector<double> sq_sum_;
  std::vector<Index> count_;
  Index samples_ = 0;
};

}  // namespace gmrl

#endif  // GMRL_METRICS_HPP_
