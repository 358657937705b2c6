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


#include "gmrl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace gmrl {
namespace {

MetricCell finish(std::string source, Index horizon, double abs_sum, double sq_sum, Index count) {
  const double n = static_cast<double>(count);
  return {std::move(source), horizon, abs_sum / n, std::sqrt(sq_sum / n), count};
}

nlohmann::json cell_json(const MetricCell& c) {
  return {{"source", c.source}, {"horizon", c.horizon}, {"mae", c.mae}, {"rmse", c.rmse},
          {"count", c.count}};
}

}  // namespace

const MetricCell& ForecastReport::cell(const std::string& source, Index horizon) const {
  for (const MetricCell& c : cells) {
    if (c.source == source && c.horizon == horizon) return c;
  }
  throw std::out_of_range("ForecastReport: no cell for " + source + " horizon " +
                          std::to_string(horizon));
}

nlohmann::json ForecastReport::to_json() const {
  nlohmann::json j;
  j["label"] = label;
  j["cells"] = nlohmann::json::array();
  for (const MetricCell& c : cells) j["cells"].push_back(cell_json(c));
  j["horizons"] = nlohmann::json::array();
  for (const MetricCell& c : horizons) j["horizons"].push_back(cell_json(c));
  j["overall"] = cell_json(overall);
  return j;
}

std::string ForecastReport::to_text() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %7s %12s %12s\n", "source", "horizon", "MAE", "RMSE");
  out << "# " << label << '\n' << line;
  auto row = [&](const MetricCell& c, const char* horizon) {
    std::snprintf(line, sizeof line, "%-16s %7s %12.6f %12.6f\n", c.source.c_str(), horizon,
                  c.mae, c.rmse);
    out << line;
  };
  for (const auto* group : {&cells, &horizons}) {
    for (const MetricCell& c : *group) row(c, std::to_string(c.horizon).c_str());
  }
  row(overall, "avg");
  return out.str();
}

MetricAccumulator::MetricAccumulator(std::vector<std::string> source_ids, Index horizon)
    : sources_(std::move(source_ids)), horizon_(horizon) {
  const auto n = static_cast<std::size_t>(horizon_) * sources_.size();
  abs_sum_.assign(n, 0.0);
  sq_sum_.assign(n, 0.0);
  count_.assign(n, 0);
}

void MetricAccumulator::add(const Tensor& prediction, const Tensor& target) {
  const Shape s = prediction.shape();
  const Index src = static_cast<Index>(sources_.size());
  if (!(s == target.shape()) || s.rank() != 4 || s[1] != horizon_ || s[3] != src) {
    throw ShapeError("MetricAccumulator: prediction " + s.str() + " and target " +
                     target.shape().str() + " must both be (B, " + std::to_string(horizon_) +
                     ", L, " + std::to_string(src) + ")");
  }
  const Index b = s[0], l = s[2];
  for (Index bi = 0; bi < b; ++bi) {
    for (Index o = 0; o < horizon_; ++o) {
      for (Index li = 0; li < l; ++li) {
        for (Index si = 0; si < src; ++si) {
          const Index flat = ((bi * horizon_ + o) * l + li) * src + si;
          const double r = prediction[flat] - target[flat];
          const auto cell = static_cast<std::size_t>(o * src + si);
          abs_sum_[cell] += std::abs(r);
          sq_sum_[cell] += r * r;
          count_[cell] += 1;
        }
      }
    }
  }
  samples_ += b;
}

ForecastReport MetricAccumulator::report(const std::string& label) const {
  if (samples_ == 0) throw std::invalid_argument("cannot score an empty split");
  const Index src = static_cast<Index>(sources_.size());
  ForecastReport r;
  r.label = label;
  for (Index si = 0; si < src; ++si) {
    for (Index o = 0; o < horizon_; ++o) {
      const auto cell = static_cast<std::size_t>(o * src + si);
      r.cells.push_back(finish(sources_[si], o + 1, abs_sum_[cell], sq_sum_[cell], count_[cell]));
    }
  }
  double all_abs = 0.0, all_sq = 0.0;
  Index all_n = 0;
  for (Index o = 0; o < horizon_; ++o) {
    double a = 0.0, q = 0.0;
    Index n = 0;
    for (Index si = 0; si < src; ++si) {
      const auto cell = static_cast<std::size_t>(o * src + si);
      a += abs_sum_[cell];
      q += sq_sum_[cell];
      n += count_[cell];
    }
    r.horizons.push_back(finish("all", o + 1, a, q, n));
    all_abs += a;
    all_sq += q;
    all_n += n;
  }
  r.overall = finish("all", 0, all_abs, all_sq, all_n);
  return r;
}

}  // namespace gmrl
