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

// Tensor time series loading, normalisation, windowing and the synthetic
// generator used by the verification harness. See docs/formats.md for the
// on-disk layouts.

#ifndef GMRL_DATA_HPP_
#define GMRL_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gmrl/tensor.hpp"
#include "json.hpp"

namespace gmrl {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// X in R^{T_total x L x S} plus its axis labels.
struct TtsDataset {
  Tensor values;
  std::vector<std::string> time_index;  // ISO-8601, strictly increasing, equally spaced
  std::vector<std::string> location_ids;
  std::vector<std::string> source_ids;

  Index steps() const { return values.dim(0); }
  Index locations() const { return values.dim(1); }
  Index sources() const { return values.dim(2); }

  /// Throws DataError on any violated invariant.
  void validate() const;
};

enum class DataFormat { kCsv, kBinary };

/// Long-form CSV with header `timestamp,location,source,value`.
TtsDataset read_csv(std::istream& in);
void write_csv(std::ostream& out, const TtsDataset& data);

/// `path` is a tensor archive holding "values"; `sidecar` defaults to path + ".json".
TtsDataset load_dataset(const std::filesystem::path& path, DataFormat format,
                        const std::filesystem::path& sidecar = {});
void save_binary(const std::filesystem::path& path, const TtsDataset& data);

/// Seconds since the Unix epoch for "YYYY-MM-DD[(T| )HH:MM[:SS]][Z]".
std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t epoch_seconds);

struct SplitSpec {
  Index train = 0;
  Index val = 0;
  Index test = 0;
};

struct SplitRange {
  Index begin = 0;
  Index end = 0;  // exclusive
  Index length() const { return end - begin; }
};

struct Splits {
  SplitRange train, val, test;
};

/// Contiguous chronological train < val < test ranges starting at step 0.
Splits resolve_splits(Index total_steps, const SplitSpec& spec);

/// Scalar (or per-source) z-score statistics fitted on the training range.
struct NormStats {
  bool per_source = false;
  double mean = 0.0;
  double std = 1.0;
  std::vector<double> source_mean;
  std::vector<double> source_std;

  double mean_for(Index source) const { return per_source ? source_mean.at(source) : mean; }
  double std_for(Index source) const { return per_source ? source_std.at(source) : std; }

  /// Applies to any tensor whose last axis is the source axis.
  Tensor normalize(const Tensor& values) const;
  Tensor denormalize(const Tensor& values) const;

  nlohmann::json to_json() const;
  static NormStats from_json(const nlohmann::json& j);
};

struct ZScoreResult {
  TtsDataset dataset;
  NormStats stats;
  std::vector<std::string> warnings;
};

ZScoreResult zscore(const TtsDataset& data, const SplitRange& train, bool per_source = false);

struct WindowedSample {
  Tensor x;  // (T, L, S)
  Tensor y;  // (O, L, S)
  Index t0 = 0;
};

/// Number of stride-1 windows in `range`; throws DataError if the range is
/// shorter than input_len + horizon.
Index window_count(const SplitRange& range, Index input_len, Index horizon);
std::vector<Index> window_starts(const SplitRange& range, Index input_len, Index horizon);
WindowedSample make_window(const Tensor& values, Index t0, Index input_len, Index horizon);
std::vector<WindowedSample> window(const Tensor& values, const SplitRange& range, Index input_len,
                                   Index horizon);

struct SynthComponent {
  double mean = 0.0;
  double std = 1.0;
};

struct SynthSpec {
  Index locations = 4;
  Index sources = 2;
  Index steps = 500;
  std::vector<SynthComponent> components{{0.0, 1.0}};
  /// Component id per (l, s) in row-major order; empty means round-robin.
  std::vector<Index> assignment;
  double seasonal_amplitude = 1.0;
  double seasonal_period = 24.0;
  /// Multiplies each component's std to give the white-noise std.
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  std::string start_time = "2020-01-01T00:00:00";
  Index step_seconds = 3600;

  Index k_true() const { return static_cast<Index>(components.size()); }

  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthResult {
  TtsDataset dataset;
  std::vector<Index> labels;  // component id per (l, s), row-major
};

/// x[t,l,s] = mean_c + A sin(2 pi t / P) + noise_std * std_c * N(0,1), c = label(l,s).
SynthResult generate_synthetic(const SynthSpec& spec);

}  // namespace gmrl

#endif  // GMRL_DATA_HPP_
