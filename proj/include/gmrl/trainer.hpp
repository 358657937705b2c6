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


// Mini-batch Adam training with early stopping, reference forecasters and
// ablation orchestration.

#ifndef GMRL_TRAINER_HPP_
#define GMRL_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gmrl/data.hpp"
#include "gmrl/metrics.hpp"
#include "gmrl/model.hpp"
#include "json.hpp"

namespace gmrl {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(ParameterSet& params, const AdamConfig& config);

  /// One update from the gradients currently stored on the parameters.
  void step();
  Index steps() const { return t_; }

 private:
  ParameterSet& params_;
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  Index t_ = 0;
};

double global_grad_norm(const ParameterSet& params);
/// Rescales every gradient so the global norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

struct TrainConfig {
  Index batch_size = 8;
  AdamConfig adam;
  Index max_epochs = 100;
  Index patience = 15;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;  // 0 disables clipping
  bool record_timing = true;

  void validate() const;
};

struct EpochRecord {
  Index epoch = 0;  // 1-based
  double train_loss = 0.0;
  double reg_loss = 0.0;
  double cluster_kl = 0.0;
  double cluster_nll = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  Index best_epoch = 0;
  double best_val_mae = 0.0;
  bool stopped_early = false;
};

/// Windows are already normalised; `stats` maps them back for validation scoring.
struct TrainingData {
  std::vector<WindowedSample> train;
  std::vector<WindowedSample> val;
  NormStats stats;
  std::vector<std::string> source_ids;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Shuffled mini-batch Adam on the model's loss. Validation MAE after every
/// epoch drives early stopping; the parameters of the best epoch are
/// restored before returning. A non-finite value aborts with NumericError
/// naming the epoch, batch and parameter norms.
TrainResult train(GmrlModel& model, const TrainingData& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

enum class BaselineKind { kPersistence, kSeasonalMean };

BaselineKind parse_baseline(const std::string& name);
std::string baseline_name(BaselineKind kind);

/// Reference forecasters fitted on the training split only.
class BaselineForecaster {
 public:
  /// `values` is (T, L, S); the seasonal table averages train steps by t mod period.
  /// Phases never seen in training fall back to the training mean of that cell.
  static BaselineForecaster fit(BaselineKind kind, const Tensor& values, const SplitRange& train,
                                Index period);

  BaselineKind kind() const { return kind_; }
  /// (O, L, S) forecast for the window starting at w.t0.
  Tensor forecast(const WindowedSample& w, Index horizon) const;

 private:
  BaselineKind kind_ = BaselineKind::kPersistence;
  Index period_ = 1;
  Tensor seasonal_;  // (period, L, S)
};

ForecastReport baseline_forecast(const BaselineForecaster& baseline,
                                 const std::vector<WindowedSample>& samples, const NormStats& stats,
                                 const std::vector<std::string>& source_ids, Index horizon);

enum class Variant { kFull, kWithoutGmre, kHardClustering, kWithoutHra, kWithoutClusterLoss };

/// Accepts full, wo-gmre, hard-clustering, wo-hra, wo-cluster-loss. Throws ConfigError otherwise.
Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
ModelConfig apply_variant(ModelConfig base, Variant v);

/// FNV-1a over window start indices and the raw bytes of every window.
std::uint64_t split_hash(const std::vector<WindowedSample>& train,
                         const std::vector<WindowedSample>& val,
                         const std::vector<WindowedSample>& test);

struct AblationRun {
  std::string variant;
  ModelConfig model;
  TrainResult training;
  ForecastReport report;
  std::uint64_t split_hash = 0;
};

using AblationCallback = std::function<void(const std::string& variant, const EpochRecord&)>;

/// Trains and tests every variant with the same data, seed and training
/// settings. Throws ConfigError on an empty suite or unknown variant.
std::vector<AblationRun> run_ablation(const std::vector<std::string>& suite, const ModelConfig& base,
                                      const TrainConfig& config, const TrainingData& data,
                                      const std::vector<WindowedSample>& test,
                                      const AblationCallback& on_epoch = {});

}  // namespace gmrl

#endif  // GMRL_TRAINER_HPP_
