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


// Full forecaster: embedding fusion, stacked mixture/temporal layers, skip
// fusion, memory augmentation and a two-layer ReLU head.

#ifndef GMRL_MODEL_HPP_
#define GMRL_MODEL_HPP_

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gmrl/autodiff.hpp"
#include "gmrl/data.hpp"
#include "gmrl/gmre.hpp"
#include "gmrl/hra.hpp"
#include "gmrl/metrics.hpp"
#include "gmrl/temporal.hpp"
#include "json.hpp"

namespace gmrl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SkipFusion {
  kSum,            // per-layer d_k x d_k projection of the last step, summed
  kConcatProject,  // last steps of all layers concatenated, one projection
};

struct ModelConfig {
  Index input_len = 16;  // T
  Index horizon = 3;     // O
  Index locations = 1;   // L
  Index sources = 1;     // S
  Index layers = 4;      // L_g
  Index components = 17; // K
  Index embed_dim = 24;  // d_z
  Index channels = 0;    // d_k; 0 selects 2 * d_z
  Index memory_slots = 8;
  Index memory_dim = 48;
  Index kernel_size = 2;
  std::vector<Index> dilations{2, 4, 8, 16};
  double epsilon = 1e-5;
  double lambda = 0.5;
  bool use_gmre = true;
  bool use_hra = true;
  ClusterMode cluster_mode = ClusterMode::kGaussianPosterior;
  KlMode kl_mode = KlMode::kBatchAverage;
  SkipFusion skip_fusion = SkipFusion::kSum;
  bool hra_per_position_query = false;

  Index d_k() const { return channels == 0 ? 2 * embed_dim : channels; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Named tensor shapes of one forward pass, batch axis dropped.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

struct ForwardResult {
  Var prediction;      // (B, O, L, S)
  Var cluster_total;   // mean over layers; constant 0 without the extractor
  Var cluster_kl;
  Var cluster_nll;
  std::vector<GmOutput> mixture;  // one per layer when the extractor is on
  std::vector<Var> temporal;      // TE outputs, (B, T, L*S, d_k)
  Var skip;                       // (B, L, S, d_k)
  Var augmented;                  // (B, L, S, d_k [+ d_m])
  HraOutput memory;               // unset when HRA is off
  ShapeTrace trace;
  /// Smallest top-two log-joint gap over every layer and scalar.
  double min_assignment_margin = 0.0;
  /// Smallest |input| over every ReLU in the head.
  double min_relu_margin = 0.0;
  /// Hash of every argmax assignment and ReLU sign; changes exactly when a
  /// non-differentiable choice flips.
  std::uint64_t discrete_state = 0;
};

struct LossParts {
  Var total;
  Var regression;
};

/// sum((Y - Yhat)^2) / B + lambda * cluster. Throws ConfigError if lambda < 0.
LossParts total_loss(Var prediction, Var target, Var cluster, double lambda);

class GmrlModel {
 public:
  explicit GmrlModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  void initialize(std::uint64_t seed) { params_.initialize(seed); }

  /// x is (B, T, L, S); returns H = [f(X), E] as (B, T, L, S, d_k).
  Var build_input(Graph& g, const Tensor& x) const;
  ForwardResult forward(Graph& g, const Tensor& x) const;
  /// Forward pass plus the training objective at the configured lambda.
  std::pair<ForwardResult, LossParts> loss(Graph& g, const Tensor& x, const Tensor& y) const;
  /// Forecast values only, (B, O, L, S).
  Tensor predict(const Tensor& x) const;

 private:
  ModelConfig config_;
  ParameterSet params_;
  Parameter* value_w_ = nullptr;
  Parameter* value_b_ = nullptr;
  Parameter* emb_time_ = nullptr;
  Parameter* emb_location_ = nullptr;
  Parameter* emb_source_ = nullptr;
  std::vector<GmreLayer> gmre_;
  std::vector<TeLayer> te_;
  std::vector<Parameter*> skip_w_;
  std::vector<Parameter*> skip_b_;
  std::unique_ptr<HraLayer> hra_;
  Parameter* out1_w_ = nullptr;
  Parameter* out1_b_ = nullptr;
  Parameter* out2_w_ = nullptr;
  Parameter* out2_b_ = nullptr;
};

struct Batch {
  Tensor x;  // (B, T, L, S)
  Tensor y;  // (B, O, L, S)
};

/// Stacks samples[order[begin..end)] into one batch.
Batch make_batch(const std::vector<WindowedSample>& samples, const std::vector<std::size_t>& order,
                 std::size_t begin, std::size_t end);

/// Scores forecasts on denormalised values. Throws std::invalid_argument on an empty split.
ForecastReport evaluate(const GmrlModel& model, const std::vector<WindowedSample>& samples,
                        const NormStats& stats, const std::vector<std::string>& source_ids,
                        Index batch_size, const std::string& label = "gmrl");

/// Writes parameters to `path` and a manifest to `path` + ".json" holding the
/// model configuration, parameter ids and `extra` (merged at top level).
void save_checkpoint(const std::filesystem::path& path, const GmrlModel& model,
                     const nlohmann::json& extra = nlohmann::json::object());
nlohmann::json read_manifest(const std::filesystem::path& path);
/// Loads parameter values; ids and shapes must match the model exactly.
void load_parameters(const std::filesystem::path& path, GmrlModel& model);

}  // namespace gmrl

#endif  // GMRL_MODEL_HPP_
