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


#include "gmrl/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

namespace gmrl {
namespace {

std::string parameter_norms(const ParameterSet& params) {
  std::string out;
  char buf[160];
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%s=%.6g", i ? ", " : "", params[i].id.c_str(),
                  params[i].value.array().matrix().norm());
    out += buf;
  }
  return out;
}

constexpr const char* kVariantNames[] = {"full", "wo-gmre", "hard-clustering", "wo-hra",
                                         "wo-cluster-loss"};

}  // namespace

Adam::Adam(ParameterSet& params, const AdamConfig& config) : params_(params), config_(config) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.shape());
    v_.emplace_back(params[i].value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& g = params_[i].grad.array();
    auto& m = m_[i].array();
    auto& v = v_[i].array();
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.square();
    params_[i].value.array() -=
        config_.learning_rate * (m / c1) / ((v / c2).sqrt() + config_.epsilon);
  }
}

double global_grad_norm(const ParameterSet& params) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) sq += params[i].grad.array().square().sum();
  return std::sqrt(sq);
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (std::size_t i = 0; i < params.size(); ++i) params[i].grad.array() *= f;
  }
  return norm;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(adam.learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("train.adam_epsilon must be positive");
  if (max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be >= 0");
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},         {"train_loss", train_loss}, {"reg_loss", reg_loss},
          {"cluster_kl", cluster_kl}, {"cluster_nll", cluster_nll}, {"val_mae", val_mae},
          {"val_rmse", val_rmse},   {"seconds", seconds}};
}

TrainResult train(GmrlModel& model, const TrainingData& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.empty()) throw DataError("no training windows");
  if (data.val.empty()) throw DataError("no validation windows");
  using Clock = std::chrono::steady_clock;

  ParameterSet& params = model.params();
  Adam adam(params, config.adam);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(config.batch_size);

  TrainResult result;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best = params.snapshot_values();
  for (Index epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    Index batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs, ++batches) {
      const Batch batch = make_batch(data.train, order, begin, std::min(order.size(), begin + bs));
      try {
        Graph g;
        auto [fwd, loss] = model.loss(g, batch.x, batch.y);
        g.backward(loss.total, params);
        if (!std::isfinite(global_grad_norm(params))) throw NumericError("non-finite gradient");
        clip_grad_norm(params, config.clip_norm);
        adam.step();
        rec.train_loss += loss.total.value().item();
        rec.reg_loss += loss.regression.value().item();
        rec.cluster_kl += fwd.cluster_kl.value().item();
        rec.cluster_nll += fwd.cluster_nll.value().item();
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) +
                           ": " + e.what() + "; parameter norms: " + parameter_norms(params));
      }
    }
    const double nb = static_cast<double>(batches);
    rec.train_loss /= nb;
    rec.reg_loss /= nb;
    rec.cluster_kl /= nb;
    rec.cluster_nll /= nb;
    const ForecastReport val =
        evaluate(model, data.val, data.stats, data.source_ids, config.batch_size, "val");
    rec.val_mae = val.mae();
    rec.val_rmse = val.rmse();
    if (config.record_timing) {
      rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_mae < result.best_val_mae) {
      result.best_val_mae = rec.val_mae;
      result.best_epoch = epoch;
      best = params.snapshot_values();
    } else if (epoch - result.best_epoch >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  params.restore_values(best);
  return result;
}

BaselineKind parse_baseline(const std::string& name) {
  if (name == "persistence") return BaselineKind::kPersistence;
  if (name == "seasonal-mean") return BaselineKind::kSeasonalMean;
  throw ConfigError("unknown baseline '" + name + "' (expected persistence or seasonal-mean)");
}

std::string baseline_name(BaselineKind kind) {
  return kind == BaselineKind::kPersistence ? "persistence" : "seasonal-mean";
}

BaselineForecaster BaselineForecaster::fit(BaselineKind kind, const Tensor& values,
                                           const SplitRange& train, Index period) {
  BaselineForecaster b;
  b.kind_ = kind;
  if (kind == BaselineKind::kPersistence) return b;
  if (period < 1) throw ConfigError("seasonal period must be >= 1");
  if (train.length() < 1) throw DataError("seasonal-mean baseline needs a non-empty training split");
  const Index l = values.dim(1), s = values.dim(2), cells = l * s;
  b.period_ = period;
  b.seasonal_ = Tensor(Shape{period, l, s});
  std::vector<Index> counts(static_cast<std::size_t>(period), 0);
  Eigen::ArrayXd overall = Eigen::ArrayXd::Zero(cells);
  for (Index t = train.begin; t < train.end; ++t) {
    const Index phase = t % period;
    for (Index c = 0; c < cells; ++c) {
      b.seasonal_[phase * cells + c] += values[t * cells + c];
      overall[c] += values[t * cells + c];
    }
    ++counts[phase];
  }
  overall /= static_cast<double>(train.length());
  for (Index p = 0; p < period; ++p) {
    for (Index c = 0; c < cells; ++c) {
      double& v = b.seasonal_[p * cells + c];
      v = counts[p] > 0 ? v / static_cast<double>(counts[p]) : overall[c];
    }
  }
  return b;
}

Tensor BaselineForecaster::forecast(const WindowedSample& w, Index horizon) const {
  const Index t = w.x.dim(0), l = w.x.dim(1), s = w.x.dim(2), cells = l * s;
  Tensor out(Shape{horizon, l, s});
  for (Index o = 0; o < horizon; ++o) {
    const double* src = kind_ == BaselineKind::kPersistence
                            ? w.x.data() + (t - 1) * cells
                            : seasonal_.data() + ((w.t0 + t + o) % period_) * cells;
    std::copy_n(src, cells, out.data() + o * cells);
  }
  return out;
}

ForecastReport baseline_forecast(const BaselineForecaster& baseline,
                                 const std::vector<WindowedSample>& samples, const NormStats& stats,
                                 const std::vector<std::string>& source_ids, Index horizon) {
  MetricAccumulator acc(source_ids, horizon);
  for (const WindowedSample& w : samples) {
    const Tensor pred = baseline.forecast(w, horizon);
    const Shape batched{1, pred.dim(0), pred.dim(1), pred.dim(2)};
    acc.add(stats.denormalize(pred.reshaped(batched)), stats.denormalize(w.y.reshaped(batched)));
  }
  return acc.report(baseline_name(baseline.kind()));
}

Variant parse_variant(const std::string& name) {
  for (std::size_t i = 0; i < std::size(kVariantNames); ++i) {
    if (name == kVariantNames[i]) return static_cast<Variant>(i);
  }
  throw ConfigError("unknown variant '" + name +
                    "' (expected full, wo-gmre, hard-clustering, wo-hra or wo-cluster-loss)");
}

std::string variant_name(Variant v) { return kVariantNames[static_cast<std::size_t>(v)]; }

ModelConfig apply_variant(ModelConfig base, Variant v) {
  switch (v) {
    case Variant::kFull:
      break;
    case Variant::kWithoutGmre:
      base.use_gmre = false;
      break;
    case Variant::kHardClustering:
      base.cluster_mode = ClusterMode::kNearestCenter;
      break;
    case Variant::kWithoutHra:
      base.use_hra = false;
      break;
    case Variant::kWithoutClusterLoss:
      base.lambda = 0.0;
      break;
  }
  return base;
}

std::uint64_t split_hash(const std::vector<WindowedSample>& train,
                         const std::vector<WindowedSample>& val,
                         const std::vector<WindowedSample>& test) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto* split : {&train, &val, &test}) {
    mix(split->size());
    for (const WindowedSample& w : *split) {
      mix(static_cast<std::uint64_t>(w.t0));
      for (const Tensor* t : {&w.x, &w.y}) {
        for (Index i = 0; i < t->size(); ++i) mix(std::bit_cast<std::uint64_t>((*t)[i]));
      }
    }
  }
  return h;
}

std::vector<AblationRun> run_ablation(const std::vector<std::string>& suite, const ModelConfig& base,
                                      const TrainConfig& config, const TrainingData& data,
                                      const std::vector<WindowedSample>& test,
                                      const AblationCallback& on_epoch) {
  if (suite.empty()) throw ConfigError("ablation suite is empty");
  std::vector<Variant> variants;
  for (const std::string& name : suite) variants.push_back(parse_variant(name));
  std::vector<AblationRun> runs;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    AblationRun run;
    run.variant = suite[i];
    run.model = apply_variant(base, variants[i]);
    GmrlModel model(run.model);
    model.initialize(config.seed);
    EpochCallback cb;
    if (on_epoch) cb = [&](const EpochRecord& r) { on_epoch(run.variant, r); };
    run.training = train(model, data, config, cb);
    run.report = evaluate(model, test, data.stats, data.source_ids, config.batch_size, run.variant);
    run.split_hash = split_hash(data.train, data.val, test);
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace gmrl
