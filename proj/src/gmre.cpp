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

#include "gmrl/gmre.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gmrl {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)

// Best and runner-up over the last axis of a (rows, K) block.
void argmax_rows(const Tensor& scores, Index k, bool maximise, std::vector<Index>& assign,
                 double& min_margin) {
  const Index rows = scores.size() / k;
  assign.assign(static_cast<std::size_t>(rows), 0);
  min_margin = std::numeric_limits<double>::infinity();
  for (Index r = 0; r < rows; ++r) {
    const double* row = scores.data() + r * k;
    Index best = 0;
    for (Index j = 1; j < k; ++j) {
      if (maximise ? row[j] > row[best] : row[j] < row[best]) best = j;
    }
    assign[static_cast<std::size_t>(r)] = best;
    for (Index j = 0; j < k; ++j) {
      if (j != best) min_margin = std::min(min_margin, std::abs(row[best] - row[j]));
    }
  }
}

}  // namespace

MixtureParams MixtureVars::values() const {
  Tensor sigma2 = log_sigma2.value();
  sigma2.array() = sigma2.array().exp();
  return {alpha.value(), mu.value(), sigma2};
}

std::vector<double> posterior(double h, std::span<const double> alpha, std::span<const double> mu,
                              std::span<const double> sigma2) {
  const std::size_t k = alpha.size();
  if (k == 0 || mu.size() != k || sigma2.size() != k) {
    throw ShapeError("posterior: alpha, mu and sigma2 must share a non-zero length");
  }
  std::vector<double> logj(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double d = h - mu[j];
    const double la = alpha[j] > 0.0 ? std::log(alpha[j]) : -std::numeric_limits<double>::infinity();
    logj[j] = la - kHalfLog2Pi - 0.5 * std::log(sigma2[j]) - 0.5 * d * d / sigma2[j];
  }
  const auto best = std::max_element(logj.begin(), logj.end());
  std::vector<double> out(k, 0.0);
  if (!std::isfinite(*best)) {
    out[static_cast<std::size_t>(best - logj.begin())] = 1.0;
    return out;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    out[j] = std::exp(logj[j] - *best);
    total += out[j];
  }
  for (double& v : out) v /= total;
  return out;
}

PosteriorField posterior_field(Var h, const MixtureVars& mixture) {
  const Shape hs = h.shape();
  const Shape ms = mixture.mu.shape();
  if (hs.rank() != 3 || ms.rank() != 3 || ms[0] != hs[0] || ms[2] != hs[2]) {
    throw ShapeError("posterior_field: h " + hs.str() + " incompatible with mixture " + ms.str());
  }
  const Shape full{hs[0], hs[1], hs[2], ms[1]};
  Var hb = broadcast(h, full, {0, 1, 2});
  Var mub = broadcast(mixture.mu, full, {0, 3, 2});
  Var lvb = broadcast(mixture.log_sigma2, full, {0, 3, 2});
  Var mahal = mul(square(sub(hb, mub)), exp(scale(lvb, -1.0)));
  Var log_density = add_scalar(scale(add(lvb, mahal), -0.5), -kHalfLog2Pi);
  Var log_joint = add(log_density, broadcast(mixture.log_alpha, full, {0, 3, 2}));

  PosteriorField out;
  out.log_density = log_density;
  out.gamma = softmax(log_joint, 3);
  argmax_rows(log_joint.value(), ms[1], true, out.assign, out.min_margin);
  return out;
}

Var cluster_norm(Var h, const MixtureVars& mixture, const std::vector<Index>& assign,
                 double epsilon) {
  const Shape hs = h.shape();
  const Index b = hs[0], n = hs[1], c = hs[2], k = mixture.mu.shape()[1];
  if (static_cast<Index>(assign.size()) != h.value().size()) {
    throw ShapeError("cluster_norm: assignment count does not match h " + hs.str());
  }
  std::vector<Index> idx(assign.size());
  for (Index bi = 0; bi < b; ++bi) {
    for (Index ni = 0; ni < n; ++ni) {
      for (Index ci = 0; ci < c; ++ci) {
        const auto flat = static_cast<std::size_t>((bi * n + ni) * c + ci);
        idx[flat] = (bi * k + assign[flat]) * c + ci;
      }
    }
  }
  Var mu_sel = gather(mixture.mu, idx, hs);
  Var sigma_sel = exp(scale(gather(mixture.log_sigma2, idx, hs), 0.5));
  return div(sub(h, mu_sel), add_scalar(sigma_sel, epsilon));
}

ClusterLoss cluster_loss(const MixtureVars& mixture, const PosteriorField& posterior,
                         KlMode mode) {
  const Shape gs = posterior.gamma.shape();  // (B, N, C, K)
  const double b = static_cast<double>(gs[0]);
  const double n = static_cast<double>(gs[1]);
  const double c = static_cast<double>(gs[2]);

  Var q, p;
  double kl_norm = c;
  if (mode == KlMode::kBatchAverage) {
    q = mean(posterior.gamma, {0, 1});                    // (C, K)
    p = permute(mean(mixture.alpha, {0}), {1, 0});        // (C, K)
  } else {
    q = mean(posterior.gamma, {1});                       // (B, C, K)
    p = permute(mixture.alpha, {0, 2, 1});                // (B, C, K)
    kl_norm = b * c;
  }
  Var kl_terms =
      mul(q, sub(log_clamped(q, kProbabilityFloor), log_clamped(p, kProbabilityFloor)));
  ClusterLoss out;
  out.kl = scale(sum_all(kl_terms), 1.0 / kl_norm);
  out.nll = scale(sum_all(mul(posterior.gamma, posterior.log_density)), -1.0 / (b * n * c));
  out.total = add(out.kl, out.nll);
  return out;
}

GmreLayer::GmreLayer(ParameterSet& params, const std::string& prefix, const GmreConfig& config)
    : config_(config) {
  const Index k = config.components, c = config.channels, n = config.positions;
  if (k < 1 || c < 1 || n < 1) {
    throw ShapeError("GmreLayer: components, channels and positions must be >= 1");
  }
  if (!(config.epsilon > 0.0)) throw ShapeError("GmreLayer: epsilon must be positive");
  if (config.cluster_mode == ClusterMode::kNearestCenter) {
    centers_ = &params.add(prefix + ".centers", Shape{k, c}, InitSpec::uniform(1.0));
    return;
  }
  w_alpha_ = &params.add(prefix + ".w_alpha", Shape{k, c, n}, InitSpec::uniform_scaled(n));
  w_mu_ = &params.add(prefix + ".w_mu", Shape{k, c, n}, InitSpec::uniform_scaled(n));
  w_sigma_ = &params.add(prefix + ".w_sigma", Shape{k, c, n}, InitSpec::uniform_scaled(n));
  b_mu_ = &params.add(prefix + ".b_mu", Shape{k, c}, InitSpec::zeros());
  b_sigma_ = &params.add(prefix + ".b_sigma", Shape{k, c}, InitSpec::zeros());
}

void GmreLayer::check_input(const Var& h) const {
  const Shape s = h.shape();
  if (s.rank() != 3 || s[1] != config_.positions || s[2] != config_.channels) {
    throw ShapeError("GmreLayer: expected (B, " + std::to_string(config_.positions) + ", " +
                     std::to_string(config_.channels) + "), got " + s.str());
  }
}

MixtureVars GmreLayer::mixture_params(Var h) const {
  check_input(h);
  if (config_.cluster_mode != ClusterMode::kGaussianPosterior) {
    throw ShapeError("GmreLayer: mixture parameters need the Gaussian posterior mode");
  }
  Graph& g = *h.graph;
  const Index b = h.shape()[0], k = config_.components, c = config_.channels;
  const Shape out{b, k, c};
  Var logits = channel_linear(h, g.param(*w_alpha_));
  MixtureVars m;
  m.alpha = softmax(logits, 1);
  m.log_alpha = log_softmax(logits, 1);
  m.mu = add(channel_linear(h, g.param(*w_mu_)), broadcast(g.param(*b_mu_), out, {1, 2}));
  m.log_sigma2 =
      add(channel_linear(h, g.param(*w_sigma_)), broadcast(g.param(*b_sigma_), out, {1, 2}));
  return m;
}

GmOutput GmreLayer::forward(Var h) const {
  check_input(h);
  if (config_.cluster_mode == ClusterMode::kNearestCenter) return forward_nearest_center(h);
  GmOutput out;
  out.mixture = mixture_params(h);
  out.posterior = posterior_field(h, out.mixture);
  out.h_hat = cluster_norm(h, out.mixture, out.posterior.assign, config_.epsilon);
  out.h_gm = concat({h, out.h_hat}, 2);
  out.loss = cluster_loss(out.mixture, out.posterior, config_.kl_mode);
  return out;
}

// Hard clustering: each scalar goes to its nearest per-channel centre and is
// centred on it. The clustering term is the mean squared distance to the
// assigned centre; the KL term is identically zero.
GmOutput GmreLayer::forward_nearest_center(Var h) const {
  Graph& g = *h.graph;
  const Shape hs = h.shape();
  const Index b = hs[0], n = hs[1], c = hs[2], k = config_.components;
  Var centers = g.param(*centers_);

  const Shape full{b, n, c, k};
  Var dist2 = square(sub(broadcast(h, full, {0, 1, 2}), broadcast(centers, full, {3, 2})));
  GmOutput out;
  argmax_rows(dist2.value(), k, false, out.posterior.assign, out.posterior.min_margin);

  std::vector<Index> idx(out.posterior.assign.size());
  for (std::size_t flat = 0; flat < idx.size(); ++flat) {
    idx[flat] = out.posterior.assign[flat] * c + static_cast<Index>(flat) % c;
  }
  Var center_sel = gather(centers, std::move(idx), hs);
  out.h_hat = sub(h, center_sel);
  out.h_gm = concat({h, out.h_hat}, 2);
  out.loss.kl = g.constant(Tensor::scalar(0.0));
  out.loss.nll = mean_all(square(out.h_hat));
  out.loss.total = out.loss.nll;
  return out;
}

nlohmann::json mixture_diagnostics(const GmOutput& out, Index components) {
  nlohmann::json j;
  const Index k = components;
  if (out.mixture.alpha.valid()) {
    const MixtureParams m = out.mixture.values();
    const Index b = m.alpha.dim(0), c = m.alpha.dim(2);
    auto batch_mean = [&](const Tensor& t) {
      std::vector<std::vector<double>> rows(static_cast<std::size_t>(k),
                                            std::vector<double>(static_cast<std::size_t>(c)));
      for (Index bi = 0; bi < b; ++bi) {
        for (Index ki = 0; ki < k; ++ki) {
          for (Index ci = 0; ci < c; ++ci) {
            rows[ki][ci] += t[(bi * k + ki) * c + ci] / static_cast<double>(b);
          }
        }
      }
      return rows;
    };
    j["alpha"] = batch_mean(m.alpha);
    j["mu"] = batch_mean(m.mu);
    j["sigma2"] = batch_mean(m.sigma2);
  }
  const Shape hs = out.h_hat.shape();
  const Index c = hs[2];
  std::vector<std::vector<long long>> counts(static_cast<std::size_t>(k),
                                             std::vector<long long>(static_cast<std::size_t>(c)));
  for (std::size_t flat = 0; flat < out.posterior.assign.size(); ++flat) {
    counts[out.posterior.assign[flat]][flat % c] += 1;
  }
  j["assignment_counts"] = counts;
  j["layout"] = "[component][channel]";
  return j;
}

}  // namespace gmrl
