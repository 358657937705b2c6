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

// Gaussian mixture representation extractor.
//
// Every channel i of a representation H (B, N = T*L*S, d_k) carries its own
// K-component mixture whose parameters are conditioned on that channel's
// whole slice vec(H[..., i]):
//
//   alpha[b,k,i]   = softmax_k( W_alpha[k,i,:] . vec(H[b,:,i]) )
//   mu[b,k,i]      = W_mu[k,i,:] . vec(H[b,:,i]) + b_mu[k,i]
//   sigma2[b,k,i]  = exp( W_sigma[k,i,:] . vec(H[b,:,i]) + b_sigma[k,i] )
//
// Each scalar h = H[b,n,i] receives the Bayes posterior gamma over components
// and a hard assignment k* = argmax gamma. Cluster Norm rescales h by the
// statistics of its assigned component, and the layer output concatenates H
// with the normalised copy along channels.
//
// The argmax is a constant for differentiation: gradients reach H and the
// selected component's (mu, sigma) only.

#ifndef GMRL_GMRE_HPP_
#define GMRL_GMRE_HPP_

#include <span>
#include <string>
#include <vector>

#include "gmrl/autodiff.hpp"
#include "json.hpp"

namespace gmrl {

enum class KlMode {
  kBatchAverage,  // KL(mean posterior || mean prior) over the mini-batch
  kPerSample,     // mean over samples of KL(sample posterior || sample prior)
};

enum class ClusterMode {
  kGaussianPosterior,
  kNearestCenter,  // hard assignment to learnable centres; ablation only
};

struct GmreConfig {
  Index components = 17;  // K
  Index channels = 48;    // d_k
  Index positions = 1;    // T * L * S
  double epsilon = 1e-5;
  KlMode kl_mode = KlMode::kBatchAverage;
  ClusterMode cluster_mode = ClusterMode::kGaussianPosterior;
};

/// Values of the mixture for a batch; each tensor is (B, K, d_k).
struct MixtureParams {
  Tensor alpha;
  Tensor mu;
  Tensor sigma2;
};

struct MixtureVars {
  Var alpha;       // (B, K, C)
  Var log_alpha;   // (B, K, C)
  Var mu;          // (B, K, C)
  Var log_sigma2;  // (B, K, C)

  MixtureParams values() const;
};

struct PosteriorField {
  Var gamma;        // (B, N, C, K)
  Var log_density;  // (B, N, C, K): log N(h | mu_k, sigma2_k)
  std::vector<Index> assign;  // (B, N, C) row-major
  /// Smallest gap between the best and second-best log-joint term.
  double min_margin = 0.0;
};

struct ClusterLoss {
  Var kl;
  Var nll;
  Var total;
};

struct GmOutput {
  Var h_gm;   // (B, N, 2C) = [H, H_hat]
  Var h_hat;  // (B, N, C)
  ClusterLoss loss;
  MixtureVars mixture;  // unset in kNearestCenter mode
  PosteriorField posterior;
};

/// Posterior over components for one scalar, evaluated in log space.
/// Falls back to a one-hot at the best log term if every joint term is -inf.
std::vector<double> posterior(double h, std::span<const double> alpha, std::span<const double> mu,
                              std::span<const double> sigma2);

/// Log-density, posterior gamma and argmax assignment for every scalar of h (B, N, C).
PosteriorField posterior_field(Var h, const MixtureVars& mixture);

/// (h - mu[k*]) / (sqrt(sigma2[k*]) + eps) for every scalar of h.
Var cluster_norm(Var h, const MixtureVars& mixture, const std::vector<Index>& assign,
                 double epsilon);

/// KL between the averaged posterior Q and averaged prior P, plus the
/// posterior-weighted negative log-likelihood; both averaged over channels.
/// Zero entries inside the logs are clamped to kProbabilityFloor.
ClusterLoss cluster_loss(const MixtureVars& mixture, const PosteriorField& posterior, KlMode mode);

inline constexpr double kProbabilityFloor = 1e-12;

class GmreLayer {
 public:
  GmreLayer(ParameterSet& params, const std::string& prefix, const GmreConfig& config);

  const GmreConfig& config() const { return config_; }

  /// h is (B, N, C) with N and C matching the configuration.
  MixtureVars mixture_params(Var h) const;
  GmOutput forward(Var h) const;

 private:
  void check_input(const Var& h) const;
  GmOutput forward_nearest_center(Var h) const;

  GmreConfig config_;
  Parameter* w_alpha_ = nullptr;
  Parameter* w_mu_ = nullptr;
  Parameter* w_sigma_ = nullptr;
  Parameter* b_mu_ = nullptr;
  Parameter* b_sigma_ = nullptr;
  Parameter* centers_ = nullptr;
};

/// Batch-averaged (alpha, mu, sigma2) and assignment histograms of one layer.
nlohmann::json mixture_diagnostics(const GmOutput& out, Index components);

}  // namespace gmrl

#endif  // GMRL_GMRE_HPP_
