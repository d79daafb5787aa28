#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "uasam/nn.hpp"

namespace uasam {

struct ProbLatentConfig {
  std::size_t latent_dim = 6;
  /// Output channels of the three stride-2 conv layers.
  std::vector<std::size_t> channels = {4, 8, 16};
  double log_sigma_min = -6.0;
  double log_sigma_max = 4.0;

  void validate() const;
};

/// Diagonal Gaussian N(mu, diag(exp(log_sigma))^2), both [B, C].
struct LatentGaussian {
  Tensor mu;
  Tensor log_sigma;
};

/// Conv tower -> global average pool -> mu and log-sigma heads.
class GaussianNet {
 public:
  GaussianNet(const ProbLatentConfig& config, std::size_t in_channels, const std::string& path, ParamStore& store,
              Rng& rng);

  /// x [B, in_channels, S, S]
  LatentGaussian operator()(const Tensor& x) const;

 private:
  ProbLatentConfig cfg_;
  std::size_t in_channels_;
  std::vector<nn::Conv2d> convs_;
  nn::Linear mu_head_, log_sigma_head_;
};

/// Prior P(z|X) under "prior." and posterior Q(z|X,Y) under "posterior.".
class ProbLatent {
 public:
  ProbLatent(const ProbLatentConfig& config, ParamStore& store, Rng& rng);

  LatentGaussian prior(const Tensor& images) const;
  /// masks must be binary and shaped like images.
  LatentGaussian posterior(const Tensor& images, const Tensor& masks) const;

  const ProbLatentConfig& config() const { return cfg_; }

 private:
  ProbLatentConfig cfg_;
  GaussianNet prior_, posterior_;
};

/// z = mu + exp(log_sigma) * eps with eps ~ N(0, I) drawn from rng.
Tensor sample(const LatentGaussian& dist, Rng& rng);
/// Same reparameterization with caller-supplied eps (constant).
Tensor sample_with_noise(const LatentGaussian& dist, const Tensor& eps);
/// Closed-form KL(q || p) summed over C and averaged over B.
Tensor kl_divergence(const LatentGaussian& q, const LatentGaussian& p);

inline constexpr const char* kPriorPrefix = "prior.";
inline constexpr const char* kPosteriorPrefix = "posterior.";

}  // namespace uasam
