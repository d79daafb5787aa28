#include "uasam/prob_latent.hpp"

#include <cmath>

namespace uasam {

void ProbLatentConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (channels.empty()) throw ConfigError("prob-net needs at least one conv layer");
  for (auto c : channels) {
    if (c == 0) throw ConfigError("prob-net channel counts must be positive");
  }
  if (!(log_sigma_min < log_sigma_max) || !std::isfinite(log_sigma_min) || !std::isfinite(log_sigma_max)) {
    throw ConfigError("log_sigma clamp bounds must be finite with min < max");
  }
}

GaussianNet::GaussianNet(const ProbLatentConfig& config, std::size_t in_channels, const std::string& path,
                         ParamStore& store, Rng& rng)
    : cfg_(config), in_channels_(in_channels) {
  cfg_.validate();
  std::size_t in = in_channels;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    convs_.push_back(nn::make_conv2d(store, path + "conv" + std::to_string(i), in, cfg_.channels[i], 3, 2, 1, rng));
    in = cfg_.channels[i];
  }
  mu_head_ = nn::make_linear(store, path + "mu", in, cfg_.latent_dim, rng);
  log_sigma_head_ = nn::make_linear(store, path + "log_sigma", in, cfg_.latent_dim, rng);
}

LatentGaussian GaussianNet::operator()(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels_) {
    throw ShapeError("prob-net: expected [B, " + std::to_string(in_channels_) + ", S, S], got " +
                     shape_str(x.shape()));
  }
  Tensor h = x;
  for (const auto& conv : convs_) h = ops::relu(conv(h));
  const std::size_t b = h.dim(0), c = h.dim(1);
  Tensor pooled = ops::mean_axis(ops::reshape(h, {b, c, h.dim(2) * h.dim(3)}), 2, false);
  return {mu_head_(pooled), ops::clamp(log_sigma_head_(pooled), cfg_.log_sigma_min, cfg_.log_sigma_max)};
}

ProbLatent::ProbLatent(const ProbLatentConfig& config, ParamStore& store, Rng& rng)
    : cfg_(config), prior_(config, 1, kPriorPrefix, store, rng), posterior_(config, 2, kPosteriorPrefix, store, rng) {}

LatentGaussian ProbLatent::prior(const Tensor& images) const { return prior_(images); }

LatentGaussian ProbLatent::posterior(const Tensor& images, const Tensor& masks) const {
  if (masks.shape() != images.shape()) {
    throw ShapeError("posterior: mask " + shape_str(masks.shape()) + " does not match image " +
                     shape_str(images.shape()));
  }
  for (double v : masks.data()) {
    if (v != 0.0 && v != 1.0) throw DataError("posterior: mask is not binary (found " + std::to_string(v) + ")");
  }
  return posterior_(ops::concat({images, masks}, 1));
}

Tensor sample_with_noise(const LatentGaussian& dist, const Tensor& eps) {
  if (eps.shape() != dist.mu.shape() || dist.log_sigma.shape() != dist.mu.shape()) {
    throw ShapeError("sample: noise " + shape_str(eps.shape()) + " does not match mu " + shape_str(dist.mu.shape()));
  }
  return ops::add(dist.mu, ops::mul(ops::exp(dist.log_sigma), eps));
}

Tensor sample(const LatentGaussian& dist, Rng& rng) {
  std::vector<double> eps(dist.mu.numel());
  for (auto& e : eps) e = rng.normal();
  return sample_with_noise(dist, Tensor(dist.mu.shape(), std::move(eps)));
}

Tensor kl_divergence(const LatentGaussian& q, const LatentGaussian& p) {
  if (q.mu.shape() != p.mu.shape() || q.log_sigma.shape() != q.mu.shape() || p.log_sigma.shape() != p.mu.shape() ||
      q.mu.rank() != 2) {
    throw ShapeError("kl_divergence: mismatched distributions " + shape_str(q.mu.shape()) + " vs " +
                     shape_str(p.mu.shape()));
  }
  // log(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2, written in log-sigma terms.
  Tensor diff = ops::sub(q.log_sigma, p.log_sigma);
  Tensor var_ratio = ops::scale(ops::exp(ops::scale(diff, 2.0)), 0.5);
  Tensor mean_term =
      ops::scale(ops::mul(ops::square(ops::sub(q.mu, p.mu)), ops::exp(ops::scale(p.log_sigma, -2.0))), 0.5);
  Tensor per = ops::sub(ops::add_scalar(ops::add(var_ratio, mean_term), -0.5), diff);
  return ops::mean(ops::sum_axis(per, 1, false));
}

}  // namespace uasam
