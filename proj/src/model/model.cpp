#include "uasam/model.hpp"

namespace uasam {

void ModelConfig::validate() const {
  backbone.validate();
  latent.validate();
  if (with_adapters) {
    adapter.validate(backbone.embed_dim);
    if (adapter.uses_latent() && adapter.latent_dim != latent.latent_dim) {
      throw ConfigError("adapter latent_dim " + std::to_string(adapter.latent_dim) + " != prob-net latent_dim " +
                        std::to_string(latent.latent_dim));
    }
  }
}

UaSamModel::UaSamModel(const ModelConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  Rng sam_rng = Rng::derive(seed, 1);
  sam_ = std::make_unique<MiniSam>(cfg_.backbone, store_, sam_rng);
  if (!cfg_.with_adapters) return;
  Rng adapter_rng = Rng::derive(seed, 2);
  adapters_ = std::make_unique<AdapterChain>(cfg_.adapter, cfg_.backbone, store_, adapter_rng);
  if (cfg_.adapter.uses_latent()) {
    Rng latent_rng = Rng::derive(seed, 3);
    latent_ = std::make_unique<ProbLatent>(cfg_.latent, store_, latent_rng);
  }
}

Tensor UaSamModel::logits(const Tensor& images, const Tensor& prompt, const Tensor* z) const {
  return sam_->decode_mask(sam_->encode_image(images, adapters_.get(), z), prompt);
}

Tensor UaSamModel::logits(const Tensor& images, std::span<const PromptPoint> points, const Tensor* z) const {
  return logits(images, sam_->encode_prompts(points), z);
}

}  // namespace uasam
