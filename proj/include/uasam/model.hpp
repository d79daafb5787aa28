#pragma once

#include <cstdint>
#include <memory>
#include <span>

#include "uasam/adapter.hpp"
#include "uasam/mini_sam.hpp"
#include "uasam/prob_latent.hpp"

namespace uasam {

struct ModelConfig {
  BackboneConfig backbone;
  AdapterConfig adapter;
  ProbLatentConfig latent;
  /// false builds the plain Stage-1 backbone.
  bool with_adapters = true;

  void validate() const;
};

/// Mini-SAM plus, for Stage 2, the adapter chain and (when the adapter mode
/// consumes a latent) the prior/posterior pair. Owns its parameters.
class UaSamModel {
 public:
  UaSamModel(const ModelConfig& config, std::uint64_t seed);

  UaSamModel(const UaSamModel&) = delete;
  UaSamModel& operator=(const UaSamModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const MiniSam& sam() const { return *sam_; }
  const AdapterChain* adapters() const { return adapters_.get(); }
  const ProbLatent* latent() const { return latent_.get(); }
  /// True when predictions depend on a latent sample.
  bool stochastic() const { return latent_ != nullptr; }

  /// images [B, 1, S, S], prompt [B, D] -> logits [B, S, S].
  Tensor logits(const Tensor& images, const Tensor& prompt, const Tensor* z = nullptr) const;
  Tensor logits(const Tensor& images, std::span<const PromptPoint> points, const Tensor* z = nullptr) const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<MiniSam> sam_;
  std::unique_ptr<AdapterChain> adapters_;
  std::unique_ptr<ProbLatent> latent_;
};

}  // namespace uasam
