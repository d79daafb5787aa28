#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uasam/nn.hpp"

namespace uasam {

class AdapterChain;

/// Hyperparameters of the desk-scale SAM replica.
struct BackboneConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t num_blocks = 4;
  std::size_t num_heads = 4;
  double mlp_ratio = 2.0;
  /// Hidden width of the decoder's token MLP, as a multiple of embed_dim.
  double decoder_mlp_ratio = 8.0;

  void validate() const;
  /// Patch-grid extent H == W.
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
};

struct PromptPoint {
  std::size_t row = 0;
  std::size_t col = 0;
  bool foreground = true;
};

/// Fixed sinusoidal code of a point given in normalized [0, 1] coordinates.
/// The first half of the vector encodes the row, the second half the column.
std::vector<double> sinusoidal_encoding(double row, double col, std::size_t dim);

/// Internal tensors of one decode_mask call, for inspection in tests.
struct DecoderTrace {
  Tensor token_to_image_attention;  // [B*heads, 2, T]
  Tensor image_to_token_attention;  // [B*heads, T, 2]
  Tensor self_attention;            // [B*heads, 2, 2]
};

/// Patch-embedding ViT image encoder, point prompt encoder and a one-round
/// two-way attention mask decoder. All parameters live under "sam.".
class MiniSam {
 public:
  MiniSam(const BackboneConfig& config, ParamStore& store, Rng& rng);

  const BackboneConfig& config() const { return cfg_; }

  /// images [B, 1, S, S] -> embeddings [B, H, W, D]. With a chain, adapter i
  /// runs after block i; `z` is required when the chain consumes a latent.
  Tensor encode_image(const Tensor& images, const AdapterChain* adapters = nullptr, const Tensor* z = nullptr) const;

  /// Learned foreground/background token plus the sinusoidal code of the
  /// point normalized by (S - 1). Returns [1, D].
  Tensor encode_prompt(const PromptPoint& point) const;
  /// Stacks one prompt per batch element: [B, D].
  Tensor encode_prompts(std::span<const PromptPoint> points) const;

  /// embeddings [B, H, W, D], prompt [B, D] (or [1, D], shared) -> logits [B, S, S].
  Tensor decode_mask(const Tensor& embeddings, const Tensor& prompt, DecoderTrace* trace = nullptr) const;

  /// Self-attention weights of encoder block `block` for the given input
  /// stream [B, H, W, D]; used to check softmax normalization.
  Tensor block_attention_weights(std::size_t block, const Tensor& stream) const;

  Tensor patch_embed(const Tensor& images) const;
  Tensor run_block(std::size_t block, const Tensor& stream) const;

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Attention attn;
    nn::Mlp mlp;
  };

  BackboneConfig cfg_;
  nn::Linear patch_proj_;
  Tensor pos_embed_;  // [H, W, D]
  std::vector<Block> blocks_;

  Tensor fg_token_;  // [1, D]
  Tensor bg_token_;  // [1, D]

  Tensor mask_token_;  // [1, 1, D]
  Tensor image_pe_;    // [1, T, D] fixed
  nn::Attention self_attn_, token_to_image_, image_to_token_;
  nn::LayerNorm dec_ln1_, dec_ln2_, dec_ln3_, dec_ln4_;
  nn::Mlp token_mlp_;
  nn::Linear hyper1_, hyper2_, hyper3_;
};

/// Adds the encoder, prompt-encoder and decoder paths to the frozen set.
/// Throws if no backbone parameters are registered yet.
void freeze_backbone(ParamStore& store);

inline constexpr const char* kBackbonePrefix = "sam.";

}  // namespace uasam
