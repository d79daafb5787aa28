#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "uasam/mini_sam.hpp"
#include "uasam/nn.hpp"

namespace uasam {

/// How an adapter consumes the latent sample z and the position variant p.
enum class AdapterMode {
  kPlain,  // bottleneck only, no z, no p (the Adapter-SAM control)
  kZOnly,  // z reconstructed and concatenated, no p
  kPOnly,  // p threaded and reconstructed, no z
  kWms,    // z concatenated with p' without modification
  kCmsm,   // p' conditions z (the uncertainty-aware adapter)
};

/// What happens at the last adapter of the chain.
enum class LastAdapterRule {
  kSupplement,  // last adapter runs fully, then z is reconstructed to D and added
  kReplace,     // as supplement, but the last adapter emits no p_next
  kOff,         // no reconstruction branch
};

std::string to_string(AdapterMode mode);
AdapterMode parse_adapter_mode(const std::string& name);
std::string to_string(LastAdapterRule rule);
LastAdapterRule parse_last_adapter_rule(const std::string& name);

struct AdapterConfig {
  AdapterMode mode = AdapterMode::kCmsm;
  /// dim = round(ratio * D), the width of the reconstructed uncertainty feature.
  double ratio = 0.25;
  /// Bottleneck width; 0 means D / 4.
  std::size_t d_down = 0;
  std::size_t latent_dim = 6;
  LastAdapterRule last_rule = LastAdapterRule::kSupplement;
  /// p_0 is drawn from U(-p_init, p_init).
  double p_init = 0.02;

  bool uses_latent() const;
  bool uses_position() const;
  std::size_t feature_dim(std::size_t embed_dim) const;
  std::size_t bottleneck_dim(std::size_t embed_dim) const;
  void validate(std::size_t embed_dim) const;
};

/// Weights of one adapter. CMSM pieces are present only in modes that use them.
struct AdapterState {
  nn::Linear down;  // D -> d_down
  nn::Linear up;    // d_down (+ dim) -> D, zero-initialized
  std::optional<nn::Mlp> mlp_a;     // L -> C
  std::optional<nn::Linear> w11, w12, w21, w22;  // C -> C
  std::optional<nn::Mlp> mlp_b;     // C (2C for WMS) -> dim
  std::optional<nn::Mlp> mlp_c;     // C -> L
};

struct CmsmOutput {
  Tensor feature;  // f_i [B, H, W, dim]
  Tensor p_next;   // [1, L], undefined when the adapter emits none
};

struct AdapterOutput {
  Tensor stream;  // [B, H, W, D]
  Tensor p_next;
};

/// Condition Modifies Sample Module:
///   p' = mlp_a(p)                                  [1, C]
///   score = relu(<w21(z), w11(p')>) per row        [B, 1]
///   z' = w22(z) * score                            [B, C]
///   f = relu(z') * w12(p')                         [B, C]
///   f_i = mlp_b(tile(f over H x W))                [B, H, W, dim]
///   p_next = mlp_c(w12(p'))                        [1, L]
CmsmOutput cmsm(const AdapterState& state, const Tensor& p, const Tensor& z, std::size_t grid_h, std::size_t grid_w);

/// Residual bottleneck fused with CMSM:
///   x + up(concat(relu(down(x)), f_i))
AdapterOutput adapter_forward(const AdapterState& state, const Tensor& x, const Tensor& p, const Tensor& z);

/// Ablation path: f_i = mlp_b(tile(concat(z, p'))); p' reaches p_next through
/// w12 and mlp_c exactly as in CMSM.
AdapterOutput wms_forward(const AdapterState& state, const Tensor& x, const Tensor& p, const Tensor& z);

/// x_final + recon(tile(z over H x W)).
Tensor last_adapter_merge(const Tensor& x_final, const Tensor& z, const nn::Linear& recon);

/// The L adapters of an encoder plus the shared p_0 and reconstruction branch.
/// Parameters live under "adapter.".
class AdapterChain {
 public:
  AdapterChain(const AdapterConfig& config, const BackboneConfig& backbone, ParamStore& store, Rng& rng);

  /// Per-forward state threaded through the chain.
  struct Run {
    Tensor z;
    Tensor p;
    std::vector<Tensor> positions;  // p_0 .. p_L actually produced
  };

  /// Validates z against the mode (throws when a latent is required but missing).
  Run start(const Tensor* z, std::size_t batch) const;
  Tensor after_block(std::size_t block, const Tensor& stream, Run& run) const;
  Tensor finish(const Tensor& stream, const Run& run) const;

  const AdapterConfig& config() const { return cfg_; }
  std::size_t size() const { return adapters_.size(); }
  const AdapterState& adapter(std::size_t i) const { return adapters_.at(i); }
  const Tensor& p0() const { return p0_; }
  bool merges_latent() const { return recon_.has_value(); }

 private:
  AdapterConfig cfg_;
  std::size_t grid_ = 0;
  std::vector<AdapterState> adapters_;
  Tensor p0_;
  std::optional<nn::Linear> recon_;
};

inline constexpr const char* kAdapterPrefix = "adapter.";

}  // namespace uasam
