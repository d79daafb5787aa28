#include "uasam/adapter.hpp"

#include <algorithm>
#include <cmath>

namespace uasam {

std::string to_string(AdapterMode mode) {
  switch (mode) {
    case AdapterMode::kPlain: return "adapter";
    case AdapterMode::kZOnly: return "z";
    case AdapterMode::kPOnly: return "p";
    case AdapterMode::kWms: return "wms";
    case AdapterMode::kCmsm: return "cmsm";
  }
  return "?";
}

AdapterMode parse_adapter_mode(const std::string& name) {
  if (name == "adapter" || name == "plain") return AdapterMode::kPlain;
  if (name == "z") return AdapterMode::kZOnly;
  if (name == "p") return AdapterMode::kPOnly;
  if (name == "wms") return AdapterMode::kWms;
  if (name == "cmsm") return AdapterMode::kCmsm;
  throw ConfigError("unknown adapter mode '" + name + "' (expected adapter, z, p, wms or cmsm)");
}

std::string to_string(LastAdapterRule rule) {
  switch (rule) {
    case LastAdapterRule::kSupplement: return "supplement";
    case LastAdapterRule::kReplace: return "replace";
    case LastAdapterRule::kOff: return "off";
  }
  return "?";
}

LastAdapterRule parse_last_adapter_rule(const std::string& name) {
  if (name == "supplement") return LastAdapterRule::kSupplement;
  if (name == "replace") return LastAdapterRule::kReplace;
  if (name == "off") return LastAdapterRule::kOff;
  throw ConfigError("unknown last-adapter rule '" + name + "' (expected supplement, replace or off)");
}

bool AdapterConfig::uses_latent() const {
  return mode == AdapterMode::kZOnly || mode == AdapterMode::kWms || mode == AdapterMode::kCmsm;
}

bool AdapterConfig::uses_position() const {
  return mode == AdapterMode::kPOnly || mode == AdapterMode::kWms || mode == AdapterMode::kCmsm;
}

std::size_t AdapterConfig::feature_dim(std::size_t embed_dim) const {
  return static_cast<std::size_t>(std::lround(ratio * static_cast<double>(embed_dim)));
}

std::size_t AdapterConfig::bottleneck_dim(std::size_t embed_dim) const {
  return d_down == 0 ? embed_dim / 4 : d_down;
}

void AdapterConfig::validate(std::size_t embed_dim) const {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("adapter ratio must lie in (0, 1]");
  if (feature_dim(embed_dim) == 0) throw ConfigError("adapter ratio too small: feature dim rounds to 0");
  if (bottleneck_dim(embed_dim) == 0) throw ConfigError("adapter bottleneck width must be positive");
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (!std::isfinite(p_init) || p_init < 0) throw ConfigError("p_init must be finite and non-negative");
}

namespace {

void check_stream(const Tensor& x, const AdapterState& s) {
  if (x.rank() != 4 || x.dim(3) != s.down.in_features()) {
    throw ShapeError("adapter: expected stream [B, H, W, " + std::to_string(s.down.in_features()) + "], got " +
                     shape_str(x.shape()));
  }
}

void check_position(const Tensor& p, const AdapterState& s) {
  const std::size_t l = s.mlp_a->fc1.in_features();
  if (p.rank() != 2 || p.dim(0) != 1 || p.dim(1) != l) {
    throw ShapeError("adapter: expected position [1, " + std::to_string(l) + "], got " + shape_str(p.shape()));
  }
}

void check_latent(const Tensor& z, std::size_t c) {
  if (z.rank() != 2 || z.dim(1) != c) {
    throw ShapeError("adapter: expected latent [B, " + std::to_string(c) + "], got " + shape_str(z.shape()));
  }
}

// [rows, F] (rows == B, or 1 broadcast over B) -> [B, H, W, F]
Tensor spread(const Tensor& f, std::size_t batch, std::size_t h, std::size_t w) {
  const std::size_t rows = f.dim(0), feat = f.dim(1);
  Tensor r = ops::reshape(f, {rows, 1, 1, feat});
  return ops::tile(r, {rows == batch ? 1 : batch, h, w, 1});
}

AdapterOutput bottleneck_with(const AdapterState& s, const Tensor& x, const Tensor& feature, Tensor p_next) {
  Tensor h = ops::relu(s.down(x));
  Tensor joined = feature.defined() ? ops::concat_last({h, feature}) : h;
  return {ops::add(x, s.up(joined)), std::move(p_next)};
}

Tensor next_position(const AdapterState& s, const Tensor& projected) {
  if (!s.mlp_c) return {};
  return (*s.mlp_c)(projected);
}

}  // namespace

CmsmOutput cmsm(const AdapterState& s, const Tensor& p, const Tensor& z, std::size_t grid_h, std::size_t grid_w) {
  if (!s.mlp_a || !s.w11 || !s.w12 || !s.w21 || !s.w22 || !s.mlp_b) {
    throw ConfigError("cmsm: adapter was built without CMSM weights");
  }
  check_position(p, s);
  check_latent(z, s.w21->in_features());
  Tensor p_prime = (*s.mlp_a)(p);                                  // [1, C]
  Tensor key = (*s.w21)(z);                                        // [B, C]
  Tensor query = (*s.w11)(p_prime);                                // [1, C]
  Tensor score = ops::relu(ops::sum_axis(ops::mul(key, query), 1, true));  // [B, 1]
  Tensor z_mod = ops::mul((*s.w22)(z), score);                    // [B, C]
  Tensor cond = (*s.w12)(p_prime);                                 // [1, C]
  Tensor f = ops::mul(ops::relu(z_mod), cond);                     // [B, C]
  // mlp_b is pointwise, so applying it before tiling gives the same values.
  Tensor feature = spread((*s.mlp_b)(f), z.dim(0), grid_h, grid_w);
  return {feature, next_position(s, cond)};
}

AdapterOutput adapter_forward(const AdapterState& s, const Tensor& x, const Tensor& p, const Tensor& z) {
  check_stream(x, s);
  auto out = cmsm(s, p, z, x.dim(1), x.dim(2));
  if (out.feature.dim(0) != x.dim(0)) throw ShapeError("adapter: latent batch does not match stream batch");
  return bottleneck_with(s, x, out.feature, out.p_next);
}

AdapterOutput wms_forward(const AdapterState& s, const Tensor& x, const Tensor& p, const Tensor& z) {
  if (!s.mlp_a || !s.w12 || !s.mlp_b) throw ConfigError("wms: adapter was built without WMS weights");
  check_stream(x, s);
  check_position(p, s);
  const std::size_t c = s.w12->in_features();
  check_latent(z, c);
  if (z.dim(0) != x.dim(0)) throw ShapeError("adapter: latent batch does not match stream batch");
  Tensor p_prime = (*s.mlp_a)(p);
  Tensor f = ops::concat_last({z, ops::tile(p_prime, {z.dim(0), 1})});  // [B, 2C]
  Tensor feature = spread((*s.mlp_b)(f), x.dim(0), x.dim(1), x.dim(2));
  return bottleneck_with(s, x, feature, next_position(s, (*s.w12)(p_prime)));
}

Tensor last_adapter_merge(const Tensor& x_final, const Tensor& z, const nn::Linear& recon) {
  if (x_final.rank() != 4 || x_final.dim(3) != recon.out_features()) {
    throw ShapeError("last_adapter_merge: expected stream [B, H, W, " + std::to_string(recon.out_features()) +
                     "], got " + shape_str(x_final.shape()));
  }
  check_latent(z, recon.in_features());
  if (z.dim(0) != x_final.dim(0)) throw ShapeError("last_adapter_merge: latent batch does not match stream batch");
  return ops::add(x_final, spread(recon(z), z.dim(0), x_final.dim(1), x_final.dim(2)));
}

AdapterChain::AdapterChain(const AdapterConfig& config, const BackboneConfig& backbone, ParamStore& store,
                           Rng& rng)
    : cfg_(config), grid_(backbone.grid()) {
  backbone.validate();
  cfg_.validate(backbone.embed_dim);
  const std::size_t d = backbone.embed_dim, l = backbone.num_blocks, c = cfg_.latent_dim;
  const std::size_t dim = cfg_.feature_dim(d), down = cfg_.bottleneck_dim(d);
  const bool has_feature = cfg_.mode != AdapterMode::kPlain;
  auto mlp = [&](const std::string& path, std::size_t in, std::size_t out) {
    return nn::make_mlp(store, path, in, std::max(in, out), out, nn::Activation::kRelu, rng);
  };

  // w11, w12, w21 and w22 are bias-free projections, so z = 0 gives f = 0.
  auto proj = [&](const std::string& path) {
    return nn::make_linear(store, path, c, c, rng, nn::Init::kUniform, false);
  };

  for (std::size_t i = 0; i < l; ++i) {
    const std::string path = std::string(kAdapterPrefix) + std::to_string(i);
    const bool last = i + 1 == l;
    AdapterState s;
    s.down = nn::make_linear(store, path + ".down", d, down, rng);
    s.up = nn::make_linear(store, path + ".up", down + (has_feature ? dim : 0), d, rng, nn::Init::kZero);
    if (cfg_.uses_position()) {
      s.mlp_a = mlp(path + ".mlp_a", l, c);
      s.w12 = proj(path + ".w12");
      if (!(last && cfg_.last_rule == LastAdapterRule::kReplace)) s.mlp_c = mlp(path + ".mlp_c", c, l);
    }
    if (cfg_.mode == AdapterMode::kCmsm) {
      s.w11 = proj(path + ".w11");
      s.w21 = proj(path + ".w21");
      s.w22 = proj(path + ".w22");
    }
    if (has_feature) s.mlp_b = mlp(path + ".mlp_b", cfg_.mode == AdapterMode::kWms ? 2 * c : c, dim);
    adapters_.push_back(std::move(s));
  }

  if (cfg_.uses_position()) {
    std::vector<double> p(l);
    for (auto& v : p) v = rng.uniform(-cfg_.p_init, cfg_.p_init);
    p0_ = store.add(std::string(kAdapterPrefix) + "0.p", Tensor({1, l}, std::move(p)));
  }
  if (cfg_.uses_latent() && cfg_.last_rule != LastAdapterRule::kOff) {
    recon_ = nn::make_linear(store, std::string(kAdapterPrefix) + "recon", c, d, rng, nn::Init::kZero);
  }
}

AdapterChain::Run AdapterChain::start(const Tensor* z, std::size_t batch) const {
  Run run;
  if (cfg_.uses_latent()) {
    if (!z || !z->defined()) throw ConfigError("adapter mode '" + to_string(cfg_.mode) + "' requires a latent sample z");
    check_latent(*z, cfg_.latent_dim);
    if (z->dim(0) != batch) {
      throw ShapeError("latent batch " + std::to_string(z->dim(0)) + " does not match image batch " +
                       std::to_string(batch));
    }
    run.z = *z;
  }
  if (cfg_.uses_position()) run.p = p0_;
  return run;
}

Tensor AdapterChain::after_block(std::size_t block, const Tensor& stream, Run& run) const {
  const AdapterState& s = adapters_.at(block);
  check_stream(stream, s);
  const std::size_t b = stream.dim(0), h = stream.dim(1), w = stream.dim(2);
  if (run.p.defined()) run.positions.push_back(run.p);

  AdapterOutput out;
  switch (cfg_.mode) {
    case AdapterMode::kPlain:
      out = bottleneck_with(s, stream, Tensor{}, Tensor{});
      break;
    case AdapterMode::kZOnly:
      out = bottleneck_with(s, stream, spread((*s.mlp_b)(run.z), b, h, w), Tensor{});
      break;
    case AdapterMode::kPOnly: {
      check_position(run.p, s);
      Tensor cond = (*s.w12)((*s.mlp_a)(run.p));
      out = bottleneck_with(s, stream, spread((*s.mlp_b)(cond), b, h, w), next_position(s, cond));
      break;
    }
    case AdapterMode::kWms:
      out = wms_forward(s, stream, run.p, run.z);
      break;
    case AdapterMode::kCmsm:
      out = adapter_forward(s, stream, run.p, run.z);
      break;
  }
  // The last adapter's p_next has no consumer.
  run.p = block + 1 < adapters_.size() ? out.p_next : Tensor{};
  return out.stream;
}

Tensor AdapterChain::finish(const Tensor& stream, const Run& run) const {
  if (!recon_) return stream;
  return last_adapter_merge(stream, run.z, *recon_);
}

}  // namespace uasam
