#include "uasam/mini_sam.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "uasam/adapter.hpp"

namespace uasam {

namespace {

Tensor uniform_param(ParamStore& store, const std::string& name, Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return store.add(name, Tensor(std::move(shape), std::move(v)));
}

}  // namespace

void BackboneConfig::validate() const {
  if (image_size == 0 || patch_size == 0) throw ConfigError("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (image_size < 2) throw ConfigError("image_size must be at least 2");
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (embed_dim % 4 != 0) throw ConfigError("embed_dim must be a multiple of 4 for the positional code");
  if (num_blocks == 0) throw ConfigError("num_blocks must be positive");
  if (!(mlp_ratio > 0) || !(decoder_mlp_ratio > 0)) throw ConfigError("mlp ratios must be positive");
}

std::vector<double> sinusoidal_encoding(double row, double col, std::size_t dim) {
  if (dim % 4 != 0) throw ConfigError("sinusoidal_encoding: dim must be a multiple of 4");
  const std::size_t freqs = dim / 4;
  std::vector<double> out(dim);
  auto fill = [&](double coord, std::size_t offset) {
    for (std::size_t j = 0; j < freqs; ++j) {
      const double w = std::numbers::pi * std::pow(2.0, 0.5 * static_cast<double>(j));
      out[offset + 2 * j] = std::sin(w * coord);
      out[offset + 2 * j + 1] = std::cos(w * coord);
    }
  };
  fill(row, 0);
  fill(col, dim / 2);
  return out;
}

MiniSam::MiniSam(const BackboneConfig& config, ParamStore& store, Rng& rng) : cfg_(config) {
  cfg_.validate();
  const std::size_t d = cfg_.embed_dim, g = cfg_.grid(), p = cfg_.patch_size;
  const auto mlp_hidden = static_cast<std::size_t>(std::lround(cfg_.mlp_ratio * static_cast<double>(d)));
  const auto dec_hidden = static_cast<std::size_t>(std::lround(cfg_.decoder_mlp_ratio * static_cast<double>(d)));

  patch_proj_ = nn::make_linear(store, "sam.encoder.patch_proj", p * p, d, rng);
  pos_embed_ = uniform_param(store, "sam.encoder.pos_embed", {g, g, d}, 0.02, rng);
  for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
    const std::string path = "sam.encoder.block" + std::to_string(i);
    Block b{nn::make_layer_norm(store, path + ".ln1", d), nn::make_layer_norm(store, path + ".ln2", d),
            nn::make_attention(store, path + ".attn", d, cfg_.num_heads, rng),
            nn::make_mlp(store, path + ".mlp", d, mlp_hidden, d, nn::Activation::kGelu, rng)};
    blocks_.push_back(std::move(b));
  }

  fg_token_ = uniform_param(store, "sam.prompt.fg_token", {1, d}, 0.5, rng);
  bg_token_ = uniform_param(store, "sam.prompt.bg_token", {1, d}, 0.5, rng);

  mask_token_ = uniform_param(store, "sam.decoder.mask_token", {1, 1, d}, 0.5, rng);
  self_attn_ = nn::make_attention(store, "sam.decoder.self_attn", d, cfg_.num_heads, rng);
  token_to_image_ = nn::make_attention(store, "sam.decoder.token_to_image", d, cfg_.num_heads, rng);
  image_to_token_ = nn::make_attention(store, "sam.decoder.image_to_token", d, cfg_.num_heads, rng);
  dec_ln1_ = nn::make_layer_norm(store, "sam.decoder.ln1", d);
  dec_ln2_ = nn::make_layer_norm(store, "sam.decoder.ln2", d);
  dec_ln3_ = nn::make_layer_norm(store, "sam.decoder.ln3", d);
  dec_ln4_ = nn::make_layer_norm(store, "sam.decoder.ln4", d);
  token_mlp_ = nn::make_mlp(store, "sam.decoder.token_mlp", d, dec_hidden, d, nn::Activation::kRelu, rng);
  hyper1_ = nn::make_linear(store, "sam.decoder.hyper1", d, d, rng);
  hyper2_ = nn::make_linear(store, "sam.decoder.hyper2", d, d, rng);
  hyper3_ = nn::make_linear(store, "sam.decoder.hyper3", d, d, rng);

  // Fixed positional code of every patch center, in the same normalized
  // coordinates as prompt points.
  std::vector<double> pe;
  pe.reserve(g * g * d);
  const double span = static_cast<double>(cfg_.image_size - 1);
  for (std::size_t h = 0; h < g; ++h) {
    for (std::size_t w = 0; w < g; ++w) {
      const double r = (static_cast<double>(h * p) + 0.5 * static_cast<double>(p - 1)) / span;
      const double c = (static_cast<double>(w * p) + 0.5 * static_cast<double>(p - 1)) / span;
      auto code = sinusoidal_encoding(r, c, d);
      pe.insert(pe.end(), code.begin(), code.end());
    }
  }
  image_pe_ = Tensor({1, g * g, d}, std::move(pe));
}

Tensor MiniSam::patch_embed(const Tensor& images) const {
  const std::size_t s = cfg_.image_size, p = cfg_.patch_size, g = cfg_.grid();
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != s || images.dim(3) != s) {
    throw ShapeError("encode_image: expected [B, 1, " + std::to_string(s) + ", " + std::to_string(s) + "], got " +
                     shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0);
  Tensor x = ops::reshape(images, {b, g, p, g, p});
  x = ops::permute(x, {0, 1, 3, 2, 4});
  x = ops::reshape(x, {b, g, g, p * p});
  return ops::add(patch_proj_(x), pos_embed_);
}

Tensor MiniSam::run_block(std::size_t block, const Tensor& stream) const {
  const Block& blk = blocks_.at(block);
  const std::size_t b = stream.dim(0), g = cfg_.grid(), d = cfg_.embed_dim;
  Tensor x = ops::reshape(stream, {b, g * g, d});
  Tensor n = blk.ln1(x);
  x = ops::add(x, blk.attn(n, n, n));
  x = ops::add(x, blk.mlp(blk.ln2(x)));
  return ops::reshape(x, {b, g, g, d});
}

Tensor MiniSam::block_attention_weights(std::size_t block, const Tensor& stream) const {
  const Block& blk = blocks_.at(block);
  const std::size_t b = stream.dim(0), g = cfg_.grid(), d = cfg_.embed_dim;
  Tensor n = blk.ln1(ops::reshape(stream, {b, g * g, d}));
  Tensor w;
  blk.attn(n, n, n, &w);
  return w;
}

Tensor MiniSam::encode_image(const Tensor& images, const AdapterChain* adapters, const Tensor* z) const {
  Tensor x = patch_embed(images);
  if (!adapters) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) x = run_block(i, x);
    return x;
  }
  if (adapters->size() != blocks_.size()) {
    throw ConfigError("adapter chain has " + std::to_string(adapters->size()) + " adapters for " +
                      std::to_string(blocks_.size()) + " blocks");
  }
  auto run = adapters->start(z, images.dim(0));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = run_block(i, x);
    x = adapters->after_block(i, x, run);
  }
  return adapters->finish(x, run);
}

Tensor MiniSam::encode_prompt(const PromptPoint& point) const {
  const std::size_t s = cfg_.image_size;
  if (point.row >= s || point.col >= s) {
    throw ShapeError("prompt point (" + std::to_string(point.row) + ", " + std::to_string(point.col) +
                     ") outside " + std::to_string(s) + "x" + std::to_string(s) + " image");
  }
  const double span = static_cast<double>(s - 1);
  Tensor code({1, cfg_.embed_dim},
              sinusoidal_encoding(static_cast<double>(point.row) / span, static_cast<double>(point.col) / span,
                                  cfg_.embed_dim));
  return ops::add(point.foreground ? fg_token_ : bg_token_, code);
}

Tensor MiniSam::encode_prompts(std::span<const PromptPoint> points) const {
  if (points.empty()) throw ShapeError("encode_prompts: no points");
  std::vector<Tensor> rows;
  rows.reserve(points.size());
  for (const auto& pt : points) rows.push_back(encode_prompt(pt));
  return rows.size() == 1 ? rows.front() : ops::concat(rows, 0);
}

Tensor MiniSam::decode_mask(const Tensor& embeddings, const Tensor& prompt, DecoderTrace* trace) const {
  const std::size_t g = cfg_.grid(), d = cfg_.embed_dim;
  if (embeddings.rank() != 4 || embeddings.dim(1) != g || embeddings.dim(2) != g || embeddings.dim(3) != d) {
    throw ShapeError("decode_mask: expected embeddings [B, " + std::to_string(g) + ", " + std::to_string(g) + ", " +
                     std::to_string(d) + "], got " + shape_str(embeddings.shape()));
  }
  const std::size_t b = embeddings.dim(0);
  if (prompt.rank() != 2 || prompt.dim(1) != d || (prompt.dim(0) != 1 && prompt.dim(0) != b)) {
    throw ShapeError("decode_mask: expected prompt [1 or " + std::to_string(b) + ", " + std::to_string(d) +
                     "], got " + shape_str(prompt.shape()));
  }
  Tensor prompt_tok = ops::reshape(prompt, {prompt.dim(0), 1, d});
  if (prompt.dim(0) != b) prompt_tok = ops::tile(prompt_tok, {b, 1, 1});
  Tensor tokens0 = ops::concat({ops::tile(mask_token_, {b, 1, 1}), prompt_tok}, 1);  // [B, 2, D]

  Tensor img = ops::reshape(embeddings, {b, g * g, d});
  Tensor img_keys = ops::add(img, image_pe_);

  Tensor w_self, w_t2i, w_i2t;
  Tensor t = dec_ln1_(ops::add(tokens0, self_attn_(tokens0, tokens0, tokens0, &w_self)));
  t = dec_ln2_(ops::add(t, token_to_image_(ops::add(t, tokens0), img_keys, img, &w_t2i)));
  t = dec_ln3_(ops::add(t, token_mlp_(t)));
  img = dec_ln4_(ops::add(img, image_to_token_(img, ops::add(t, tokens0), t, &w_i2t)));

  if (trace) *trace = {w_t2i, w_i2t, w_self};

  Tensor mask_tok = ops::reshape(ops::slice(t, 1, 0, 1), {b, d});
  Tensor mask_vec = hyper3_(ops::relu(hyper2_(ops::relu(hyper1_(mask_tok)))));
  Tensor low = ops::matmul(img, ops::reshape(mask_vec, {b, d, 1}));  // [B, T, 1]
  low = ops::reshape(low, {b, g, g});
  return ops::upsample_bilinear(low, cfg_.image_size, cfg_.image_size);
}

void freeze_backbone(ParamStore& store) {
  if (!store.has_prefix(kBackbonePrefix)) throw Error("freeze_backbone: no backbone parameters registered");
  for (const char* prefix : {"sam.encoder.", "sam.prompt.", "sam.decoder."}) store.freeze_prefix(prefix);
}

}  // namespace uasam
