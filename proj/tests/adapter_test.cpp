#include <gtest/gtest.h>

#include "test_util.hpp"
#include "uasam/adapter.hpp"
#include "uasam/grad_check.hpp"

using namespace uasam;
using uasam::testing::bit_equal;
using uasam::testing::max_abs_diff;
using uasam::testing::random_tensor;
using uasam::testing::randomize;

namespace {

using Vec = std::vector<double>;

Vec lin(const Vec& x, const nn::Linear& l) {
  const std::size_t in = l.in_features(), out = l.out_features();
  Vec y(l.out_features(), 0.0);
  if (l.bias.defined()) y.assign(l.bias.data().begin(), l.bias.data().end());
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < out; ++j) y[j] += x[i] * l.weight.at(i * out + j);
  }
  return y;
}

Vec relu(Vec v) {
  for (auto& x : v) x = x > 0 ? x : 0;
  return v;
}

Vec mlp(const Vec& x, const nn::Mlp& m) { return lin(relu(lin(x, m.fc1)), m.fc2); }

Vec row(const Tensor& t, std::size_t r) {
  const std::size_t w = t.dim(t.rank() - 1);
  return Vec(t.data().begin() + static_cast<std::ptrdiff_t>(r * w), t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
}

// Direct per-row evaluation of the CMSM steps, written without tensor ops.
struct CmsmOracle {
  std::vector<Vec> feature;  // per batch row, dim
  Vec p_next;
};

CmsmOracle cmsm_oracle(const AdapterState& s, const Tensor& p, const Tensor& z) {
  CmsmOracle o;
  const Vec pp = mlp(row(p, 0), *s.mlp_a);
  const Vec query = lin(pp, *s.w11);
  const Vec cond = lin(pp, *s.w12);
  for (std::size_t b = 0; b < z.dim(0); ++b) {
    const Vec zb = row(z, b);
    const Vec key = lin(zb, *s.w21);
    double score = 0;
    for (std::size_t c = 0; c < key.size(); ++c) score += key[c] * query[c];
    score = score > 0 ? score : 0;
    Vec zm = lin(zb, *s.w22);
    Vec f(zm.size());
    for (std::size_t c = 0; c < f.size(); ++c) {
      const double v = zm[c] * score;
      f[c] = (v > 0 ? v : 0) * cond[c];
    }
    o.feature.push_back(mlp(f, *s.mlp_b));
  }
  if (s.mlp_c) o.p_next = mlp(cond, *s.mlp_c);
  return o;
}

BackboneConfig backbone(std::size_t blocks, std::size_t dim, std::size_t image, std::size_t patch) {
  BackboneConfig b;
  b.num_blocks = blocks;
  b.embed_dim = dim;
  b.image_size = image;
  b.patch_size = patch;
  b.num_heads = 2;
  b.decoder_mlp_ratio = 2.0;
  return b;
}

}  // namespace

TEST(Cmsm, ShapesUnderReferenceConfig) {
  // B=2, L=4, C=6, H=W=8, ratio 0.25, D=32.
  ParamStore store;
  Rng rng(1);
  AdapterConfig cfg;
  cfg.latent_dim = 6;
  AdapterChain chain(cfg, backbone(4, 32, 32, 4), store, rng);
  Tensor z = random_tensor({2, 6}, rng);
  auto out = cmsm(chain.adapter(0), chain.p0(), z, 8, 8);
  EXPECT_EQ(out.feature.shape(), (Shape{2, 8, 8, 8}));
  EXPECT_EQ(out.p_next.shape(), (Shape{1, 4}));
}

TEST(Cmsm, MatchesDirectEvaluation) {
  ParamStore store;
  Rng rng(2);
  AdapterConfig cfg;
  cfg.latent_dim = 5;
  AdapterChain chain(cfg, backbone(3, 16, 16, 4), store, rng);
  randomize(store, "adapter.", rng);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor z = random_tensor({3, 5}, rng, -2, 2);
    Tensor p = random_tensor({1, 3}, rng);
    const auto& s = chain.adapter(trial % 2);
    auto out = cmsm(s, p, z, 4, 4);
    auto want = cmsm_oracle(s, p, z);
    const std::size_t dim = out.feature.dim(3);
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t pos = 0; pos < 16; ++pos) {
        for (std::size_t j = 0; j < dim; ++j) {
          EXPECT_NEAR(out.feature.at((b * 16 + pos) * dim + j), want.feature[b][j], 1e-12);
        }
      }
    }
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out.p_next.at(j), want.p_next[j], 1e-12);
  }
}

TEST(Cmsm, ZeroLatentGivesMlpBOfZero) {
  ParamStore store;
  Rng rng(3);
  AdapterConfig cfg;
  AdapterChain chain(cfg, BackboneConfig{}, store, rng);
  const auto& s = chain.adapter(1);
  auto out = cmsm(s, random_tensor({1, 4}, rng), Tensor::zeros({2, 6}), 8, 8);
  const Vec want = mlp(Vec(6, 0.0), *s.mlp_b);
  for (std::size_t i = 0; i < out.feature.numel(); ++i) EXPECT_DOUBLE_EQ(out.feature.at(i), want[i % want.size()]);
}

TEST(Cmsm, FeatureIsSpatiallyConstant) {
  ParamStore store;
  Rng rng(4);
  AdapterChain chain(AdapterConfig{}, BackboneConfig{}, store, rng);
  randomize(store, "adapter.", rng);
  auto out = cmsm(chain.adapter(0), chain.p0(), random_tensor({2, 6}, rng), 8, 8);
  const std::size_t dim = out.feature.dim(3);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t pos = 1; pos < 64; ++pos) {
      for (std::size_t j = 0; j < dim; ++j) {
        EXPECT_EQ(out.feature.at((b * 64 + pos) * dim + j), out.feature.at(b * 64 * dim + j));
      }
    }
  }
}

TEST(Cmsm, PositionUpdateIgnoresLatent) {
  ParamStore store;
  Rng rng(5);
  AdapterChain chain(AdapterConfig{}, BackboneConfig{}, store, rng);
  randomize(store, "adapter.", rng);
  Tensor p = random_tensor({1, 4}, rng);
  auto a = cmsm(chain.adapter(0), p, random_tensor({2, 6}, rng), 8, 8);
  auto b = cmsm(chain.adapter(0), p, random_tensor({2, 6}, rng, -3, 3), 8, 8);
  EXPECT_TRUE(bit_equal(a.p_next, b.p_next));
  EXPECT_GT(max_abs_diff(a.feature, b.feature), 0.0);
}

TEST(Adapter, ZeroInitIsIdentity) {
  ParamStore store;
  Rng rng(6);
  AdapterChain chain(AdapterConfig{}, BackboneConfig{}, store, rng);
  Tensor x = random_tensor({2, 8, 8, 32}, rng);
  auto out = adapter_forward(chain.adapter(0), x, chain.p0(), random_tensor({2, 6}, rng));
  EXPECT_TRUE(bit_equal(out.stream, x));
}

TEST(Adapter, DistinctLatentsChangeOutput) {
  ParamStore store;
  Rng rng(7);
  AdapterChain chain(AdapterConfig{}, BackboneConfig{}, store, rng);
  randomize(store, "adapter.", rng);
  Tensor x = random_tensor({2, 8, 8, 32}, rng);
  auto a = adapter_forward(chain.adapter(0), x, chain.p0(), random_tensor({2, 6}, rng));
  auto b = adapter_forward(chain.adapter(0), x, chain.p0(), random_tensor({2, 6}, rng));
  EXPECT_GT(max_abs_diff(a.stream, b.stream), 0.0);
}

TEST(Adapter, ResidualStructure) {
  // x_out - x == up(concat(relu(down x), f_i)).
  ParamStore store;
  Rng rng(8);
  AdapterChain chain(AdapterConfig{}, BackboneConfig{}, store, rng);
  randomize(store, "adapter.", rng);
  const auto& s = chain.adapter(0);
  Tensor x = random_tensor({1, 8, 8, 32}, rng);
  Tensor z = random_tensor({1, 6}, rng);
  auto out = adapter_forward(s, x, chain.p0(), z);
  auto feat = cmsm_oracle(s, chain.p0(), z).feature[0];
  for (std::size_t pos = 0; pos < 64; pos += 9) {
    Vec h = relu(lin(row(x, pos), s.down));
    h.insert(h.end(), feat.begin(), feat.end());
    Vec delta = lin(h, s.up);
    for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(out.stream.at(pos * 32 + j) - x.at(pos * 32 + j), delta[j], 1e-12);
  }
}

TEST(Adapter, GradientWrtPosition) {
  ParamStore store;
  Rng rng(9);
  AdapterConfig cfg;
  cfg.latent_dim = 3;
  AdapterChain chain(cfg, backbone(2, 8, 8, 2), store, rng);
  randomize(store, "adapter.", rng);
  // Only p_0 is checked here.
  for (const auto& name : store.names()) {
    if (name != "adapter.0.p") store.freeze_prefix(name);
  }
  Tensor x = random_tensor({2, 4, 4, 8}, rng);
  Tensor z = random_tensor({2, 3}, rng);
  auto result = grad_check(
      [&] { return uasam::testing::weighted_sum(adapter_forward(chain.adapter(0), x, chain.p0(), z).stream); }, store);
  EXPECT_EQ(result.checked_tensors, 1u);
  EXPECT_LT(result.max_relative_error, 1e-4);
}

TEST(Adapter, AllCmsmGradients) {
  ParamStore store;
  Rng rng(10);
  AdapterConfig cfg;
  cfg.latent_dim = 3;
  AdapterChain chain(cfg, backbone(2, 8, 8, 2), store, rng);
  randomize(store, "adapter.", rng);
  Tensor x = random_tensor({2, 4, 4, 8}, rng);
  Tensor z = random_tensor({2, 3}, rng);
  auto loss = [&] {
    auto a = adapter_forward(chain.adapter(0), x, chain.p0(), z);
    auto b = adapter_forward(chain.adapter(1), a.stream, a.p_next, z);
    return uasam::testing::weighted_sum(b.stream);
  };
  auto result = grad_check(loss, store);
  // Every weight except the unused recon branch and the last adapter's mlp_c.
  EXPECT_GE(result.checked_tensors, 30u);
  EXPECT_LT(result.max_relative_error, 1e-4) << result.worst_parameter << "[" << result.worst_index << "] "
                                             << result.worst_analytic << " vs " << result.worst_numeric;
}

TEST(Adapter, LastAdapterMerge) {
  ParamStore store;
  Rng rng(11);
  nn::Linear recon = nn::make_linear(store, "r", 6, 32, rng, nn::Init::kZero);
  Tensor x = random_tensor({2, 8, 8, 32}, rng);
  Tensor z = random_tensor({2, 6}, rng);
  EXPECT_TRUE(bit_equal(last_adapter_merge(x, z, recon), x));

  randomize(store, "r", rng);
  Tensor out = last_adapter_merge(x, Tensor::zeros({2, 6}), recon);
  EXPECT_EQ(out.shape(), x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_DOUBLE_EQ(out.at(i), x.at(i) + recon.bias.at(i % 32));
  EXPECT_THROW(last_adapter_merge(x, Tensor::zeros({3, 6}), recon), ShapeError);
}

TEST(Adapter, WmsPath) {
  ParamStore store;
  Rng rng(12);
  AdapterConfig cfg;
  cfg.mode = AdapterMode::kWms;
  AdapterChain chain(cfg, BackboneConfig{}, store, rng);
  randomize(store, "adapter.", rng);
  EXPECT_FALSE(store.contains("adapter.0.w11.weight"));
  Tensor x = random_tensor({2, 8, 8, 32}, rng);
  Tensor z = random_tensor({2, 6}, rng);
  auto a = wms_forward(chain.adapter(0), x, chain.p0(), z);
  auto b = wms_forward(chain.adapter(0), x, chain.p0(), z);
  EXPECT_TRUE(bit_equal(a.stream, b.stream));
  EXPECT_TRUE(bit_equal(a.p_next, b.p_next));
  EXPECT_EQ(a.stream.shape(), x.shape());
  EXPECT_EQ(a.p_next.shape(), (Shape{1, 4}));

  // f = concat(z, p') through mlp_b, with p' from mlp_a.
  const auto& s = chain.adapter(0);
  Vec f = row(z, 1);
  Vec pp = mlp(row(chain.p0(), 0), *s.mlp_a);
  f.insert(f.end(), pp.begin(), pp.end());
  Vec feat = mlp(f, *s.mlp_b);
  Vec h = relu(lin(row(x, 64 + 5), s.down));
  h.insert(h.end(), feat.begin(), feat.end());
  Vec delta = lin(h, s.up);
  for (std::size_t j = 0; j < 32; ++j) {
    EXPECT_NEAR(a.stream.at((64 + 5) * 32 + j) - x.at((64 + 5) * 32 + j), delta[j], 1e-12);
  }
}

TEST(AdapterChain, ThreadsPositionsAndKeepsIdentityAtInit) {
  ParamStore store;
  Rng rng(13);
  BackboneConfig bb;
  MiniSam sam(bb, store, rng);
  AdapterChain chain(AdapterConfig{}, bb, store, rng);
  Tensor images = random_tensor({2, 1, 32, 32}, rng, 0, 1);
  Tensor z = random_tensor({2, 6}, rng);
  EXPECT_TRUE(bit_equal(sam.encode_image(images, &chain, &z), sam.encode_image(images)));

  auto run = chain.start(&z, 2);
  Tensor x = sam.patch_embed(images);
  for (std::size_t i = 0; i < bb.num_blocks; ++i) x = chain.after_block(i, sam.run_block(i, x), run);
  EXPECT_EQ(run.positions.size(), bb.num_blocks);
  for (const auto& p : run.positions) EXPECT_EQ(p.shape(), (Shape{1, bb.num_blocks}));
  EXPECT_TRUE(bit_equal(run.positions.front(), chain.p0()));

  randomize(store, "adapter.", rng);
  Tensor z2 = random_tensor({2, 6}, rng);
  EXPECT_GT(max_abs_diff(sam.encode_image(images, &chain, &z), sam.encode_image(images, &chain, &z2)), 0.0);
}

TEST(AdapterChain, MissingLatentIsAnError) {
  ParamStore store;
  Rng rng(14);
  BackboneConfig bb;
  MiniSam sam(bb, store, rng);
  AdapterChain chain(AdapterConfig{}, bb, store, rng);
  Tensor images = random_tensor({1, 1, 32, 32}, rng);
  EXPECT_THROW(sam.encode_image(images, &chain, nullptr), ConfigError);
  Tensor wrong = Tensor::zeros({1, 5});
  EXPECT_THROW(sam.encode_image(images, &chain, &wrong), ShapeError);
}

TEST(AdapterChain, ModesRegisterOnlyWhatTheyUse) {
  auto names_for = [](AdapterMode mode, LastAdapterRule rule) {
    ParamStore store;
    Rng rng(15);
    AdapterConfig cfg;
    cfg.mode = mode;
    cfg.last_rule = rule;
    AdapterChain chain(cfg, BackboneConfig{}, store, rng);
    return store;
  };
  auto plain = names_for(AdapterMode::kPlain, LastAdapterRule::kSupplement);
  EXPECT_FALSE(plain.contains("adapter.0.p"));
  EXPECT_FALSE(plain.has_prefix("adapter.recon"));
  EXPECT_EQ(plain.get("adapter.0.up.weight").dim(0), 8u);

  auto cm = names_for(AdapterMode::kCmsm, LastAdapterRule::kSupplement);
  EXPECT_TRUE(cm.contains("adapter.0.p"));
  EXPECT_FALSE(cm.contains("adapter.1.p"));
  EXPECT_TRUE(cm.contains("adapter.3.mlp_c.fc1.weight"));
  EXPECT_TRUE(cm.contains("adapter.recon.weight"));
  EXPECT_EQ(cm.get("adapter.0.up.weight").dim(0), 16u);

  auto replace = names_for(AdapterMode::kCmsm, LastAdapterRule::kReplace);
  EXPECT_FALSE(replace.contains("adapter.3.mlp_c.fc1.weight"));
  EXPECT_TRUE(replace.contains("adapter.2.mlp_c.fc1.weight"));

  auto off = names_for(AdapterMode::kCmsm, LastAdapterRule::kOff);
  EXPECT_FALSE(off.has_prefix("adapter.recon"));

  auto zonly = names_for(AdapterMode::kZOnly, LastAdapterRule::kSupplement);
  EXPECT_FALSE(zonly.contains("adapter.0.p"));
  EXPECT_TRUE(zonly.contains("adapter.0.mlp_b.fc1.weight"));
  auto ponly = names_for(AdapterMode::kPOnly, LastAdapterRule::kSupplement);
  EXPECT_TRUE(ponly.contains("adapter.0.p"));
  EXPECT_FALSE(ponly.has_prefix("adapter.recon"));
}

TEST(AdapterConfig, ParsingAndValidation) {
  EXPECT_EQ(parse_adapter_mode("cmsm"), AdapterMode::kCmsm);
  EXPECT_EQ(parse_adapter_mode(to_string(AdapterMode::kWms)), AdapterMode::kWms);
  EXPECT_THROW(parse_adapter_mode("nope"), ConfigError);
  EXPECT_THROW(parse_last_adapter_rule("sometimes"), ConfigError);
  AdapterConfig cfg;
  EXPECT_EQ(cfg.feature_dim(32), 8u);
  EXPECT_EQ(cfg.bottleneck_dim(32), 8u);
  cfg.ratio = 0;
  EXPECT_THROW(cfg.validate(32), ConfigError);
  cfg.ratio = 1.5;
  EXPECT_THROW(cfg.validate(32), ConfigError);
}
