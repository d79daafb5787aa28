#pragma once

#include <cstddef>
#include <string>

#include "uasam/ops.hpp"
#include "uasam/param_store.hpp"
#include "uasam/rng.hpp"

namespace uasam::nn {

enum class Init { kUniform, kZero };
enum class Activation { kRelu, kGelu };

Tensor activate(const Tensor& x, Activation act);

/// y = x W + b with W stored [in, out]. An undefined bias means no bias term.
struct Linear {
  Tensor weight;
  Tensor bias;
  Tensor operator()(const Tensor& x) const {
    return ops::linear(x, weight, bias.defined() ? bias : Tensor::zeros({weight.dim(1)}));
  }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

/// Registers `<path>.weight` and, when `with_bias`, `<path>.bias`. Uniform
/// init draws from U(-1/sqrt(in), 1/sqrt(in)).
Linear make_linear(ParamStore& store, const std::string& path, std::size_t in, std::size_t out, Rng& rng,
                   Init init = Init::kUniform, bool with_bias = true);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }
};

LayerNorm make_layer_norm(ParamStore& store, const std::string& path, std::size_t features);

/// Two linear layers with an activation between them.
struct Mlp {
  Linear fc1;
  Linear fc2;
  Activation act = Activation::kRelu;
  Tensor operator()(const Tensor& x) const { return fc2(activate(fc1(x), act)); }
};

Mlp make_mlp(ParamStore& store, const std::string& path, std::size_t in, std::size_t hidden, std::size_t out,
             Activation act, Rng& rng);

/// Multi-head scaled dot-product attention over [B, T, D] sequences.
struct Attention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  /// `weights`, when given, receives the softmax matrix [B*heads, Tq, Tk].
  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value, Tensor* weights = nullptr) const;
};

Attention make_attention(ParamStore& store, const std::string& path, std::size_t dim, std::size_t heads, Rng& rng);

struct Conv2d {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t pad = 0;
  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

Conv2d make_conv2d(ParamStore& store, const std::string& path, std::size_t in_ch, std::size_t out_ch,
                   std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng);

}  // namespace uasam::nn
