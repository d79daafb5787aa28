#include "uasam/nn.hpp"

#include <cmath>

namespace uasam::nn {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

Tensor activate(const Tensor& x, Activation act) { return act == Activation::kGelu ? ops::gelu(x) : ops::relu(x); }

Linear make_linear(ParamStore& store, const std::string& path, std::size_t in, std::size_t out, Rng& rng,
                   Init init, bool with_bias) {
  Linear l;
  if (init == Init::kZero) {
    l.weight = store.add(path + ".weight", Tensor::zeros({in, out}));
    if (with_bias) l.bias = store.add(path + ".bias", Tensor::zeros({out}));
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    l.weight = store.add(path + ".weight", uniform_tensor({in, out}, bound, rng));
    if (with_bias) l.bias = store.add(path + ".bias", uniform_tensor({out}, bound, rng));
  }
  return l;
}

LayerNorm make_layer_norm(ParamStore& store, const std::string& path, std::size_t features) {
  return {store.add(path + ".gamma", Tensor::full({features}, 1.0)), store.add(path + ".beta", Tensor::zeros({features}))};
}

Mlp make_mlp(ParamStore& store, const std::string& path, std::size_t in, std::size_t hidden, std::size_t out,
             Activation act, Rng& rng) {
  Mlp m;
  m.fc1 = make_linear(store, path + ".fc1", in, hidden, rng);
  m.fc2 = make_linear(store, path + ".fc2", hidden, out, rng);
  m.act = act;
  return m;
}

Attention make_attention(ParamStore& store, const std::string& path, std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention " + path + ": dim " + std::to_string(dim) + " not divisible by heads");
  }
  Attention a;
  a.q = make_linear(store, path + ".q", dim, dim, rng);
  a.k = make_linear(store, path + ".k", dim, dim, rng);
  a.v = make_linear(store, path + ".v", dim, dim, rng);
  a.o = make_linear(store, path + ".o", dim, dim, rng);
  a.heads = heads;
  return a;
}

Tensor Attention::operator()(const Tensor& query, const Tensor& key, const Tensor& value, Tensor* weights) const {
  if (query.rank() != 3 || key.rank() != 3 || value.rank() != 3) {
    throw ShapeError("attention: expected [B, T, D] inputs, got " + shape_str(query.shape()) + ", " +
                     shape_str(key.shape()) + ", " + shape_str(value.shape()));
  }
  const std::size_t batch = query.dim(0), tq = query.dim(1), tk = key.dim(1);
  const std::size_t dim = q.out_features(), dh = dim / heads;
  auto split = [&](const Tensor& t, std::size_t len) {
    Tensor r = ops::reshape(t, {batch, len, heads, dh});
    r = ops::permute(r, {0, 2, 1, 3});
    return ops::reshape(r, {batch * heads, len, dh});
  };
  Tensor qh = split(q(query), tq);
  Tensor kh = split(k(key), tk);
  Tensor vh = split(v(value), tk);
  Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = ops::softmax(scores);
  if (weights) *weights = attn;
  Tensor out = ops::matmul(attn, vh);
  out = ops::reshape(out, {batch, heads, tq, dh});
  out = ops::permute(out, {0, 2, 1, 3});
  return o(ops::reshape(out, {batch, tq, dim}));
}

Conv2d make_conv2d(ParamStore& store, const std::string& path, std::size_t in_ch, std::size_t out_ch,
                   std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel));
  Conv2d c;
  c.weight = store.add(path + ".weight", uniform_tensor({out_ch, in_ch, kernel, kernel}, bound, rng));
  c.bias = store.add(path + ".bias", uniform_tensor({out_ch}, bound, rng));
  c.stride = stride;
  c.pad = pad;
  return c;
}

}  // namespace uasam::nn
