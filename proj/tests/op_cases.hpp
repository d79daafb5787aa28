#pragma once

// Table of every differentiable op at random small shapes (extents <= 5),
// shared by the unit suite and the acceptance suite.

#include <functional>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "uasam/ops.hpp"

namespace uasam::testing {

struct OpCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
};

inline std::vector<OpCase> make_op_cases(std::uint64_t seed) {
  Rng rng(seed);
  auto d2 = [&rng]() { return static_cast<std::size_t>(2 + rng.below(4)); };
  auto r = [&rng](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(s), rng, lo, hi); };

  std::vector<OpCase> cases;
  const std::size_t a = d2(), b = d2(), c = d2();
  cases.push_back({"add", {r({a, b}), r({a, b})}, [](auto& in) { return ops::add(in[0], in[1]); }});
  cases.push_back({"add_broadcast", {r({a, b, c}), r({c})}, [](auto& in) { return ops::add(in[0], in[1]); }});
  cases.push_back({"sub_broadcast", {r({a, 1, c}), r({b, c})}, [](auto& in) { return ops::sub(in[0], in[1]); }});
  cases.push_back({"mul_broadcast", {r({a, b}), r({a, 1})}, [](auto& in) { return ops::mul(in[0], in[1]); }});
  cases.push_back({"div", {r({a, b}), r({a, b}, 0.5, 1.5)}, [](auto& in) { return ops::div(in[0], in[1]); }});
  cases.push_back({"scale", {r({a, b})}, [](auto& in) { return ops::scale(in[0], -1.7); }});
  cases.push_back({"add_scalar", {r({a})}, [](auto& in) { return ops::add_scalar(in[0], 0.3); }});
  cases.push_back({"neg", {r({a, b})}, [](auto& in) { return ops::neg(in[0]); }});
  cases.push_back({"square", {r({a, b})}, [](auto& in) { return ops::square(in[0]); }});
  cases.push_back({"exp", {r({a, b})}, [](auto& in) { return ops::exp(in[0]); }});
  cases.push_back({"log", {r({a, b}, 0.5, 2.0)}, [](auto& in) { return ops::log(in[0]); }});
  cases.push_back({"relu", {r({a, b, c})}, [](auto& in) { return ops::relu(in[0]); }});
  cases.push_back({"gelu", {r({a, b, c}, -3.0, 3.0)}, [](auto& in) { return ops::gelu(in[0]); }});
  cases.push_back({"sigmoid", {r({a, b}, -4.0, 4.0)}, [](auto& in) { return ops::sigmoid(in[0]); }});
  cases.push_back({"clamp", {r({a, b, c})}, [](auto& in) { return ops::clamp(in[0], -0.5, 0.5); }});
  cases.push_back({"sum", {r({a, b})}, [](auto& in) { return ops::sum(in[0]); }});
  cases.push_back({"mean", {r({a, b})}, [](auto& in) { return ops::mean(in[0]); }});
  cases.push_back({"sum_axis", {r({a, b, c})}, [](auto& in) { return ops::sum_axis(in[0], 1, true); }});
  cases.push_back({"mean_axis", {r({a, b, c})}, [](auto& in) { return ops::mean_axis(in[0], 2, false); }});
  cases.push_back({"matmul", {r({a, b}), r({b, c})}, [](auto& in) { return ops::matmul(in[0], in[1]); }});
  cases.push_back({"matmul_batched", {r({2, a, b}), r({2, b, c})}, [](auto& in) { return ops::matmul(in[0], in[1]); }});
  cases.push_back({"matmul_shared_rhs", {r({2, a, b}), r({b, c})}, [](auto& in) { return ops::matmul(in[0], in[1]); }});
  cases.push_back({"transpose", {r({a, b, c})}, [](auto& in) { return ops::transpose(in[0]); }});
  cases.push_back({"permute", {r({a, b, c})}, [](auto& in) { return ops::permute(in[0], {2, 0, 1}); }});
  cases.push_back({"reshape", {r({a, b, c})}, [a, b, c](auto& in) { return ops::reshape(in[0], {c, a * b}); }});
  cases.push_back({"concat", {r({a, b, c}), r({a, 2, c})}, [](auto& in) { return ops::concat({in[0], in[1]}, 1); }});
  cases.push_back({"concat_last", {r({a, b}), r({a, c})}, [](auto& in) { return ops::concat_last({in[0], in[1]}); }});
  cases.push_back({"slice", {r({a, b, 4})}, [](auto& in) { return ops::slice(in[0], 2, 1, 3); }});
  cases.push_back({"tile", {r({a, 1, c})}, [b](auto& in) { return ops::tile(in[0], {1, b, 2}); }});
  cases.push_back({"softmax", {r({a, b, c}, -2.0, 2.0)}, [](auto& in) { return ops::softmax(in[0]); }});
  cases.push_back({"layer_norm", {r({a, b, c}), r({c}, 0.5, 1.5), r({c})},
                   [](auto& in) { return ops::layer_norm(in[0], in[1], in[2]); }});
  cases.push_back({"linear", {r({a, b, c}), r({c, a}), r({a})},
                   [](auto& in) { return ops::linear(in[0], in[1], in[2]); }});
  cases.push_back({"conv2d", {r({2, 2, 5, 5}), r({3, 2, 3, 3}), r({3})},
                   [](auto& in) { return ops::conv2d(in[0], in[1], in[2], 2, 1); }});
  cases.push_back({"upsample_bilinear", {r({2, 3, 4})}, [](auto& in) { return ops::upsample_bilinear(in[0], 5, 7); }});
  Tensor target = r({a, b}, 0.0, 1.0);
  {
    auto t = target.mutable_data();
    for (auto& v : t) v = v > 0.5 ? 1.0 : 0.0;
  }
  cases.push_back({"bce_with_logits", {r({a, b}, -3.0, 3.0)},
                   [target](auto& in) { return ops::bce_with_logits(in[0], target); }});
  return cases;
}

}  // namespace uasam::testing
