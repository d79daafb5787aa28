#pragma once

#include <cstddef>
#include <vector>

#include "uasam/tensor.hpp"

// Differentiable tensor ops. Every op returns a new tensor, leaves its inputs
// untouched, throws ShapeError naming itself and the offending shapes, and
// throws NumericError when its output is not finite.

namespace uasam::ops {

// Elementwise binary ops broadcast numpy-style (trailing dims aligned).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Gradient is zero outside [lo, hi].
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim);
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim);

/// [..., m, k] x [..., k, n]. The right operand may also be plain 2-D [k, n],
/// in which case it is shared across the leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor concat_last(const std::vector<Tensor>& parts);
/// Elements [start, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end);
/// Repeats x `reps[i]` times along axis i (numpy tile with equal rank).
Tensor tile(const Tensor& x, const std::vector<std::size_t>& reps);

/// Softmax over the last axis.
Tensor softmax(const Tensor& x);
/// Normalizes the last axis, then applies gamma and beta (both [features]).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// x[..., in] * weight[in, out] + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// x [B, Cin, H, W], weight [Cout, Cin, k, k], bias [Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad);
/// Bilinear resize of the last two axes (half-pixel centers, edge clamped).
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);
/// Elementwise numerically stable BCE; target is constant (no gradient).
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

/// Interpolation matrix [out x in] used by upsample_bilinear.
std::vector<double> bilinear_weights(std::size_t in, std::size_t out);

}  // namespace uasam::ops
