#include "uasam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "uasam/kernels.hpp"

namespace uasam::ops {

using detail::grad_buffer;
using detail::make_result;

namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Output shape plus, for each output element, the source index in a and b.
struct Broadcast {
  Shape out;
  bool same = false;
  std::shared_ptr<std::vector<std::size_t>> ia, ib;
};

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast r;
  if (a == b) {
    r.out = a;
    r.same = true;
    return r;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<long>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<long>(rank - b.size()));
  r.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      shape_fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b) + " at axis " + std::to_string(i));
    }
    r.out[i] = std::max(pa[i], pb[i]);
  }
  auto sa = strides_of(pa), sb = strides_of(pb);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == 1) sa[i] = 0;
    if (pb[i] == 1) sb[i] = 0;
  }
  const std::size_t n = numel(r.out);
  r.ia = std::make_shared<std::vector<std::size_t>>(n);
  r.ib = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offa = 0, offb = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*r.ia)[flat] = offa;
    (*r.ib)[flat] = offb;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      offa += sa[d];
      offb += sb[d];
      if (idx[d] < r.out[d]) break;
      offa -= sa[d] * idx[d];
      offb -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return r;
}

// f(a, b) -> value; da(a, b) and db(a, b) are the partial derivatives.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  auto bc = broadcast(op, a.shape(), b.shape());
  const std::size_t n = numel(bc.out);
  std::vector<double> out(n);
  auto ad = a.data();
  auto bd = b.data();
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
  } else {
    const auto& ia = *bc.ia;
    const auto& ib = *bc.ib;
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[ia[i]], bd[ib[i]]);
  }
  return make_result(op, bc.out, std::move(out), {&a, &b}, [a, b, bc, n, da, db](std::span<const double> g) {
    auto ad = a.data();
    auto bd = b.data();
    if (a.requires_grad()) {
      auto ga = grad_buffer(a);
      if (bc.same) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(ad[i], bd[i]);
      } else {
        const auto& ia = *bc.ia;
        const auto& ib = *bc.ib;
        for (std::size_t i = 0; i < n; ++i) ga[ia[i]] += g[i] * da(ad[ia[i]], bd[ib[i]]);
      }
    }
    if (b.requires_grad()) {
      auto gb = grad_buffer(b);
      if (bc.same) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * db(ad[i], bd[i]);
      } else {
        const auto& ia = *bc.ia;
        const auto& ib = *bc.ib;
        for (std::size_t i = 0; i < n; ++i) gb[ib[i]] += g[i] * db(ad[ia[i]], bd[ib[i]]);
      }
    }
  });
}

// f(x) -> value; df(x) -> derivative.
template <class F, class DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return make_result(op, x.shape(), std::move(out), {&x}, [x, df](std::span<const double> g) {
    auto xd = x.data();
    auto gx = grad_buffer(x);
    for (std::size_t i = 0; i < xd.size(); ++i) gx[i] += g[i] * df(xd[i]);
  });
}

// Splits `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) shape_fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](double v) { return v + value; }, [](double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

Tensor sigmoid(const Tensor& x) {
  auto sig = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary("sigmoid", x, sig, [sig](double v) {
    const double s = sig(v);
    return s * (1.0 - s);
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) shape_fail("clamp", "lo > hi");
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {1}, {s}, {&x}, [x](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("mean", {1}, {s * inv}, {&x}, [x, inv](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (auto& v : gx) v += g[0] * inv;
  });
}

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  auto sp = split_at("sum_axis", x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<long>(axis));
    if (out_shape.empty()) out_shape = {1};
  }
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const double* src = xd.data() + (o * sp.extent + e) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result("sum_axis", out_shape, std::move(out), {&x}, [x, sp](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t e = 0; e < sp.extent; ++e) {
        double* dst = gx.data() + (o * sp.extent + e) * sp.inner;
        const double* src = g.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

// Accumulates in long double so that averaging n identical copies returns
// the original value exactly.
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  auto sp = split_at("mean_axis", x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<long>(axis));
    if (out_shape.empty()) out_shape = {1};
  }
  std::vector<long double> acc(sp.outer * sp.inner, 0.0L);
  auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const double* src = xd.data() + (o * sp.extent + e) * sp.inner;
      long double* dst = acc.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  const auto n = static_cast<long double>(sp.extent);
  std::vector<double> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<double>(acc[i] / n);
  const double inv = 1.0 / static_cast<double>(sp.extent);
  return make_result("mean_axis", out_shape, std::move(out), {&x}, [x, sp, inv](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t e = 0; e < sp.extent; ++e) {
        double* dst = gx.data() + (o * sp.extent + e) * sp.inner;
        const double* src = g.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * inv;
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    shape_fail("matmul", "operands must be at least 2-D, got " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t kb = bs[bs.size() - 2], n = bs.back();
  if (k != kb) shape_fail("matmul", "inner dims differ: " + shape_str(as) + " x " + shape_str(bs));
  const bool shared_b = bs.size() == 2;
  if (!shared_b && !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2)) {
    shape_fail("matmul", "batch dims differ: " + shape_str(as) + " x " + shape_str(bs));
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n);
  if (shared_b) {
    kernels::gemm(false, false, batch * m, n, k, a.data().data(), b.data().data(), out.data(), false);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      kernels::gemm(false, false, m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n,
                    out.data() + i * m * n, false);
    }
  }
  return make_result("matmul", out_shape, std::move(out), {&a, &b},
                     [a, b, m, n, k, batch, shared_b](std::span<const double> g) {
                       if (shared_b) {
                         if (a.requires_grad()) {
                           kernels::gemm(false, true, batch * m, k, n, g.data(), b.data().data(),
                                         grad_buffer(a).data(), true);
                         }
                         if (b.requires_grad()) {
                           kernels::gemm(true, false, k, n, batch * m, a.data().data(), g.data(),
                                         grad_buffer(b).data(), true);
                         }
                         return;
                       }
                       for (std::size_t i = 0; i < batch; ++i) {
                         const double* gi = g.data() + i * m * n;
                         if (a.requires_grad()) {
                           kernels::gemm(false, true, m, k, n, gi, b.data().data() + i * k * n,
                                         grad_buffer(a).data() + i * m * k, true);
                         }
                         if (b.requires_grad()) {
                           kernels::gemm(true, false, k, n, m, a.data().data() + i * m * k, gi,
                                         grad_buffer(b).data() + i * k * n, true);
                         }
                       }
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& s = x.shape();
  if (order.size() != s.size()) shape_fail("permute", "order rank differs from " + shape_str(s));
  std::vector<bool> seen(s.size(), false);
  for (auto o : order) {
    if (o >= s.size() || seen[o]) shape_fail("permute", "order is not a permutation");
    seen[o] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[order[i]];
  const auto in_strides = strides_of(s);
  std::vector<std::size_t> src_stride(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) src_stride[i] = in_strides[order[i]];
  const std::size_t n = x.numel();
  auto src_index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(s.size(), 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*src_index)[flat] = off;
    for (std::size_t d = s.size(); d-- > 0;) {
      ++idx[d];
      off += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      off -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  auto xd = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*src_index)[i]];
  return make_result("permute", out_shape, std::move(out), {&x}, [x, src_index](std::span<const double> g) {
    auto gx = grad_buffer(x);
    const auto& si = *src_index;
    for (std::size_t i = 0; i < si.size(); ++i) gx[si[i]] += g[i];
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) shape_fail("transpose", "needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&x}, [x](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) shape_fail("concat", "axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) shape_fail("concat", "incompatible " + shape_str(s0) + " and " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  auto outer = split_at("concat", out_shape, axis);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * outer.inner);
  const std::size_t row = out_shape[axis] * outer.inner;
  std::vector<double> out(numel(out_shape));
  std::size_t col = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    auto pd = parts[pi].data();
    for (std::size_t o = 0; o < outer.outer; ++o) {
      std::copy_n(pd.data() + o * widths[pi], widths[pi], out.data() + o * row + col);
    }
    col += widths[pi];
  }
  return make_result("concat", out_shape, std::move(out), parts,
                     [parts, widths, row, outer](std::span<const double> g) {
                       std::size_t col = 0;
                       for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                         if (parts[pi].requires_grad()) {
                           auto gp = grad_buffer(parts[pi]);
                           for (std::size_t o = 0; o < outer.outer; ++o) {
                             for (std::size_t j = 0; j < widths[pi]; ++j) {
                               gp[o * widths[pi] + j] += g[o * row + col + j];
                             }
                           }
                         }
                         col += widths[pi];
                       }
                     });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  return concat(parts, parts[0].rank() - 1);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end) {
  auto sp = split_at("slice", x.shape(), axis);
  if (start >= end || end > sp.extent) {
    shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(end) + ") invalid for " +
                            shape_str(x.shape()) + " axis " + std::to_string(axis));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - start;
  const std::size_t width = (end - start) * sp.inner;
  std::vector<double> out(sp.outer * width);
  auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xd.data() + (o * sp.extent + start) * sp.inner, width, out.data() + o * width);
  }
  return make_result("slice", out_shape, std::move(out), {&x}, [x, sp, start, width](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = gx.data() + (o * sp.extent + start) * sp.inner;
      for (std::size_t j = 0; j < width; ++j) dst[j] += g[o * width + j];
    }
  });
}

Tensor tile(const Tensor& x, const std::vector<std::size_t>& reps) {
  const auto& s = x.shape();
  if (reps.size() != s.size()) shape_fail("tile", "reps rank differs from " + shape_str(s));
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reps[i] == 0) shape_fail("tile", "zero repetition");
    out_shape[i] = s[i] * reps[i];
  }
  const auto in_strides = strides_of(s);
  const std::size_t n = numel(out_shape);
  auto src_index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < s.size(); ++d) off += (idx[d] % s[d]) * in_strides[d];
    (*src_index)[flat] = off;
    for (std::size_t d = s.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  auto xd = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*src_index)[i]];
  return make_result("tile", out_shape, std::move(out), {&x}, [x, src_index](std::span<const double> g) {
    auto gx = grad_buffer(x);
    const auto& si = *src_index;
    for (std::size_t i = 0; i < si.size(); ++i) gx[si[i]] += g[i];
  });
}

Tensor softmax(const Tensor& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  auto xd = x.data();
  auto y = std::make_shared<std::vector<double>>(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xd.data() + r * cols;
    double* dst = y->data() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      dst[c] = std::exp(src[c] - mx);
      total += dst[c];
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
  }
  std::vector<double> out = *y;
  return make_result("softmax", x.shape(), std::move(out), {&x}, [x, y, rows, cols](std::span<const double> g) {
    auto gx = grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y->data() + r * cols;
      const double* gr = g.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += yr[c] * (gr[c] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t cols = x.shape().back();
  if (gamma.numel() != cols || beta.numel() != cols) {
    shape_fail("layer_norm", "affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                                 " do not match features of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / cols;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xd.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += src[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (src[c] - mu) * (src[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (src[c] - mu) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gd[c] + bd[c];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                     [x, gamma, beta, xhat, inv_std, rows, cols](std::span<const double> g) {
                       auto gd = gamma.data();
                       if (x.requires_grad()) {
                         auto gx = grad_buffer(x);
                         const double inv_n = 1.0 / static_cast<double>(cols);
                         for (std::size_t r = 0; r < rows; ++r) {
                           const double* h = xhat->data() + r * cols;
                           const double* gr = g.data() + r * cols;
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) {
                             const double gh = gr[c] * gd[c];
                             m1 += gh;
                             m2 += gh * h[c];
                           }
                           m1 *= inv_n;
                           m2 *= inv_n;
                           for (std::size_t c = 0; c < cols; ++c) {
                             gx[r * cols + c] += (*inv_std)[r] * (gr[c] * gd[c] - m1 - h[c] * m2);
                           }
                         }
                       }
                       if (gamma.requires_grad()) {
                         auto gg = grad_buffer(gamma);
                         for (std::size_t i = 0; i < rows * cols; ++i) gg[i % cols] += g[i] * (*xhat)[i];
                       }
                       if (beta.requires_grad()) {
                         auto gb = grad_buffer(beta);
                         for (std::size_t i = 0; i < rows * cols; ++i) gb[i % cols] += g[i];
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) shape_fail("linear", "weight must be 2-D, got " + shape_str(weight.shape()));
  const std::size_t in = weight.dim(0), outf = weight.dim(1);
  if (x.shape().back() != in) {
    shape_fail("linear", "input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  if (bias.numel() != outf) {
    shape_fail("linear", "bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  std::vector<double> out(rows * outf);
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bd.begin(), bd.end(), out.begin() + static_cast<long>(r * outf));
  kernels::gemm(false, false, rows, outf, in, x.data().data(), weight.data().data(), out.data(), true);
  return make_result("linear", out_shape, std::move(out), {&x, &weight, &bias},
                     [x, weight, bias, rows, in, outf](std::span<const double> g) {
                       if (x.requires_grad()) {
                         kernels::gemm(false, true, rows, in, outf, g.data(), weight.data().data(),
                                       grad_buffer(x).data(), true);
                       }
                       if (weight.requires_grad()) {
                         kernels::gemm(true, false, in, outf, rows, x.data().data(), g.data(),
                                       grad_buffer(weight).data(), true);
                       }
                       if (bias.requires_grad()) {
                         auto gb = grad_buffer(bias);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < outf; ++c) gb[c] += g[r * outf + c];
                         }
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(1) != x.dim(1)) {
    shape_fail("conv2d", "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  if (bias.numel() != weight.dim(0)) shape_fail("conv2d", "bias does not match output channels");
  if (stride == 0) shape_fail("conv2d", "stride must be positive");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), kernel = weight.dim(2);
  if (h + 2 * pad < kernel || w + 2 * pad < kernel) shape_fail("conv2d", "kernel larger than padded input");
  const std::size_t oh = kernels::conv_out_extent(h, kernel, stride, pad);
  const std::size_t ow = kernels::conv_out_extent(w, kernel, stride, pad);
  const std::size_t ckk = cin * kernel * kernel;
  const std::size_t plane = oh * ow;
  std::vector<double> out(batch * cout * plane);
  std::vector<double> cols(ckk * plane);
  auto bd = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::im2col(x.data().data() + b * cin * h * w, cin, h, w, kernel, stride, pad, cols.data());
    double* ob = out.data() + b * cout * plane;
    for (std::size_t c = 0; c < cout; ++c) std::fill_n(ob + c * plane, plane, bd[c]);
    kernels::gemm(false, false, cout, plane, ckk, weight.data().data(), cols.data(), ob, true);
  }
  return make_result(
      "conv2d", {batch, cout, oh, ow}, std::move(out), {&x, &weight, &bias},
      [x, weight, bias, batch, cin, h, w, cout, kernel, stride, pad, ckk, plane](std::span<const double> g) {
        std::vector<double> cols(ckk * plane);
        std::vector<double> gcols(ckk * plane);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gb = g.data() + b * cout * plane;
          if (weight.requires_grad()) {
            kernels::im2col(x.data().data() + b * cin * h * w, cin, h, w, kernel, stride, pad, cols.data());
            kernels::gemm(false, true, cout, ckk, plane, gb, cols.data(), grad_buffer(weight).data(), true);
          }
          if (x.requires_grad()) {
            kernels::gemm(true, false, ckk, plane, cout, weight.data().data(), gb, gcols.data(), false);
            kernels::col2im(gcols.data(), cin, h, w, kernel, stride, pad, grad_buffer(x).data() + b * cin * h * w);
          }
          if (bias.requires_grad()) {
            auto gbias = grad_buffer(bias);
            for (std::size_t c = 0; c < cout; ++c) {
              for (std::size_t p = 0; p < plane; ++p) gbias[c] += gb[c * plane + p];
            }
          }
        }
      });
}

std::vector<double> bilinear_weights(std::size_t in, std::size_t out) {
  std::vector<double> m(out * in, 0.0);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    m[o * in + i0] += 1.0 - frac;
    m[o * in + i1] += frac;
  }
  return m;
}

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() < 2) shape_fail("upsample_bilinear", "needs rank >= 2, got " + shape_str(x.shape()));
  if (out_h == 0 || out_w == 0) shape_fail("upsample_bilinear", "zero output extent");
  const std::size_t h = x.shape()[x.rank() - 2], w = x.shape().back();
  const std::size_t batch = x.numel() / (h * w);
  auto uh = std::make_shared<std::vector<double>>(bilinear_weights(h, out_h));
  auto uw = std::make_shared<std::vector<double>>(bilinear_weights(w, out_w));
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape.back() = out_w;
  std::vector<double> out(batch * out_h * out_w);
  std::vector<double> tmp(h * out_w);
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::gemm(false, true, h, out_w, w, x.data().data() + b * h * w, uw->data(), tmp.data(), false);
    kernels::gemm(false, false, out_h, out_w, h, uh->data(), tmp.data(), out.data() + b * out_h * out_w, false);
  }
  return make_result("upsample_bilinear", out_shape, std::move(out), {&x},
                     [x, uh, uw, batch, h, w, out_h, out_w](std::span<const double> g) {
                       auto gx = grad_buffer(x);
                       std::vector<double> tmp(h * out_w);
                       for (std::size_t b = 0; b < batch; ++b) {
                         kernels::gemm(true, false, h, out_w, out_h, uh->data(), g.data() + b * out_h * out_w,
                                       tmp.data(), false);
                         kernels::gemm(false, false, h, w, out_w, tmp.data(), uw->data(), gx.data() + b * h * w,
                                       true);
                       }
                     });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape()) {
    shape_fail("bce_with_logits", shape_str(logits.shape()) + " vs target " + shape_str(target.shape()));
  }
  auto xd = logits.data();
  auto td = target.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    out[i] = std::max(v, 0.0) - v * td[i] + std::log1p(std::exp(-std::abs(v)));
  }
  return make_result("bce_with_logits", logits.shape(), std::move(out), {&logits},
                     [logits, target](std::span<const double> g) {
                       auto xd = logits.data();
                       auto td = target.data();
                       auto gx = grad_buffer(logits);
                       for (std::size_t i = 0; i < xd.size(); ++i) {
                         const double v = xd[i];
                         const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                         gx[i] += g[i] * (s - td[i]);
                       }
                     });
}

}  // namespace uasam::ops
