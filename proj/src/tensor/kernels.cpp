#include "uasam/kernels.hpp"

#include <atomic>
#include <cstring>
#include <vector>

namespace uasam::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::kOpenMP};

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 15;

void transpose_into(const double* src, std::size_t rows, std::size_t cols, std::vector<double>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

// Shared body so the serial and OpenMP versions cannot drift apart.
inline void gemm_row(std::size_t i, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                     bool accumulate) {
  double* crow = c + i * n;
  if (!accumulate) std::memset(crow, 0, n * sizeof(double));
  const double* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void im2col_row(std::size_t row, const double* image, std::size_t h, std::size_t w, std::size_t kernel,
                       std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w,
                       double* columns) {
  const std::size_t ch = row / (kernel * kernel);
  const std::size_t ky = (row / kernel) % kernel;
  const std::size_t kx = row % kernel;
  const double* plane = image + ch * h * w;
  double* dst = columns + row * out_h * out_w;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
      const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w);
      dst[oy * out_w + ox] = inside ? plane[iy * static_cast<long>(w) + ix] : 0.0;
    }
  }
}

inline void col2im_channel(std::size_t ch, const double* columns, std::size_t h, std::size_t w,
                           std::size_t kernel, std::size_t stride, std::size_t pad, std::size_t out_h,
                           std::size_t out_w, double* image) {
  double* plane = image + ch * h * w;
  for (std::size_t ky = 0; ky < kernel; ++ky) {
    for (std::size_t kx = 0; kx < kernel; ++kx) {
      const std::size_t row = (ch * kernel + ky) * kernel + kx;
      const double* src = columns + row * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
          if (ix < 0 || ix >= static_cast<long>(w)) continue;
          plane[iy * static_cast<long>(w) + ix] += src[oy * out_w + ox];
        }
      }
    }
  }
}

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(i, n, k, a, b, c, accumulate);
}

void im2col(const double* image, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* columns) {
  const auto out_h = conv_out_extent(h, kernel, stride, pad);
  const auto out_w = conv_out_extent(w, kernel, stride, pad);
  for (std::size_t row = 0; row < channels * kernel * kernel; ++row) {
    im2col_row(row, image, h, w, kernel, stride, pad, out_h, out_w, columns);
  }
}

void col2im(const double* columns, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* image) {
  const auto out_h = conv_out_extent(h, kernel, stride, pad);
  const auto out_w = conv_out_extent(w, kernel, stride, pad);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    col2im_channel(ch, columns, h, w, kernel, stride, pad, out_h, out_w, image);
  }
}

}  // namespace serial

namespace omp {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long i = 0; i < rows; ++i) gemm_row(static_cast<std::size_t>(i), n, k, a, b, c, accumulate);
}

void im2col(const double* image, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* columns) {
  const auto out_h = conv_out_extent(h, kernel, stride, pad);
  const auto out_w = conv_out_extent(w, kernel, stride, pad);
  const long rows = static_cast<long>(channels * kernel * kernel);
#pragma omp parallel for schedule(static) if (channels * kernel * kernel * out_h * out_w >= kParallelWork)
  for (long row = 0; row < rows; ++row) {
    im2col_row(static_cast<std::size_t>(row), image, h, w, kernel, stride, pad, out_h, out_w, columns);
  }
}

void col2im(const double* columns, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* image) {
  const auto out_h = conv_out_extent(h, kernel, stride, pad);
  const auto out_w = conv_out_extent(w, kernel, stride, pad);
  const long chans = static_cast<long>(channels);
#pragma omp parallel for schedule(static) if (channels * kernel * kernel * out_h * out_w >= kParallelWork)
  for (long ch = 0; ch < chans; ++ch) {
    col2im_channel(static_cast<std::size_t>(ch), columns, h, w, kernel, stride, pad, out_h, out_w, image);
  }
}

}  // namespace omp

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  std::vector<double> at;
  std::vector<double> bt;
  if (trans_a) {
    transpose_into(a, k, m, at);
    a = at.data();
  }
  if (trans_b) {
    transpose_into(b, n, k, bt);
    b = bt.data();
  }
  if (backend() == Backend::kOpenMP) {
    omp::gemm_nn(m, n, k, a, b, c, accumulate);
  } else {
    serial::gemm_nn(m, n, k, a, b, c, accumulate);
  }
}

void im2col(const double* image, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* columns) {
  if (backend() == Backend::kOpenMP) {
    omp::im2col(image, channels, h, w, kernel, stride, pad, columns);
  } else {
    serial::im2col(image, channels, h, w, kernel, stride, pad, columns);
  }
}

void col2im(const double* columns, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* image) {
  if (backend() == Backend::kOpenMP) {
    omp::col2im(columns, channels, h, w, kernel, stride, pad, image);
  } else {
    serial::col2im(columns, channels, h, w, kernel, stride, pad, image);
  }
}

}  // namespace uasam::kernels
