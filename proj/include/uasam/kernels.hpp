#pragma once

#include <cstddef>

// Dense inner loops behind the tensor ops. Each kernel has a plain serial
// reference and an OpenMP version. The OpenMP versions partition work by
// output element only, so both produce bit-identical results.

namespace uasam::kernels {

enum class Backend { kSerial, kOpenMP };

void set_backend(Backend backend);
Backend backend();

/// Row-major C[m x n] (+)= op(A) * op(B), where op transposes when the flag is set.
/// A is m x k (or k x m when trans_a), B is k x n (or n x k when trans_b).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

/// Unfolds one image [channels x h x w] into columns [channels*kernel*kernel x out_h*out_w].
void im2col(const double* image, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* columns);

/// Adjoint of im2col: scatters columns back (accumulating) into an image buffer.
void col2im(const double* columns, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* image);

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace serial {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate);
void im2col(const double* image, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* columns);
void col2im(const double* columns, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* image);
}  // namespace serial

namespace omp {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate);
void im2col(const double* image, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* columns);
void col2im(const double* columns, std::size_t channels, std::size_t h, std::size_t w, std::size_t kernel,
            std::size_t stride, std::size_t pad, double* image);
}  // namespace omp

}  // namespace uasam::kernels
