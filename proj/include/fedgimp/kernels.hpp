#pragma once

// Dense compute kernels behind the autodiff ops. The functions in `kernels`
// are OpenMP-parallel; `kernels::reference` holds straightforward serial
// versions used by tests and the benchmark as the ground truth.
//
// Every parallel kernel assigns each output element to exactly one thread and
// accumulates in a fixed order, so results are bit-identical for any thread
// count.

#include <span>

namespace fedgimp::kernels {

// Stride-1 "same" convolution (cross-correlation), odd square kernel,
// zero padding of kernel/2. Layouts: x [N,Ci,H,W], w [Co,Ci,k,k], y [N,Co,H,W].
struct ConvDims {
  int batch = 1;
  int in_channels = 1;
  int out_channels = 1;
  int height = 1;
  int width = 1;
  int kernel = 3;

  long input_size() const { return long(batch) * in_channels * height * width; }
  long output_size() const { return long(batch) * out_channels * height * width; }
  long weight_size() const { return long(out_channels) * in_channels * kernel * kernel; }
};

void conv2d(const ConvDims& d, std::span<const double> x, std::span<const double> w,
            std::span<double> y);
// Adjoint of conv2d in x: dx = conv2d^T(g).
void conv2d_input_grad(const ConvDims& d, std::span<const double> g, std::span<const double> w,
                       std::span<double> dx);
// Adjoint of conv2d in w: dw[co,ci,ky,kx] = sum x(shifted) * g.
void conv2d_weight_grad(const ConvDims& d, std::span<const double> x, std::span<const double> g,
                        std::span<double> dw);

// C[M,N] = op(A) op(B), op = optional transpose. A is [M,K] (or [K,M] when
// trans_a), B is [K,N] (or [N,K] when trans_b).
void matmul(int m, int n, int k, bool trans_a, bool trans_b, std::span<const double> a,
            std::span<const double> b, std::span<double> c);

// Bilinear 2x resampling of `planes` independent HxW images (half-pixel
// centres, edge clamp). Upsampling maps HxW -> 2Hx2W, downsampling
// 2Hx2W -> HxW (a 2x2 box, which is exact bilinear at factor 2).
void upsample2x(int planes, int height, int width, std::span<const double> x, std::span<double> y);
void upsample2x_adjoint(int planes, int height, int width, std::span<const double> g,
                        std::span<double> dx);
void downsample2x(int planes, int height, int width, std::span<const double> x,
                  std::span<double> y);
void downsample2x_adjoint(int planes, int height, int width, std::span<const double> g,
                          std::span<double> dx);

namespace reference {

void conv2d(const ConvDims& d, std::span<const double> x, std::span<const double> w,
            std::span<double> y);
void conv2d_input_grad(const ConvDims& d, std::span<const double> g, std::span<const double> w,
                       std::span<double> dx);
void conv2d_weight_grad(const ConvDims& d, std::span<const double> x, std::span<const double> g,
                        std::span<double> dw);
void matmul(int m, int n, int k, bool trans_a, bool trans_b, std::span<const double> a,
            std::span<const double> b, std::span<double> c);
void upsample2x(int planes, int height, int width, std::span<const double> x, std::span<double> y);
void downsample2x(int planes, int height, int width, std::span<const double> x,
                  std::span<double> y);

}  // namespace reference

// Number of OpenMP threads in use (1 when built without OpenMP).
int max_threads();

}  // namespace fedgimp::kernels
