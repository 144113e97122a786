#include "fedgimp/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedgimp::kernels {

namespace {

// Valid output range for a shift `d`: positions p with 0 <= p + d < n.
inline int lo(int d) { return std::max(0, -d); }
inline int hi(int n, int d) { return std::min(n, n - d); }

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void conv2d(const ConvDims& d, std::span<const double> x, std::span<const double> w,
            std::span<double> y) {
  const int H = d.height, W = d.width, K = d.kernel, P = K / 2;
  const long plane = long(H) * W;
  const long jobs = long(d.batch) * d.out_channels;
#pragma omp parallel for schedule(static)
  for (long job = 0; job < jobs; ++job) {
    const long n = job / d.out_channels;
    const long co = job % d.out_channels;
    double* out = y.data() + job * plane;
    std::fill(out, out + plane, 0.0);
    for (int ci = 0; ci < d.in_channels; ++ci) {
      const double* in = x.data() + (n * d.in_channels + ci) * plane;
      const double* wk = w.data() + (co * d.in_channels + ci) * K * K;
      for (int ky = 0; ky < K; ++ky) {
        const int dy = ky - P;
        for (int kx = 0; kx < K; ++kx) {
          const int dx = kx - P;
          const double wv = wk[ky * K + kx];
          const int x0 = lo(dx), x1 = hi(W, dx);
          for (int r = lo(dy); r < hi(H, dy); ++r) {
            const double* src = in + long(r + dy) * W + dx;
            double* dst = out + long(r) * W;
            for (int c = x0; c < x1; ++c) dst[c] += wv * src[c];
          }
        }
      }
    }
  }
}

void conv2d_input_grad(const ConvDims& d, std::span<const double> g, std::span<const double> w,
                       std::span<double> dx_out) {
  const int H = d.height, W = d.width, K = d.kernel, P = K / 2;
  const long plane = long(H) * W;
  const long jobs = long(d.batch) * d.in_channels;
#pragma omp parallel for schedule(static)
  for (long job = 0; job < jobs; ++job) {
    const long n = job / d.in_channels;
    const long ci = job % d.in_channels;
    double* out = dx_out.data() + job * plane;
    std::fill(out, out + plane, 0.0);
    for (int co = 0; co < d.out_channels; ++co) {
      const double* gp = g.data() + (n * d.out_channels + co) * plane;
      const double* wk = w.data() + (co * d.in_channels + ci) * K * K;
      for (int ky = 0; ky < K; ++ky) {
        const int dy = ky - P;
        for (int kx = 0; kx < K; ++kx) {
          const int dx = kx - P;
          const double wv = wk[ky * K + kx];
          const int x0 = lo(dx), x1 = hi(W, dx);
          for (int r = lo(dy); r < hi(H, dy); ++r) {
            const double* src = gp + long(r) * W;
            double* dst = out + long(r + dy) * W + dx;
            for (int c = x0; c < x1; ++c) dst[c] += wv * src[c];
          }
        }
      }
    }
  }
}

void conv2d_weight_grad(const ConvDims& d, std::span<const double> x, std::span<const double> g,
                        std::span<double> dw) {
  const int H = d.height, W = d.width, K = d.kernel, P = K / 2;
  const long plane = long(H) * W;
  const long jobs = long(d.out_channels) * d.in_channels;
#pragma omp parallel for schedule(static)
  for (long job = 0; job < jobs; ++job) {
    const long co = job / d.in_channels;
    const long ci = job % d.in_channels;
    double* out = dw.data() + job * K * K;
    for (int ky = 0; ky < K; ++ky) {
      const int dy = ky - P;
      for (int kx = 0; kx < K; ++kx) {
        const int dx = kx - P;
        const int x0 = lo(dx), x1 = hi(W, dx);
        double acc = 0.0;
        for (int n = 0; n < d.batch; ++n) {
          const double* in = x.data() + (long(n) * d.in_channels + ci) * plane;
          const double* gp = g.data() + (long(n) * d.out_channels + co) * plane;
          for (int r = lo(dy); r < hi(H, dy); ++r) {
            const double* src = in + long(r + dy) * W + dx;
            const double* gr = gp + long(r) * W;
            for (int c = x0; c < x1; ++c) acc += src[c] * gr[c];
          }
        }
        out[ky * K + kx] = acc;
      }
    }
  }
}

void matmul(int m, int n, int k, bool trans_a, bool trans_b, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) if (long(m) * n * k > 32768)
  for (int i = 0; i < m; ++i) {
    double* row = c.data() + long(i) * n;
    if (trans_b) {
      // Rows of B are contiguous: one dot product per output.
      for (int j = 0; j < n; ++j) {
        const double* brow = b.data() + long(j) * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += (trans_a ? a[long(p) * m + i] : a[long(i) * k + p]) * brow[p];
        row[j] = acc;
      }
      continue;
    }
    std::fill(row, row + n, 0.0);
    for (int p = 0; p < k; ++p) {
      const double av = trans_a ? a[long(p) * m + i] : a[long(i) * k + p];
      const double* brow = b.data() + long(p) * n;
      for (int j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

// Bilinear 2x upsampling along one axis: out[2i] = .75 x[i] + .25 x[i-1],
// out[2i+1] = .75 x[i] + .25 x[i+1], indices clamped to the edge.
void upsample2x(int planes, int height, int width, std::span<const double> x,
                std::span<double> y) {
  const int H2 = 2 * height, W2 = 2 * width;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* in = x.data() + long(p) * height * width;
    double* out = y.data() + long(p) * H2 * W2;
    for (int r = 0; r < H2; ++r) {
      const int ri = r / 2;
      const int rn = (r % 2 == 0) ? std::max(ri - 1, 0) : std::min(ri + 1, height - 1);
      const double* a = in + long(ri) * width;
      const double* b = in + long(rn) * width;
      for (int c = 0; c < W2; ++c) {
        const int ci = c / 2;
        const int cn = (c % 2 == 0) ? std::max(ci - 1, 0) : std::min(ci + 1, width - 1);
        out[long(r) * W2 + c] = 0.5625 * a[ci] + 0.1875 * (a[cn] + b[ci]) + 0.0625 * b[cn];
      }
    }
  }
}

void upsample2x_adjoint(int planes, int height, int width, std::span<const double> g,
                        std::span<double> dx) {
  const int H2 = 2 * height, W2 = 2 * width;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* gp = g.data() + long(p) * H2 * W2;
    double* out = dx.data() + long(p) * height * width;
    std::fill(out, out + long(height) * width, 0.0);
    for (int r = 0; r < H2; ++r) {
      const int ri = r / 2;
      const int rn = (r % 2 == 0) ? std::max(ri - 1, 0) : std::min(ri + 1, height - 1);
      for (int c = 0; c < W2; ++c) {
        const int ci = c / 2;
        const int cn = (c % 2 == 0) ? std::max(ci - 1, 0) : std::min(ci + 1, width - 1);
        const double v = gp[long(r) * W2 + c];
        out[long(ri) * width + ci] += 0.5625 * v;
        out[long(ri) * width + cn] += 0.1875 * v;
        out[long(rn) * width + ci] += 0.1875 * v;
        out[long(rn) * width + cn] += 0.0625 * v;
      }
    }
  }
}

void downsample2x(int planes, int height, int width, std::span<const double> x,
                  std::span<double> y) {
  const int W2 = 2 * width;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* in = x.data() + long(p) * 4 * height * width;
    double* out = y.data() + long(p) * height * width;
    for (int r = 0; r < height; ++r) {
      const double* a = in + long(2 * r) * W2;
      const double* b = a + W2;
      for (int c = 0; c < width; ++c) {
        out[long(r) * width + c] = 0.25 * (a[2 * c] + a[2 * c + 1] + b[2 * c] + b[2 * c + 1]);
      }
    }
  }
}

void downsample2x_adjoint(int planes, int height, int width, std::span<const double> g,
                          std::span<double> dx) {
  const int W2 = 2 * width;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* gp = g.data() + long(p) * height * width;
    double* out = dx.data() + long(p) * 4 * height * width;
    for (int r = 0; r < 2 * height; ++r) {
      for (int c = 0; c < W2; ++c) out[long(r) * W2 + c] = 0.25 * gp[long(r / 2) * width + c / 2];
    }
  }
}

namespace reference {

void conv2d(const ConvDims& d, std::span<const double> x, std::span<const double> w,
            std::span<double> y) {
  const int H = d.height, W = d.width, K = d.kernel, P = K / 2;
  for (int n = 0; n < d.batch; ++n)
    for (int co = 0; co < d.out_channels; ++co)
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
          double acc = 0.0;
          for (int ci = 0; ci < d.in_channels; ++ci)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int rr = r + ky - P, cc = c + kx - P;
                if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                acc += w[((long(co) * d.in_channels + ci) * K + ky) * K + kx] *
                       x[((long(n) * d.in_channels + ci) * H + rr) * W + cc];
              }
          y[((long(n) * d.out_channels + co) * H + r) * W + c] = acc;
        }
}

void conv2d_input_grad(const ConvDims& d, std::span<const double> g, std::span<const double> w,
                       std::span<double> dx) {
  const int H = d.height, W = d.width, K = d.kernel, P = K / 2;
  std::fill(dx.begin(), dx.end(), 0.0);
  for (int n = 0; n < d.batch; ++n)
    for (int co = 0; co < d.out_channels; ++co)
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
          const double gv = g[((long(n) * d.out_channels + co) * H + r) * W + c];
          for (int ci = 0; ci < d.in_channels; ++ci)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int rr = r + ky - P, cc = c + kx - P;
                if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                dx[((long(n) * d.in_channels + ci) * H + rr) * W + cc] +=
                    gv * w[((long(co) * d.in_channels + ci) * K + ky) * K + kx];
              }
        }
}

void conv2d_weight_grad(const ConvDims& d, std::span<const double> x, std::span<const double> g,
                        std::span<double> dw) {
  const int H = d.height, W = d.width, K = d.kernel, P = K / 2;
  std::fill(dw.begin(), dw.end(), 0.0);
  for (int n = 0; n < d.batch; ++n)
    for (int co = 0; co < d.out_channels; ++co)
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
          const double gv = g[((long(n) * d.out_channels + co) * H + r) * W + c];
          for (int ci = 0; ci < d.in_channels; ++ci)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int rr = r + ky - P, cc = c + kx - P;
                if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                dw[((long(co) * d.in_channels + ci) * K + ky) * K + kx] +=
                    gv * x[((long(n) * d.in_channels + ci) * H + rr) * W + cc];
              }
        }
}

void matmul(int m, int n, int k, bool trans_a, bool trans_b, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = trans_a ? a[long(p) * m + i] : a[long(i) * k + p];
        const double bv = trans_b ? b[long(j) * k + p] : b[long(p) * n + j];
        acc += av * bv;
      }
      c[long(i) * n + j] = acc;
    }
}

// Separable form: each output sample is a fixed 2-tap blend along each axis.
void upsample2x(int planes, int height, int width, std::span<const double> x,
                std::span<double> y) {
  auto tap = [](int o, int n, int& i0, int& i1) {
    i0 = o / 2;
    i1 = (o % 2 == 0) ? std::max(i0 - 1, 0) : std::min(i0 + 1, n - 1);
  };
  for (int p = 0; p < planes; ++p)
    for (int r = 0; r < 2 * height; ++r)
      for (int c = 0; c < 2 * width; ++c) {
        int r0, r1, c0, c1;
        tap(r, height, r0, r1);
        tap(c, width, c0, c1);
        auto at = [&](int rr, int cc) { return x[(long(p) * height + rr) * width + cc]; };
        const double top = 0.75 * at(r0, c0) + 0.25 * at(r0, c1);
        const double bot = 0.75 * at(r1, c0) + 0.25 * at(r1, c1);
        y[(long(p) * 2 * height + r) * 2 * width + c] = 0.75 * top + 0.25 * bot;
      }
}

void downsample2x(int planes, int height, int width, std::span<const double> x,
                  std::span<double> y) {
  for (int p = 0; p < planes; ++p)
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        double acc = 0.0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) acc += x[(long(p) * 2 * height + 2 * r + a) * 2 * width + 2 * c + b];
        y[(long(p) * height + r) * width + c] = acc / 4.0;
      }
}

}  // namespace reference

}  // namespace fedgimp::kernels
