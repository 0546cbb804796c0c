#pragma once

// Data-parallel compute kernels. Two implementations share every signature:
//   uda::kernels       OpenMP-parallel (im2col + GEMM for convolutions)
//   uda::kernels::ref  plain serial loops, kept as the testing reference
// Backward kernels ACCUMULATE into their gradient outputs; pass nullptr to
// skip a gradient.

#include <cstdint>

namespace uda::kernels {

struct Conv2dGeom {
  int64_t batch = 1;
  int64_t in_ch = 1;
  int64_t in_h = 1;
  int64_t in_w = 1;
  int64_t out_ch = 1;
  int64_t kh = 1;
  int64_t kw = 1;
  int64_t stride = 1;
  int64_t pad = 0;
  int64_t dilation = 1;

  int64_t out_h() const { return (in_h + 2 * pad - dilation * (kh - 1) - 1) / stride + 1; }
  int64_t out_w() const { return (in_w + 2 * pad - dilation * (kw - 1) - 1) / stride + 1; }
  int64_t patch_size() const { return in_ch * kh * kw; }
};

/// BatchNorm view: x is [n, channels, spatial] flattened.
struct NormGeom {
  int64_t n = 1;
  int64_t channels = 1;
  int64_t spatial = 1;
  int64_t count() const { return n * spatial; }
};

// y = conv(x, w) + bias; w is [out_ch, in_ch, kh, kw]; bias may be null.
void conv2d_forward(const Conv2dGeom& g, const float* x, const float* w, const float* bias, float* y);
void conv2d_backward(const Conv2dGeom& g, const float* x, const float* w, const float* dy, float* dx,
                     float* dw, float* db);

// 2x2 / stride 2 max pooling; argmax receives the flat input offset per output.
void maxpool2x2_forward(int64_t n, int64_t c, int64_t h, int64_t w, const float* x, float* y,
                        int64_t* argmax);
void maxpool2x2_backward(int64_t out_count, const int64_t* argmax, const float* dy, float* dx);

// Nearest-neighbour 2x upsampling.
void upsample2x_forward(int64_t n, int64_t c, int64_t h, int64_t w, const float* x, float* y);
void upsample2x_backward(int64_t n, int64_t c, int64_t h, int64_t w, const float* dy, float* dx);

// Training-mode batch normalisation; writes per-channel batch mean and 1/std.
void batchnorm_forward(const NormGeom& g, const float* x, const float* gamma, const float* beta,
                       float eps, float* y, float* mean, float* invstd);
void batchnorm_backward(const NormGeom& g, const float* x, const float* gamma, const float* mean,
                        const float* invstd, const float* dy, float* dx, float* dgamma, float* dbeta);

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          const float* b, float beta, float* c);

/// Number of worker threads the parallel kernels will use.
int num_threads();
void set_num_threads(int n);

namespace ref {

void conv2d_forward(const Conv2dGeom& g, const float* x, const float* w, const float* bias, float* y);
void conv2d_backward(const Conv2dGeom& g, const float* x, const float* w, const float* dy, float* dx,
                     float* dw, float* db);
void maxpool2x2_forward(int64_t n, int64_t c, int64_t h, int64_t w, const float* x, float* y,
                        int64_t* argmax);
void maxpool2x2_backward(int64_t out_count, const int64_t* argmax, const float* dy, float* dx);
void upsample2x_forward(int64_t n, int64_t c, int64_t h, int64_t w, const float* x, float* y);
void upsample2x_backward(int64_t n, int64_t c, int64_t h, int64_t w, const float* dy, float* dx);
void batchnorm_forward(const NormGeom& g, const float* x, const float* gamma, const float* beta,
                       float eps, float* y, float* mean, float* invstd);
void batchnorm_backward(const NormGeom& g, const float* x, const float* gamma, const float* mean,
                        const float* invstd, const float* dy, float* dx, float* dgamma, float* dbeta);
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          const float* b, float beta, float* c);

}  // namespace ref

}  // namespace uda::kernels
