#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "uda/core/kernels.hpp"

namespace uda::kernels {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::vector<float>& scratch(int slot, size_t n) {
  static thread_local std::vector<float> bufs[3];
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return b;
}

// col is [patch_size, batch * out_h * out_w].
void im2col(const Conv2dGeom& g, const float* x, float* col) {
  const int64_t oh = g.out_h(), ow = g.out_w();
  const int64_t plane = oh * ow;
  const int64_t cols = g.batch * plane;
  const int64_t rows = g.patch_size();
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t c = r / (g.kh * g.kw);
    const int64_t i = (r / g.kw) % g.kh;
    const int64_t j = r % g.kw;
    float* dst = col + r * cols;
    for (int64_t b = 0; b < g.batch; ++b) {
      const float* src = x + (b * g.in_ch + c) * g.in_h * g.in_w;
      for (int64_t y = 0; y < oh; ++y) {
        const int64_t iy = y * g.stride - g.pad + i * g.dilation;
        float* out = dst + b * plane + y * ow;
        if (iy < 0 || iy >= g.in_h) {
          std::fill(out, out + ow, 0.0f);
          continue;
        }
        const float* row = src + iy * g.in_w;
        for (int64_t xo = 0; xo < ow; ++xo) {
          const int64_t ix = xo * g.stride - g.pad + j * g.dilation;
          out[xo] = (ix >= 0 && ix < g.in_w) ? row[ix] : 0.0f;
        }
      }
    }
  }
}

void col2im_add(const Conv2dGeom& g, const float* col, float* dx) {
  const int64_t oh = g.out_h(), ow = g.out_w();
  const int64_t plane = oh * ow;
  const int64_t cols = g.batch * plane;
  const int64_t pairs = g.batch * g.in_ch;
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < pairs; ++bc) {
    const int64_t b = bc / g.in_ch;
    const int64_t c = bc % g.in_ch;
    float* dst = dx + bc * g.in_h * g.in_w;
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        const int64_t r = (c * g.kh + i) * g.kw + j;
        const float* src = col + r * cols + b * plane;
        for (int64_t y = 0; y < oh; ++y) {
          const int64_t iy = y * g.stride - g.pad + i * g.dilation;
          if (iy < 0 || iy >= g.in_h) continue;
          float* row = dst + iy * g.in_w;
          const float* in = src + y * ow;
          for (int64_t xo = 0; xo < ow; ++xo) {
            const int64_t ix = xo * g.stride - g.pad + j * g.dilation;
            if (ix >= 0 && ix < g.in_w) row[ix] += in[xo];
          }
        }
      }
    }
  }
}

}  // namespace

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          const float* b, float beta, float* c) {
  MapMat cm(c, m, n);
  if (beta == 0.0f) {
    cm.setZero();
  } else if (beta != 1.0f) {
    cm *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    cm.noalias() += alpha * (CMapMat(a, m, k) * CMapMat(b, k, n));
  } else if (trans_a && !trans_b) {
    cm.noalias() += alpha * (CMapMat(a, k, m).transpose() * CMapMat(b, k, n));
  } else if (!trans_a && trans_b) {
    cm.noalias() += alpha * (CMapMat(a, m, k) * CMapMat(b, n, k).transpose());
  } else {
    cm.noalias() += alpha * (CMapMat(a, k, m).transpose() * CMapMat(b, n, k).transpose());
  }
}

void conv2d_forward(const Conv2dGeom& g, const float* x, const float* w, const float* bias, float* y) {
  const int64_t plane = g.out_h() * g.out_w();
  const int64_t cols = g.batch * plane;
  const int64_t k = g.patch_size();
  auto& col = scratch(0, static_cast<size_t>(k * cols));
  auto& out = scratch(1, static_cast<size_t>(g.out_ch * cols));
  im2col(g, x, col.data());
  gemm(false, false, g.out_ch, cols, k, 1.0f, w, col.data(), 0.0f, out.data());
  const int64_t pairs = g.batch * g.out_ch;
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < pairs; ++bc) {
    const int64_t b = bc / g.out_ch;
    const int64_t co = bc % g.out_ch;
    const float add = bias ? bias[co] : 0.0f;
    const float* src = out.data() + co * cols + b * plane;
    float* dst = y + bc * plane;
    for (int64_t p = 0; p < plane; ++p) dst[p] = src[p] + add;
  }
}

void conv2d_backward(const Conv2dGeom& g, const float* x, const float* w, const float* dy, float* dx,
                     float* dw, float* db) {
  const int64_t plane = g.out_h() * g.out_w();
  const int64_t cols = g.batch * plane;
  const int64_t k = g.patch_size();
  auto& dyt = scratch(1, static_cast<size_t>(g.out_ch * cols));
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < g.out_ch; ++co) {
    for (int64_t b = 0; b < g.batch; ++b) {
      const float* src = dy + (b * g.out_ch + co) * plane;
      std::copy(src, src + plane, dyt.data() + co * cols + b * plane);
    }
  }
  if (db) {
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < g.out_ch; ++co) {
      double s = 0.0;
      const float* row = dyt.data() + co * cols;
      for (int64_t p = 0; p < cols; ++p) s += row[p];
      db[co] += static_cast<float>(s);
    }
  }
  if (dw) {
    auto& col = scratch(0, static_cast<size_t>(k * cols));
    im2col(g, x, col.data());
    gemm(false, true, g.out_ch, k, cols, 1.0f, dyt.data(), col.data(), 1.0f, dw);
  }
  if (dx) {
    auto& dcol = scratch(2, static_cast<size_t>(k * cols));
    gemm(true, false, k, cols, g.out_ch, 1.0f, w, dyt.data(), 0.0f, dcol.data());
    col2im_add(g, dcol.data(), dx);
  }
}

void maxpool2x2_forward(int64_t n, int64_t c, int64_t h, int64_t w, const float* x, float* y,
                        int64_t* argmax) {
  const int64_t oh = h / 2, ow = w / 2;
  const int64_t planes = n * c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const float* src = x + p * h * w;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        int64_t best = (2 * i) * w + 2 * j;
        for (int64_t di = 0; di < 2; ++di) {
          for (int64_t dj = 0; dj < 2; ++dj) {
            const int64_t off = (2 * i + di) * w + 2 * j + dj;
            if (src[off] > src[best]) best = off;
          }
        }
        const int64_t o = (p * oh + i) * ow + j;
        y[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
}

void maxpool2x2_backward(int64_t out_count, const int64_t* argmax, const float* dy, float* dx) {
  // Non-overlapping windows: every input offset has at most one writer.
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < out_count; ++o) dx[argmax[o]] += dy[o];
}

void upsample2x_forward(int64_t n, int64_t c, int64_t h, int64_t w, const float* x, float* y) {
  const int64_t planes = n * c;
  const int64_t ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const float* src = x + p * h * w;
    float* dst = y + p * 4 * h * w;
    for (int64_t i = 0; i < 2 * h; ++i) {
      const float* row = src + (i / 2) * w;
      float* out = dst + i * ow;
      for (int64_t j = 0; j < ow; ++j) out[j] = row[j / 2];
    }
  }
}

void upsample2x_backward(int64_t n, int64_t c, int64_t h, int64_t w, const float* dy, float* dx) {
  const int64_t planes = n * c;
  const int64_t ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const float* src = dy + p * 4 * h * w;
    float* dst = dx + p * h * w;
    for (int64_t i = 0; i < h; ++i) {
      for (int64_t j = 0; j < w; ++j) {
        const float* a = src + (2 * i) * ow + 2 * j;
        dst[i * w + j] += a[0] + a[1] + a[ow] + a[ow + 1];
      }
    }
  }
}

void batchnorm_forward(const NormGeom& g, const float* x, const float* gamma, const float* beta,
                       float eps, float* y, float* mean, float* invstd) {
  const double count = static_cast<double>(g.count());
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < g.channels; ++c) {
    double s = 0.0;
    for (int64_t b = 0; b < g.n; ++b) {
      const float* src = x + (b * g.channels + c) * g.spatial;
      for (int64_t p = 0; p < g.spatial; ++p) s += src[p];
    }
    const double mu = s / count;
    double v = 0.0;
    for (int64_t b = 0; b < g.n; ++b) {
      const float* src = x + (b * g.channels + c) * g.spatial;
      for (int64_t p = 0; p < g.spatial; ++p) {
        const double d = src[p] - mu;
        v += d * d;
      }
    }
    const double is = 1.0 / std::sqrt(v / count + eps);
    mean[c] = static_cast<float>(mu);
    invstd[c] = static_cast<float>(is);
    const float scale = static_cast<float>(gamma[c] * is);
    const float shift = static_cast<float>(beta[c] - gamma[c] * is * mu);
    for (int64_t b = 0; b < g.n; ++b) {
      const float* src = x + (b * g.channels + c) * g.spatial;
      float* dst = y + (b * g.channels + c) * g.spatial;
      for (int64_t p = 0; p < g.spatial; ++p) dst[p] = src[p] * scale + shift;
    }
  }
}

void batchnorm_backward(const NormGeom& g, const float* x, const float* gamma, const float* mean,
                        const float* invstd, const float* dy, float* dx, float* dgamma, float* dbeta) {
  const double count = static_cast<double>(g.count());
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < g.channels; ++c) {
    const double mu = mean[c];
    const double is = invstd[c];
    double sdy = 0.0, sdyx = 0.0;
    for (int64_t b = 0; b < g.n; ++b) {
      const int64_t off = (b * g.channels + c) * g.spatial;
      for (int64_t p = 0; p < g.spatial; ++p) {
        sdy += dy[off + p];
        sdyx += dy[off + p] * ((x[off + p] - mu) * is);
      }
    }
    if (dgamma) dgamma[c] += static_cast<float>(sdyx);
    if (dbeta) dbeta[c] += static_cast<float>(sdy);
    if (!dx) continue;
    const double k = gamma[c] * is / count;
    for (int64_t b = 0; b < g.n; ++b) {
      const int64_t off = (b * g.channels + c) * g.spatial;
      for (int64_t p = 0; p < g.spatial; ++p) {
        const double xhat = (x[off + p] - mu) * is;
        dx[off + p] += static_cast<float>(k * (count * dy[off + p] - sdy - xhat * sdyx));
      }
    }
  }
}

}  // namespace uda::kernels
