#include <cmath>

#include "uda/core/kernels.hpp"

namespace uda::kernels::ref {

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          const float* b, float beta, float* c) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        const float av = trans_a ? a[p * m + i] : a[i * k + p];
        const float bv = trans_b ? b[j * k + p] : b[p * n + j];
        s += static_cast<double>(av) * bv;
      }
      const float prev = beta == 0.0f ? 0.0f : beta * c[i * n + j];
      c[i * n + j] = prev + alpha * static_cast<float>(s);
    }
  }
}

void conv2d_forward(const Conv2dGeom& g, const float* x, const float* w, const float* bias, float* y) {
  const int64_t oh = g.out_h(), ow = g.out_w();
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t co = 0; co < g.out_ch; ++co) {
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j) {
          double s = bias ? bias[co] : 0.0;
          for (int64_t ci = 0; ci < g.in_ch; ++ci) {
            for (int64_t ki = 0; ki < g.kh; ++ki) {
              const int64_t iy = i * g.stride - g.pad + ki * g.dilation;
              if (iy < 0 || iy >= g.in_h) continue;
              for (int64_t kj = 0; kj < g.kw; ++kj) {
                const int64_t ix = j * g.stride - g.pad + kj * g.dilation;
                if (ix < 0 || ix >= g.in_w) continue;
                s += static_cast<double>(x[((b * g.in_ch + ci) * g.in_h + iy) * g.in_w + ix]) *
                     w[((co * g.in_ch + ci) * g.kh + ki) * g.kw + kj];
              }
            }
          }
          y[((b * g.out_ch + co) * oh + i) * ow + j] = static_cast<float>(s);
        }
      }
    }
  }
}

void conv2d_backward(const Conv2dGeom& g, const float* x, const float* w, const float* dy, float* dx,
                     float* dw, float* db) {
  const int64_t oh = g.out_h(), ow = g.out_w();
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t co = 0; co < g.out_ch; ++co) {
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j) {
          const float gy = dy[((b * g.out_ch + co) * oh + i) * ow + j];
          if (db) db[co] += gy;
          for (int64_t ci = 0; ci < g.in_ch; ++ci) {
            for (int64_t ki = 0; ki < g.kh; ++ki) {
              const int64_t iy = i * g.stride - g.pad + ki * g.dilation;
              if (iy < 0 || iy >= g.in_h) continue;
              for (int64_t kj = 0; kj < g.kw; ++kj) {
                const int64_t ix = j * g.stride - g.pad + kj * g.dilation;
                if (ix < 0 || ix >= g.in_w) continue;
                const int64_t xo = ((b * g.in_ch + ci) * g.in_h + iy) * g.in_w + ix;
                const int64_t wo = ((co * g.in_ch + ci) * g.kh + ki) * g.kw + kj;
                if (dw) dw[wo] += gy * x[xo];
                if (dx) dx[xo] += gy * w[wo];
              }
            }
          }
        }
      }
    }
  }
}

void maxpool2x2_forward(int64_t n, int64_t c, int64_t h, int64_t w, const float* x, float* y,
                        int64_t* argmax) {
  const int64_t oh = h / 2, ow = w / 2;
  for (int64_t p = 0; p < n * c; ++p) {
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        int64_t best = p * h * w + (2 * i) * w + 2 * j;
        for (int64_t di = 0; di < 2; ++di) {
          for (int64_t dj = 0; dj < 2; ++dj) {
            const int64_t off = p * h * w + (2 * i + di) * w + 2 * j + dj;
            if (x[off] > x[best]) best = off;
          }
        }
        const int64_t o = (p * oh + i) * ow + j;
        y[o] = x[best];
        argmax[o] = best;
      }
    }
  }
}

void maxpool2x2_backward(int64_t out_count, const int64_t* argmax, const float* dy, float* dx) {
  for (int64_t o = 0; o < out_count; ++o) dx[argmax[o]] += dy[o];
}

void upsample2x_forward(int64_t n, int64_t c, int64_t h, int64_t w, const float* x, float* y) {
  for (int64_t p = 0; p < n * c; ++p) {
    for (int64_t i = 0; i < 2 * h; ++i) {
      for (int64_t j = 0; j < 2 * w; ++j) {
        y[(p * 2 * h + i) * 2 * w + j] = x[(p * h + i / 2) * w + j / 2];
      }
    }
  }
}

void upsample2x_backward(int64_t n, int64_t c, int64_t h, int64_t w, const float* dy, float* dx) {
  for (int64_t p = 0; p < n * c; ++p) {
    for (int64_t i = 0; i < 2 * h; ++i) {
      for (int64_t j = 0; j < 2 * w; ++j) {
        dx[(p * h + i / 2) * w + j / 2] += dy[(p * 2 * h + i) * 2 * w + j];
      }
    }
  }
}

void batchnorm_forward(const NormGeom& g, const float* x, const float* gamma, const float* beta,
                       float eps, float* y, float* mean, float* invstd) {
  for (int64_t c = 0; c < g.channels; ++c) {
    double s = 0.0, s2 = 0.0;
    for (int64_t b = 0; b < g.n; ++b) {
      for (int64_t p = 0; p < g.spatial; ++p) s += x[(b * g.channels + c) * g.spatial + p];
    }
    const double mu = s / static_cast<double>(g.count());
    for (int64_t b = 0; b < g.n; ++b) {
      for (int64_t p = 0; p < g.spatial; ++p) {
        const double d = x[(b * g.channels + c) * g.spatial + p] - mu;
        s2 += d * d;
      }
    }
    const double is = 1.0 / std::sqrt(s2 / static_cast<double>(g.count()) + eps);
    mean[c] = static_cast<float>(mu);
    invstd[c] = static_cast<float>(is);
    for (int64_t b = 0; b < g.n; ++b) {
      for (int64_t p = 0; p < g.spatial; ++p) {
        const int64_t o = (b * g.channels + c) * g.spatial + p;
        y[o] = static_cast<float>(gamma[c] * (x[o] - mu) * is + beta[c]);
      }
    }
  }
}

void batchnorm_backward(const NormGeom& g, const float* x, const float* gamma, const float* mean,
                        const float* invstd, const float* dy, float* dx, float* dgamma, float* dbeta) {
  const double m = static_cast<double>(g.count());
  for (int64_t c = 0; c < g.channels; ++c) {
    double sdy = 0.0, sdyx = 0.0;
    for (int64_t b = 0; b < g.n; ++b) {
      for (int64_t p = 0; p < g.spatial; ++p) {
        const int64_t o = (b * g.channels + c) * g.spatial + p;
        sdy += dy[o];
        sdyx += dy[o] * (x[o] - mean[c]) * invstd[c];
      }
    }
    if (dgamma) dgamma[c] += static_cast<float>(sdyx);
    if (dbeta) dbeta[c] += static_cast<float>(sdy);
    if (!dx) continue;
    for (int64_t b = 0; b < g.n; ++b) {
      for (int64_t p = 0; p < g.spatial; ++p) {
        const int64_t o = (b * g.channels + c) * g.spatial + p;
        const double xhat = (x[o] - mean[c]) * invstd[c];
        dx[o] += static_cast<float>(gamma[c] * invstd[c] / m * (m * dy[o] - sdy - xhat * sdyx));
      }
    }
  }
}

}  // namespace uda::kernels::ref
