#include "uda/core/ops.hpp"

#include <algorithm>
#include <cmath>

#include "uda/core/kernels.hpp"

namespace uda::ops {
namespace {

bool wants(const Node& n, size_t i) { return i < n.inputs.size() && n.inputs[i]->requires_grad; }
float* grad_of(Node& n, size_t i) { return n.inputs[i]->grad_buffer().data(); }

void require_rank(const Var& x, int rank, const char* what) {
  if (x.value().ndim() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

template <typename F>
Var unary_map(const Var& x, F forward_and_deriv) {
  Tensor y = Tensor::zeros_like(x.value());
  Tensor d = Tensor::zeros_like(x.value());
  const float* xs = x.value().data();
  float* ys = y.data();
  float* ds = d.data();
  const int64_t n = y.numel();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < n; ++i) forward_and_deriv(xs[i], ys[i], ds[i]);
  if (!x.requires_grad()) return Var(std::move(y));
  return make_var(std::move(y), {x}, [d = std::move(d)](Node& n) {
    float* gx = grad_of(n, 0);
    const float* gy = n.grad.data();
    const int64_t m = d.numel();
#pragma omp parallel for simd schedule(static)
    for (int64_t i = 0; i < m; ++i) gx[i] += gy[i] * d[i];
  });
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  kernels::Conv2dGeom g;
  g.batch = x.value().dim(0);
  g.in_ch = x.value().dim(1);
  g.in_h = x.value().dim(2);
  g.in_w = x.value().dim(3);
  g.out_ch = w.value().dim(0);
  g.kh = w.value().dim(2);
  g.kw = w.value().dim(3);
  g.stride = opt.stride;
  g.pad = opt.pad;
  g.dilation = opt.dilation;
  if (w.value().dim(1) != g.in_ch) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  }
  if (g.out_h() <= 0 || g.out_w() <= 0) throw ShapeError("conv2d: empty output for input " + shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.value().numel() != g.out_ch) throw ShapeError("conv2d: bias size mismatch");

  Tensor y({g.batch, g.out_ch, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.value().data(), w.value().data(), has_bias ? bias.value().data() : nullptr, y.data());
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_var(std::move(y), std::move(inputs), [g, has_bias](Node& n) {
    float* dx = wants(n, 0) ? grad_of(n, 0) : nullptr;
    float* dw = wants(n, 1) ? grad_of(n, 1) : nullptr;
    float* db = has_bias && wants(n, 2) ? grad_of(n, 2) : nullptr;
    kernels::conv2d_backward(g, n.inputs[0]->value.data(), n.inputs[1]->value.data(), n.grad.data(), dx, dw, db);
  });
}

Var pointwise(const Var& x, const Var& w, const Var& bias) {
  require_rank(x, 3, "pointwise input");
  require_rank(w, 2, "pointwise weight");
  const auto b = x.value().dim(0), c = x.value().dim(1), n = x.value().dim(2);
  Var x4 = reshape(x, {b, c, 1, n});
  Var w4 = reshape(w, {w.value().dim(0), w.value().dim(1), 1, 1});
  Var y = conv2d(x4, w4, bias);
  return reshape(y, {b, w.value().dim(0), n});
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const int64_t b = x.value().dim(0), k = x.value().dim(1), m = w.value().dim(0);
  if (w.value().dim(1) != k) {
    throw ShapeError("linear: weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  }
  const bool has_bias = bias.defined();
  Tensor y({b, m});
  kernels::gemm(false, true, b, m, k, 1.0f, x.value().data(), w.value().data(), 0.0f, y.data());
  if (has_bias) {
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < m; ++j) y[i * m + j] += bias.value()[j];
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_var(std::move(y), std::move(inputs), [b, k, m, has_bias](Node& n) {
    const float* gy = n.grad.data();
    if (wants(n, 0)) kernels::gemm(false, false, b, k, m, 1.0f, gy, n.inputs[1]->value.data(), 1.0f, grad_of(n, 0));
    if (wants(n, 1)) kernels::gemm(true, false, m, k, b, 1.0f, gy, n.inputs[0]->value.data(), 1.0f, grad_of(n, 1));
    if (has_bias && wants(n, 2)) {
      float* gb = grad_of(n, 2);
      for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < m; ++j) gb[j] += gy[i * m + j];
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& st) {
  if (x.value().ndim() < 2) throw ShapeError("batch_norm: rank must be >= 2");
  kernels::NormGeom g;
  g.n = x.value().dim(0);
  g.channels = x.value().dim(1);
  g.spatial = x.value().numel() / std::max<int64_t>(1, g.n * g.channels);
  if (gamma.value().numel() != g.channels || beta.value().numel() != g.channels) {
    throw ShapeError("batch_norm: affine parameters do not match channels of " + shape_str(x.shape()));
  }
  Tensor y = Tensor::zeros_like(x.value());
  Tensor mean({g.channels}), invstd({g.channels});
  if (st.training) {
    if (g.count() < 2) throw ShapeError("batch_norm: training mode needs more than one value per channel");
    kernels::batchnorm_forward(g, x.value().data(), gamma.value().data(), beta.value().data(), st.eps, y.data(),
                               mean.data(), invstd.data());
    if (st.update_running && st.running_mean && st.running_var) {
      const float unbias = static_cast<float>(g.count()) / static_cast<float>(g.count() - 1);
      for (int64_t c = 0; c < g.channels; ++c) {
        const float var = 1.0f / (invstd[c] * invstd[c]) - st.eps;
        (*st.running_mean)[c] = (1.0f - st.momentum) * (*st.running_mean)[c] + st.momentum * mean[c];
        (*st.running_var)[c] = (1.0f - st.momentum) * (*st.running_var)[c] + st.momentum * var * unbias;
      }
    }
    return make_var(std::move(y), {x, gamma, beta}, [g, mean = std::move(mean), invstd = std::move(invstd)](Node& n) {
      kernels::batchnorm_backward(g, n.inputs[0]->value.data(), n.inputs[1]->value.data(), mean.data(), invstd.data(),
                                  n.grad.data(), wants(n, 0) ? grad_of(n, 0) : nullptr,
                                  wants(n, 1) ? grad_of(n, 1) : nullptr, wants(n, 2) ? grad_of(n, 2) : nullptr);
    });
  }
  if (!st.running_mean || !st.running_var) throw std::invalid_argument("batch_norm: inference needs running stats");
  // Inference: a fixed per-channel affine map.
  for (int64_t c = 0; c < g.channels; ++c) {
    mean[c] = (*st.running_mean)[c];
    invstd[c] = 1.0f / std::sqrt((*st.running_var)[c] + st.eps);
  }
  for (int64_t b = 0; b < g.n; ++b) {
    for (int64_t c = 0; c < g.channels; ++c) {
      const float s = gamma.value()[c] * invstd[c];
      const float t = beta.value()[c] - s * mean[c];
      const int64_t off = (b * g.channels + c) * g.spatial;
      for (int64_t p = 0; p < g.spatial; ++p) y[off + p] = x.value()[off + p] * s + t;
    }
  }
  return make_var(std::move(y), {x, gamma, beta}, [g, mean = std::move(mean), invstd = std::move(invstd)](Node& n) {
    const auto& xv = n.inputs[0]->value;
    const auto& gv = n.inputs[1]->value;
    float* dx = wants(n, 0) ? grad_of(n, 0) : nullptr;
    float* dg = wants(n, 1) ? grad_of(n, 1) : nullptr;
    float* db = wants(n, 2) ? grad_of(n, 2) : nullptr;
    for (int64_t b = 0; b < g.n; ++b) {
      for (int64_t c = 0; c < g.channels; ++c) {
        const int64_t off = (b * g.channels + c) * g.spatial;
        for (int64_t p = 0; p < g.spatial; ++p) {
          const float gy = n.grad[off + p];
          if (dx) dx[off + p] += gy * gv[c] * invstd[c];
          if (dg) dg[c] += gy * (xv[off + p] - mean[c]) * invstd[c];
          if (db) db[c] += gy;
        }
      }
    }
  });
}

Var relu(const Var& x) {
  return unary_map(x, [](float v, float& y, float& d) {
    y = v > 0.0f ? v : 0.0f;
    d = v > 0.0f ? 1.0f : 0.0f;
  });
}

Var leaky_relu(const Var& x, float slope) {
  return unary_map(x, [slope](float v, float& y, float& d) {
    y = v > 0.0f ? v : slope * v;
    d = v > 0.0f ? 1.0f : slope;
  });
}

Var sigmoid(const Var& x) {
  return unary_map(x, [](float v, float& y, float& d) {
    y = 1.0f / (1.0f + std::exp(-v));
    d = y * (1.0f - y);
  });
}

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor y = a.value();
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] += b.value()[i];
  return make_var(std::move(y), {a, b}, [](Node& n) {
    const int64_t m = n.grad.numel();
    for (size_t k = 0; k < 2; ++k) {
      if (!wants(n, k)) continue;
      float* g = grad_of(n, k);
      for (int64_t i = 0; i < m; ++i) g[i] += n.grad[i];
    }
  });
}

Var scale(const Var& x, float s) {
  Tensor y = x.value();
  for (auto& v : y.storage()) v *= s;
  return make_var(std::move(y), {x}, [s](Node& n) {
    float* g = grad_of(n, 0);
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += s * n.grad[i];
  });
}

Var add_constant(const Var& x, const Tensor& c) {
  if (!x.value().same_shape(c)) throw ShapeError("add_constant: shape mismatch");
  Tensor y = x.value();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += c[i];
  return make_var(std::move(y), {x}, [](Node& n) {
    float* g = grad_of(n, 0);
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return make_var(std::move(y), {x}, [](Node& n) {
    float* g = grad_of(n, 0);
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
  });
}

Var max_pool2x2(const Var& x) {
  require_rank(x, 4, "max_pool2x2");
  const auto& v = x.value();
  const int64_t b = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
  if (h % 2 || w % 2) throw ShapeError("max_pool2x2: odd spatial size " + shape_str(v.shape()));
  Tensor y({b, c, h / 2, w / 2});
  std::vector<int64_t> arg(static_cast<size_t>(y.numel()));
  kernels::maxpool2x2_forward(b, c, h, w, v.data(), y.data(), arg.data());
  return make_var(std::move(y), {x}, [arg = std::move(arg)](Node& n) {
    kernels::maxpool2x2_backward(static_cast<int64_t>(arg.size()), arg.data(), n.grad.data(), grad_of(n, 0));
  });
}

Var upsample2x(const Var& x) {
  require_rank(x, 4, "upsample2x");
  const auto& v = x.value();
  const int64_t b = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
  Tensor y({b, c, 2 * h, 2 * w});
  kernels::upsample2x_forward(b, c, h, w, v.data(), y.data());
  return make_var(std::move(y), {x}, [b, c, h, w](Node& n) {
    kernels::upsample2x_backward(b, c, h, w, n.grad.data(), grad_of(n, 0));
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw ShapeError("concat_channels: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const int64_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), plane = av.dim(2) * av.dim(3);
  Tensor y({n, ca + cb, av.dim(2), av.dim(3)});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(av.data() + i * ca * plane, av.data() + (i + 1) * ca * plane, y.data() + i * (ca + cb) * plane);
    std::copy(bv.data() + i * cb * plane, bv.data() + (i + 1) * cb * plane, y.data() + (i * (ca + cb) + ca) * plane);
  }
  return make_var(std::move(y), {a, b}, [n, ca, cb, plane](Node& nd) {
    const float* g = nd.grad.data();
    if (wants(nd, 0)) {
      float* ga = grad_of(nd, 0);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < ca * plane; ++k) ga[i * ca * plane + k] += g[i * (ca + cb) * plane + k];
    }
    if (wants(nd, 1)) {
      float* gb = grad_of(nd, 1);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < cb * plane; ++k) gb[i * cb * plane + k] += g[(i * (ca + cb) + ca) * plane + k];
    }
  });
}

Var softmax_channels(const Var& x) {
  const auto& v = x.value();
  if (v.ndim() < 2) throw ShapeError("softmax_channels: rank must be >= 2");
  const int64_t n = v.dim(0), c = v.dim(1), plane = v.numel() / (n * c);
  Tensor y = Tensor::zeros_like(v);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t p = 0; p < plane; ++p) {
      float mx = v[(i * c) * plane + p];
      for (int64_t k = 1; k < c; ++k) mx = std::max(mx, v[(i * c + k) * plane + p]);
      double s = 0.0;
      for (int64_t k = 0; k < c; ++k) {
        const float e = std::exp(v[(i * c + k) * plane + p] - mx);
        y[(i * c + k) * plane + p] = e;
        s += e;
      }
      const float inv = static_cast<float>(1.0 / s);
      for (int64_t k = 0; k < c; ++k) y[(i * c + k) * plane + p] *= inv;
    }
  }
  Tensor saved = y;
  return make_var(std::move(y), {x}, [n, c, plane, saved = std::move(saved)](Node& nd) {
    float* g = grad_of(nd, 0);
    const float* gy = nd.grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t p = 0; p < plane; ++p) {
        double dot = 0.0;
        for (int64_t k = 0; k < c; ++k) {
          const int64_t o = (i * c + k) * plane + p;
          dot += static_cast<double>(gy[o]) * saved[o];
        }
        for (int64_t k = 0; k < c; ++k) {
          const int64_t o = (i * c + k) * plane + p;
          g[o] += saved[o] * static_cast<float>(gy[o] - dot);
        }
      }
    }
  });
}

Var transpose12(const Var& x) {
  require_rank(x, 3, "transpose12");
  const int64_t b = x.value().dim(0), m = x.value().dim(1), n = x.value().dim(2);
  Tensor y({b, n, m});
  const float* xs = x.value().data();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t r = 0; r < m; ++r)
      for (int64_t c = 0; c < n; ++c) y[(i * n + c) * m + r] = xs[(i * m + r) * n + c];
  return make_var(std::move(y), {x}, [b, m, n](Node& nd) {
    float* g = grad_of(nd, 0);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c) g[(i * m + r) * n + c] += nd.grad[(i * n + c) * m + r];
  });
}

Var max_over_last(const Var& x) {
  require_rank(x, 3, "max_over_last");
  const auto& v = x.value();
  const int64_t b = v.dim(0), c = v.dim(1), n = v.dim(2);
  if (n == 0) throw ShapeError("max_over_last: empty axis");
  Tensor y({b, c});
  std::vector<int64_t> arg(static_cast<size_t>(b * c));
  for (int64_t r = 0; r < b * c; ++r) {
    const float* row = v.data() + r * n;
    int64_t best = 0;
    for (int64_t k = 1; k < n; ++k)
      if (row[k] > row[best]) best = k;
    y[r] = row[best];
    arg[static_cast<size_t>(r)] = r * n + best;
  }
  return make_var(std::move(y), {x}, [arg = std::move(arg)](Node& nd) {
    float* g = grad_of(nd, 0);
    for (size_t r = 0; r < arg.size(); ++r) g[arg[r]] += nd.grad[static_cast<int64_t>(r)];
  });
}

Var point_transform(const Var& x, const Var& t) {
  require_rank(x, 3, "point_transform input");
  require_rank(t, 3, "point_transform matrix");
  const int64_t b = x.value().dim(0), k = x.value().dim(1), n = x.value().dim(2);
  if (t.value().dim(0) != b || t.value().dim(1) != k || t.value().dim(2) != k) {
    throw ShapeError("point_transform: matrix " + shape_str(t.shape()) + " vs points " + shape_str(x.shape()));
  }
  Tensor y({b, k, n});
  for (int64_t i = 0; i < b; ++i) {
    // y_b = t_b^T x_b
    kernels::gemm(true, false, k, n, k, 1.0f, t.value().data() + i * k * k, x.value().data() + i * k * n, 0.0f,
                  y.data() + i * k * n);
  }
  return make_var(std::move(y), {x, t}, [b, k, n](Node& nd) {
    const auto& xv = nd.inputs[0]->value;
    const auto& tv = nd.inputs[1]->value;
    for (int64_t i = 0; i < b; ++i) {
      const float* gy = nd.grad.data() + i * k * n;
      if (wants(nd, 0)) {
        kernels::gemm(false, false, k, n, k, 1.0f, tv.data() + i * k * k, gy, 1.0f, grad_of(nd, 0) + i * k * n);
      }
      if (wants(nd, 1)) {
        // dT = x gy^T
        kernels::gemm(false, true, k, k, n, 1.0f, xv.data() + i * k * n, gy, 1.0f, grad_of(nd, 1) + i * k * k);
      }
    }
  });
}

Var mean(const Var& x) {
  const int64_t n = x.value().numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (float v : x.value().storage()) s += v;
  Tensor y({1}, static_cast<float>(s / static_cast<double>(n)));
  return make_var(std::move(y), {x}, [n](Node& nd) {
    float* g = grad_of(nd, 0);
    const float gv = nd.grad[0] / static_cast<float>(n);
    for (int64_t i = 0; i < n; ++i) g[i] += gv;
  });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<float>& weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < terms.size(); ++i) s += static_cast<double>(weights[i]) * terms[i].item();
  return make_var(Tensor({1}, static_cast<float>(s)), terms, [weights](Node& nd) {
    for (size_t i = 0; i < weights.size(); ++i) {
      if (wants(nd, i)) grad_of(nd, i)[0] += weights[i] * nd.grad[0];
    }
  });
}

Var softplus_mean(const Var& z, float sign) {
  const int64_t n = z.value().numel();
  if (n == 0) throw ShapeError("softplus_mean: empty tensor");
  double s = 0.0;
  Tensor d = Tensor::zeros_like(z.value());
  for (int64_t i = 0; i < n; ++i) {
    const double a = sign * static_cast<double>(z.value()[i]);
    s += a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
    d[i] = static_cast<float>(sign / (1.0 + std::exp(-a)));
  }
  Tensor y({1}, static_cast<float>(s / static_cast<double>(n)));
  return make_var(std::move(y), {z}, [n, d = std::move(d)](Node& nd) {
    float* g = grad_of(nd, 0);
    const float gv = nd.grad[0] / static_cast<float>(n);
    for (int64_t i = 0; i < n; ++i) g[i] += gv * d[i];
  });
}

Var logit_margin(const Var& x) {
  require_rank(x, 2, "logit_margin");
  if (x.value().dim(1) != 2) throw ShapeError("logit_margin: expected two columns");
  const int64_t b = x.value().dim(0);
  Tensor y({b});
  for (int64_t i = 0; i < b; ++i) y[i] = x.value()[2 * i] - x.value()[2 * i + 1];
  return make_var(std::move(y), {x}, [b](Node& nd) {
    float* g = grad_of(nd, 0);
    for (int64_t i = 0; i < b; ++i) {
      g[2 * i] += nd.grad[i];
      g[2 * i + 1] -= nd.grad[i];
    }
  });
}

}  // namespace uda::ops
