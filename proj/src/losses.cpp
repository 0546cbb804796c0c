#include "uda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uda::losses {
namespace {

double clampd(double v, double eps) { return std::clamp(v, eps, 1.0 - eps); }

void check_geom(size_t s, size_t y, const SegGeom& g) {
  if (s != static_cast<size_t>(g.size()) || y != static_cast<size_t>(g.size())) {
    throw ShapeError("seg_loss: map sizes do not match geometry");
  }
}

struct ClassSums {
  std::vector<double> inter, sum_s, sum_y;
};

template <typename T>
ClassSums class_sums(std::span<const T> s, std::span<const T> y, const SegGeom& g) {
  ClassSums r{std::vector<double>(g.classes), std::vector<double>(g.classes), std::vector<double>(g.classes)};
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t c = 0; c < g.classes; ++c)
      for (int64_t p = 0; p < g.pixels; ++p) {
        const auto i = g.index(b, c, p);
        r.inter[c] += static_cast<double>(s[i]) * static_cast<double>(y[i]);
        r.sum_s[c] += static_cast<double>(s[i]);
        r.sum_y[c] += static_cast<double>(y[i]);
      }
  return r;
}

double softplus(double a) { return a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }

}  // namespace

void LossWeights::validate() const {
  for (double v : adv)
    if (!(v >= 0.0)) throw std::invalid_argument("loss weights: lambda_adv must be >= 0");
  for (double v : disc)
    if (!(v >= 0.0)) throw std::invalid_argument("loss weights: lambda_D must be >= 0");
  if (!(clamp > 0.0 && clamp < 0.5)) throw std::invalid_argument("loss weights: clamp must lie in (0, 0.5)");
}

template <typename T>
T seg_loss(std::span<const T> s, std::span<const T> y, const SegGeom& g, double eps, double smooth) {
  check_geom(s.size(), y.size(), g);
  double bce = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    const double v = clampd(static_cast<double>(s[i]), eps);
    const double t = static_cast<double>(y[i]);
    bce -= t * std::log(v) + (1.0 - t) * std::log(1.0 - v);
  }
  bce /= static_cast<double>(s.size());
  const ClassSums cs = class_sums(s, y, g);
  double jac = 0.0;
  for (int64_t c = 0; c < g.classes; ++c) {
    const double u = cs.sum_s[c] + cs.sum_y[c] - cs.inter[c];
    jac += 1.0 - (cs.inter[c] + smooth) / (u + smooth);
  }
  return static_cast<T>(bce + jac / static_cast<double>(g.classes));
}

template <typename T>
void seg_loss_grad(std::span<const T> s, std::span<const T> y, const SegGeom& g, std::span<T> grad, double eps,
                   double smooth) {
  check_geom(s.size(), y.size(), g);
  if (grad.size() != s.size()) throw ShapeError("seg_loss_grad: gradient size mismatch");
  const ClassSums cs = class_sums(s, y, g);
  const double m = static_cast<double>(s.size());
  const double kc = static_cast<double>(g.classes);
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t c = 0; c < g.classes; ++c) {
      const double inter = cs.inter[c] + smooth;
      const double uni = cs.sum_s[c] + cs.sum_y[c] - cs.inter[c] + smooth;
      for (int64_t p = 0; p < g.pixels; ++p) {
        const auto i = g.index(b, c, p);
        const double raw = static_cast<double>(s[i]);
        const double t = static_cast<double>(y[i]);
        double d = 0.0;
        if (raw > eps && raw < 1.0 - eps) d = (-t / raw + (1.0 - t) / (1.0 - raw)) / m;
        // J = inter/uni; dI/ds = y, dU/ds = 1 - y.
        const double dj = (t * uni - inter * (1.0 - t)) / (uni * uni);
        grad[i] = static_cast<T>(d - dj / kc);
      }
    }
}

template float seg_loss<float>(std::span<const float>, std::span<const float>, const SegGeom&, double, double);
template double seg_loss<double>(std::span<const double>, std::span<const double>, const SegGeom&, double, double);
template void seg_loss_grad<float>(std::span<const float>, std::span<const float>, const SegGeom&, std::span<float>,
                                   double, double);
template void seg_loss_grad<double>(std::span<const double>, std::span<const double>, const SegGeom&,
                                    std::span<double>, double, double);

SelfInfoMap self_information(std::span<const double> s, const SegGeom& g, double eps) {
  if (s.size() != static_cast<size_t>(g.size())) throw ShapeError("self_information: size mismatch");
  SelfInfoMap r;
  r.map.resize(s.size());
  for (size_t i = 0; i < s.size(); ++i) r.map[i] = -s[i] * std::log(clampd(s[i], eps));
  double total = 0.0;
  for (double v : r.map) total += v;
  r.scalar_entropy = total / static_cast<double>(g.batch * g.pixels);
  return r;
}

double adv_loss(std::span<const double> d_target, double eps) {
  if (d_target.empty()) throw std::invalid_argument("adv_loss: empty input");
  double s = 0.0;
  for (double d : d_target) s += std::log(1.0 - clampd(d, eps));
  return s / static_cast<double>(d_target.size());
}

double disc_loss(std::span<const double> d_source, std::span<const double> d_target, double eps) {
  if (d_source.empty() || d_target.empty()) throw std::invalid_argument("disc_loss: empty input");
  double t = 0.0, s = 0.0;
  for (double d : d_target) t += std::log(clampd(d, eps));
  for (double d : d_source) s += std::log(1.0 - clampd(d, eps));
  return t / static_cast<double>(d_target.size()) + s / static_cast<double>(d_source.size());
}

Objective total_objective(const LossParts& parts, const LossWeights& w) {
  auto check = [](double v, const std::string& name) {
    if (!std::isfinite(v)) throw std::domain_error("non-finite loss part: " + name);
  };
  check(parts.seg, "L_seg");
  check(parts.emd, "L_emd");
  for (int i = 0; i < 3; ++i) {
    check(parts.adv[i], "L_adv" + std::to_string(i + 1));
    check(parts.disc[i], "L_D" + std::to_string(i + 1));
  }
  Objective o;
  o.parts = parts;
  o.total = parts.seg + parts.emd;
  for (int i = 0; i < 3; ++i) o.total += w.adv[i] * parts.adv[i] - w.disc[i] * parts.disc[i];
  return o;
}

LossWeights ablate(LossWeights w, const std::array<bool, 3>& enabled) {
  for (int i = 0; i < 3; ++i) {
    if (!enabled[i]) w.adv[i] = w.disc[i] = 0.0;
  }
  return w;
}

// ------------------------------------------------------------------ wrappers

Var seg_loss(const Var& prob, std::span<const uint8_t> labels, double eps) {
  const auto& sh = prob.shape();
  if (sh.size() != 4) throw ShapeError("seg_loss: expected [B,C,H,W], got " + shape_str(sh));
  SegGeom g{sh[0], sh[1], sh[2] * sh[3]};
  if (labels.size() != static_cast<size_t>(g.batch * g.pixels)) throw ShapeError("seg_loss: label count mismatch");
  std::vector<float> y(static_cast<size_t>(g.size()), 0.0f);
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t p = 0; p < g.pixels; ++p) {
      const int64_t c = labels[static_cast<size_t>(b * g.pixels + p)];
      if (c >= g.classes) throw std::invalid_argument("seg_loss: label exceeds class count");
      y[static_cast<size_t>(g.index(b, c, p))] = 1.0f;
    }
  const std::span<const float> s = prob.value().span();
  const float v = seg_loss<float>(s, y, g, eps);
  Tensor grad(sh);
  seg_loss_grad<float>(s, y, g, grad.span(), eps);
  return make_var(Tensor({1}, v), {prob}, [grad = std::move(grad)](Node& n) {
    float* gx = n.inputs[0]->grad_buffer().data();
    const float scale = n.grad[0];
    for (int64_t i = 0; i < grad.numel(); ++i) gx[i] += scale * grad[i];
  });
}

Var entropy_map(const Var& prob, double eps) {
  const Tensor& s = prob.value();
  Tensor y = Tensor::zeros_like(s), d = Tensor::zeros_like(s);
  for (int64_t i = 0; i < s.numel(); ++i) {
    const double raw = s[i];
    const double c = clampd(raw, eps);
    y[i] = static_cast<float>(-raw * std::log(c));
    d[i] = static_cast<float>(raw > eps && raw < 1.0 - eps ? -std::log(c) - 1.0 : -std::log(c));
  }
  return make_var(std::move(y), {prob}, [d = std::move(d)](Node& n) {
    float* g = n.inputs[0]->grad_buffer().data();
    for (int64_t i = 0; i < d.numel(); ++i) g[i] += n.grad[i] * d[i];
  });
}

Var emd_loss(const Var& cloud, const std::vector<pc::PointCloud>& gt) {
  const auto& sh = cloud.shape();
  if (sh.size() != 3 || sh[2] != 3) throw ShapeError("emd_loss: expected [B,N,3], got " + shape_str(sh));
  const int64_t b = sh[0], n = sh[1];
  if (static_cast<int64_t>(gt.size()) != b) throw ShapeError("emd_loss: batch size mismatch");
  std::vector<double> cost(static_cast<size_t>(b));
  Tensor grad(sh);
  const float* x = cloud.value().data();
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < b; ++i) {
    try {
      pc::PointCloud pred;
      pred.points.resize(static_cast<size_t>(n));
      for (int64_t k = 0; k < n; ++k)
        for (int a = 0; a < 3; ++a) pred.points[k][a] = x[(i * n + k) * 3 + a];
      const pc::Matching m = pc::emd(pred, gt[static_cast<size_t>(i)]);
      cost[static_cast<size_t>(i)] = m.cost;
      const auto g = pc::emd_gradient(pred, gt[static_cast<size_t>(i)], m);
      for (int64_t k = 0; k < n; ++k)
        for (int a = 0; a < 3; ++a) grad[(i * n + k) * 3 + a] = static_cast<float>(g[k][a] / static_cast<double>(b));
    } catch (const std::exception& e) {
#pragma omp critical
      error = e.what();
    }
  }
  if (!error.empty()) throw pc::PointCloudError("emd_loss: " + error);
  double total = 0.0;
  for (double c : cost) total += c;
  return make_var(Tensor({1}, static_cast<float>(total / static_cast<double>(b))), {cloud},
                  [grad = std::move(grad)](Node& nd) {
                    float* g = nd.inputs[0]->grad_buffer().data();
                    for (int64_t i = 0; i < grad.numel(); ++i) g[i] += nd.grad[0] * grad[i];
                  });
}

Var generator_adv(const Var& target_logits, bool saturating) {
  if (saturating) return ops::scale(ops::softplus_mean(target_logits, 1.0f), -1.0f);
  return ops::softplus_mean(target_logits, -1.0f);
}

Var discriminator_bce(const Var& source_logits, const Var& target_logits) {
  return ops::add(ops::softplus_mean(source_logits, -1.0f), ops::softplus_mean(target_logits, 1.0f));
}

double discriminator_objective(const Tensor& source_logits, const Tensor& target_logits) {
  double s = 0.0, t = 0.0;
  for (float z : source_logits.storage()) s -= softplus(-static_cast<double>(z));
  for (float z : target_logits.storage()) t -= softplus(static_cast<double>(z));
  return s / static_cast<double>(source_logits.numel()) + t / static_cast<double>(target_logits.numel());
}

}  // namespace uda::losses
