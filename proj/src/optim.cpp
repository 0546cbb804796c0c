#include "uda/optim.hpp"

#include <cmath>

namespace uda::optim {

Adam::Adam(nets::ParamStore& store, AdamOptions opt) : store_(&store), opt_(opt) {
  for (const auto& p : store.params()) {
    m_.push_back(Tensor::zeros_like(p.var.value()));
    v_.push_back(Tensor::zeros_like(p.var.value()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(opt_.beta1), b2 = static_cast<float>(opt_.beta2);
  const float step = static_cast<float>(lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(opt_.eps);
  auto& params = store_->params();
  for (size_t i = 0; i < params.size(); ++i) {
    Var& p = params[i].var;
    if (!p.has_grad()) continue;
    float* w = p.mutable_value().data();
    const float* g = p.grad().data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const int64_t n = p.value().numel();
#pragma omp parallel for simd schedule(static)
    for (int64_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      w[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

Sgd::Sgd(nets::ParamStore& store, double momentum) : store_(&store), momentum_(momentum) {
  for (const auto& p : store.params()) vel_.push_back(Tensor::zeros_like(p.var.value()));
}

void Sgd::step(double lr) {
  const float mu = static_cast<float>(momentum_), rate = static_cast<float>(lr);
  auto& params = store_->params();
  for (size_t i = 0; i < params.size(); ++i) {
    Var& p = params[i].var;
    if (!p.has_grad()) continue;
    float* w = p.mutable_value().data();
    const float* g = p.grad().data();
    float* vel = vel_[i].data();
    const int64_t n = p.value().numel();
#pragma omp parallel for simd schedule(static)
    for (int64_t k = 0; k < n; ++k) {
      vel[k] = mu * vel[k] + g[k];
      w[k] -= rate * vel[k];
    }
  }
}

}  // namespace uda::optim
