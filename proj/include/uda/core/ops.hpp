#pragma once

// Differentiable operations over Var. Image tensors are NCHW; point sets are
// [B, C, N] (channels first, one column per point).

#include "uda/core/autograd.hpp"

namespace uda::ops {

struct Conv2dOptions {
  int64_t stride = 1;
  int64_t pad = 0;
  int64_t dilation = 1;
};

/// x [B,Cin,H,W], w [Cout,Cin,kh,kw], bias [Cout] or undefined.
Var conv2d(const Var& x, const Var& w, const Var& bias, Conv2dOptions opt = {});

/// Shared per-point linear map: x [B,Cin,N], w [Cout,Cin], bias [Cout].
Var pointwise(const Var& x, const Var& w, const Var& bias);

/// Fully connected: x [B,K], w [M,K], bias [M] or undefined.
Var linear(const Var& x, const Var& w, const Var& bias);

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  bool training = true;
  bool update_running = true;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

/// Normalises over every axis except axis 1.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& st);

Var relu(const Var& x);
Var leaky_relu(const Var& x, float slope);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, float s);
/// x + c for a constant tensor c of the same shape.
Var add_constant(const Var& x, const Tensor& c);
Var reshape(const Var& x, Shape shape);

Var max_pool2x2(const Var& x);
Var upsample2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);

/// Softmax across axis 1; trailing axes are independent positions.
Var softmax_channels(const Var& x);

/// Swaps the last two axes of a rank-3 tensor: [B,M,N] -> [B,N,M].
Var transpose12(const Var& x);

/// Max over the last axis: [B,C,N] -> [B,C].
Var max_over_last(const Var& x);

/// y[b,j,n] = sum_i x[b,i,n] * t[b,i,j]; x [B,K,N], t [B,K,K].
Var point_transform(const Var& x, const Var& t);

/// Mean of all elements as a scalar Var.
Var mean(const Var& x);

/// Weighted sum of scalar Vars.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<float>& weights);

/// mean(softplus(sign * z)): binary cross-entropy on logits where sign=-1
/// means label 1 and sign=+1 means label 0.
Var softplus_mean(const Var& z, float sign);

/// Difference of the two logit columns of [B,2]: z = x[:,0] - x[:,1].
Var logit_margin(const Var& x);

}  // namespace uda::ops
