#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "uda/core/ops.hpp"

using namespace uda;
using uda::testing::grad_check;
using uda::testing::random_tensor;

namespace {

constexpr double kTol = 2e-2;  // float32 central differences

/// Values spaced at least `gap` apart in random order, so max/relu kinks are
/// never crossed by a finite-difference probe.
Tensor spaced_tensor(Shape shape, std::mt19937_64& rng, float gap = 0.1f) {
  Tensor t(std::move(shape));
  std::vector<int> order(static_cast<size_t>(t.numel()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const float offset = -0.5f * gap * static_cast<float>(t.numel()) + 0.5f * gap;
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = offset + gap * static_cast<float>(order[static_cast<size_t>(i)]);
  return t;
}

}  // namespace

TEST(Autograd, Conv2dGradients) {
  std::mt19937_64 rng(1);
  for (auto opt : {ops::Conv2dOptions{1, 1, 1}, ops::Conv2dOptions{2, 1, 1}, ops::Conv2dOptions{1, 2, 2}}) {
    auto f = [&](const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2], opt); };
    std::vector<Tensor> in{random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)};
    for (size_t i = 0; i < 3; ++i) EXPECT_LT(grad_check(f, in, i, rng), kTol) << "input " << i;
  }
}

TEST(Autograd, LinearAndPointwiseGradients) {
  std::mt19937_64 rng(2);
  auto lin = [](const std::vector<Var>& v) { return ops::linear(v[0], v[1], v[2]); };
  std::vector<Tensor> a{random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)};
  for (size_t i = 0; i < 3; ++i) EXPECT_LT(grad_check(lin, a, i, rng), kTol);
  auto pw = [](const std::vector<Var>& v) { return ops::pointwise(v[0], v[1], v[2]); };
  std::vector<Tensor> b{random_tensor({2, 3, 6}, rng), random_tensor({4, 3}, rng), random_tensor({4}, rng)};
  for (size_t i = 0; i < 3; ++i) EXPECT_LT(grad_check(pw, b, i, rng), kTol);
}

TEST(Autograd, BatchNormTrainingGradients) {
  std::mt19937_64 rng(3);
  auto f = [](const std::vector<Var>& v) {
    ops::BatchNormState st;
    st.update_running = false;
    return ops::batch_norm(v[0], v[1], v[2], st);
  };
  std::vector<Tensor> in{random_tensor({3, 2, 2, 2}, rng, -2, 2), random_tensor({2}, rng), random_tensor({2}, rng)};
  for (size_t i = 0; i < 3; ++i) EXPECT_LT(grad_check(f, in, i, rng, 1e-2), 5e-2) << "input " << i;
}

TEST(Autograd, ElementwiseGradients) {
  std::mt19937_64 rng(4);
  std::vector<Tensor> in{spaced_tensor({2, 3, 4}, rng)};
  auto check = [&](auto op) { return grad_check(op, in, 0, rng, 1e-2); };
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::relu(v[0]); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::leaky_relu(v[0], 0.2f); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::sigmoid(v[0]); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::scale(v[0], -1.5f); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::add(v[0], v[0]); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::reshape(v[0], {6, 4}); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::transpose12(v[0]); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::max_over_last(v[0]); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::mean(v[0]); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::softplus_mean(v[0], -1.0f); }), kTol);
  EXPECT_LT(check([](const std::vector<Var>& v) { return ops::softplus_mean(v[0], 1.0f); }), kTol);
}

TEST(Autograd, ImageOpGradients) {
  std::mt19937_64 rng(5);
  std::vector<Tensor> in{spaced_tensor({1, 2, 4, 4}, rng)};
  EXPECT_LT(grad_check([](const std::vector<Var>& v) { return ops::max_pool2x2(v[0]); }, in, 0, rng), kTol);
  EXPECT_LT(grad_check([](const std::vector<Var>& v) { return ops::upsample2x(v[0]); }, in, 0, rng), kTol);
  EXPECT_LT(grad_check([](const std::vector<Var>& v) { return ops::softmax_channels(v[0]); }, in, 0, rng), kTol);
  std::vector<Tensor> two{random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 1, 3, 3}, rng)};
  auto cat = [](const std::vector<Var>& v) { return ops::concat_channels(v[0], v[1]); };
  EXPECT_LT(grad_check(cat, two, 0, rng), kTol);
  EXPECT_LT(grad_check(cat, two, 1, rng), kTol);
}

TEST(Autograd, PointTransformAndMarginGradients) {
  std::mt19937_64 rng(6);
  auto f = [](const std::vector<Var>& v) { return ops::point_transform(v[0], v[1]); };
  std::vector<Tensor> in{random_tensor({2, 3, 5}, rng), random_tensor({2, 3, 3}, rng)};
  EXPECT_LT(grad_check(f, in, 0, rng), kTol);
  EXPECT_LT(grad_check(f, in, 1, rng), kTol);
  std::vector<Tensor> logits{random_tensor({4, 2}, rng)};
  EXPECT_LT(grad_check([](const std::vector<Var>& v) { return ops::logit_margin(v[0]); }, logits, 0, rng), kTol);
}

TEST(Autograd, WeightedSumAndSharedInputsAccumulate) {
  Var a(Tensor({1}, 2.0f), true);
  Var b(Tensor({1}, 3.0f), true);
  const Var s = ops::weighted_sum({ops::mean(a), ops::mean(b), ops::mean(a)}, {1.0f, 2.0f, 0.5f});
  EXPECT_FLOAT_EQ(s.item(), 2.0f + 6.0f + 1.0f);
  backward(s);
  EXPECT_FLOAT_EQ(a.grad()[0], 1.5f);
  EXPECT_FLOAT_EQ(b.grad()[0], 2.0f);
  // Leaf gradients accumulate across backward passes until zeroed.
  backward(s);
  EXPECT_FLOAT_EQ(a.grad()[0], 3.0f);
  a.zero_grad();
  EXPECT_TRUE(!a.has_grad() || a.grad()[0] == 0.0f);
}

TEST(Autograd, DetachBlocksGradient) {
  Var a(Tensor({2}, 1.0f), true);
  const Var d = detach(ops::scale(a, 3.0f));
  EXPECT_FALSE(d.requires_grad());
  Var b(Tensor({2}, 1.0f), true);
  backward(ops::mean(ops::add(d, b)));
  EXPECT_FALSE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
}

TEST(Autograd, ShapeContractsRejectMismatches) {
  Var x(Tensor({1, 2, 4, 4}), false);
  Var w(Tensor({3, 5, 3, 3}), false);
  EXPECT_THROW(ops::conv2d(x, w, Var()), ShapeError);
  EXPECT_THROW(ops::add(Var(Tensor({2})), Var(Tensor({3}))), ShapeError);
  EXPECT_THROW(ops::max_pool2x2(Var(Tensor({1, 1, 3, 4}))), ShapeError);
}
