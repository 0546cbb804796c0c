#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "uda/nets.hpp"

using namespace uda;
using namespace uda::nets;
using uda::testing::random_tensor;

namespace {

SegmenterSpec small_seg(int size = 32, int classes = 4, int points = 8) {
  SegmenterSpec s;
  s.base_width = 4;
  s.image_size = size;
  s.n_classes = classes;
  s.n_points = points;
  return s;
}

PointNetSpec small_pointnet() {
  PointNetSpec p;
  p.tnet_widths = {8, 16};
  p.tnet_fc = {8};
  p.point_widths = {8};
  p.feature_widths = {8, 16};
  p.fc_widths = {8};
  return p;
}

void check_seg_outputs(const SegOutputs& o, int64_t b, int64_t c, int64_t hw, int64_t n) {
  ASSERT_EQ(o.prob.shape(), (Shape{b, c, hw, hw}));
  ASSERT_EQ(o.cloud.shape(), (Shape{b, n, 3}));
  const Tensor& p = o.prob.value();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t y = 0; y < hw; ++y)
      for (int64_t x = 0; x < hw; ++x) {
        double s = 0.0;
        for (int64_t k = 0; k < c; ++k) s += p.at(i, k, y, x);
        ASSERT_NEAR(s, 1.0, 1e-5);
      }
  for (float v : o.cloud.value().storage()) {
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
}

}  // namespace

TEST(Segmenter, DefaultSpecShapes) {
  Segmenter g(SegmenterSpec{}, 1);
  std::mt19937_64 rng(1);
  const auto out = seg_forward(g, random_tensor({1, 3, 224, 224}, rng, 0, 1));
  check_seg_outputs(out, 1, 4, 224, 300);
}

TEST(Segmenter, CrossModalityShapes) {
  SegmenterSpec s;
  s.base_width = 8;
  s.image_size = 256;
  s.n_classes = 5;
  Segmenter g(s, 2);
  std::mt19937_64 rng(2);
  check_seg_outputs(seg_forward(g, random_tensor({1, 3, 256, 256}, rng, 0, 1)), 1, 5, 256, 300);
}

TEST(Segmenter, RejectsBadInput) {
  Segmenter g(small_seg(), 1);
  EXPECT_THROW(seg_forward(g, Tensor({1, 3, 30, 30})), ShapeError);
  EXPECT_THROW(seg_forward(g, Tensor({1, 3, 48, 48})), ShapeError);
  EXPECT_THROW(seg_forward(g, Tensor({3, 32, 32})), ShapeError);
  SegmenterSpec bad = small_seg();
  bad.image_size = 40;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Segmenter, SeededInitIsDeterministic) {
  Segmenter a(small_seg(), 5), b(small_seg(), 5), c(small_seg(), 6);
  EXPECT_EQ(a.store().hash(), b.store().hash());
  EXPECT_NE(a.store().hash(), c.store().hash());
}

TEST(Segmenter, GradientReachesEveryParameter) {
  Segmenter g(small_seg(), 3);
  std::mt19937_64 rng(3);
  const Var x(random_tensor({2, 3, 32, 32}, rng, 0, 1));
  // Weighted sums of both heads; a plain mean of a softmax has zero gradient.
  const auto a = g.forward(x, {true, true});
  backward(a.prob, random_tensor(a.prob.shape(), rng));
  const auto b = g.forward(x, {true, true});
  backward(b.cloud, random_tensor(b.cloud.shape(), rng));
  for (const auto& p : g.store().params()) {
    ASSERT_TRUE(p.var.has_grad()) << p.name;
    double mag = 0.0;
    for (float v : p.var.grad().storage()) mag += std::abs(v);
    EXPECT_GT(mag, 0.0) << p.name;
  }
}

TEST(Segmenter, ParameterCountMatchesHandCount) {
  const auto spec = small_seg(32, 4, 8);
  Segmenter g(spec, 1);
  EXPECT_EQ(g.store().count(), count_parameters(spec));
  // Hand count for base width b=4, image 32: conv-BN = in*out*9 + 2*out.
  auto cb = [](int64_t i, int64_t o) { return i * o * 9 + 2 * o; };
  int64_t n = cb(3, 4) + cb(4, 4) + cb(4, 8) + cb(8, 8) + cb(8, 16) + cb(16, 16) + cb(16, 32) + cb(32, 32);
  n += cb(32, 64) + 6 * cb(64, 64);
  n += cb(64, 32) + cb(64, 32) + cb(32, 32) + cb(32, 16) + cb(32, 16) + cb(16, 16);
  n += cb(16, 8) + cb(16, 8) + cb(8, 8) + cb(8, 4) + cb(8, 4) + cb(4, 4);
  n += 4 * 4 + 4;                   // 1x1 head
  n += 64 * 4 * 36 + 4;             // 6x6 point-head conv on a 2x2 bottleneck -> 1x1
  n += 4 * 1 * 1 * 24 + 24;         // FC to 8 points
  EXPECT_EQ(count_parameters(spec), n);
}

TEST(Segmenter, DoublingWidthRoughlyQuadruplesEncoder) {
  auto encoder = [](int base) {
    auto s = small_seg(32);
    s.base_width = base;
    Segmenter g(s, 1);
    int64_t n = 0;
    for (const auto& p : g.store().params())
      if (p.name.rfind("enc", 0) == 0 && p.name.size() > 2 && p.name.substr(p.name.size() - 2) == ".w")
        n += p.var.value().numel();
    return static_cast<double>(n);
  };
  const double r = encoder(16) / encoder(8);
  EXPECT_GT(r, 3.8);
  EXPECT_LE(r, 4.0);
}

TEST(PatchGan, LogitMapShapes) {
  PatchGan d(PatchGanSpec{}, 1);
  std::mt19937_64 rng(4);
  EXPECT_EQ(patchgan_forward(d, random_tensor({1, 4, 224, 224}, rng)).shape(), (Shape{1, 1, 7, 7}));
  PatchGanSpec s5;
  s5.in_channels = 5;
  PatchGan d5(s5, 1);
  EXPECT_EQ(patchgan_forward(d5, random_tensor({1, 5, 256, 256}, rng)).shape(), (Shape{1, 1, 8, 8}));
}

TEST(PatchGan, ZeroWeightsGiveZeroLogits) {
  PatchGanSpec s;
  s.widths = {8, 8, 8, 8, 1};
  PatchGan d(s, 1);
  for (auto& p : d.store().params()) p.var.mutable_value().fill(0.0f);
  std::mt19937_64 rng(5);
  const Tensor out = patchgan_forward(d, random_tensor({2, 4, 64, 64}, rng));
  for (float v : out.storage()) EXPECT_EQ(v, 0.0f);
}

TEST(PatchGan, ParameterCounts) {
  PatchGanSpec s;
  s.in_channels = 1;
  s.widths = {1, 1, 1, 1, 1};
  EXPECT_EQ(count_parameters(s), 5 * (16 + 1));
  EXPECT_EQ(PatchGan(s, 1).store().count(), 85);
  s.widths.clear();
  EXPECT_EQ(count_parameters(s), 0);
  EXPECT_EQ(count_parameters(PatchGanSpec{}), PatchGan(PatchGanSpec{}, 1).store().count());
}

TEST(PointNet, PermutationInvariant) {
  PointNetDisc d(small_pointnet(), 7);
  std::mt19937_64 rng(7);
  const Tensor cloud = random_tensor({1, 50, 3}, rng, 0, 1);
  const Tensor ref = pointnet_forward(d, cloud);
  std::vector<int> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 20; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor p({1, 50, 3});
    for (int i = 0; i < 50; ++i)
      for (int c = 0; c < 3; ++c) p[i * 3 + c] = cloud[perm[i] * 3 + c];
    const Tensor out = pointnet_forward(d, p);
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(out[k], ref[k], 1e-6);
  }
}

TEST(PointNet, IdentityTransformAtInitAndSoftmaxRows) {
  PointNetDisc d(small_pointnet(), 8);
  std::mt19937_64 rng(8);
  const Tensor cloud = random_tensor({2, 30, 3}, rng, 0, 1);
  const Tensor t = d.input_transform(Var(cloud), {false, false}).value();
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) EXPECT_EQ(t[b * 9 + i * 3 + j], i == j ? 1.0f : 0.0f);
  const Tensor p = pointnet_forward(d, cloud);
  ASSERT_EQ(p.shape(), (Shape{2, 2}));
  for (int b = 0; b < 2; ++b) EXPECT_NEAR(p[b * 2] + p[b * 2 + 1], 1.0, 1e-6);
}

TEST(PointNet, ParameterCountAndInputChecks) {
  const auto s = small_pointnet();
  EXPECT_EQ(PointNetDisc(s, 1).store().count(), count_parameters(s));
  EXPECT_EQ(PointNetDisc(PointNetSpec{}, 1).store().count(), count_parameters(PointNetSpec{}));
  PointNetDisc d(s, 1);
  Tensor bad({1, 10, 3}, 0.5f);
  bad[4] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(pointnet_forward(d, bad), std::invalid_argument);
  EXPECT_THROW(pointnet_forward(d, Tensor({1, 10, 2})), ShapeError);
}

TEST(ParamStore, ProbeModeLeavesRunningStatsUntouched) {
  Segmenter g(small_seg(), 9);
  std::mt19937_64 rng(9);
  const uint64_t before = g.store().hash();
  g.forward(Var(random_tensor({2, 3, 32, 32}, rng)), {true, false});
  EXPECT_EQ(g.store().hash(), before);
  g.forward(Var(random_tensor({2, 3, 32, 32}, rng)), {true, true});
  EXPECT_NE(g.store().hash(), before);
}
