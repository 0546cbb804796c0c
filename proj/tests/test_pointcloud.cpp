#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "uda/pointcloud.hpp"

using namespace uda;
using namespace uda::pc;

namespace {

PointCloud random_cloud(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud c;
  for (size_t i = 0; i < n; ++i) c.points.push_back({u(rng), u(rng), u(rng)});
  return c;
}

std::vector<uint8_t> disc_mask(int size, double cy, double cx, double r) {
  std::vector<uint8_t> m(static_cast<size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (std::hypot(y - cy, x - cx) <= r) m[static_cast<size_t>(y) * size + x] = 1;
  return m;
}

}  // namespace

TEST(Contour, EmptyMaskGivesNoPoints) {
  std::vector<uint8_t> m(100, 0);
  EXPECT_TRUE(mask_to_contour(m, 10, 10).empty());
}

TEST(Contour, SquareContourAtHalfPixelFromEdge) {
  for (int s : {4, 7, 10}) {
    const int n = 24, y0 = 6, x0 = 5;
    std::vector<uint8_t> m(n * n, 0);
    for (int y = y0; y < y0 + s; ++y)
      for (int x = x0; x < x0 + s; ++x) m[y * n + x] = 1;
    const auto pts = mask_to_contour(m, n, n);
    const double cy = y0 + (s - 1) / 2.0, cx = x0 + (s - 1) / 2.0;
    for (const auto& p : pts) {
      const double linf = std::max(std::abs(p.x - cx), std::abs(p.y - cy));
      EXPECT_NEAR(linf, s / 2.0, 0.5 + 1e-12);
    }
    EXPECT_GE(static_cast<int>(pts.size()), 4 * s - 8);
    EXPECT_LE(static_cast<int>(pts.size()), 4 * s + 8);
  }
}

TEST(Contour, DiscContourWithinOnePixelOfRadius) {
  for (double r : {3.0, 6.5, 11.0}) {
    const auto m = disc_mask(32, 15.0, 16.0, r);
    const auto pts = mask_to_contour(m, 32, 32);
    ASSERT_FALSE(pts.empty());
    for (const auto& p : pts) {
      const double d = std::hypot(p.y - 15.0, p.x - 16.0);
      EXPECT_GE(d, r - 1.0);
      EXPECT_LE(d, r + 1.0);
    }
  }
}

TEST(Contour, SeparateLoopsForSeparateBlobs) {
  auto m = disc_mask(40, 10, 10, 4);
  const auto m2 = disc_mask(40, 28, 28, 5);
  for (size_t i = 0; i < m.size(); ++i) m[i] |= m2[i];
  EXPECT_EQ(mask_to_loops(m, 40, 40).size(), 2u);
}

TEST(Fps, FullSetAndCorners) {
  std::vector<double> corners{0, 0, 1, 0, 0, 1, 1, 1};
  const auto two = farthest_point_sample(corners, 2, 2);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0], 0u);
  EXPECT_EQ(two[1], 3u);
  auto all = farthest_point_sample(corners, 2, 4);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<size_t>{0, 1, 2, 3}));
  EXPECT_THROW(farthest_point_sample(corners, 2, 5), PointCloudError);
}

TEST(Fps, MatchesGreedyOracle) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 40; ++t) {
    const int dim = t % 2 ? 3 : 2;
    const size_t n = 50, k = 10;
    std::vector<double> c(n * dim);
    for (auto& v : c) v = u(rng);
    EXPECT_EQ(farthest_point_sample(c, dim, k), oracle::fps(c, dim, k));
  }
}

TEST(Fps, TiesBreakToLowestIndex) {
  // Points 1 and 2 are equidistant from point 0.
  std::vector<double> c{0, 0, 1, 0, -1, 0, 0.2, 0};
  const auto s = farthest_point_sample(c, 2, 2);
  EXPECT_EQ(s[1], 1u);
}

TEST(GtCloud, DiscCloudOnAnalyticCircle) {
  synth::LabelMap lm{48, 48, disc_mask(48, 24.0, 22.0, 10.0)};
  const auto cloud = make_gt_pointcloud(lm, 3, 10, 300);
  ASSERT_EQ(cloud.size(), 300u);
  EXPECT_TRUE(cloud.in_unit_cube());
  for (const auto& p : cloud.points) {
    const double x = p[0] * 47.0, y = p[1] * 47.0;
    EXPECT_LE(std::abs(std::hypot(y - 24.0, x - 22.0) - 10.0), 1.5);
    EXPECT_NEAR(p[2], 3.0 / 9.0, 1e-12);
  }
}

TEST(GtCloud, FirstSliceHasZeroDepthAndEmptyMaskThrows) {
  synth::LabelMap lm{32, 32, disc_mask(32, 16, 16, 2)};
  const auto c = make_gt_pointcloud(lm, 0, 10, 300);
  EXPECT_EQ(c.size(), 300u);  // tiny contour is upsampled
  for (const auto& p : c.points) EXPECT_EQ(p[2], 0.0);
  synth::LabelMap empty{32, 32, std::vector<uint8_t>(32 * 32, 0)};
  EXPECT_THROW(make_gt_pointcloud(empty, 0, 10, 300), PointCloudError);
}

TEST(Emd, TrivialCases) {
  std::mt19937_64 rng(1);
  const auto a = random_cloud(6, rng);
  const auto self = emd(a, a);
  EXPECT_NEAR(self.cost, 0.0, 1e-15);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(self.perm[i], static_cast<int>(i));
  PointCloud p{{{0, 0, 0}}}, q{{{0.3, 0.4, 0}}};
  EXPECT_NEAR(emd(p, q).cost, 0.5, 1e-15);
  EXPECT_THROW(emd(a, random_cloud(5, rng)), PointCloudError);
}

TEST(Emd, MatchesPermutationOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 60; ++t) {
    const size_t n = 2 + t % 6;
    const auto a = random_cloud(n, rng), b = random_cloud(n, rng);
    const double want = oracle::emd(a.points, b.points);
    EXPECT_NEAR(emd(a, b).cost, want, 1e-9);
    EXPECT_NEAR(emd_bruteforce(a, b), want, 1e-9);
  }
}

TEST(Emd, BruteForceSwappedPairAndLimit) {
  PointCloud a{{{0, 0, 0}, {1, 0, 0}}}, b{{{1, 0, 0}, {0, 0, 0}}};
  EXPECT_NEAR(emd_bruteforce(a, b), 0.0, 1e-15);
  std::mt19937_64 rng(3);
  EXPECT_THROW(emd_bruteforce(random_cloud(kBruteForceLimit + 1, rng), random_cloud(kBruteForceLimit + 1, rng)),
               PointCloudError);
}

TEST(Emd, SymmetricTranslationInvariantAndBelowIdentity) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 5; ++t) {
    auto a = random_cloud(60, rng), b = random_cloud(60, rng);
    const double ab = emd(a, b).cost;
    EXPECT_NEAR(ab, emd(b, a).cost, 1e-9);
    double ident = 0.0;
    for (size_t i = 0; i < a.size(); ++i) ident += oracle::dist(a.points[i], b.points[i]);
    EXPECT_LE(ab, ident + 1e-12);
    for (auto* c : {&a, &b})
      for (auto& p : c->points) p = {p[0] + 3.5, p[1] - 1.25, p[2] + 0.5};
    EXPECT_NEAR(emd(a, b).cost, ab, 1e-9);
  }
}

TEST(Emd, ProductionSizeIsFast) {
  std::mt19937_64 rng(5);
  const auto a = random_cloud(300, rng), b = random_cloud(300, rng);
  const auto t0 = std::chrono::steady_clock::now();
  emd(a, b);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
}

TEST(EmdGradient, TrivialCases) {
  std::mt19937_64 rng(6);
  const auto a = random_cloud(5, rng);
  for (const auto& g : emd_gradient(a, a))
    for (double v : g) EXPECT_EQ(v, 0.0);
  PointCloud p{{{0, 0, 0}}}, q{{{1, 0, 0}}};
  const auto g = emd_gradient(p, q);
  EXPECT_NEAR(g[0][0], -1.0, 1e-15);
  EXPECT_NEAR(g[0][1], 0.0, 1e-15);
}

TEST(EmdGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const double h = 1e-6;
  for (int t = 0; t < 10; ++t) {
    const auto pred = random_cloud(5, rng), gt = random_cloud(5, rng);
    const auto g = emd_gradient(pred, gt);
    for (size_t i = 0; i < pred.size(); ++i)
      for (int c = 0; c < 3; ++c) {
        auto plus = pred, minus = pred;
        plus.points[i][c] += h;
        minus.points[i][c] -= h;
        const double fd = (oracle::emd(plus.points, gt.points) - oracle::emd(minus.points, gt.points)) / (2 * h);
        EXPECT_NEAR(g[i][c], fd, 1e-5 * std::max(1.0, std::abs(fd)));
      }
  }
}

TEST(Chamfer, Cases) {
  std::mt19937_64 rng(8);
  const auto a = random_cloud(7, rng);
  EXPECT_NEAR(chamfer(a, a), 0.0, 1e-15);
  PointCloud p{{{0, 0, 0}}}, q{{{0, 0.25, 0}}};
  EXPECT_NEAR(chamfer(p, q), 0.5, 1e-15);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_cloud(9, rng), y = random_cloud(13, rng);
    auto dir = [](const PointCloud& f, const PointCloud& to) {
      double s = 0.0;
      for (const auto& a : f.points) {
        double m = 1e300;
        for (const auto& b : to.points) m = std::min(m, oracle::dist(a, b));
        s += m;
      }
      return s / f.size();
    };
    EXPECT_NEAR(chamfer(x, y), dir(x, y) + dir(y, x), 1e-9);
  }
  EXPECT_THROW(chamfer(PointCloud{}, a), PointCloudError);
}

TEST(CloudFile, RoundTripsNineSignificantDigits) {
  std::mt19937_64 rng(9);
  const auto a = random_cloud(20, rng);
  std::stringstream ss;
  write_cloud(ss, a);
  std::string first;
  std::getline(ss, first);
  EXPECT_EQ(std::count(first.begin(), first.end(), ' '), 2);
  ss.seekg(0);
  const auto b = read_cloud(ss);
  ASSERT_EQ(b.size(), a.size());
  for (size_t i = 0; i < a.size(); ++i)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(b.points[i][c], a.points[i][c], 1e-9);
}
