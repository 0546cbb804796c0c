// Parallel kernels against their serial references, plus the assignment solver.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "uda/core/kernels.hpp"
#include "uda/pointcloud.hpp"

namespace k = uda::kernels;

namespace {

std::vector<float> random_vec(size_t n, uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

k::Conv2dGeom conv_geom(const benchmark::State& s) {
  k::Conv2dGeom g;
  g.batch = 4;
  g.in_ch = s.range(0);
  g.out_ch = s.range(0);
  g.in_h = g.in_w = s.range(1);
  g.kh = g.kw = 3;
  g.pad = 1;
  return g;
}

using ConvFn = void (*)(const k::Conv2dGeom&, const float*, const float*, const float*, float*);
using ConvBwdFn = void (*)(const k::Conv2dGeom&, const float*, const float*, const float*, float*, float*, float*);
using GemmFn = void (*)(bool, bool, int64_t, int64_t, int64_t, float, const float*, const float*, float, float*);
using BnFn = void (*)(const k::NormGeom&, const float*, const float*, const float*, float, float*, float*, float*);

template <ConvFn F>
void BM_ConvForward(benchmark::State& s) {
  const auto g = conv_geom(s);
  const auto x = random_vec(g.batch * g.in_ch * g.in_h * g.in_w, 1);
  const auto w = random_vec(g.out_ch * g.patch_size(), 2);
  const auto b = random_vec(g.out_ch, 3);
  std::vector<float> y(g.batch * g.out_ch * g.out_h() * g.out_w());
  for (auto _ : s) {
    F(g, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  s.SetItemsProcessed(s.iterations() * g.batch * g.out_ch * g.out_h() * g.out_w() * g.patch_size());
}

template <ConvBwdFn F>
void BM_ConvBackward(benchmark::State& s) {
  const auto g = conv_geom(s);
  const auto x = random_vec(g.batch * g.in_ch * g.in_h * g.in_w, 1);
  const auto w = random_vec(g.out_ch * g.patch_size(), 2);
  const auto dy = random_vec(g.batch * g.out_ch * g.out_h() * g.out_w(), 3);
  std::vector<float> dx(x.size()), dw(w.size()), db(g.out_ch);
  for (auto _ : s) {
    F(g, x.data(), w.data(), dy.data(), dx.data(), dw.data(), db.data());
    benchmark::DoNotOptimize(dx.data());
  }
}

template <GemmFn F>
void BM_Gemm(benchmark::State& s) {
  const int64_t n = s.range(0);
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : s) {
    F(false, false, n, n, n, 1.0f, a.data(), b.data(), 0.0f, c.data());
    benchmark::DoNotOptimize(c.data());
  }
  s.SetItemsProcessed(s.iterations() * 2 * n * n * n);
}

template <BnFn F>
void BM_BatchNorm(benchmark::State& s) {
  k::NormGeom g{16, s.range(0), 64 * 64};
  const auto x = random_vec(g.n * g.channels * g.spatial, 1);
  const std::vector<float> gamma(g.channels, 1.0f), beta(g.channels, 0.0f);
  std::vector<float> y(x.size()), mean(g.channels), invstd(g.channels);
  for (auto _ : s) {
    F(g, x.data(), gamma.data(), beta.data(), 1e-5f, y.data(), mean.data(), invstd.data());
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_Emd(benchmark::State& s) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  uda::pc::PointCloud a, b;
  for (int64_t i = 0; i < s.range(0); ++i) {
    a.points.push_back({u(rng), u(rng), u(rng)});
    b.points.push_back({u(rng), u(rng), u(rng)});
  }
  for (auto _ : s) benchmark::DoNotOptimize(uda::pc::emd(a, b).cost);
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({8, 64})->Args({32, 32})->Args({64, 16})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<k::conv2d_forward>)->Name("conv_forward/omp")->Apply(conv_args);
BENCHMARK(BM_ConvForward<k::ref::conv2d_forward>)->Name("conv_forward/ref")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<k::conv2d_backward>)->Name("conv_backward/omp")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<k::ref::conv2d_backward>)->Name("conv_backward/ref")->Apply(conv_args);
BENCHMARK(BM_Gemm<k::gemm>)->Name("gemm/omp")->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<k::ref::gemm>)->Name("gemm/ref")->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchNorm<k::batchnorm_forward>)->Name("batchnorm/omp")->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchNorm<k::ref::batchnorm_forward>)->Name("batchnorm/ref")->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Emd)->Name("emd")->Arg(100)->Arg(300)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
