#include <benchmark/benchmark.h>

#include <vector>

#include "cbt/common.hpp"
#include "cbt/kernels.hpp"

using cbt::kernels::Conv2dDims;

namespace {

struct ConvCase {
  std::vector<float> in, w, b, out;
  Conv2dDims d;
};

// Mirrors the busiest feature layers: half-resolution maps, 3x3 kernels.
ConvCase conv_case(int n, int ci, int hw, int co, int stride) {
  ConvCase c;
  c.d.n = n;
  c.d.ci = ci;
  c.d.hi = hw;
  c.d.wi = hw;
  c.d.co = co;
  c.d.kh = 3;
  c.d.kw = 3;
  c.d.stride = stride;
  c.d.ph = 1;
  c.d.pw = 1;
  c.d.ho = (hw + 2 - 3) / stride + 1;
  c.d.wo = (hw + 2 - 3) / stride + 1;
  cbt::RandomSource rng(1);
  auto fill = [&rng](std::vector<float>& v, size_t n_el) {
    v.resize(n_el);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  };
  fill(c.in, static_cast<size_t>(n) * ci * hw * hw);
  fill(c.w, static_cast<size_t>(co) * ci * 9);
  fill(c.b, static_cast<size_t>(co));
  c.out.assign(static_cast<size_t>(n) * co * c.d.ho * c.d.wo, 0.0f);
  return c;
}

template <bool kSerial>
void bm_conv2d(benchmark::State& state) {
  ConvCase c = conv_case(int(state.range(0)), int(state.range(1)),
                         int(state.range(2)), int(state.range(3)), 2);
  for (auto _ : state) {
    if constexpr (kSerial)
      cbt::kernels::serial::conv2d_forward(c.in.data(), c.w.data(), c.b.data(),
                                           c.out.data(), c.d);
    else
      cbt::kernels::conv2d_forward(c.in.data(), c.w.data(), c.b.data(),
                                   c.out.data(), c.d);
    benchmark::DoNotOptimize(c.out.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * c.d.n * c.d.co *
                          c.d.ho * c.d.wo * c.d.ci * 9);
}

struct SampleCase {
  std::vector<float> src, rows, cols, out;
  int h, w;
};

SampleCase sample_case(int h, int w, int64_t n_out) {
  SampleCase s;
  s.h = h;
  s.w = w;
  cbt::RandomSource rng(2);
  s.src.resize(static_cast<size_t>(h) * w);
  for (auto& x : s.src) x = static_cast<float>(rng.uniform(0.0, 255.0));
  s.rows.resize(static_cast<size_t>(n_out));
  s.cols.resize(static_cast<size_t>(n_out));
  for (int64_t i = 0; i < n_out; ++i) {
    s.rows[size_t(i)] = static_cast<float>(rng.uniform(-4.0, h + 3.0));
    s.cols[size_t(i)] = static_cast<float>(rng.uniform(-4.0, w + 3.0));
  }
  s.out.assign(static_cast<size_t>(n_out), 0.0f);
  return s;
}

template <bool kSerial>
void bm_bilinear(benchmark::State& state) {
  SampleCase s = sample_case(int(state.range(0)), int(state.range(1)),
                             state.range(0) * state.range(1));
  for (auto _ : state) {
    if constexpr (kSerial)
      cbt::kernels::serial::bilinear_sample_forward(
          s.src.data(), s.h, s.w, s.rows.data(), s.cols.data(), s.out.data(),
          int64_t(s.out.size()));
    else
      cbt::kernels::bilinear_sample_forward(s.src.data(), s.h, s.w,
                                            s.rows.data(), s.cols.data(),
                                            s.out.data(),
                                            int64_t(s.out.size()));
    benchmark::DoNotOptimize(s.out.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(int64_t(state.iterations()) *
                          int64_t(s.out.size()));
}

}  // namespace

BENCHMARK(bm_conv2d<false>)
    ->Name("conv2d/omp")
    ->Args({1, 32, 128, 32})
    ->Args({4, 64, 64, 96})
    ->Args({8, 96, 32, 128});
BENCHMARK(bm_conv2d<true>)
    ->Name("conv2d/serial")
    ->Args({1, 32, 128, 32})
    ->Args({4, 64, 64, 96})
    ->Args({8, 96, 32, 128});

BENCHMARK(bm_bilinear<false>)
    ->Name("bilinear/omp")
    ->Args({270, 480})
    ->Args({1080, 1920});
BENCHMARK(bm_bilinear<true>)
    ->Name("bilinear/serial")
    ->Args({270, 480})
    ->Args({1080, 1920});

BENCHMARK_MAIN();
