#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "cbt/adam.hpp"
#include "cbt/gradcheck.hpp"
#include "cbt/kernels.hpp"
#include "cbt/ops.hpp"

using namespace cbt;

namespace {

TensorD randd(RandomSource& rng, Shape dims, double lo = -1.0,
              double hi = 1.0) {
  TensorD t = TensorD::zeros(std::move(dims));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor randf(RandomSource& rng, Shape dims, double lo = -1.0,
             double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(dims));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("conv2d with a centered one-hot kernel copies the input") {
  RandomSource rng(1);
  TensorD x = randd(rng, {1, 1, 4, 5});
  TensorD w = TensorD::zeros({1, 1, 3, 3});
  w.ptr()[4] = 1.0;
  TensorD b = TensorD::zeros({1});
  TensorD y = conv2d(x, w, b);
  REQUIRE(y.dims() == x.dims());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.ptr()[i] == x.ptr()[i]);
}

TEST_CASE("conv2d matches a direct triple loop") {
  RandomSource rng(2);
  const int n = 1, ci = 2, hi = 5, wi = 4, co = 3, k = 3, stride = 2, pad = 1;
  TensorD x = randd(rng, {n, ci, hi, wi});
  TensorD w = randd(rng, {co, ci, k, k});
  TensorD b = randd(rng, {co});
  TensorD y = conv2d(x, w, b, ConvSpec{stride, -1});

  const int ho = (hi + 2 * pad - k) / stride + 1;
  const int wo = (wi + 2 * pad - k) / stride + 1;
  REQUIRE(y.dims() == Shape{n, co, ho, wo});
  for (int oc = 0; oc < co; ++oc)
    for (int r = 0; r < ho; ++r)
      for (int c = 0; c < wo; ++c) {
        double acc = b.ptr()[oc];
        for (int ic = 0; ic < ci; ++ic)
          for (int kr = 0; kr < k; ++kr)
            for (int kc = 0; kc < k; ++kc) {
              const int ir = r * stride + kr - pad;
              const int icc = c * stride + kc - pad;
              if (ir < 0 || ir >= hi || icc < 0 || icc >= wi) continue;
              acc += x.ptr()[(ic * hi + ir) * wi + icc] *
                     w.ptr()[((oc * ci + ic) * k + kr) * k + kc];
            }
        CHECK(y.ptr()[(oc * ho + r) * wo + c] ==
              doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv_transpose2d matches direct accumulation") {
  RandomSource rng(3);
  const int n = 1, ci = 2, hi = 3, wi = 4, co = 3, k = 4, stride = 2, pad = 1;
  TensorD x = randd(rng, {n, ci, hi, wi});
  TensorD w = randd(rng, {ci, co, k, k});
  TensorD b = randd(rng, {co});
  TensorD y = conv_transpose2d(x, w, b, stride, pad);

  const int ho = stride * (hi - 1) + k - 2 * pad;
  const int wo = stride * (wi - 1) + k - 2 * pad;
  REQUIRE(y.dims() == Shape{n, co, ho, wo});
  std::vector<double> want(static_cast<size_t>(co) * ho * wo, 0.0);
  for (int oc = 0; oc < co; ++oc)
    for (int r = 0; r < ho; ++r)
      for (int c = 0; c < wo; ++c)
        want[(size_t(oc) * ho + r) * wo + c] = b.ptr()[oc];
  for (int ic = 0; ic < ci; ++ic)
    for (int r = 0; r < hi; ++r)
      for (int c = 0; c < wi; ++c)
        for (int oc = 0; oc < co; ++oc)
          for (int kr = 0; kr < k; ++kr)
            for (int kc = 0; kc < k; ++kc) {
              const int orr = r * stride + kr - pad;
              const int occ = c * stride + kc - pad;
              if (orr < 0 || orr >= ho || occ < 0 || occ >= wo) continue;
              want[(size_t(oc) * ho + orr) * wo + occ] +=
                  x.ptr()[(ic * hi + r) * wi + c] *
                  w.ptr()[((ic * co + oc) * k + kr) * k + kc];
            }
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(y.ptr()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("batch_norm normalizes per channel and tracks running stats") {
  RandomSource rng(4);
  TensorD x = randd(rng, {4, 3, 2, 2}, -2.0, 2.0);
  TensorD gamma = TensorD::full({3}, 1.0);
  TensorD beta = TensorD::zeros({3});
  auto state = BatchNormState<double>::init(3);
  TensorD y = batch_norm(x, gamma, beta, state, true);

  const int m = 4 * 2 * 2;
  for (int ch = 0; ch < 3; ++ch) {
    double mean = 0.0, var = 0.0, bmean = 0.0, bvar = 0.0;
    for (int s = 0; s < 4; ++s)
      for (int i = 0; i < 4; ++i) {
        mean += y.ptr()[(s * 3 + ch) * 4 + i];
        bmean += x.ptr()[(s * 3 + ch) * 4 + i];
      }
    mean /= m;
    bmean /= m;
    for (int s = 0; s < 4; ++s)
      for (int i = 0; i < 4; ++i) {
        const double d = y.ptr()[(s * 3 + ch) * 4 + i] - mean;
        var += d * d;
        const double bd = x.ptr()[(s * 3 + ch) * 4 + i] - bmean;
        bvar += bd * bd;
      }
    var /= m;
    bvar /= m;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(state.running_mean.ptr()[ch] ==
          doctest::Approx(0.1 * bmean).epsilon(1e-10));
    CHECK(state.running_var.ptr()[ch] ==
          doctest::Approx(0.9 + 0.1 * bvar).epsilon(1e-10));
  }
}

TEST_CASE("batch_norm handles constant channels and eval mode") {
  TensorD x = TensorD::full({2, 1, 2, 2}, 3.0);
  TensorD gamma = TensorD::full({1}, 2.0);
  TensorD beta = TensorD::full({1}, 0.5);
  auto state = BatchNormState<double>::init(1);
  TensorD y = batch_norm(x, gamma, beta, state, true);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.ptr()[i] == doctest::Approx(0.5).epsilon(1e-9));

  state.running_mean.ptr()[0] = 1.0;
  state.running_var.ptr()[0] = 4.0;
  TensorD ye = batch_norm(x, gamma, beta, state, false);
  const double want = (3.0 - 1.0) / std::sqrt(4.0 + 1e-5) * 2.0 + 0.5;
  for (int64_t i = 0; i < ye.numel(); ++i)
    CHECK(ye.ptr()[i] == doctest::Approx(want).epsilon(1e-12));
  // Eval mode must not touch the stats.
  CHECK(state.running_mean.ptr()[0] == 1.0);
  CHECK(state.running_var.ptr()[0] == 4.0);
}

TEST_CASE("clamp passes gradient only strictly inside the interval") {
  TensorD x = TensorD::from_data({5}, {-2.0, -0.5, 0.0, 0.5, 2.0});
  x.set_requires_grad(true);
  mean_all(clamp(x, -0.5, 0.5)).backward();
  const auto& g = x.grad();
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);  // exactly at the bound
  CHECK(g[2] == doctest::Approx(0.2));
  CHECK(g[3] == 0.0);
  CHECK(g[4] == 0.0);
}

TEST_CASE("relu subgradient at zero is zero") {
  TensorD x = TensorD::from_data({3}, {-1.0, 0.0, 2.0});
  x.set_requires_grad(true);
  mean_all(relu(x)).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("adam first step is a bias-corrected signed move") {
  Tensor p = Tensor::from_data({3}, {1.0f, 2.0f, 3.0f});
  p.set_requires_grad(true);
  p.grad() = {0.5f, -0.25f, 0.0f};
  std::vector<Tensor> params{p};
  AdamStateF state;
  state.init(params);
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(params, state, cfg);
  CHECK(state.step_count == 1);
  for (int i = 0; i < 3; ++i) {
    const double g = i == 0 ? 0.5 : i == 1 ? -0.25 : 0.0;
    const double want =
        (i + 1.0) - 0.1 * g / (std::sqrt(g * g) + 1e-8);
    CHECK(p.ptr()[i] == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("adam at zero learning rate is a bitwise fixed point") {
  RandomSource rng(5);
  Tensor p = randf(rng, {17});
  std::vector<float> before = p.data();
  p.grad() = std::vector<float>(17, 0.37f);
  std::vector<Tensor> params{p};
  AdamStateF state;
  state.init(params);
  AdamConfig cfg;
  cfg.lr = 0.0;
  adam_step(params, state, cfg);
  CHECK(std::memcmp(before.data(), p.ptr(), sizeof(float) * 17) == 0);
}

TEST_CASE("slice_channels then concat_channels round-trips") {
  RandomSource rng(6);
  TensorD x = randd(rng, {2, 7, 3, 2});
  auto a = slice_channels(x, 0, 2);
  auto b = slice_channels(x, 2, 4);
  auto c = slice_channels(x, 6, 1);
  TensorD y = concat_channels(std::vector<TensorD>{a, b, c});
  REQUIRE(y.dims() == x.dims());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.ptr()[i] == x.ptr()[i]);
}

TEST_CASE("avg_pool2x2 floors odd extents") {
  TensorD x = TensorD::from_data({1, 1, 3, 3},
                                 {1, 2, 3, 4, 5, 6, 7, 8, 9});
  TensorD y = avg_pool2x2(x);
  REQUIRE(y.dims() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(3.0));
}

TEST_CASE("crop2d extracts the window") {
  RandomSource rng(7);
  TensorD x = randd(rng, {2, 2, 5, 6});
  TensorD y = crop2d(x, 1, 2, 3, 4);
  REQUIRE(y.dims() == Shape{2, 2, 3, 4});
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 2; ++ch)
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
          CHECK(y.ptr()[((n * 2 + ch) * 3 + r) * 4 + c] ==
                x.ptr()[((n * 2 + ch) * 5 + (r + 1)) * 6 + (c + 2)]);
}

TEST_CASE("upsample_nearest repeats each pixel") {
  TensorD x = TensorD::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  TensorD y = upsample_nearest(x, 2);
  REQUIRE(y.dims() == Shape{1, 1, 4, 4});
  const double want[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(y.ptr()[i] == want[i]);
}

TEST_CASE("mean_per_sample averages everything past the batch dim") {
  RandomSource rng(8);
  TensorD x = randd(rng, {3, 2, 4});
  TensorD y = mean_per_sample(x);
  REQUIRE(y.dims() == Shape{3});
  for (int s = 0; s < 3; ++s) {
    double m = 0.0;
    for (int i = 0; i < 8; ++i) m += x.ptr()[s * 8 + i];
    CHECK(y.ptr()[s] == doctest::Approx(m / 8).epsilon(1e-12));
  }
}

TEST_CASE("core op gradients agree with central differences") {
  RandomSource rng(9);
  {
    TensorD x = randd(rng, {1, 2, 5, 5});
    TensorD w = randd(rng, {2, 2, 3, 3}, -0.5, 0.5);
    TensorD b = randd(rng, {2}, -0.2, 0.2);
    TensorD r = randd(rng, {1, 2, 3, 3});
    const double err = finite_diff_check(
        [=]() {
          return mean_all(mul(conv2d(x, w, b, ConvSpec{2, -1}), r));
        },
        {x, w, b});
    CHECK(err < 1e-4);
  }
  {
    TensorD a = randd(rng, {2, 3, 4});
    TensorD b = randd(rng, {2, 3, 4}, 0.5, 1.5);
    TensorD r = randd(rng, {2, 3, 4});
    const double err = finite_diff_check(
        [=]() { return mean_all(mul(div(mul(a, a), b), r)); }, {a, b});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("parallel and serial conv kernels are bit-exact") {
  RandomSource rng(10);
  kernels::Conv2dDims d;
  d.n = 2;
  d.ci = 3;
  d.hi = 17;
  d.wi = 19;
  d.co = 4;
  d.kh = 3;
  d.kw = 3;
  d.stride = 2;
  d.ph = 1;
  d.pw = 1;
  d.ho = (d.hi + 2 * d.ph - d.kh) / d.stride + 1;
  d.wo = (d.wi + 2 * d.pw - d.kw) / d.stride + 1;

  std::vector<float> in(size_t(d.n) * d.ci * d.hi * d.wi);
  std::vector<float> w(size_t(d.co) * d.ci * d.kh * d.kw);
  std::vector<float> b(static_cast<size_t>(d.co));
  for (auto& v : in) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : w) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-1, 1));

  const size_t on = size_t(d.n) * d.co * d.ho * d.wo;
  std::vector<float> out_par(on), out_ser(on);
  kernels::conv2d_forward(in.data(), w.data(), b.data(), out_par.data(), d);
  kernels::serial::conv2d_forward(in.data(), w.data(), b.data(),
                                  out_ser.data(), d);
  CHECK(std::memcmp(out_par.data(), out_ser.data(), sizeof(float) * on) == 0);
}

TEST_CASE("parallel and serial bilinear kernels are bit-exact") {
  RandomSource rng(11);
  const int h = 24, w = 31;
  std::vector<float> src(size_t(h) * w);
  for (auto& v : src) v = static_cast<float>(rng.uniform(0, 255));
  const int64_t n = 777;
  std::vector<float> rows(n), cols(n);
  for (int64_t i = 0; i < n; ++i) {
    rows[static_cast<size_t>(i)] = static_cast<float>(rng.uniform(-3, h + 3));
    cols[static_cast<size_t>(i)] = static_cast<float>(rng.uniform(-3, w + 3));
  }
  std::vector<float> out_par(static_cast<size_t>(n)), out_ser(static_cast<size_t>(n));
  kernels::bilinear_sample_forward(src.data(), h, w, rows.data(), cols.data(),
                                   out_par.data(), n);
  kernels::serial::bilinear_sample_forward(src.data(), h, w, rows.data(),
                                           cols.data(), out_ser.data(), n);
  CHECK(std::memcmp(out_par.data(), out_ser.data(),
                    sizeof(float) * static_cast<size_t>(n)) == 0);
}

TEST_CASE("deterministic_sum is reproducible and accurate") {
  RandomSource rng(12);
  std::vector<double> v(10000);
  long double ref = 0.0;
  for (auto& x : v) {
    x = rng.uniform(-1e6, 1e6);
    ref += static_cast<long double>(x);
  }
  const double a = deterministic_sum(v.data(), static_cast<int64_t>(v.size()));
  const double b = deterministic_sum(v.data(), static_cast<int64_t>(v.size()));
  CHECK(a == b);
  CHECK(a == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
}
