#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cbt/frame.hpp"
#include "cbt/quality.hpp"

using namespace cbt;

namespace {

LumaFrame checker_texture(uint64_t seed, int w, int h) {
  RandomSource rng(seed);
  LumaFrame f = LumaFrame::sized(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double base = 120 + 60 * std::sin(r * 0.21) * std::cos(c * 0.17);
      const double v = base + rng.uniform(-12.0, 12.0);
      f.at(r, c) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  return f;
}

// Direct-formula single-scale SSIM: full 2D window at every valid position.
double ssim_direct(const LumaFrame& a, const LumaFrame& b) {
  const int win = 11;
  std::vector<double> g(win * win);
  double sum = 0.0;
  for (int r = 0; r < win; ++r)
    for (int c = 0; c < win; ++c) {
      const double dr = r - 5.0, dc = c - 5.0;
      g[static_cast<size_t>(r * win + c)] =
          std::exp(-(dr * dr + dc * dc) / (2 * 1.5 * 1.5));
      sum += g[static_cast<size_t>(r * win + c)];
    }
  for (auto& v : g) v /= sum;
  const double c1 = 6.5025, c2 = 58.5225;

  double total = 0.0;
  const int oh = a.h - win + 1, ow = a.w - win + 1;
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wgt = g[static_cast<size_t>(i * win + j)];
          const double pa = a.at(r + i, c + j), pb = b.at(r + i, c + j);
          ma += wgt * pa;
          mb += wgt * pb;
          maa += wgt * pa * pa;
          mbb += wgt * pb * pb;
          mab += wgt * pa * pb;
        }
      const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
      const double cs = (2 * (mab - ma * mb) + c2) /
                        ((maa - ma * ma) + (mbb - mb * mb) + c2);
      total += l * cs;
    }
  return total / (double(oh) * ow);
}

LumaFrame perturb(const LumaFrame& f, uint64_t seed, double amp) {
  RandomSource rng(seed);
  LumaFrame out = f;
  for (auto& p : out.pix) {
    const double v = p + rng.uniform(-amp, amp);
    p = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  return out;
}

}  // namespace

TEST_CASE("usable_scales shrinks with the frame") {
  MsSsimParams p;
  CHECK(usable_scales(256, 256, p) == 5);
  CHECK(usable_scales(64, 64, p) == 3);
  CHECK(usable_scales(32, 32, p) == 2);
  CHECK(usable_scales(16, 16, p) == 1);
  CHECK(usable_scales(10, 64, p) == 0);
}

TEST_CASE("ssim matches a direct-formula evaluation") {
  LumaFrame a = checker_texture(21, 48, 40);
  LumaFrame b = perturb(a, 22, 25.0);
  CHECK(ssim_value(a, b) == doctest::Approx(ssim_direct(a, b)).epsilon(1e-6));
  CHECK(std::abs(ssim_value(a, a) - 1.0) < 1e-12);
}

TEST_CASE("ms_ssim identity and symmetry") {
  LumaFrame a = checker_texture(23, 96, 96);
  LumaFrame b = perturb(a, 24, 30.0);
  CHECK(std::abs(ms_ssim_value(a, a) - 1.0) < 1e-9);
  CHECK(ms_ssim_value(a, b) == doctest::Approx(ms_ssim_value(b, a)).epsilon(1e-12));
  CHECK(ms_ssim_value(a, b) < 1.0);
  CHECK(ms_ssim_value(a, b) > 0.0);
}

TEST_CASE("heavier distortion scores lower") {
  LumaFrame a = checker_texture(25, 128, 128);
  const double light = ms_ssim_value(a, perturb(a, 26, 8.0));
  const double heavy = ms_ssim_value(a, perturb(a, 27, 60.0));
  CHECK(light > heavy);
}

TEST_CASE("mad and psnr basics") {
  LumaFrame a = LumaFrame::sized(4, 2, 10);
  LumaFrame b = LumaFrame::sized(4, 2, 10);
  b.at(0, 0) = 18;  // one pixel off by 8 in 8 pixels
  CHECK(mad(a, b) == doctest::Approx(1.0));
  CHECK(std::isinf(psnr(a, a)));
  const double mse = 64.0 / 8.0;
  CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(255.0 * 255.0 / mse)));
}

TEST_CASE("perfect predictions saturate the loss floor") {
  RandomSource rng(28);
  TensorD q = TensorD::zeros({1, 1, 64, 64});
  for (auto& v : q.data()) v = rng.uniform(0.0, 255.0);
  std::array<std::array<TensorD, 4>, 2> qh;
  for (auto& half : qh)
    for (auto& t : half) t = q.detach();
  CbtLoss<double> loss = cbt_loss(q, qh, 64, 64);
  // Eight terms of 10*log10(1e-8) each.
  CHECK(loss.total.item() == doctest::Approx(-640.0).epsilon(1e-9));
  for (int c = 0; c < 2; ++c)
    for (int si = 0; si < 4; ++si)
      CHECK(loss.ms[c][si] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("loss ignores the padded region") {
  RandomSource rng(29);
  TensorD q = TensorD::zeros({1, 1, 64, 64});
  for (auto& v : q.data()) v = rng.uniform(0.0, 255.0);
  std::array<std::array<TensorD, 4>, 2> qh;
  for (auto& half : qh)
    for (auto& t : half) {
      t = q.detach();
      // Corrupt pixels outside a 40x48 original window.
      for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c)
          if (r >= 40 || c >= 48) t.ptr()[r * 64 + c] = 0.0;
    }
  CbtLoss<double> loss = cbt_loss(q, qh, 40, 48);
  CHECK(loss.total.item() == doctest::Approx(-640.0).epsilon(1e-9));
}

TEST_CASE("cbt_loss is worse for worse predictions") {
  RandomSource rng(30);
  LumaFrame qf = checker_texture(31, 64, 64);
  TensorD q = TensorD::zeros({1, 1, 64, 64});
  for (int64_t i = 0; i < q.numel(); ++i) q.ptr()[i] = qf.pix[size_t(i)];

  auto fill = [&](double amp) {
    LumaFrame pf = perturb(qf, 32, amp);
    TensorD t = TensorD::zeros({1, 1, 64, 64});
    for (int64_t i = 0; i < t.numel(); ++i) t.ptr()[i] = pf.pix[size_t(i)];
    std::array<std::array<TensorD, 4>, 2> qh;
    for (auto& half : qh)
      for (auto& x : half) x = t.detach();
    return cbt_loss(q, qh, 64, 64).total.item();
  };
  CHECK(fill(5.0) < fill(40.0));
}
