#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cbt/gradcheck.hpp"
#include "cbt/ops.hpp"
#include "cbt/warp.hpp"

using namespace cbt;

namespace {

LumaFrame noise(RandomSource& rng, int w, int h) {
  LumaFrame f = LumaFrame::sized(w, h);
  for (auto& p : f.pix) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  return f;
}

}  // namespace

TEST_CASE("integer MV grids copy blocks bit-exactly") {
  RandomSource rng(100);
  const int W = 64, H = 64;
  LumaFrame ref = noise(rng, W, H);
  for (int size : MvFieldSet::kSizes) {
    const int bw = W / size, bh = H / size;
    Tensor field = Tensor::zeros({bh, bw, 4});
    std::vector<int> mv(static_cast<size_t>(field.numel()));
    for (size_t i = 0; i < mv.size(); ++i) {
      mv[i] = static_cast<int>(rng.uniform_int(-20, 20));
      field.ptr()[i] = static_cast<float>(mv[i]);
    }
    for (int c = 0; c < 2; ++c) {
      SamplingGrid grid = generate_grid(field, size, W, H, c);
      std::vector<float> out = bilinear_sample(ref, grid);
      for (int r = 0; r < H; ++r)
        for (int col = 0; col < W; ++col) {
          const size_t b = (size_t(r / size) * bw + col / size) * 4;
          const int u = mv[b + size_t(2 * c)];
          const int v = mv[b + size_t(2 * c) + 1];
          CHECK(out[size_t(r) * W + col] ==
                float(ref.at_clamped(r + u, col + v)));
        }
    }
  }
}

TEST_CASE("zero MVs reproduce the reference exactly") {
  RandomSource rng(101);
  LumaFrame ref = noise(rng, 64, 64);
  Tensor field = Tensor::zeros({8, 8, 4});
  std::vector<float> out =
      bilinear_sample(ref, generate_grid(field, 8, 64, 64, 0));
  for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == float(ref.pix[i]));
}

TEST_CASE("fractional MVs interpolate the four neighbors") {
  LumaFrame ref = LumaFrame::sized(2, 2);
  ref.at(0, 0) = 0;
  ref.at(0, 1) = 100;
  ref.at(1, 0) = 200;
  ref.at(1, 1) = 255;

  Tensor field = Tensor::zeros({1, 1, 4});
  field.ptr()[0] = 0.5f;  // u
  field.ptr()[1] = 0.5f;  // v
  SamplingGrid grid = generate_grid(field, 2, 2, 2, 0);
  std::vector<float> out = bilinear_sample(ref, grid);
  // (0.5, 0.5): mean of all four; (0.5, 1.5): columns clamp to 1.
  CHECK(out[0] == doctest::Approx((0 + 100 + 200 + 255) / 4.0));
  CHECK(out[1] == doctest::Approx((100 + 255) / 2.0));
  CHECK(out[2] == doctest::Approx((200 + 255) / 2.0));
  CHECK(out[3] == doctest::Approx(255.0));
}

TEST_CASE("far out-of-frame MVs land on the replicated border") {
  LumaFrame ref = LumaFrame::sized(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) ref.at(r, c) = uint8_t(r * 8 + c);
  Tensor field = Tensor::zeros({1, 1, 4});
  field.ptr()[0] = -100.0f;
  field.ptr()[1] = -100.0f;
  std::vector<float> out =
      bilinear_sample(ref, generate_grid(field, 8, 8, 8, 0));
  for (float v : out) CHECK(v == float(ref.at(0, 0)));
}

TEST_CASE("block_warp matches the grid sampler and is differentiable") {
  RandomSource rng(102);
  const int H = 16, W = 16, block = 4;
  LumaFrame ref_frame = noise(rng, W, H);

  Tensor mv_cl = Tensor::zeros({H / block, W / block, 4});
  TensorD mv = TensorD::zeros({1, 2, H / block, W / block});
  const int bcount = (H / block) * (W / block);
  for (int i = 0; i < bcount; ++i)
    for (int ch = 0; ch < 2; ++ch) {
      double v = rng.uniform(-2.0, 2.0);
      const double frac = v - std::floor(v);
      if (frac < 0.15) v += 0.15;
      if (frac > 0.85) v -= 0.15;
      mv_cl.ptr()[i * 4 + ch] = static_cast<float>(v);
      mv.ptr()[ch * bcount + i] = v;
    }

  TensorD ref = TensorD::zeros({1, 1, H, W});
  for (int64_t i = 0; i < ref.numel(); ++i)
    ref.ptr()[i] = ref_frame.pix[static_cast<size_t>(i)];

  TensorD out = block_warp(ref, mv, block);
  std::vector<float> want =
      bilinear_sample(ref_frame, generate_grid(mv_cl, block, W, H, 0));
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.ptr()[i] ==
          doctest::Approx(double(want[static_cast<size_t>(i)])).epsilon(1e-5));

  TensorD r = TensorD::zeros({1, 1, H, W});
  for (auto& v : r.data()) v = rng.uniform(-1.0, 1.0);
  const double err = finite_diff_check(
      [=]() { return mean_all(mul(block_warp(ref, mv, block), r)); },
      {ref, mv});
  CHECK(err < 1e-4);
}

TEST_CASE("predict_frames assembles all eight hypotheses") {
  RandomSource rng(103);
  FrameTriplet t;
  t.r_past = noise(rng, 64, 64);
  t.q = noise(rng, 64, 64);
  t.r_future = noise(rng, 64, 64);
  t.orig_w = 64;
  t.orig_h = 64;

  MvFieldSet mvs = MvFieldSet::zeros(64, 64);
  PredictionSet ps = predict_frames(t, mvs);
  REQUIRE(ps.w == 64);
  REQUIRE(ps.h == 64);
  // Zero motion: every hypothesis equals its reference plane.
  for (int si = 0; si < 4; ++si)
    for (size_t i = 0; i < ps.q_hat[0][si].size(); ++i) {
      CHECK(ps.q_hat[0][si][i] == float(t.r_past.pix[i]));
      CHECK(ps.q_hat[1][si][i] == float(t.r_future.pix[i]));
    }
}
