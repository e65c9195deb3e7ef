#include "cbt/frame.hpp"

namespace cbt {

Tensor frame_to_tensor(const LumaFrame& f) {
  CBT_REQUIRE(f.w > 0 && f.h > 0, "frame_to_tensor: empty frame");
  std::vector<float> v(static_cast<size_t>(f.w) * f.h);
  for (size_t i = 0; i < v.size(); ++i) v[i] = float(f.pix[i]);
  return Tensor::from_data({1, 1, f.h, f.w}, std::move(v));
}

TripletBatch make_batch(const std::vector<const FrameTriplet*>& triplets) {
  CBT_REQUIRE(!triplets.empty(), "make_batch: no triplets");
  const int n = static_cast<int>(triplets.size());
  const int w = triplets[0]->width(), h = triplets[0]->height();
  CBT_REQUIRE(w % 64 == 0 && h % 64 == 0, "make_batch: frames ", w, "x", h,
              " not padded to 64-multiples");
  const int64_t plane = static_cast<int64_t>(h) * w;

  std::vector<float> in01(static_cast<size_t>(n) * 3 * plane);
  std::vector<float> rp(static_cast<size_t>(n) * plane);
  std::vector<float> qq(static_cast<size_t>(n) * plane);
  std::vector<float> rf(static_cast<size_t>(n) * plane);
  constexpr float kScale = 1.0f / 255.0f;
  for (int b = 0; b < n; ++b) {
    const FrameTriplet& t = *triplets[b];
    CBT_REQUIRE(t.width() == w && t.height() == h &&
                    t.r_past.w == w && t.r_past.h == h &&
                    t.r_future.w == w && t.r_future.h == h,
                "make_batch: triplet ", b, " dims mismatch");
    CBT_REQUIRE(t.orig_w == triplets[0]->orig_w &&
                    t.orig_h == triplets[0]->orig_h,
                "make_batch: triplet ", b, " original extent mismatch");
    float* dst = in01.data() + static_cast<int64_t>(b) * 3 * plane;
    for (int64_t i = 0; i < plane; ++i) {
      const float p = float(t.r_past.pix[i]);
      const float c = float(t.q.pix[i]);
      const float f = float(t.r_future.pix[i]);
      dst[i] = p * kScale;
      dst[plane + i] = c * kScale;
      dst[2 * plane + i] = f * kScale;
      rp[static_cast<int64_t>(b) * plane + i] = p;
      qq[static_cast<int64_t>(b) * plane + i] = c;
      rf[static_cast<int64_t>(b) * plane + i] = f;
    }
  }
  TripletBatch batch;
  batch.input01 = Tensor::from_data({n, 3, h, w}, std::move(in01));
  batch.ref_p = Tensor::from_data({n, 1, h, w}, std::move(rp));
  batch.q = Tensor::from_data({n, 1, h, w}, std::move(qq));
  batch.ref_f = Tensor::from_data({n, 1, h, w}, std::move(rf));
  batch.orig_w = triplets[0]->orig_w;
  batch.orig_h = triplets[0]->orig_h;
  return batch;
}

void write_field_from_stage(MvFieldSet& out, int size, const Tensor& stage,
                            int sample) {
  Tensor& f = out.field(size);
  const int gh = f.dim(0), gw = f.dim(1);
  CBT_REQUIRE(stage.ndim() == 4 && stage.dim(1) == 4 && stage.dim(2) == gh &&
                  stage.dim(3) == gw,
              "write_field_from_stage: stage dims ", shape_str(stage.dims()),
              " vs field ", gh, "x", gw);
  const int64_t plane = static_cast<int64_t>(gh) * gw;
  const float* src = stage.ptr() + static_cast<int64_t>(sample) * 4 * plane;
  float* dst = f.ptr();
  for (int64_t i = 0; i < plane; ++i)
    for (int ch = 0; ch < 4; ++ch) dst[i * 4 + ch] = src[ch * plane + i];
}

bool block_in_original(int size, int by, int bx, int orig_w, int orig_h) {
  return (by + 1) * size <= orig_h && (bx + 1) * size <= orig_w;
}

}  // namespace cbt
