#ifndef CBT_FRAME_HPP
#define CBT_FRAME_HPP

#include <cstdint>
#include <vector>

#include "cbt/tensor.hpp"

namespace cbt {

struct LumaFrame {
  int w = 0, h = 0;
  std::vector<uint8_t> pix;  // row-major

  static LumaFrame sized(int w, int h, uint8_t fill = 0) {
    LumaFrame f;
    f.w = w;
    f.h = h;
    f.pix.assign(static_cast<size_t>(w) * h, fill);
    return f;
  }

  uint8_t at(int r, int c) const {
    return pix[static_cast<size_t>(r) * w + c];
  }
  uint8_t& at(int r, int c) { return pix[static_cast<size_t>(r) * w + c]; }

  // Border-replicated read, shared convention with the warp sampler.
  uint8_t at_clamped(int r, int c) const {
    r = std::min(std::max(r, 0), h - 1);
    c = std::min(std::max(c, 0), w - 1);
    return pix[static_cast<size_t>(r) * w + c];
  }
};

// (R_P, Q, R_F) at temporal distance d = 2^(4-layer_k), padded to a 64
// multiple with the pre-padding extents retained.
struct FrameTriplet {
  LumaFrame r_past, q, r_future;
  int layer_k = 4;
  int orig_w = 0, orig_h = 0;

  int width() const { return q.w; }
  int height() const { return q.h; }
  int distance() const { return 1 << (4 - layer_k); }
};

// Per-block-size MV planes, channel-last {H/S, W/S, 4} with channels
// [u_P, v_P, u_F, v_F]; u vertical (down positive), v horizontal (right
// positive).
struct MvFieldSet {
  int frame_w = 0, frame_h = 0;
  Tensor m64, m32, m16, m8;

  static constexpr int kSizes[4] = {64, 32, 16, 8};

  static MvFieldSet zeros(int frame_w, int frame_h) {
    CBT_REQUIRE(frame_w % 64 == 0 && frame_h % 64 == 0,
                "MvFieldSet: frame dims ", frame_w, "x", frame_h,
                " not 64-multiples");
    MvFieldSet s;
    s.frame_w = frame_w;
    s.frame_h = frame_h;
    s.m64 = Tensor::zeros({frame_h / 64, frame_w / 64, 4});
    s.m32 = Tensor::zeros({frame_h / 32, frame_w / 32, 4});
    s.m16 = Tensor::zeros({frame_h / 16, frame_w / 16, 4});
    s.m8 = Tensor::zeros({frame_h / 8, frame_w / 8, 4});
    return s;
  }

  Tensor& field(int size) {
    switch (size) {
      case 64: return m64;
      case 32: return m32;
      case 16: return m16;
      case 8: return m8;
    }
    throw Error(cat("MvFieldSet: no field for block size ", size));
  }
  const Tensor& field(int size) const {
    return const_cast<MvFieldSet*>(this)->field(size);
  }

  float mv(int size, int by, int bx, int channel) const {
    const Tensor& f = field(size);
    return f.ptr()[(static_cast<int64_t>(by) * f.dim(1) + bx) * 4 + channel];
  }
};

// {1,1,h,w} tensor with values in [0,255].
Tensor frame_to_tensor(const LumaFrame& f);

// Batched model/warp inputs assembled from triplets of identical dims.
struct TripletBatch {
  Tensor input01;            // {n,3,H,W}, stacked (R_P, Q, R_F) scaled to [0,1]
  Tensor ref_p, q, ref_f;    // {n,1,H,W}, values in [0,255]
  int orig_w = 0, orig_h = 0;
};

TripletBatch make_batch(const std::vector<const FrameTriplet*>& triplets);

// Channel-last per-sample view of a batched {n,4,h,w} stage output.
void write_field_from_stage(MvFieldSet& out, int size, const Tensor& stage,
                            int sample);

// True when block (by,bx) of the given size lies fully inside the original
// (pre-padding) region.
bool block_in_original(int size, int by, int bx, int orig_w, int orig_h);

}  // namespace cbt

#endif
