#ifndef CBT_WARP_HPP
#define CBT_WARP_HPP

#include <vector>

#include "cbt/frame.hpp"
#include "cbt/tensor.hpp"

// Spatial transformer: block-constant sampling grids from MV fields and
// border-clamped bilinear sampling of the reference frames.

namespace cbt {

// Source coordinates per output pixel; rows/cols are h*w, row-major.
struct SamplingGrid {
  int w = 0, h = 0;
  std::vector<float> rows, cols;
};

// mv: channel-last {H/block, W/block, 4}; c selects channels (0 past, 1
// future). Grid = identity + nearest-neighbor-upsampled (u,v).
SamplingGrid generate_grid(const Tensor& mv, int block, int W, int H, int c);

std::vector<float> bilinear_sample(const LumaFrame& ref,
                                   const SamplingGrid& grid);

// The eight predicted frames, [c][size index] with sizes (64,32,16,8).
struct PredictionSet {
  int w = 0, h = 0;
  std::vector<float> q_hat[2][4];

  static int size_index(int block) {
    switch (block) {
      case 64: return 0;
      case 32: return 1;
      case 16: return 2;
      case 8: return 3;
    }
    throw Error(cat("PredictionSet: bad block size ", block));
  }
};

PredictionSet predict_frames(const FrameTriplet& t, const MvFieldSet& mvs);

// Differentiable fused warp. ref {n,1,H,W}, mv {n,2,H/block,W/block} with
// channel 0 = u (vertical), 1 = v (horizontal). Every pixel of an output
// block samples ref at (row + u, col + v) with border clamping; gradients
// flow to both mv and ref.
template <typename T>
TensorT<T> block_warp(const TensorT<T>& ref, const TensorT<T>& mv, int block);

}  // namespace cbt

#endif
