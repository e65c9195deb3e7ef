#include "cbt/warp.hpp"

#include "cbt/kernels.hpp"

namespace cbt {

namespace {

// Block-constant grid for one sample: mvp points at {2, gh, gw} (u plane
// then v plane).
template <typename T>
void build_grid(const T* mvp, int block, int H, int W, T* rows, T* cols) {
  const int gw = W / block;
  const int64_t gplane = static_cast<int64_t>(H / block) * gw;
  const T* u = mvp;
  const T* v = mvp + gplane;
  for (int y = 0; y < H; ++y) {
    const int64_t brow = static_cast<int64_t>(y / block) * gw;
    for (int x = 0; x < W; ++x) {
      const int64_t bi = brow + x / block;
      const int64_t i = static_cast<int64_t>(y) * W + x;
      rows[i] = T(y) + u[bi];
      cols[i] = T(x) + v[bi];
    }
  }
}

}  // namespace

SamplingGrid generate_grid(const Tensor& mv, int block, int W, int H, int c) {
  CBT_REQUIRE(c == 0 || c == 1, "generate_grid: reference index ", c);
  CBT_REQUIRE(W % block == 0 && H % block == 0, "generate_grid: frame ", W,
              "x", H, " not a multiple of ", block);
  const int gh = H / block, gw = W / block;
  CBT_REQUIRE(mv.ndim() == 3 && mv.dim(0) == gh && mv.dim(1) == gw &&
                  mv.dim(2) == 4,
              "generate_grid: mv dims ", shape_str(mv.dims()), " vs expected [",
              gh, "x", gw, "x4]");
  SamplingGrid g;
  g.w = W;
  g.h = H;
  g.rows.resize(static_cast<size_t>(H) * W);
  g.cols.resize(static_cast<size_t>(H) * W);
  const float* m = mv.ptr();
  for (int y = 0; y < H; ++y) {
    const int by = y / block;
    for (int x = 0; x < W; ++x) {
      const int bx = x / block;
      const float* b = m + (static_cast<int64_t>(by) * gw + bx) * 4 + 2 * c;
      const int64_t i = static_cast<int64_t>(y) * W + x;
      g.rows[i] = float(y) + b[0];
      g.cols[i] = float(x) + b[1];
    }
  }
  return g;
}

std::vector<float> bilinear_sample(const LumaFrame& ref,
                                   const SamplingGrid& grid) {
  CBT_REQUIRE(ref.w == grid.w && ref.h == grid.h, "bilinear_sample: frame ",
              ref.w, "x", ref.h, " vs grid ", grid.w, "x", grid.h);
  std::vector<float> src(ref.pix.begin(), ref.pix.end());
  std::vector<float> out(src.size());
  kernels::bilinear_sample_forward(src.data(), ref.h, ref.w, grid.rows.data(),
                                   grid.cols.data(), out.data(),
                                   static_cast<int64_t>(out.size()));
  return out;
}

PredictionSet predict_frames(const FrameTriplet& t, const MvFieldSet& mvs) {
  CBT_REQUIRE(mvs.frame_w == t.width() && mvs.frame_h == t.height(),
              "predict_frames: fields for ", mvs.frame_w, "x", mvs.frame_h,
              " vs triplet ", t.width(), "x", t.height());
  PredictionSet out;
  out.w = t.width();
  out.h = t.height();
  for (int c = 0; c < 2; ++c) {
    const LumaFrame& ref = c == 0 ? t.r_past : t.r_future;
    for (int si = 0; si < 4; ++si) {
      const int S = MvFieldSet::kSizes[si];
      out.q_hat[c][si] =
          bilinear_sample(ref, generate_grid(mvs.field(S), S, out.w, out.h, c));
    }
  }
  return out;
}

template <typename T>
TensorT<T> block_warp(const TensorT<T>& ref, const TensorT<T>& mv, int block) {
  CBT_REQUIRE(ref.ndim() == 4 && ref.dim(1) == 1,
              "block_warp: reference must be {n,1,H,W}, got ",
              shape_str(ref.dims()));
  CBT_REQUIRE(mv.ndim() == 4 && mv.dim(1) == 2,
              "block_warp: mv must be {n,2,H/S,W/S}, got ",
              shape_str(mv.dims()));
  const int n = ref.dim(0), H = ref.dim(2), W = ref.dim(3);
  CBT_REQUIRE(H % block == 0 && W % block == 0, "block_warp: frame ", W, "x",
              H, " not a multiple of ", block);
  const int gh = H / block, gw = W / block;
  CBT_REQUIRE(mv.dim(0) == n && mv.dim(2) == gh && mv.dim(3) == gw,
              "block_warp: mv dims ", shape_str(mv.dims()), " vs expected [",
              n, "x2x", gh, "x", gw, "]");

  const int64_t plane = static_cast<int64_t>(H) * W;
  const int64_t gplane = static_cast<int64_t>(gh) * gw;
  std::vector<T> out(static_cast<size_t>(n) * plane);
  std::vector<T> rows(static_cast<size_t>(plane)), cols(rows.size());
  for (int b = 0; b < n; ++b) {
    build_grid(mv.ptr() + static_cast<int64_t>(b) * 2 * gplane, block, H, W,
               rows.data(), cols.data());
    kernels::bilinear_sample_forward(ref.ptr() + static_cast<int64_t>(b) * plane,
                                     H, W, rows.data(), cols.data(),
                                     out.data() + static_cast<int64_t>(b) * plane,
                                     plane);
  }

  TensorT<T> refc = ref, mvc = mv;
  return TensorT<T>::make_op(
      "block_warp", {n, 1, H, W}, std::move(out), {ref, mv},
      [refc, mvc, block, n, H, W, gh, gw, plane,
       gplane](TensorNode<T>& node) {
        const bool need_ref = refc.requires_grad();
        const bool need_mv = mvc.requires_grad();
        if (!need_ref && !need_mv) return;
        std::vector<T> rows(static_cast<size_t>(plane)), cols(rows.size());
        std::vector<T> grows, gcols;
        if (need_mv) {
          grows.resize(rows.size());
          gcols.resize(rows.size());
        }
        T* gref_all = need_ref ? grad_buffer(*refc.node()).data() : nullptr;
        T* gmv_all = need_mv ? grad_buffer(*mvc.node()).data() : nullptr;
        for (int b = 0; b < n; ++b) {
          const T* mvp = mvc.ptr() + static_cast<int64_t>(b) * 2 * gplane;
          build_grid(mvp, block, H, W, rows.data(), cols.data());
          if (need_mv) {
            std::fill(grows.begin(), grows.end(), T(0));
            std::fill(gcols.begin(), gcols.end(), T(0));
          }
          kernels::bilinear_sample_backward(
              refc.ptr() + static_cast<int64_t>(b) * plane, H, W, rows.data(),
              cols.data(), node.grad.data() + static_cast<int64_t>(b) * plane,
              gref_all ? gref_all + static_cast<int64_t>(b) * plane : nullptr,
              need_mv ? grows.data() : nullptr,
              need_mv ? gcols.data() : nullptr, plane);
          if (need_mv) {
            T* gu = gmv_all + static_cast<int64_t>(b) * 2 * gplane;
            T* gv = gu + gplane;
            for (int y = 0; y < H; ++y) {
              const int64_t brow = static_cast<int64_t>(y / block) * gw;
              for (int x = 0; x < W; ++x) {
                const int64_t bi = brow + x / block;
                const int64_t i = static_cast<int64_t>(y) * W + x;
                gu[bi] += grows[i];
                gv[bi] += gcols[i];
              }
            }
          }
        }
      });
}

template TensorT<float> block_warp<float>(const TensorT<float>&,
                                          const TensorT<float>&, int);
template TensorT<double> block_warp<double>(const TensorT<double>&,
                                            const TensorT<double>&, int);

}  // namespace cbt
