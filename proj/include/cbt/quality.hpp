#ifndef CBT_QUALITY_HPP
#define CBT_QUALITY_HPP

#include <array>

#include "cbt/frame.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

struct MsSsimParams {
  int scales = 5;
  std::array<double, 5> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 255.0;
  // Per-scale mean terms are floored here before the weight exponent, so a
  // slightly negative covariance can't produce NaN.
  double term_floor = 1e-6;
};

double mad(const float* a, const float* b, int64_t n);
double mad(const LumaFrame& a, const LumaFrame& b);

// +infinity for identical inputs.
double psnr(const float* a, const float* b, int64_t n, double peak = 255.0);
double psnr(const LumaFrame& a, const LumaFrame& b, double peak = 255.0);

// How many MS-SSIM scales fit: largest m <= p.scales with both extents still
// >= the window after m-1 halvings.
int usable_scales(int h, int w, const MsSsimParams& p);

// Per-sample mean of the local SSIM map; a, b are {n,1,h,w} -> {n}.
template <typename T>
TensorT<T> ssim(const TensorT<T>& a, const TensorT<T>& b,
                const MsSsimParams& p = {});

// Per-sample MS-SSIM with scale auto-reduction and weight renormalization.
template <typename T>
TensorT<T> ms_ssim(const TensorT<T>& a, const TensorT<T>& b,
                   const MsSsimParams& p = {});

double ssim_value(const LumaFrame& a, const LumaFrame& b,
                  const MsSsimParams& p = {});
double ms_ssim_value(const LumaFrame& a, const LumaFrame& b,
                     const MsSsimParams& p = {});

template <typename T>
struct CbtLoss {
  TensorT<T> total;                            // scalar, batch-averaged
  std::array<std::array<double, 4>, 2> ms{};   // batch-mean MS-SSIM [c][size]
};

// L = sum over c in {P,F}, S in {64,32,16,8} of 10*log10(max(1 - MS-SSIM, eps)),
// evaluated on the top-left orig_h x orig_w region only. q and each q_hat are
// {n,1,H,W}; q_hat indexed [c][size index per MvFieldSet::kSizes].
template <typename T>
CbtLoss<T> cbt_loss(const TensorT<T>& q,
                    const std::array<std::array<TensorT<T>, 4>, 2>& q_hat,
                    int orig_h, int orig_w, const MsSsimParams& p = {},
                    T eps = T(1e-8));

}  // namespace cbt

#endif
