#include "cbt/quality.hpp"

#include <cmath>
#include <limits>

#include "cbt/ops.hpp"

namespace cbt {

double mad(const float* a, const float* b, int64_t n) {
  CBT_REQUIRE(n > 0, "mad: empty input");
  constexpr int64_t kChunk = 4096;
  double total = 0.0;
  for (int64_t base = 0; base < n; base += kChunk) {
    const int64_t end = std::min(base + kChunk, n);
    double part = 0.0;
    for (int64_t i = base; i < end; ++i)
      part += std::abs(double(a[i]) - double(b[i]));
    total += part;
  }
  return total / double(n);
}

double mad(const LumaFrame& a, const LumaFrame& b) {
  CBT_REQUIRE(a.w == b.w && a.h == b.h, "mad: dims ", a.w, "x", a.h, " vs ",
              b.w, "x", b.h);
  const int64_t n = static_cast<int64_t>(a.w) * a.h;
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i)
    total += std::abs(int(a.pix[i]) - int(b.pix[i]));
  return total / double(n);
}

double psnr(const float* a, const float* b, int64_t n, double peak) {
  CBT_REQUIRE(n > 0, "psnr: empty input");
  constexpr int64_t kChunk = 4096;
  double total = 0.0;
  for (int64_t base = 0; base < n; base += kChunk) {
    const int64_t end = std::min(base + kChunk, n);
    double part = 0.0;
    for (int64_t i = base; i < end; ++i) {
      const double d = double(a[i]) - double(b[i]);
      part += d * d;
    }
    total += part;
  }
  const double mse = total / double(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const LumaFrame& a, const LumaFrame& b, double peak) {
  CBT_REQUIRE(a.w == b.w && a.h == b.h, "psnr: dims ", a.w, "x", a.h, " vs ",
              b.w, "x", b.h);
  std::vector<float> fa(a.pix.begin(), a.pix.end());
  std::vector<float> fb(b.pix.begin(), b.pix.end());
  return psnr(fa.data(), fb.data(), static_cast<int64_t>(fa.size()), peak);
}

int usable_scales(int h, int w, const MsSsimParams& p) {
  int m = 0;
  int hh = h, ww = w;
  while (m < p.scales && hh >= p.window && ww >= p.window) {
    ++m;
    hh /= 2;
    ww /= 2;
  }
  return m;
}

namespace {

template <typename T>
TensorT<T> gaussian_taps(int window, double sigma, bool vertical) {
  std::vector<T> k(static_cast<size_t>(window));
  const double c = (window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - c;
    const double v = std::exp(-d * d / (2.0 * sigma * sigma));
    k[static_cast<size_t>(i)] = T(v);
    sum += v;
  }
  for (auto& v : k) v = T(double(v) / sum);
  return TensorT<T>::from_data(vertical ? Shape{1, 1, window, 1}
                                        : Shape{1, 1, 1, window},
                               std::move(k));
}

// Valid-padding separable Gaussian blur of {n,1,h,w}.
template <typename T>
TensorT<T> blur(const TensorT<T>& x, const TensorT<T>& kv,
                const TensorT<T>& kh) {
  ConvSpec valid{1, 0};
  return conv2d(conv2d(x, kv, TensorT<T>{}, valid), kh, TensorT<T>{}, valid);
}

template <typename T>
struct SsimMaps {
  TensorT<T> l, cs;  // {n,1,h-win+1,w-win+1}
};

template <typename T>
SsimMaps<T> ssim_maps(const TensorT<T>& a, const TensorT<T>& b,
                      const MsSsimParams& p) {
  CBT_REQUIRE(a.dims() == b.dims(), "ssim: dims ", shape_str(a.dims()),
              " vs ", shape_str(b.dims()));
  CBT_REQUIRE(a.ndim() == 4 && a.dim(1) == 1, "ssim: input must be {n,1,h,w}, got ",
              shape_str(a.dims()));
  CBT_REQUIRE(a.dim(2) >= p.window && a.dim(3) >= p.window, "ssim: frame ",
              a.dim(2), "x", a.dim(3), " smaller than the ", p.window,
              " window");
  auto kv = gaussian_taps<T>(p.window, p.sigma, true);
  auto kh = gaussian_taps<T>(p.window, p.sigma, false);
  const T c1 = T(p.k1 * p.peak * p.k1 * p.peak);
  const T c2 = T(p.k2 * p.peak * p.k2 * p.peak);

  auto mu_a = blur(a, kv, kh);
  auto mu_b = blur(b, kv, kh);
  auto mu_aa = mul(mu_a, mu_a);
  auto mu_bb = mul(mu_b, mu_b);
  auto mu_ab = mul(mu_a, mu_b);
  auto var_a = sub(blur(mul(a, a), kv, kh), mu_aa);
  auto var_b = sub(blur(mul(b, b), kv, kh), mu_bb);
  auto cov = sub(blur(mul(a, b), kv, kh), mu_ab);

  SsimMaps<T> maps;
  maps.l = div(add_scalar(mul_scalar(mu_ab, T(2)), c1),
               add_scalar(add(mu_aa, mu_bb), c1));
  maps.cs = div(add_scalar(mul_scalar(cov, T(2)), c2),
                add_scalar(add(var_a, var_b), c2));
  return maps;
}

}  // namespace

template <typename T>
TensorT<T> ssim(const TensorT<T>& a, const TensorT<T>& b,
                const MsSsimParams& p) {
  auto maps = ssim_maps(a, b, p);
  return mean_per_sample(mul(maps.l, maps.cs));
}

template <typename T>
TensorT<T> ms_ssim(const TensorT<T>& a, const TensorT<T>& b,
                   const MsSsimParams& p) {
  CBT_REQUIRE(a.dims() == b.dims(), "ms_ssim: dims ", shape_str(a.dims()),
              " vs ", shape_str(b.dims()));
  const int scales = usable_scales(a.dim(2), a.dim(3), p);
  CBT_REQUIRE(scales >= 1, "ms_ssim: frame ", a.dim(2), "x", a.dim(3),
              " smaller than the ", p.window, " window");
  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += p.weights[static_cast<size_t>(s)];

  TensorT<T> x = a, y = b, result;
  for (int s = 0; s < scales; ++s) {
    const T w = T(p.weights[static_cast<size_t>(s)] / wsum);
    auto maps = ssim_maps(x, y, p);
    auto factor =
        pow_scalar(clamp_min(mean_per_sample(maps.cs), T(p.term_floor)), w);
    if (s == scales - 1) {
      auto lum =
          pow_scalar(clamp_min(mean_per_sample(maps.l), T(p.term_floor)), w);
      factor = mul(factor, lum);
    }
    result = s == 0 ? factor : mul(result, factor);
    if (s + 1 < scales) {
      x = avg_pool2x2(x);
      y = avg_pool2x2(y);
    }
  }
  return result;
}

namespace {

TensorD frame_to_tensor_d(const LumaFrame& f) {
  TensorD t = TensorD::zeros({1, 1, f.h, f.w});
  double* p = t.ptr();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = f.pix[static_cast<size_t>(i)];
  return t;
}

}  // namespace

double ssim_value(const LumaFrame& a, const LumaFrame& b,
                  const MsSsimParams& p) {
  return ssim(frame_to_tensor_d(a), frame_to_tensor_d(b), p).item();
}

double ms_ssim_value(const LumaFrame& a, const LumaFrame& b,
                     const MsSsimParams& p) {
  return ms_ssim(frame_to_tensor_d(a), frame_to_tensor_d(b), p).item();
}

template <typename T>
CbtLoss<T> cbt_loss(const TensorT<T>& q,
                    const std::array<std::array<TensorT<T>, 4>, 2>& q_hat,
                    int orig_h, int orig_w, const MsSsimParams& p, T eps) {
  CBT_REQUIRE(q.ndim() == 4 && q.dim(1) == 1, "cbt_loss: q must be {n,1,H,W}, got ",
              shape_str(q.dims()));
  CBT_REQUIRE(orig_h >= 1 && orig_w >= 1 && orig_h <= q.dim(2) &&
                  orig_w <= q.dim(3),
              "cbt_loss: original region ", orig_w, "x", orig_h,
              " outside padded ", q.dim(3), "x", q.dim(2));
  const int n = q.dim(0);
  const bool cropped = orig_h != q.dim(2) || orig_w != q.dim(3);
  TensorT<T> qc = cropped ? crop2d(q, 0, 0, orig_h, orig_w) : q;

  CbtLoss<T> out;
  TensorT<T> acc;
  for (int c = 0; c < 2; ++c) {
    for (int si = 0; si < 4; ++si) {
      const TensorT<T>& qh = q_hat[static_cast<size_t>(c)][static_cast<size_t>(si)];
      CBT_REQUIRE(qh.defined() && qh.dims() == q.dims(),
                  "cbt_loss: prediction (", c, ",", si, ") dims ",
                  shape_str(qh.dims()), " vs q ", shape_str(q.dims()));
      TensorT<T> qhc = cropped ? crop2d(qh, 0, 0, orig_h, orig_w) : qh;
      auto ms = ms_ssim(qc, qhc, p);
      double mean_ms = 0.0;
      for (int b = 0; b < n; ++b) mean_ms += double(ms.ptr()[b]);
      out.ms[static_cast<size_t>(c)][static_cast<size_t>(si)] = mean_ms / n;
      auto term = mul_scalar(
          log10(clamp_min(add_scalar(mul_scalar(ms, T(-1)), T(1)), eps)),
          T(10));
      acc = acc.defined() ? add(acc, term) : term;
    }
  }
  out.total = mean_all(acc);
  return out;
}

#define CBT_INSTANTIATE_QUALITY(T)                                          \
  template TensorT<T> ssim<T>(const TensorT<T>&, const TensorT<T>&,         \
                              const MsSsimParams&);                         \
  template TensorT<T> ms_ssim<T>(const TensorT<T>&, const TensorT<T>&,      \
                                 const MsSsimParams&);                      \
  template CbtLoss<T> cbt_loss<T>(                                          \
      const TensorT<T>&, const std::array<std::array<TensorT<T>, 4>, 2>&,   \
      int, int, const MsSsimParams&, T);

CBT_INSTANTIATE_QUALITY(float)
CBT_INSTANTIATE_QUALITY(double)

}  // namespace cbt
