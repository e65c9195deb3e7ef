#include "cbt/ops.hpp"

#include <cmath>

#include "cbt/kernels.hpp"

namespace cbt {

namespace {

// Chunked accumulation in index order; result independent of thread count.
template <class F>
double det_sum_idx(int64_t n, F f) {
  constexpr int64_t kChunk = 4096;
  double total = 0.0;
  for (int64_t base = 0; base < n; base += kChunk) {
    const int64_t end = std::min(base + kChunk, n);
    double part = 0.0;
    for (int64_t i = base; i < end; ++i) part += f(i);
    total += part;
  }
  return total;
}

template <typename T>
void check_same_dims(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
  CBT_REQUIRE(a.dims() == b.dims(), op, ": dims ", shape_str(a.dims()),
              " vs ", shape_str(b.dims()));
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  const ConvSpec& spec) {
  CBT_REQUIRE(x.ndim() == 4, "conv2d: input must be NCHW, got ",
              shape_str(x.dims()));
  CBT_REQUIRE(w.ndim() == 4, "conv2d: weights must be {co,ci,kh,kw}, got ",
              shape_str(w.dims()));
  const int n = x.dim(0), ci = x.dim(1), hi = x.dim(2), wi = x.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  CBT_REQUIRE(w.dim(1) == ci, "conv2d: weight in-channels ", w.dim(1),
              " vs input channels ", ci);
  CBT_REQUIRE(spec.stride >= 1, "conv2d: stride ", spec.stride);
  int ph, pw;
  if (spec.pad < 0) {
    CBT_REQUIRE(kh % 2 == 1 && kw % 2 == 1,
                "conv2d: same-odd padding needs an odd kernel, got ", kh, "x", kw);
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
  } else {
    ph = pw = spec.pad;
  }
  const int ho = (hi + 2 * ph - kh) / spec.stride + 1;
  const int wo = (wi + 2 * pw - kw) / spec.stride + 1;
  CBT_REQUIRE(ho >= 1 && wo >= 1, "conv2d: kernel ", kh, "x", kw,
              " does not fit input ", hi, "x", wi);
  if (b.defined())
    CBT_REQUIRE(b.ndim() == 1 && b.dim(0) == co, "conv2d: bias dims ",
                shape_str(b.dims()), " vs out channels ", co);

  kernels::Conv2dDims kd{n, ci, hi, wi, co, kh, kw, spec.stride, ph, pw, ho, wo};
  std::vector<T> out(static_cast<size_t>(shape_numel({n, co, ho, wo})));
  kernels::conv2d_forward(x.ptr(), w.ptr(), b.defined() ? b.ptr() : nullptr,
                          out.data(), kd);

  std::vector<TensorT<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  TensorT<T> xc = x, wc = w, bc = b;
  return TensorT<T>::make_op(
      "conv2d", {n, co, ho, wo}, std::move(out), parents,
      [xc, wc, bc, kd](TensorNode<T>& node) {
        const T* g = node.grad.data();
        if (xc.requires_grad())
          kernels::conv2d_backward_input(g, wc.ptr(),
                                         grad_buffer(*xc.node()).data(), kd);
        const bool need_w = wc.requires_grad();
        const bool need_b = bc.defined() && bc.requires_grad();
        if (need_w || need_b) {
          std::vector<T> scratch;
          T* gw;
          if (need_w) {
            gw = grad_buffer(*wc.node()).data();
          } else {
            scratch.assign(static_cast<size_t>(wc.numel()), T(0));
            gw = scratch.data();
          }
          T* gb = need_b ? grad_buffer(*bc.node()).data() : nullptr;
          kernels::conv2d_backward_weights(g, xc.ptr(), gw, gb, kd);
        }
      });
}

template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& x, const TensorT<T>& w,
                            const TensorT<T>& b, int stride, int pad) {
  CBT_REQUIRE(x.ndim() == 4, "conv_transpose2d: input must be NCHW, got ",
              shape_str(x.dims()));
  CBT_REQUIRE(w.ndim() == 4,
              "conv_transpose2d: weights must be {ci,co,kh,kw}, got ",
              shape_str(w.dims()));
  const int n = x.dim(0), ci = x.dim(1), hi = x.dim(2), wi = x.dim(3);
  const int co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  CBT_REQUIRE(w.dim(0) == ci, "conv_transpose2d: weight in-channels ", w.dim(0),
              " vs input channels ", ci);
  CBT_REQUIRE(stride >= 1 && pad >= 0, "conv_transpose2d: stride ", stride,
              ", pad ", pad);
  const int ho = stride * (hi - 1) + kh - 2 * pad;
  const int wo = stride * (wi - 1) + kw - 2 * pad;
  CBT_REQUIRE(ho >= 1 && wo >= 1, "conv_transpose2d: output extent ", ho, "x",
              wo);
  if (b.defined())
    CBT_REQUIRE(b.ndim() == 1 && b.dim(0) == co, "conv_transpose2d: bias dims ",
                shape_str(b.dims()), " vs out channels ", co);

  kernels::ConvT2dDims kd{n, ci, hi, wi, co, kh, kw, stride, pad, pad, ho, wo};
  std::vector<T> out(static_cast<size_t>(shape_numel({n, co, ho, wo})));
  kernels::conv_transpose2d_forward(x.ptr(), w.ptr(),
                                    b.defined() ? b.ptr() : nullptr, out.data(),
                                    kd);

  std::vector<TensorT<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  TensorT<T> xc = x, wc = w, bc = b;
  return TensorT<T>::make_op(
      "conv_transpose2d", {n, co, ho, wo}, std::move(out), parents,
      [xc, wc, bc, kd](TensorNode<T>& node) {
        const T* g = node.grad.data();
        if (xc.requires_grad())
          kernels::conv_transpose2d_backward_input(
              g, wc.ptr(), grad_buffer(*xc.node()).data(), kd);
        const bool need_w = wc.requires_grad();
        const bool need_b = bc.defined() && bc.requires_grad();
        if (need_w || need_b) {
          std::vector<T> scratch;
          T* gw;
          if (need_w) {
            gw = grad_buffer(*wc.node()).data();
          } else {
            scratch.assign(static_cast<size_t>(wc.numel()), T(0));
            gw = scratch.data();
          }
          T* gb = need_b ? grad_buffer(*bc.node()).data() : nullptr;
          kernels::conv_transpose2d_backward_weights(g, xc.ptr(), gw, gb, kd);
        }
      });
}

template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, BatchNormState<T>& state,
                      bool training, T momentum, T eps) {
  CBT_REQUIRE(x.ndim() == 4, "batch_norm: input must be NCHW, got ",
              shape_str(x.dims()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  CBT_REQUIRE(gamma.ndim() == 1 && gamma.dim(0) == c, "batch_norm: gamma dims ",
              shape_str(gamma.dims()), " vs channels ", c);
  CBT_REQUIRE(beta.ndim() == 1 && beta.dim(0) == c, "batch_norm: beta dims ",
              shape_str(beta.dims()), " vs channels ", c);
  CBT_REQUIRE(state.running_mean.defined() &&
                  state.running_mean.dim(0) == c &&
                  state.running_var.dim(0) == c,
              "batch_norm: running stats sized for ", c, " channels required");
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t m = static_cast<int64_t>(n) * plane;
  const T* xp = x.ptr();

  std::vector<T> mu(c), inv_std(c);
  if (training) {
#pragma omp parallel for schedule(static) if (c > 1)
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) {
        const T* p = xp + (static_cast<int64_t>(b) * c + ch) * plane;
        s += det_sum_idx(plane, [&](int64_t i) { return double(p[i]); });
      }
      const double mean = s / double(m);
      double v = 0.0;
      for (int b = 0; b < n; ++b) {
        const T* p = xp + (static_cast<int64_t>(b) * c + ch) * plane;
        v += det_sum_idx(plane, [&](int64_t i) {
          const double d = double(p[i]) - mean;
          return d * d;
        });
      }
      const double var = v / double(m);  // biased, matching the normalizer
      mu[ch] = T(mean);
      inv_std[ch] = T(1.0 / std::sqrt(var + double(eps)));
      T& rm = state.running_mean.data()[ch];
      T& rv = state.running_var.data()[ch];
      rm = momentum * rm + (T(1) - momentum) * T(mean);
      rv = momentum * rv + (T(1) - momentum) * T(var);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean.data()[ch];
      inv_std[ch] = T(1) / std::sqrt(state.running_var.data()[ch] + eps);
    }
  }

  std::vector<T> out(static_cast<size_t>(x.numel()));
#pragma omp parallel for collapse(2) schedule(static) if (n * c > 1)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const int64_t off = (static_cast<int64_t>(b) * c + ch) * plane;
      const T scale = gamma.ptr()[ch] * inv_std[ch];
      const T shift = beta.ptr()[ch] - scale * mu[ch];
      for (int64_t i = 0; i < plane; ++i) out[off + i] = scale * xp[off + i] + shift;
    }
  }

  TensorT<T> xc = x, gc = gamma, bc = beta;
  return TensorT<T>::make_op(
      "batch_norm", x.dims(), std::move(out), {x, gamma, beta},
      [xc, gc, bc, mu, inv_std, training, n, c, plane,
       m](TensorNode<T>& node) {
        const T* g = node.grad.data();
        const T* xp = xc.ptr();
        T* gx = xc.requires_grad() ? grad_buffer(*xc.node()).data() : nullptr;
        T* gg = gc.requires_grad() ? grad_buffer(*gc.node()).data() : nullptr;
        T* gb = bc.requires_grad() ? grad_buffer(*bc.node()).data() : nullptr;
#pragma omp parallel for schedule(static) if (c > 1)
        for (int ch = 0; ch < c; ++ch) {
          const T mu_c = mu[ch], is_c = inv_std[ch];
          double sg = 0.0, sgx = 0.0;
          for (int b = 0; b < n; ++b) {
            const int64_t off = (static_cast<int64_t>(b) * c + ch) * plane;
            sg += det_sum_idx(plane, [&](int64_t i) { return double(g[off + i]); });
            sgx += det_sum_idx(plane, [&](int64_t i) {
              return double(g[off + i]) * double((xp[off + i] - mu_c) * is_c);
            });
          }
          if (gb) gb[ch] += T(sg);
          if (gg) gg[ch] += T(sgx);
          if (!gx) continue;
          const T scale = gc.ptr()[ch] * is_c;
          if (training) {
            const T mg = T(sg / double(m));
            const T mgx = T(sgx / double(m));
            for (int b = 0; b < n; ++b) {
              const int64_t off = (static_cast<int64_t>(b) * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i) {
                const T xhat = (xp[off + i] - mu_c) * is_c;
                gx[off + i] += scale * (g[off + i] - mg - xhat * mgx);
              }
            }
          } else {
            for (int b = 0; b < n; ++b) {
              const int64_t off = (static_cast<int64_t>(b) * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i)
                gx[off + i] += scale * g[off + i];
            }
          }
        }
      });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* xp = x.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = xp[i] > T(0) ? xp[i] : T(0);
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "relu", x.dims(), std::move(out), {x}, [xc](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        const T* xp = xc.ptr();
        for (int64_t i = 0; i < xc.numel(); ++i)
          if (xp[i] > T(0)) gx[i] += g[i];
      });
}

template <typename T>
TensorT<T> clamp(const TensorT<T>& x, T lo, T hi) {
  CBT_REQUIRE(lo < hi, "clamp: lo ", lo, " must be below hi ", hi);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* xp = x.ptr();
  for (int64_t i = 0; i < x.numel(); ++i)
    out[i] = std::min(std::max(xp[i], lo), hi);
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "clamp", x.dims(), std::move(out), {x}, [xc, lo, hi](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        const T* xp = xc.ptr();
        for (int64_t i = 0; i < xc.numel(); ++i)
          if (xp[i] > lo && xp[i] < hi) gx[i] += g[i];
      });
}

template <typename T>
TensorT<T> clamp_min(const TensorT<T>& x, T lo) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* xp = x.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::max(xp[i], lo);
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "clamp_min", x.dims(), std::move(out), {x}, [xc, lo](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        const T* xp = xc.ptr();
        for (int64_t i = 0; i < xc.numel(); ++i)
          if (xp[i] > lo) gx[i] += g[i];
      });
}

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs) {
  CBT_REQUIRE(!xs.empty(), "concat_channels: no inputs");
  const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int co = 0;
  for (const auto& t : xs) {
    CBT_REQUIRE(t.ndim() == 4, "concat_channels: input must be NCHW, got ",
                shape_str(t.dims()));
    CBT_REQUIRE(t.dim(0) == n && t.dim(2) == h && t.dim(3) == w,
                "concat_channels: batch/spatial mismatch ", shape_str(t.dims()),
                " vs ", shape_str(xs[0].dims()));
    co += t.dim(1);
  }
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<T> out(static_cast<size_t>(shape_numel({n, co, h, w})));
  for (int b = 0; b < n; ++b) {
    int64_t dst_c = 0;
    for (const auto& t : xs) {
      const int tc = t.dim(1);
      std::copy_n(t.ptr() + static_cast<int64_t>(b) * tc * plane, tc * plane,
                  out.data() + (static_cast<int64_t>(b) * co + dst_c) * plane);
      dst_c += tc;
    }
  }
  std::vector<TensorT<T>> parents = xs;
  return TensorT<T>::make_op(
      "concat_channels", {n, co, h, w}, std::move(out), parents,
      [parents, n, co, plane](TensorNode<T>& node) {
        const T* g = node.grad.data();
        for (int b = 0; b < n; ++b) {
          int64_t src_c = 0;
          for (const auto& t : parents) {
            const int tc = t.dim(1);
            if (t.requires_grad()) {
              T* gx = grad_buffer(*t.node()).data() +
                      static_cast<int64_t>(b) * tc * plane;
              const T* gs = g + (static_cast<int64_t>(b) * co + src_c) * plane;
              for (int64_t i = 0; i < tc * plane; ++i) gx[i] += gs[i];
            }
            src_c += tc;
          }
        }
      });
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, int first, int count) {
  CBT_REQUIRE(x.ndim() == 4, "slice_channels: input must be NCHW, got ",
              shape_str(x.dims()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  CBT_REQUIRE(first >= 0 && count >= 1 && first + count <= c,
              "slice_channels: [", first, ", ", first + count,
              ") outside ", c, " channels");
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<T> out(static_cast<size_t>(shape_numel({n, count, h, w})));
  for (int b = 0; b < n; ++b)
    std::copy_n(x.ptr() + (static_cast<int64_t>(b) * c + first) * plane,
                count * plane,
                out.data() + static_cast<int64_t>(b) * count * plane);
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "slice_channels", {n, count, h, w}, std::move(out), {x},
      [xc, first, count, n, c, plane](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        for (int b = 0; b < n; ++b) {
          T* gdst = gx + (static_cast<int64_t>(b) * c + first) * plane;
          const T* gsrc = g + static_cast<int64_t>(b) * count * plane;
          for (int64_t i = 0; i < count * plane; ++i) gdst[i] += gsrc[i];
        }
      });
}

template <typename T>
TensorT<T> upsample_nearest(const TensorT<T>& x, int factor) {
  CBT_REQUIRE(x.ndim() == 4, "upsample_nearest: input must be NCHW, got ",
              shape_str(x.dims()));
  CBT_REQUIRE(factor >= 1, "upsample_nearest: factor ", factor);
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h * factor, wo = w * factor;
  std::vector<T> out(static_cast<size_t>(shape_numel({n, c, ho, wo})));
  const T* xp = x.ptr();
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    const T* src = xp + p * h * w;
    T* dst = out.data() + p * static_cast<int64_t>(ho) * wo;
    for (int y = 0; y < ho; ++y) {
      const T* srow = src + static_cast<int64_t>(y / factor) * w;
      T* drow = dst + static_cast<int64_t>(y) * wo;
      for (int xcol = 0; xcol < wo; ++xcol) drow[xcol] = srow[xcol / factor];
    }
  }
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "upsample_nearest", {n, c, ho, wo}, std::move(out), {x},
      [xc, factor, n, c, h, w, ho, wo](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
          T* gdst = gx + p * h * w;
          const T* gsrc = g + p * static_cast<int64_t>(ho) * wo;
          for (int y = 0; y < ho; ++y)
            for (int xcol = 0; xcol < wo; ++xcol)
              gdst[static_cast<int64_t>(y / factor) * w + xcol / factor] +=
                  gsrc[static_cast<int64_t>(y) * wo + xcol];
        }
      });
}

template <typename T>
TensorT<T> avg_pool2x2(const TensorT<T>& x) {
  CBT_REQUIRE(x.ndim() == 4, "avg_pool2x2: input must be NCHW, got ",
              shape_str(x.dims()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h / 2, wo = w / 2;
  CBT_REQUIRE(ho >= 1 && wo >= 1, "avg_pool2x2: input ", h, "x", w,
              " too small");
  std::vector<T> out(static_cast<size_t>(shape_numel({n, c, ho, wo})));
  const T* xp = x.ptr();
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    const T* src = xp + p * h * w;
    T* dst = out.data() + p * static_cast<int64_t>(ho) * wo;
    for (int y = 0; y < ho; ++y) {
      const T* r0 = src + static_cast<int64_t>(2 * y) * w;
      const T* r1 = r0 + w;
      for (int xcol = 0; xcol < wo; ++xcol)
        dst[static_cast<int64_t>(y) * wo + xcol] =
            (r0[2 * xcol] + r0[2 * xcol + 1] + r1[2 * xcol] + r1[2 * xcol + 1]) *
            T(0.25);
    }
  }
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "avg_pool2x2", {n, c, ho, wo}, std::move(out), {x},
      [xc, n, c, h, w, ho, wo](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
          T* gdst = gx + p * h * w;
          const T* gsrc = g + p * static_cast<int64_t>(ho) * wo;
          for (int y = 0; y < ho; ++y) {
            for (int xcol = 0; xcol < wo; ++xcol) {
              const T q = gsrc[static_cast<int64_t>(y) * wo + xcol] * T(0.25);
              gdst[static_cast<int64_t>(2 * y) * w + 2 * xcol] += q;
              gdst[static_cast<int64_t>(2 * y) * w + 2 * xcol + 1] += q;
              gdst[static_cast<int64_t>(2 * y + 1) * w + 2 * xcol] += q;
              gdst[static_cast<int64_t>(2 * y + 1) * w + 2 * xcol + 1] += q;
            }
          }
        }
      });
}

template <typename T>
TensorT<T> crop2d(const TensorT<T>& x, int top, int left, int h, int w) {
  CBT_REQUIRE(x.ndim() == 4, "crop2d: input must be NCHW, got ",
              shape_str(x.dims()));
  const int n = x.dim(0), c = x.dim(1), hi = x.dim(2), wi = x.dim(3);
  CBT_REQUIRE(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= hi &&
                  left + w <= wi,
              "crop2d: window ", h, "x", w, "+", top, "+", left,
              " outside input ", hi, "x", wi);
  std::vector<T> out(static_cast<size_t>(shape_numel({n, c, h, w})));
  const T* xp = x.ptr();
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    const T* src = xp + p * hi * wi;
    T* dst = out.data() + p * static_cast<int64_t>(h) * w;
    for (int y = 0; y < h; ++y)
      std::copy_n(src + static_cast<int64_t>(top + y) * wi + left, w,
                  dst + static_cast<int64_t>(y) * w);
  }
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "crop2d", {n, c, h, w}, std::move(out), {x},
      [xc, top, left, h, w, n, c, hi, wi](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
          T* gdst = gx + p * hi * wi;
          const T* gsrc = g + p * static_cast<int64_t>(h) * w;
          for (int y = 0; y < h; ++y)
            for (int xcol = 0; xcol < w; ++xcol)
              gdst[static_cast<int64_t>(top + y) * wi + left + xcol] +=
                  gsrc[static_cast<int64_t>(y) * w + xcol];
        }
      });
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_dims("add", a, b);
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.ptr()[i] + b.ptr()[i];
  TensorT<T> ac = a, bc = b;
  return TensorT<T>::make_op(
      "add", a.dims(), std::move(out), {a, b}, [ac, bc](TensorNode<T>& node) {
        const T* g = node.grad.data();
        if (ac.requires_grad()) {
          T* ga = grad_buffer(*ac.node()).data();
          for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += g[i];
        }
        if (bc.requires_grad()) {
          T* gb = grad_buffer(*bc.node()).data();
          for (int64_t i = 0; i < bc.numel(); ++i) gb[i] += g[i];
        }
      });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_dims("sub", a, b);
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.ptr()[i] - b.ptr()[i];
  TensorT<T> ac = a, bc = b;
  return TensorT<T>::make_op(
      "sub", a.dims(), std::move(out), {a, b}, [ac, bc](TensorNode<T>& node) {
        const T* g = node.grad.data();
        if (ac.requires_grad()) {
          T* ga = grad_buffer(*ac.node()).data();
          for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += g[i];
        }
        if (bc.requires_grad()) {
          T* gb = grad_buffer(*bc.node()).data();
          for (int64_t i = 0; i < bc.numel(); ++i) gb[i] -= g[i];
        }
      });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_dims("mul", a, b);
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.ptr()[i] * b.ptr()[i];
  TensorT<T> ac = a, bc = b;
  return TensorT<T>::make_op(
      "mul", a.dims(), std::move(out), {a, b}, [ac, bc](TensorNode<T>& node) {
        const T* g = node.grad.data();
        if (ac.requires_grad()) {
          T* ga = grad_buffer(*ac.node()).data();
          const T* bp = bc.ptr();
          for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += g[i] * bp[i];
        }
        if (bc.requires_grad()) {
          T* gb = grad_buffer(*bc.node()).data();
          const T* ap = ac.ptr();
          for (int64_t i = 0; i < bc.numel(); ++i) gb[i] += g[i] * ap[i];
        }
      });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_dims("div", a, b);
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.ptr()[i] / b.ptr()[i];
  TensorT<T> ac = a, bc = b;
  return TensorT<T>::make_op(
      "div", a.dims(), std::move(out), {a, b}, [ac, bc](TensorNode<T>& node) {
        const T* g = node.grad.data();
        const T* bp = bc.ptr();
        if (ac.requires_grad()) {
          T* ga = grad_buffer(*ac.node()).data();
          for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += g[i] / bp[i];
        }
        if (bc.requires_grad()) {
          T* gb = grad_buffer(*bc.node()).data();
          const T* yp = node.value.data();
          for (int64_t i = 0; i < bc.numel(); ++i)
            gb[i] -= g[i] * yp[i] / bp[i];
        }
      });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T s) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x.ptr()[i] + s;
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "add_scalar", x.dims(), std::move(out), {x}, [xc](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += g[i];
      });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& x, T s) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x.ptr()[i] * s;
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "mul_scalar", x.dims(), std::move(out), {x},
      [xc, s](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += g[i] * s;
      });
}

template <typename T>
TensorT<T> pow_scalar(const TensorT<T>& x, T p) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::pow(x.ptr()[i], p);
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "pow_scalar", x.dims(), std::move(out), {x},
      [xc, p](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        const T* xp = xc.ptr();
        for (int64_t i = 0; i < xc.numel(); ++i)
          gx[i] += g[i] * p * std::pow(xp[i], p - T(1));
      });
}

template <typename T>
TensorT<T> log10(const TensorT<T>& x) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::log10(x.ptr()[i]);
  TensorT<T> xc = x;
  const T inv_ln10 = T(1) / std::log(T(10));
  return TensorT<T>::make_op(
      "log10", x.dims(), std::move(out), {x},
      [xc, inv_ln10](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T* g = node.grad.data();
        const T* xp = xc.ptr();
        for (int64_t i = 0; i < xc.numel(); ++i)
          gx[i] += g[i] * inv_ln10 / xp[i];
      });
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
  const int64_t n = x.numel();
  const T* xp = x.ptr();
  const T m = T(det_sum_idx(n, [&](int64_t i) { return double(xp[i]); }) /
                double(n));
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "mean_all", {1}, {m}, {x}, [xc, n](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        const T g = node.grad[0] / T(n);
        for (int64_t i = 0; i < n; ++i) gx[i] += g;
      });
}

template <typename T>
TensorT<T> mean_per_sample(const TensorT<T>& x) {
  CBT_REQUIRE(x.ndim() >= 2, "mean_per_sample: need a batch dim, got ",
              shape_str(x.dims()));
  const int n = x.dim(0);
  const int64_t per = x.numel() / n;
  std::vector<T> out(static_cast<size_t>(n));
  const T* xp = x.ptr();
  for (int b = 0; b < n; ++b) {
    const T* p = xp + static_cast<int64_t>(b) * per;
    out[b] = T(det_sum_idx(per, [&](int64_t i) { return double(p[i]); }) /
               double(per));
  }
  TensorT<T> xc = x;
  return TensorT<T>::make_op(
      "mean_per_sample", {n}, std::move(out), {x},
      [xc, n, per](TensorNode<T>& node) {
        if (!xc.requires_grad()) return;
        T* gx = grad_buffer(*xc.node()).data();
        for (int b = 0; b < n; ++b) {
          const T g = node.grad[b] / T(per);
          T* gp = gx + static_cast<int64_t>(b) * per;
          for (int64_t i = 0; i < per; ++i) gp[i] += g;
        }
      });
}

#define CBT_INSTANTIATE_OPS(T)                                                 \
  template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&,          \
                                const TensorT<T>&, const ConvSpec&);           \
  template TensorT<T> conv_transpose2d<T>(const TensorT<T>&, const TensorT<T>&,\
                                          const TensorT<T>&, int, int);        \
  template TensorT<T> batch_norm<T>(const TensorT<T>&, const TensorT<T>&,      \
                                    const TensorT<T>&, BatchNormState<T>&,     \
                                    bool, T, T);                               \
  template TensorT<T> relu<T>(const TensorT<T>&);                              \
  template TensorT<T> clamp<T>(const TensorT<T>&, T, T);                       \
  template TensorT<T> clamp_min<T>(const TensorT<T>&, T);                      \
  template TensorT<T> concat_channels<T>(const std::vector<TensorT<T>>&);      \
  template TensorT<T> slice_channels<T>(const TensorT<T>&, int, int);          \
  template TensorT<T> upsample_nearest<T>(const TensorT<T>&, int);             \
  template TensorT<T> avg_pool2x2<T>(const TensorT<T>&);                       \
  template TensorT<T> crop2d<T>(const TensorT<T>&, int, int, int, int);        \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> div<T>(const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> add_scalar<T>(const TensorT<T>&, T);                     \
  template TensorT<T> mul_scalar<T>(const TensorT<T>&, T);                     \
  template TensorT<T> pow_scalar<T>(const TensorT<T>&, T);                     \
  template TensorT<T> log10<T>(const TensorT<T>&);                             \
  template TensorT<T> mean_all<T>(const TensorT<T>&);                          \
  template TensorT<T> mean_per_sample<T>(const TensorT<T>&);

CBT_INSTANTIATE_OPS(float)
CBT_INSTANTIATE_OPS(double)

}  // namespace cbt
