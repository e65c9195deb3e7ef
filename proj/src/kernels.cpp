#include "cbt/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace cbt::kernels {

template <typename T>
void conv2d_forward(const T* in, const T* w, const T* bias, T* out,
                    const Conv2dDims& d) {
  const int64_t in_plane = static_cast<int64_t>(d.hi) * d.wi;
  const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
  const int64_t ksz = static_cast<int64_t>(d.kh) * d.kw;
#pragma omp parallel for collapse(2) schedule(static) if (d.n * d.co > 1)
  for (int n = 0; n < d.n; ++n) {
    for (int co = 0; co < d.co; ++co) {
      const T* in_n = in + static_cast<int64_t>(n) * d.ci * in_plane;
      const T* w_co = w + static_cast<int64_t>(co) * d.ci * ksz;
      T* out_p = out + (static_cast<int64_t>(n) * d.co + co) * out_plane;
      for (int oy = 0; oy < d.ho; ++oy) {
        const int iy0 = oy * d.stride - d.ph;
        const int ky_lo = std::max(0, -iy0);
        const int ky_hi = std::min(d.kh, d.hi - iy0);
        for (int ox = 0; ox < d.wo; ++ox) {
          const int ix0 = ox * d.stride - d.pw;
          const int kx_lo = std::max(0, -ix0);
          const int kx_hi = std::min(d.kw, d.wi - ix0);
          T acc = bias ? bias[co] : T(0);
          for (int ci = 0; ci < d.ci; ++ci) {
            const T* in_c = in_n + ci * in_plane;
            const T* w_c = w_co + ci * ksz;
            for (int ky = ky_lo; ky < ky_hi; ++ky) {
              const T* in_row = in_c + static_cast<int64_t>(iy0 + ky) * d.wi + ix0;
              const T* w_row = w_c + static_cast<int64_t>(ky) * d.kw;
              for (int kx = kx_lo; kx < kx_hi; ++kx)
                acc += w_row[kx] * in_row[kx];
            }
          }
          out_p[static_cast<int64_t>(oy) * d.wo + ox] = acc;
        }
      }
    }
  }
}

// Gather form: each input element sums the output positions it contributed
// to, so the parallel loop is race-free.
template <typename T>
void conv2d_backward_input(const T* gout, const T* w, T* gin,
                           const Conv2dDims& d) {
  const int64_t in_plane = static_cast<int64_t>(d.hi) * d.wi;
  const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
#pragma omp parallel for collapse(2) schedule(static) if (d.n * d.ci > 1)
  for (int n = 0; n < d.n; ++n) {
    for (int ci = 0; ci < d.ci; ++ci) {
      T* gin_p = gin + (static_cast<int64_t>(n) * d.ci + ci) * in_plane;
      const T* gout_n = gout + static_cast<int64_t>(n) * d.co * out_plane;
      for (int iy = 0; iy < d.hi; ++iy) {
        for (int ix = 0; ix < d.wi; ++ix) {
          T acc = T(0);
          for (int ky = 0; ky < d.kh; ++ky) {
            const int oy_num = iy + d.ph - ky;
            if (oy_num < 0 || oy_num % d.stride) continue;
            const int oy = oy_num / d.stride;
            if (oy >= d.ho) continue;
            for (int kx = 0; kx < d.kw; ++kx) {
              const int ox_num = ix + d.pw - kx;
              if (ox_num < 0 || ox_num % d.stride) continue;
              const int ox = ox_num / d.stride;
              if (ox >= d.wo) continue;
              for (int co = 0; co < d.co; ++co) {
                const T gv = gout_n[co * out_plane + static_cast<int64_t>(oy) * d.wo + ox];
                acc += gv * w[((static_cast<int64_t>(co) * d.ci + ci) * d.kh + ky) * d.kw + kx];
              }
            }
          }
          gin_p[static_cast<int64_t>(iy) * d.wi + ix] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weights(const T* gout, const T* in, T* gw, T* gb,
                             const Conv2dDims& d) {
  const int64_t in_plane = static_cast<int64_t>(d.hi) * d.wi;
  const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
  const int64_t ksz = static_cast<int64_t>(d.kh) * d.kw;
#pragma omp parallel for schedule(static) if (d.co > 1)
  for (int co = 0; co < d.co; ++co) {
    T* gw_co = gw + static_cast<int64_t>(co) * d.ci * ksz;
    T gb_acc = T(0);
    for (int n = 0; n < d.n; ++n) {
      const T* gout_p = gout + (static_cast<int64_t>(n) * d.co + co) * out_plane;
      const T* in_n = in + static_cast<int64_t>(n) * d.ci * in_plane;
      for (int oy = 0; oy < d.ho; ++oy) {
        const int iy0 = oy * d.stride - d.ph;
        for (int ox = 0; ox < d.wo; ++ox) {
          const int ix0 = ox * d.stride - d.pw;
          const T gv = gout_p[static_cast<int64_t>(oy) * d.wo + ox];
          gb_acc += gv;
          for (int ci = 0; ci < d.ci; ++ci) {
            const T* in_c = in_n + ci * in_plane;
            T* gw_c = gw_co + ci * ksz;
            const int ky_lo = std::max(0, -iy0);
            const int ky_hi = std::min(d.kh, d.hi - iy0);
            const int kx_lo = std::max(0, -ix0);
            const int kx_hi = std::min(d.kw, d.wi - ix0);
            for (int ky = ky_lo; ky < ky_hi; ++ky) {
              const T* in_row = in_c + static_cast<int64_t>(iy0 + ky) * d.wi + ix0;
              T* gw_row = gw_c + static_cast<int64_t>(ky) * d.kw;
              for (int kx = kx_lo; kx < kx_hi; ++kx)
                gw_row[kx] += gv * in_row[kx];
            }
          }
        }
      }
    }
    if (gb) gb[co] += gb_acc;
  }
}

template <typename T>
void conv_transpose2d_forward(const T* in, const T* w, const T* bias, T* out,
                              const ConvT2dDims& d) {
  const int64_t in_plane = static_cast<int64_t>(d.hi) * d.wi;
  const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
#pragma omp parallel for collapse(2) schedule(static) if (d.n * d.co > 1)
  for (int n = 0; n < d.n; ++n) {
    for (int co = 0; co < d.co; ++co) {
      T* out_p = out + (static_cast<int64_t>(n) * d.co + co) * out_plane;
      const T* in_n = in + static_cast<int64_t>(n) * d.ci * in_plane;
      for (int oy = 0; oy < d.ho; ++oy) {
        for (int ox = 0; ox < d.wo; ++ox) {
          T acc = bias ? bias[co] : T(0);
          for (int ky = 0; ky < d.kh; ++ky) {
            const int iy_num = oy + d.ph - ky;
            if (iy_num < 0 || iy_num % d.stride) continue;
            const int iy = iy_num / d.stride;
            if (iy >= d.hi) continue;
            for (int kx = 0; kx < d.kw; ++kx) {
              const int ix_num = ox + d.pw - kx;
              if (ix_num < 0 || ix_num % d.stride) continue;
              const int ix = ix_num / d.stride;
              if (ix >= d.wi) continue;
              for (int ci = 0; ci < d.ci; ++ci) {
                acc += in_n[ci * in_plane + static_cast<int64_t>(iy) * d.wi + ix] *
                       w[((static_cast<int64_t>(ci) * d.co + co) * d.kh + ky) * d.kw + kx];
              }
            }
          }
          out_p[static_cast<int64_t>(oy) * d.wo + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv_transpose2d_backward_input(const T* gout, const T* w, T* gin,
                                     const ConvT2dDims& d) {
  const int64_t in_plane = static_cast<int64_t>(d.hi) * d.wi;
  const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
  // d out(oy,ox)/d in(iy,ix) is nonzero when oy = iy*stride - ph + ky.
#pragma omp parallel for collapse(2) schedule(static) if (d.n * d.ci > 1)
  for (int n = 0; n < d.n; ++n) {
    for (int ci = 0; ci < d.ci; ++ci) {
      T* gin_p = gin + (static_cast<int64_t>(n) * d.ci + ci) * in_plane;
      const T* gout_n = gout + static_cast<int64_t>(n) * d.co * out_plane;
      for (int iy = 0; iy < d.hi; ++iy) {
        for (int ix = 0; ix < d.wi; ++ix) {
          T acc = T(0);
          for (int ky = 0; ky < d.kh; ++ky) {
            const int oy = iy * d.stride - d.ph + ky;
            if (oy < 0 || oy >= d.ho) continue;
            for (int kx = 0; kx < d.kw; ++kx) {
              const int ox = ix * d.stride - d.pw + kx;
              if (ox < 0 || ox >= d.wo) continue;
              for (int co = 0; co < d.co; ++co) {
                acc += gout_n[co * out_plane + static_cast<int64_t>(oy) * d.wo + ox] *
                       w[((static_cast<int64_t>(ci) * d.co + co) * d.kh + ky) * d.kw + kx];
              }
            }
          }
          gin_p[static_cast<int64_t>(iy) * d.wi + ix] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv_transpose2d_backward_weights(const T* gout, const T* in, T* gw,
                                       T* gb, const ConvT2dDims& d) {
  const int64_t in_plane = static_cast<int64_t>(d.hi) * d.wi;
  const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
#pragma omp parallel for schedule(static) if (d.co > 1)
  for (int co = 0; co < d.co; ++co) {
    T gb_acc = T(0);
    for (int n = 0; n < d.n; ++n) {
      const T* gout_p = gout + (static_cast<int64_t>(n) * d.co + co) * out_plane;
      const T* in_n = in + static_cast<int64_t>(n) * d.ci * in_plane;
      for (int iy = 0; iy < d.hi; ++iy) {
        for (int ix = 0; ix < d.wi; ++ix) {
          for (int ky = 0; ky < d.kh; ++ky) {
            const int oy = iy * d.stride - d.ph + ky;
            if (oy < 0 || oy >= d.ho) continue;
            for (int kx = 0; kx < d.kw; ++kx) {
              const int ox = ix * d.stride - d.pw + kx;
              if (ox < 0 || ox >= d.wo) continue;
              const T gv = gout_p[static_cast<int64_t>(oy) * d.wo + ox];
              for (int ci = 0; ci < d.ci; ++ci) {
                gw[((static_cast<int64_t>(ci) * d.co + co) * d.kh + ky) * d.kw + kx] +=
                    gv * in_n[ci * in_plane + static_cast<int64_t>(iy) * d.wi + ix];
              }
            }
          }
        }
      }
      for (int oy = 0; oy < d.ho; ++oy)
        for (int ox = 0; ox < d.wo; ++ox)
          gb_acc += gout_p[static_cast<int64_t>(oy) * d.wo + ox];
    }
    if (gb) gb[co] += gb_acc;
  }
}

namespace {

// Cell selection: x0 = ceil(x) - 1, so integer coordinates take weight 1 on
// themselves and the gradient uses the left/top cell.
template <typename T>
inline void sample_cell(T coord, int limit, int& i0, int& i1, T& frac) {
  T c = std::min(std::max(coord, T(0)), T(limit - 1));
  T f0 = std::ceil(c) - T(1);
  i0 = static_cast<int>(f0);
  i1 = i0 + 1;
  frac = c - f0;
  if (i0 < 0) i0 = 0;
  if (i1 > limit - 1) i1 = limit - 1;
}

}  // namespace

template <typename T>
void bilinear_sample_forward(const T* src, int h, int w, const T* rows,
                             const T* cols, T* out, int64_t n_out) {
#pragma omp parallel for schedule(static) if (n_out > 4096)
  for (int64_t i = 0; i < n_out; ++i) {
    int r0, r1, c0, c1;
    T fr, fc;
    sample_cell(rows[i], h, r0, r1, fr);
    sample_cell(cols[i], w, c0, c1, fc);
    const T top = (T(1) - fc) * src[static_cast<int64_t>(r0) * w + c0] +
                  fc * src[static_cast<int64_t>(r0) * w + c1];
    const T bot = (T(1) - fc) * src[static_cast<int64_t>(r1) * w + c0] +
                  fc * src[static_cast<int64_t>(r1) * w + c1];
    out[i] = (T(1) - fr) * top + fr * bot;
  }
}

template <typename T>
void bilinear_sample_backward(const T* src, int h, int w, const T* rows,
                              const T* cols, const T* gout, T* gsrc, T* grows,
                              T* gcols, int64_t n_out) {
  // gsrc scatters; kept serial to stay deterministic (grid cells overlap).
  for (int64_t i = 0; i < n_out; ++i) {
    int r0, r1, c0, c1;
    T fr, fc;
    sample_cell(rows[i], h, r0, r1, fr);
    sample_cell(cols[i], w, c0, c1, fc);
    const T g = gout[i];
    const T v00 = src[static_cast<int64_t>(r0) * w + c0];
    const T v01 = src[static_cast<int64_t>(r0) * w + c1];
    const T v10 = src[static_cast<int64_t>(r1) * w + c0];
    const T v11 = src[static_cast<int64_t>(r1) * w + c1];
    if (gsrc) {
      gsrc[static_cast<int64_t>(r0) * w + c0] += g * (T(1) - fr) * (T(1) - fc);
      gsrc[static_cast<int64_t>(r0) * w + c1] += g * (T(1) - fr) * fc;
      gsrc[static_cast<int64_t>(r1) * w + c0] += g * fr * (T(1) - fc);
      gsrc[static_cast<int64_t>(r1) * w + c1] += g * fr * fc;
    }
    // Zero slope where the coordinate was clamped to the border.
    const bool r_clamped = rows[i] <= T(0) || rows[i] >= T(h - 1);
    const bool c_clamped = cols[i] <= T(0) || cols[i] >= T(w - 1);
    if (grows && !r_clamped)
      grows[i] += g * ((T(1) - fc) * (v10 - v00) + fc * (v11 - v01));
    if (gcols && !c_clamped)
      gcols[i] += g * ((T(1) - fr) * (v01 - v00) + fr * (v11 - v10));
  }
}

#define CBT_INSTANTIATE_KERNELS(T)                                             \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*,            \
                                  const Conv2dDims&);                          \
  template void conv2d_backward_input<T>(const T*, const T*, T*,               \
                                         const Conv2dDims&);                   \
  template void conv2d_backward_weights<T>(const T*, const T*, T*, T*,         \
                                           const Conv2dDims&);                 \
  template void conv_transpose2d_forward<T>(const T*, const T*, const T*, T*,  \
                                            const ConvT2dDims&);               \
  template void conv_transpose2d_backward_input<T>(const T*, const T*, T*,     \
                                                   const ConvT2dDims&);        \
  template void conv_transpose2d_backward_weights<T>(const T*, const T*, T*,   \
                                                     T*, const ConvT2dDims&);  \
  template void bilinear_sample_forward<T>(const T*, int, int, const T*,       \
                                           const T*, T*, int64_t);             \
  template void bilinear_sample_backward<T>(const T*, int, int, const T*,      \
                                            const T*, const T*, T*, T*, T*,    \
                                            int64_t);

CBT_INSTANTIATE_KERNELS(float)
CBT_INSTANTIATE_KERNELS(double)

}  // namespace cbt::kernels
