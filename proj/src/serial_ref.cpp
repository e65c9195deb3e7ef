#include "cbt/kernels.hpp"

#include <algorithm>
#include <cmath>

// Single-threaded references, written separately from the OpenMP kernels.
// Per-output-element arithmetic matches term for term so the comparison in
// tests and benchmarks is bit-exact.

namespace cbt::kernels::serial {

template <typename T>
void conv2d_forward(const T* in, const T* w, const T* bias, T* out,
                    const Conv2dDims& d) {
  const int64_t in_plane = static_cast<int64_t>(d.hi) * d.wi;
  const int64_t ksz = static_cast<int64_t>(d.kh) * d.kw;
  int64_t o = 0;
  for (int n = 0; n < d.n; ++n) {
    for (int co = 0; co < d.co; ++co) {
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
            for (int ky = ky_lo; ky < ky_hi; ++ky) {
              const T* in_row =
                  in + (static_cast<int64_t>(n) * d.ci + ci) * in_plane +
                  static_cast<int64_t>(iy0 + ky) * d.wi + ix0;
              const T* w_row =
                  w + (static_cast<int64_t>(co) * d.ci + ci) * ksz +
                  static_cast<int64_t>(ky) * d.kw;
              for (int kx = kx_lo; kx < kx_hi; ++kx)
                acc += w_row[kx] * in_row[kx];
            }
          }
          out[o++] = acc;
        }
      }
    }
  }
}

template <typename T>
void bilinear_sample_forward(const T* src, int h, int w, const T* rows,
                             const T* cols, T* out, int64_t n_out) {
  for (int64_t i = 0; i < n_out; ++i) {
    T r = std::min(std::max(rows[i], T(0)), T(h - 1));
    T c = std::min(std::max(cols[i], T(0)), T(w - 1));
    const T fr0 = std::ceil(r) - T(1);
    const T fc0 = std::ceil(c) - T(1);
    int r0 = static_cast<int>(fr0), c0 = static_cast<int>(fc0);
    int r1 = r0 + 1, c1 = c0 + 1;
    const T fr = r - fr0;
    const T fc = c - fc0;
    r0 = std::max(r0, 0);
    c0 = std::max(c0, 0);
    r1 = std::min(r1, h - 1);
    c1 = std::min(c1, w - 1);
    const T top = (T(1) - fc) * src[static_cast<int64_t>(r0) * w + c0] +
                  fc * src[static_cast<int64_t>(r0) * w + c1];
    const T bot = (T(1) - fc) * src[static_cast<int64_t>(r1) * w + c0] +
                  fc * src[static_cast<int64_t>(r1) * w + c1];
    out[i] = (T(1) - fr) * top + fr * bot;
  }
}

#define CBT_INSTANTIATE_SERIAL(T)                                            \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*,          \
                                  const Conv2dDims&);                        \
  template void bilinear_sample_forward<T>(const T*, int, int, const T*,     \
                                           const T*, T*, int64_t);

CBT_INSTANTIATE_SERIAL(float)
CBT_INSTANTIATE_SERIAL(double)

}  // namespace cbt::kernels::serial
