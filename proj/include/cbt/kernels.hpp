#ifndef CBT_KERNELS_HPP
#define CBT_KERNELS_HPP

#include <cstdint>

// Low-level dense kernels. The cbt::kernels namespace holds the OpenMP
// versions used everywhere; cbt::kernels::serial holds independently written
// single-loop references kept for correctness tests and the benchmark target.
// Per-output-element arithmetic is ordered identically in both so results are
// bit-exact matches.

namespace cbt::kernels {

struct Conv2dDims {
  int n, ci, hi, wi;   // input
  int co, kh, kw;      // kernel
  int stride, ph, pw;  // stride and zero padding per side
  int ho, wo;          // output
};

template <typename T>
void conv2d_forward(const T* in, const T* w, const T* bias, T* out,
                    const Conv2dDims& d);

template <typename T>
void conv2d_backward_input(const T* gout, const T* w, T* gin, const Conv2dDims& d);

template <typename T>
void conv2d_backward_weights(const T* gout, const T* in, T* gw, T* gb,
                             const Conv2dDims& d);

// Transposed conv; weights laid out [ci][co][kh][kw].
struct ConvT2dDims {
  int n, ci, hi, wi;
  int co, kh, kw;
  int stride, ph, pw;
  int ho, wo;
};

template <typename T>
void conv_transpose2d_forward(const T* in, const T* w, const T* bias, T* out,
                              const ConvT2dDims& d);

template <typename T>
void conv_transpose2d_backward_input(const T* gout, const T* w, T* gin,
                                     const ConvT2dDims& d);

template <typename T>
void conv_transpose2d_backward_weights(const T* gout, const T* in, T* gw, T* gb,
                                       const ConvT2dDims& d);

// Bilinear sampling of a single-channel plane at coordinates (rows, cols),
// both of length n_out. Coordinates are clamped to the frame. At integer
// coordinates the interpolation weights are exactly {0,1}, so integer grids
// copy pixels bit-exactly.
template <typename T>
void bilinear_sample_forward(const T* src, int h, int w, const T* rows,
                             const T* cols, T* out, int64_t n_out);

template <typename T>
void bilinear_sample_backward(const T* src, int h, int w, const T* rows,
                              const T* cols, const T* gout, T* gsrc, T* grows,
                              T* gcols, int64_t n_out);

namespace serial {

template <typename T>
void conv2d_forward(const T* in, const T* w, const T* bias, T* out,
                    const Conv2dDims& d);

template <typename T>
void bilinear_sample_forward(const T* src, int h, int w, const T* rows,
                             const T* cols, T* out, int64_t n_out);

}  // namespace serial

}  // namespace cbt::kernels

#endif
