#ifndef CBT_OPS_HPP
#define CBT_OPS_HPP

#include <vector>

#include "cbt/tensor.hpp"

// Differentiable operations on NCHW tensors. Every op validates shapes up
// front and registers a backward_fn that accumulates into parent grads.

namespace cbt {

struct ConvSpec {
  int stride = 1;
  // pad < 0 selects same-odd padding (k-1)/2 per side; odd kernels only.
  // Explicit pad admits any kernel (the k=4 transposed convs use pad 1).
  int pad = -1;
};

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  const ConvSpec& spec = {});

// weights laid out {ci, co, kh, kw}; output extent = stride*(in-1) + k - 2*pad
template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& x, const TensorT<T>& w,
                            const TensorT<T>& b, int stride, int pad);

// Running statistics mutated by train-mode forwards; never part of the graph.
template <typename T>
struct BatchNormState {
  TensorT<T> running_mean;
  TensorT<T> running_var;

  static BatchNormState init(int channels) {
    return {TensorT<T>::zeros({channels}), TensorT<T>::full({channels}, T(1))};
  }
};

template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, BatchNormState<T>& state,
                      bool training, T momentum = T(0.9), T eps = T(1e-5));

template <typename T>
TensorT<T> relu(const TensorT<T>& x);

// Hard clamp: gradient 1 strictly inside (lo, hi), 0 outside.
template <typename T>
TensorT<T> clamp(const TensorT<T>& x, T lo, T hi);

template <typename T>
TensorT<T> clamp_min(const TensorT<T>& x, T lo);

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs);

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, int first, int count);

template <typename T>
TensorT<T> upsample_nearest(const TensorT<T>& x, int factor);

// 2x2 mean, stride 2, floor dims (trailing odd row/col dropped).
template <typename T>
TensorT<T> avg_pool2x2(const TensorT<T>& x);

template <typename T>
TensorT<T> crop2d(const TensorT<T>& x, int top, int left, int h, int w);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T s);
template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& x, T s);
template <typename T>
TensorT<T> pow_scalar(const TensorT<T>& x, T p);
template <typename T>
TensorT<T> log10(const TensorT<T>& x);

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x);

// {n, ...} -> {n}, averaging everything past the batch dim.
template <typename T>
TensorT<T> mean_per_sample(const TensorT<T>& x);

}  // namespace cbt

#endif
