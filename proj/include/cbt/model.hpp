#ifndef CBT_MODEL_HPP
#define CBT_MODEL_HPP

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cbt/frame.hpp"
#include "cbt/ops.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

// Nine stride-[2,2,2,1,1,1,2,2,2] 3x3 feature layers put layers 6..9 at
// 1/8..1/64 resolution, one per block-size stage; each stage's 5x5 prediction
// layer emits 4 MV channels, fed to the next stage through x2 transposed-conv
// upsamplers alongside the matching feature map.
struct CbtNetConfig {
  std::array<int, 9> feat_channels{32, 32, 64, 64, 96, 96, 128, 128, 192};
  std::array<int, 9> feat_strides{2, 2, 2, 1, 1, 1, 2, 2, 2};
  int feat_kernel = 3;
  int pred_kernel = 5;
  int up_feat_channels = 104;
  float mv_clip = 127.0f;

  static CbtNetConfig defaults() { return {}; }
  static CbtNetConfig toy();  // channels/8 variant for CPU-budget runs
  void validate() const;

  // Channels entering each stage's prediction layer.
  std::array<int, 4> stage_input_channels() const;
};

template <typename T>
class CbtNetT {
 public:
  explicit CbtNetT(const CbtNetConfig& cfg);

  void init(uint64_t seed);

  struct StageOutputs {
    std::array<TensorT<T>, 4> mv;           // {n,4,H/S,W/S}, S = 64,32,16,8
    std::array<TensorT<T>, 4> stage_input;  // full prediction-layer inputs
  };

  // input01: {n,3,H,W} stacked (R_P, Q, R_F) scaled to [0,1], H/W 64-multiples.
  StageOutputs forward_graph(const TensorT<T>& input01, bool training);

  std::vector<TensorT<T>> parameters() const;
  // Parameters plus batch-norm running stats, in a stable order.
  std::vector<std::pair<std::string, TensorT<T>>> named_tensors() const;
  int64_t param_count() const;
  const CbtNetConfig& config() const { return cfg_; }

  void set_requires_grad(bool on);
  void zero_grads();

  // Layer-name -> applications; every feature layer must read exactly 1
  // after a forward pass regardless of reference count or stage count.
  const std::map<std::string, int64_t>& exec_counts() const {
    return exec_counts_;
  }
  void reset_exec_counts() { exec_counts_.clear(); }

  // Perturbation knob: 1..3 zeroes that stage's MV output before the next
  // stage consumes it (0 = off).
  int zero_mv_into_next_stage = 0;

 private:
  struct Conv {
    TensorT<T> w, b;
  };
  struct Bn {
    TensorT<T> gamma, beta;
    BatchNormState<T> state;
  };

  void bump(const std::string& name) { ++exec_counts_[name]; }

  CbtNetConfig cfg_;
  std::array<Conv, 9> feat_;
  std::array<Bn, 9> bn_;
  std::array<Conv, 4> pred_;
  std::array<Conv, 3> up_feat_;
  std::array<Conv, 3> up_mv_;
  std::map<std::string, int64_t> exec_counts_;
};

using CbtNet = CbtNetT<float>;

// Eval-mode single-triplet inference.
MvFieldSet predict_mv(CbtNet& net, const FrameTriplet& t);

}  // namespace cbt

#endif
