#include "cbt/model.hpp"

#include <cmath>
#include <cstdint>

#include "cbt/common.hpp"
#include "cbt/warp.hpp"

namespace cbt {

CbtNetConfig CbtNetConfig::toy() {
  CbtNetConfig c;
  c.feat_channels = {4, 4, 8, 8, 12, 12, 16, 16, 24};
  c.up_feat_channels = 13;
  return c;
}

void CbtNetConfig::validate() const {
  CBT_REQUIRE(feat_kernel > 0 && feat_kernel % 2 == 1,
              "feature kernel must be odd, got ", feat_kernel);
  CBT_REQUIRE(pred_kernel > 0 && pred_kernel % 2 == 1,
              "prediction kernel must be odd, got ", pred_kernel);
  CBT_REQUIRE(up_feat_channels > 0, "up_feat_channels must be positive");
  CBT_REQUIRE(mv_clip > 0.0f, "mv_clip must be positive");
  for (int i = 0; i < 9; ++i) {
    CBT_REQUIRE(feat_channels[i] > 0, "feature layer ", i + 1,
                " has non-positive channel count");
    CBT_REQUIRE(feat_strides[i] >= 1, "feature layer ", i + 1,
                " has invalid stride");
  }
  // Layers 6..9 must sit at 1/8, 1/16, 1/32, 1/64 so each stage has a
  // feature map at its block resolution.
  int cum = 1;
  for (int i = 0; i < 9; ++i) {
    cum *= feat_strides[i];
    if (i >= 5) {
      const int want = 8 << (i - 5);
      CBT_REQUIRE(cum == want, "cumulative stride after layer ", i + 1,
                  " is ", cum, ", expected ", want);
    }
  }
}

std::array<int, 4> CbtNetConfig::stage_input_channels() const {
  std::array<int, 4> s{};
  s[0] = feat_channels[8];
  for (int i = 1; i < 4; ++i)
    s[i] = feat_channels[8 - i] + up_feat_channels + 4;
  return s;
}

template <typename T>
CbtNetT<T>::CbtNetT(const CbtNetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto stage_in = cfg_.stage_input_channels();
  const int fk = cfg_.feat_kernel;
  const int pk = cfg_.pred_kernel;
  for (int i = 0; i < 9; ++i) {
    const int ci = i == 0 ? 3 : cfg_.feat_channels[i - 1];
    const int co = cfg_.feat_channels[i];
    feat_[i].w = TensorT<T>::zeros({co, ci, fk, fk});
    feat_[i].b = TensorT<T>::zeros({co});
    bn_[i].gamma = TensorT<T>::full({co}, T(1));
    bn_[i].beta = TensorT<T>::zeros({co});
    bn_[i].state = BatchNormState<T>::init(co);
  }
  for (int s = 0; s < 4; ++s) {
    pred_[s].w = TensorT<T>::zeros({4, stage_in[s], pk, pk});
    pred_[s].b = TensorT<T>::zeros({4});
  }
  for (int j = 0; j < 3; ++j) {
    up_feat_[j].w = TensorT<T>::zeros({stage_in[j], cfg_.up_feat_channels, 4, 4});
    up_feat_[j].b = TensorT<T>::zeros({cfg_.up_feat_channels});
    up_mv_[j].w = TensorT<T>::zeros({4, 4, 4, 4});
    up_mv_[j].b = TensorT<T>::zeros({4});
  }
}

namespace {

template <typename T>
void fill_he_uniform(TensorT<T>& w, int fan_in, RandomSource& rs) {
  const double bound = std::sqrt(6.0 / fan_in);
  T* p = w.ptr();
  for (int64_t i = 0; i < w.numel(); ++i)
    p[i] = static_cast<T>(rs.uniform(-bound, bound));
}

template <typename T>
void fill_const(TensorT<T>& t, T v) {
  T* p = t.ptr();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = v;
}

}  // namespace

template <typename T>
void CbtNetT<T>::init(uint64_t seed) {
  RandomSource rs(seed);
  // Traversal order matches parameters(): feature stack, predictions,
  // feature upsamplers, MV upsamplers.
  for (int i = 0; i < 9; ++i) {
    auto& c = feat_[i];
    fill_he_uniform(c.w, c.w.dim(1) * c.w.dim(2) * c.w.dim(3), rs);
    fill_const(c.b, T(0));
    fill_const(bn_[i].gamma, T(1));
    fill_const(bn_[i].beta, T(0));
    fill_const(bn_[i].state.running_mean, T(0));
    fill_const(bn_[i].state.running_var, T(1));
  }
  for (int s = 0; s < 4; ++s) {
    fill_he_uniform(pred_[s].w,
                    pred_[s].w.dim(1) * pred_[s].w.dim(2) * pred_[s].w.dim(3),
                    rs);
    fill_const(pred_[s].b, T(0));
  }
  for (int j = 0; j < 3; ++j) {
    // Transposed-conv weights are {ci,co,kh,kw}; fan-in counts inputs.
    fill_he_uniform(up_feat_[j].w,
                    up_feat_[j].w.dim(0) * up_feat_[j].w.dim(2) *
                        up_feat_[j].w.dim(3),
                    rs);
    fill_const(up_feat_[j].b, T(0));
    fill_he_uniform(up_mv_[j].w,
                    up_mv_[j].w.dim(0) * up_mv_[j].w.dim(2) * up_mv_[j].w.dim(3),
                    rs);
    fill_const(up_mv_[j].b, T(0));
  }
}

template <typename T>
typename CbtNetT<T>::StageOutputs CbtNetT<T>::forward_graph(
    const TensorT<T>& input01, bool training) {
  CBT_REQUIRE(input01.ndim() == 4 && input01.dim(1) == 3,
              "forward expects {n,3,H,W}, got ", shape_str(input01.dims()));
  const int h = input01.dim(2);
  const int w = input01.dim(3);
  CBT_REQUIRE(h >= 64 && w >= 64 && h % 64 == 0 && w % 64 == 0,
              "input dims must be 64-multiples, got ", h, "x", w);

  std::array<TensorT<T>, 9> feat_out;
  TensorT<T> x = input01;
  for (int i = 0; i < 9; ++i) {
    x = conv2d(x, feat_[i].w, feat_[i].b, ConvSpec{cfg_.feat_strides[i], -1});
    x = batch_norm(x, bn_[i].gamma, bn_[i].beta, bn_[i].state, training);
    x = relu(x);
    feat_out[i] = x;
    bump(cat("feat", i + 1));
  }

  StageOutputs so;
  const T clip = static_cast<T>(cfg_.mv_clip);
  so.stage_input[0] = feat_out[8];
  so.mv[0] = clamp(conv2d(so.stage_input[0], pred_[0].w, pred_[0].b),
                   -clip, clip);
  bump("pred1");
  for (int s = 1; s < 4; ++s) {
    TensorT<T> up_f = conv_transpose2d(so.stage_input[s - 1], up_feat_[s - 1].w,
                                       up_feat_[s - 1].b, 2, 1);
    bump(cat("up_feat", s + 1));
    TensorT<T> mv_prev = so.mv[s - 1];
    if (zero_mv_into_next_stage == s)
      mv_prev = TensorT<T>::zeros(mv_prev.dims());
    TensorT<T> up_m =
        conv_transpose2d(mv_prev, up_mv_[s - 1].w, up_mv_[s - 1].b, 2, 1);
    bump(cat("up_mv", s + 1));
    so.stage_input[s] = concat_channels(
        std::vector<TensorT<T>>{feat_out[8 - s], up_f, up_m});
    so.mv[s] = clamp(conv2d(so.stage_input[s], pred_[s].w, pred_[s].b),
                     -clip, clip);
    bump(cat("pred", s + 1));
  }
  return so;
}

template <typename T>
std::vector<TensorT<T>> CbtNetT<T>::parameters() const {
  std::vector<TensorT<T>> out;
  for (int i = 0; i < 9; ++i) {
    out.push_back(feat_[i].w);
    out.push_back(feat_[i].b);
    out.push_back(bn_[i].gamma);
    out.push_back(bn_[i].beta);
  }
  for (int s = 0; s < 4; ++s) {
    out.push_back(pred_[s].w);
    out.push_back(pred_[s].b);
  }
  for (int j = 0; j < 3; ++j) {
    out.push_back(up_feat_[j].w);
    out.push_back(up_feat_[j].b);
  }
  for (int j = 0; j < 3; ++j) {
    out.push_back(up_mv_[j].w);
    out.push_back(up_mv_[j].b);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> CbtNetT<T>::named_tensors()
    const {
  std::vector<std::pair<std::string, TensorT<T>>> out;
  for (int i = 0; i < 9; ++i) {
    const std::string p = cat("feat", i + 1);
    out.emplace_back(p + ".w", feat_[i].w);
    out.emplace_back(p + ".b", feat_[i].b);
    out.emplace_back(p + ".gamma", bn_[i].gamma);
    out.emplace_back(p + ".beta", bn_[i].beta);
    out.emplace_back(p + ".running_mean", bn_[i].state.running_mean);
    out.emplace_back(p + ".running_var", bn_[i].state.running_var);
  }
  for (int s = 0; s < 4; ++s) {
    const std::string p = cat("pred", s + 1);
    out.emplace_back(p + ".w", pred_[s].w);
    out.emplace_back(p + ".b", pred_[s].b);
  }
  for (int j = 0; j < 3; ++j) {
    const std::string p = cat("up_feat", j + 2);
    out.emplace_back(p + ".w", up_feat_[j].w);
    out.emplace_back(p + ".b", up_feat_[j].b);
  }
  for (int j = 0; j < 3; ++j) {
    const std::string p = cat("up_mv", j + 2);
    out.emplace_back(p + ".w", up_mv_[j].w);
    out.emplace_back(p + ".b", up_mv_[j].b);
  }
  return out;
}

template <typename T>
int64_t CbtNetT<T>::param_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

template <typename T>
void CbtNetT<T>::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.set_requires_grad(on);
}

template <typename T>
void CbtNetT<T>::zero_grads() {
  for (auto& p : parameters()) p.zero_grad();
}

template class CbtNetT<float>;
template class CbtNetT<double>;

MvFieldSet predict_mv(CbtNet& net, const FrameTriplet& t) {
  TripletBatch batch = make_batch({&t});
  auto so = net.forward_graph(batch.input01, false);
  MvFieldSet out = MvFieldSet::zeros(t.width(), t.height());
  for (int si = 0; si < 4; ++si)
    write_field_from_stage(out, MvFieldSet::kSizes[si], so.mv[si], 0);
  return out;
}

}  // namespace cbt
