#include "cbt/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>

#include "cbt/block_match.hpp"
#include "cbt/dataset.hpp"
#include "cbt/gradcheck.hpp"
#include "cbt/mv_codec.hpp"
#include "cbt/ops.hpp"
#include "cbt/quality.hpp"
#include "cbt/warp.hpp"

namespace cbt {
namespace {

// Tuned so the toy run finishes while the loss is still on its steep
// descent; see the convergence check below.
constexpr int kToySteps = 1200;
constexpr int kToyBatch = 8;

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

SelfTestResult finish(const std::string& name, bool pass, std::string detail,
                      double t0) {
  return {name, pass, std::move(detail), now_s() - t0};
}

TensorD randu(RandomSource& rng, Shape dims, double lo, double hi) {
  TensorD t = TensorD::zeros(std::move(dims));
  double* p = t.ptr();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps every element at least `margin` away from each kink point, so the
// central difference never straddles a non-smooth spot.
void keep_off(TensorD& t, std::initializer_list<double> kinks, double margin) {
  for (double& v : t.data())
    for (double k : kinks)
      if (std::abs(v - k) < margin) v = k + (v >= k ? margin : -margin);
}

LumaFrame noise_frame(RandomSource& rng, int w, int h) {
  LumaFrame f = LumaFrame::sized(w, h);
  for (auto& p : f.pix) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  return f;
}

// Smooth lattice texture with grain; enough structure for SSIM statistics.
LumaFrame texture_frame(uint64_t seed, int w, int h) {
  RandomSource rng(seed);
  const int cell = 16;
  const int gw = w / cell + 2, gh = h / cell + 2;
  std::vector<double> lat(static_cast<size_t>(gw) * gh);
  for (auto& v : lat) v = rng.uniform(16.0, 240.0);
  LumaFrame f = LumaFrame::sized(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double y = double(r) / cell, x = double(c) / cell;
      const int r0 = int(y), c0 = int(x);
      const double fy = y - r0, fx = x - c0;
      auto L = [&](int rr, int cc) { return lat[size_t(rr) * gw + cc]; };
      double v = (1 - fy) * ((1 - fx) * L(r0, c0) + fx * L(r0, c0 + 1)) +
                 fy * ((1 - fx) * L(r0 + 1, c0) + fx * L(r0 + 1, c0 + 1));
      v += rng.uniform(-6.0, 6.0);
      f.at(r, c) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  return f;
}

// ---------------------------------------------------------------- criterion 1

struct GradIssue {
  std::string name;
  double err;
};

class GradSuite {
 public:
  explicit GradSuite(uint64_t seed) : rng_(seed) {}

  // Wraps a tensor-valued graph into a scalar via a fixed random weighting.
  void check(const std::string& name, const std::function<TensorD()>& g,
             std::vector<TensorD> inputs, double tol = 1e-4, double h = 1e-5,
             int max_coords = 0) {
    TensorD probe = g();
    TensorD r = randu(rng_, probe.dims(), -1.0, 1.0);
    auto root = [g, r]() { return mean_all(mul(g(), r)); };
    check_root(name, root, std::move(inputs), tol, h, max_coords);
  }

  void check_root(const std::string& name, const std::function<TensorD()>& g,
                  std::vector<TensorD> inputs, double tol = 1e-4,
                  double h = 1e-5, int max_coords = 0) {
    auto rep = finite_diff_report(g, std::move(inputs), h, max_coords, &rng_);
    if (rep.max_err > worst_err_) {
      worst_err_ = rep.max_err;
      worst_name_ = name;
    }
    if (rep.max_err > tol) issues_.push_back({name + ": " + rep.worst, rep.max_err});
  }

  RandomSource& rng() { return rng_; }
  const std::vector<GradIssue>& issues() const { return issues_; }
  double worst_err() const { return worst_err_; }
  const std::string& worst_name() const { return worst_name_; }

 private:
  RandomSource rng_;
  std::vector<GradIssue> issues_;
  double worst_err_ = 0.0;
  std::string worst_name_;
};

void grad_check_full_model(GradSuite& suite) {
  CbtNetT<double> net(CbtNetConfig::toy());
  net.init(1234);

  SyntheticConfig sc;
  sc.count = 1;
  sc.seed = 31;
  SyntheticTranslationSource src(sc);
  FrameTriplet t = src.get(0);

  auto plane = [](const LumaFrame& f, double scale) {
    TensorD x = TensorD::zeros({1, 1, f.h, f.w});
    for (int64_t i = 0; i < x.numel(); ++i)
      x.ptr()[i] = f.pix[static_cast<size_t>(i)] * scale;
    return x;
  };
  TensorD q = plane(t.q, 1.0);
  TensorD rp = plane(t.r_past, 1.0);
  TensorD rf = plane(t.r_future, 1.0);
  TensorD input = TensorD::zeros({1, 3, 64, 64});
  const LumaFrame* frames[3] = {&t.r_past, &t.q, &t.r_future};
  for (int ch = 0; ch < 3; ++ch)
    for (int64_t i = 0; i < 64 * 64; ++i)
      input.ptr()[ch * 64 * 64 + i] =
          frames[ch]->pix[static_cast<size_t>(i)] / 255.0;

  auto root = [&net, input, q, rp, rf]() {
    auto so = net.forward_graph(input, true);
    std::array<std::array<TensorD, 4>, 2> qh;
    for (int c = 0; c < 2; ++c)
      for (int si = 0; si < 4; ++si) {
        auto mvc = slice_channels(so.mv[static_cast<size_t>(si)], 2 * c, 2);
        qh[static_cast<size_t>(c)][static_cast<size_t>(si)] =
            block_warp(c == 0 ? rp : rf, mvc, MvFieldSet::kSizes[si]);
      }
    return cbt_loss(q, qh, 64, 64).total;
  };

  std::vector<TensorD> inputs = net.parameters();
  inputs.push_back(input);
  suite.check_root("model/warp/loss composition", root, std::move(inputs),
                   1e-3, 1e-6, 12);
}

SelfTestResult st_gradient_suite_impl() {
  const double t0 = now_s();
  GradSuite s(42);
  RandomSource& rng = s.rng();

  {
    TensorD x = randu(rng, {2, 3, 6, 7}, -1, 1);
    TensorD w = randu(rng, {4, 3, 3, 3}, -0.5, 0.5);
    TensorD b = randu(rng, {4}, -0.2, 0.2);
    s.check("conv2d stride 2", [=]() { return conv2d(x, w, b, ConvSpec{2, -1}); },
            {x, w, b});
  }
  {
    TensorD x = randu(rng, {1, 3, 6, 6}, -1, 1);
    TensorD w = randu(rng, {2, 3, 5, 5}, -0.3, 0.3);
    TensorD b = randu(rng, {2}, -0.2, 0.2);
    s.check("conv2d 5x5", [=]() { return conv2d(x, w, b); }, {x, w, b});
  }
  {
    TensorD x = randu(rng, {2, 3, 4, 5}, -1, 1);
    TensorD w = randu(rng, {3, 4, 4, 4}, -0.4, 0.4);
    TensorD b = randu(rng, {4}, -0.2, 0.2);
    s.check("conv_transpose2d", [=]() { return conv_transpose2d(x, w, b, 2, 1); },
            {x, w, b});
  }
  {
    TensorD x = randu(rng, {3, 4, 5, 6}, -2, 2);
    TensorD g = randu(rng, {4}, 0.5, 1.5);
    TensorD bt = randu(rng, {4}, -0.5, 0.5);
    auto state = std::make_shared<BatchNormState<double>>(
        BatchNormState<double>::init(4));
    s.check("batch_norm train",
            [=]() { return batch_norm(x, g, bt, *state, true); }, {x, g, bt});
    auto frozen = std::make_shared<BatchNormState<double>>(
        BatchNormState<double>::init(4));
    frozen->running_mean = randu(rng, {4}, -0.5, 0.5);
    frozen->running_var = randu(rng, {4}, 0.5, 1.5);
    s.check("batch_norm eval",
            [=]() { return batch_norm(x, g, bt, *frozen, false); }, {x, g, bt});
  }
  {
    TensorD x = randu(rng, {2, 3, 4, 4}, -1, 1);
    keep_off(x, {0.0}, 0.05);
    s.check("relu", [=]() { return relu(x); }, {x});
  }
  {
    TensorD x = randu(rng, {2, 3, 4, 4}, -1, 1);
    keep_off(x, {-0.5, 0.5}, 0.05);
    s.check("clamp", [=]() { return clamp(x, -0.5, 0.5); }, {x});
  }
  {
    TensorD x = randu(rng, {2, 3, 4, 4}, -1, 1);
    keep_off(x, {-0.25}, 0.05);
    s.check("clamp_min", [=]() { return clamp_min(x, -0.25); }, {x});
  }
  {
    TensorD a = randu(rng, {2, 2, 3, 3}, -1, 1);
    TensorD b = randu(rng, {2, 3, 3, 3}, -1, 1);
    TensorD c = randu(rng, {2, 1, 3, 3}, -1, 1);
    s.check("concat_channels",
            [=]() { return concat_channels(std::vector<TensorD>{a, b, c}); },
            {a, b, c});
  }
  {
    TensorD x = randu(rng, {2, 6, 3, 3}, -1, 1);
    s.check("slice_channels", [=]() { return slice_channels(x, 2, 3); }, {x});
  }
  {
    TensorD x = randu(rng, {2, 3, 3, 4}, -1, 1);
    s.check("upsample_nearest", [=]() { return upsample_nearest(x, 2); }, {x});
  }
  {
    TensorD x = randu(rng, {2, 3, 5, 6}, -1, 1);
    s.check("avg_pool2x2", [=]() { return avg_pool2x2(x); }, {x});
  }
  {
    TensorD x = randu(rng, {2, 3, 6, 7}, -1, 1);
    s.check("crop2d", [=]() { return crop2d(x, 1, 2, 4, 4); }, {x});
  }
  {
    TensorD a = randu(rng, {2, 3, 4}, -1, 1);
    TensorD b = randu(rng, {2, 3, 4}, -1, 1);
    TensorD bp = randu(rng, {2, 3, 4}, 0.5, 1.5);
    s.check("add", [=]() { return add(a, b); }, {a, b});
    s.check("sub", [=]() { return sub(a, b); }, {a, b});
    s.check("mul", [=]() { return mul(a, b); }, {a, b});
    s.check("div", [=]() { return div(a, bp); }, {a, bp});
    s.check("add_scalar", [=]() { return add_scalar(a, 0.7); }, {a});
    s.check("mul_scalar", [=]() { return mul_scalar(a, -1.3); }, {a});
  }
  {
    TensorD x = randu(rng, {2, 3, 4}, 0.2, 1.5);
    s.check("pow_scalar", [=]() { return pow_scalar(x, 1.7); }, {x});
    s.check("log10", [=]() { return log10(x); }, {x});
  }
  {
    TensorD x = randu(rng, {2, 3, 4}, -1, 1);
    s.check("mean_all", [=]() { return x; }, {x});
    s.check("mean_per_sample", [=]() { return mean_per_sample(x); }, {x});
  }
  {
    TensorD ref = randu(rng, {1, 1, 16, 16}, 0.0, 255.0);
    TensorD mv = randu(rng, {1, 2, 4, 4}, -2.5, 2.5);
    // Keep sampled coordinates away from the bilinear cell boundaries.
    for (double& v : mv.data()) {
      const double f = v - std::floor(v);
      if (f < 0.15) v += 0.15;
      if (f > 0.85) v -= 0.15;
    }
    s.check("block_warp", [=]() { return block_warp(ref, mv, 4); }, {ref, mv});
  }
  {
    TensorD a = randu(rng, {2, 1, 32, 32}, 0.0, 255.0);
    TensorD b = randu(rng, {2, 1, 32, 32}, 0.0, 255.0);
    s.check("ssim", [=]() { return ssim(a, b); }, {a, b}, 1e-4, 1e-5, 60);
    s.check("ms_ssim", [=]() { return ms_ssim(a, b); }, {a, b}, 1e-4, 1e-5, 60);
  }
  {
    TensorD q = randu(rng, {1, 1, 64, 64}, 0.0, 255.0);
    std::array<std::array<TensorD, 4>, 2> qh;
    std::vector<TensorD> inputs{q};
    for (auto& half : qh)
      for (auto& t : half) {
        t = randu(rng, {1, 1, 64, 64}, 0.0, 255.0);
        inputs.push_back(t);
      }
    s.check_root("cbt_loss",
                 [=]() { return cbt_loss(q, qh, 50, 60).total; }, inputs,
                 1e-4, 1e-5, 25);
  }

  grad_check_full_model(s);

  std::string detail = cat("worst ", s.worst_err(), " (", s.worst_name(), ")");
  if (!s.issues().empty())
    detail = cat(s.issues().size(), " over tolerance; first: ",
                 s.issues().front().name);
  return finish("gradient checks", s.issues().empty(), detail, t0);
}

// ---------------------------------------------------------------- criterion 2

SelfTestResult st_warp_oracle_impl() {
  const double t0 = now_s();
  RandomSource rng(2024);
  const int W = 128, H = 128;
  int64_t mismatches = 0;
  int trials = 0;

  for (int trial = 0; trial < 500; ++trial) {
    const int size = MvFieldSet::kSizes[trial % 4];
    LumaFrame ref = noise_frame(rng, W, H);
    const int bw = W / size, bh = H / size;
    Tensor field = Tensor::zeros({bh, bw, 4});
    std::vector<std::array<int, 4>> imv(static_cast<size_t>(bw) * bh);
    for (size_t i = 0; i < imv.size(); ++i)
      for (int ch = 0; ch < 4; ++ch) {
        imv[i][static_cast<size_t>(ch)] =
            static_cast<int>(rng.uniform_int(-24, 24));
        field.ptr()[i * 4 + static_cast<size_t>(ch)] =
            static_cast<float>(imv[i][static_cast<size_t>(ch)]);
      }
    for (int c = 0; c < 2; ++c) {
      SamplingGrid grid = generate_grid(field, size, W, H, c);
      std::vector<float> out = bilinear_sample(ref, grid);
      for (int r = 0; r < H; ++r)
        for (int col = 0; col < W; ++col) {
          const auto& mv = imv[static_cast<size_t>(r / size) * bw + col / size];
          const int u = mv[static_cast<size_t>(2 * c)];
          const int v = mv[static_cast<size_t>(2 * c + 1)];
          const float expect = ref.at_clamped(r + u, col + v);
          if (out[static_cast<size_t>(r) * W + col] != expect) ++mismatches;
        }
    }
    ++trials;
  }

  // Zero-MV identity across all block sizes.
  LumaFrame ref = noise_frame(rng, W, H);
  for (int size : MvFieldSet::kSizes) {
    Tensor field = Tensor::zeros({H / size, W / size, 4});
    for (int c = 0; c < 2; ++c) {
      std::vector<float> out =
          bilinear_sample(ref, generate_grid(field, size, W, H, c));
      for (int64_t i = 0; i < int64_t(W) * H; ++i)
        if (out[static_cast<size_t>(i)] !=
            float(ref.pix[static_cast<size_t>(i)]))
          ++mismatches;
    }
  }

  return finish("warp exactness", mismatches == 0,
                cat(trials, " fields, ", mismatches, " pixel mismatches"), t0);
}

// ---------------------------------------------------------------- criterion 3

// Candidate enumeration in the opposite loop order with its own SAD, settled
// by a stable sort on the shared preference key.
struct NaiveBest {
  int64_t sad;
  int u, v;
};

NaiveBest naive_es(const LumaFrame& cur, const LumaFrame& ref, int r0, int c0,
                   int size, int range) {
  std::vector<NaiveBest> cands;
  cands.reserve(static_cast<size_t>(2 * range + 1) * (2 * range + 1));
  for (int v = -range; v <= range; ++v)
    for (int u = -range; u <= range; ++u) {
      int64_t sad = 0;
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
          sad += std::abs(int(cur.at(r0 + r, c0 + c)) -
                          int(ref.at_clamped(r0 + r + u, c0 + c + v)));
      cands.push_back({sad, u, v});
    }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const NaiveBest& a, const NaiveBest& b) {
                     if (a.sad != b.sad) return a.sad < b.sad;
                     const int ma = std::abs(a.u) + std::abs(a.v);
                     const int mb = std::abs(b.u) + std::abs(b.v);
                     if (ma != mb) return ma < mb;
                     if (a.u != b.u) return a.u < b.u;
                     return a.v < b.v;
                   });
  return cands.front();
}

SelfTestResult st_search_oracles_impl() {
  const double t0 = now_s();
  RandomSource rng(7071);
  const SearchSpec spec{8, 4};
  int64_t es_mismatch = 0, ds_viol = 0, arps_viol = 0, trans_miss = 0;

  for (int trial = 0; trial < 100; ++trial) {
    LumaFrame cur = noise_frame(rng, 64, 64);
    LumaFrame ref = noise_frame(rng, 64, 64);
    MotionField es = es_search(cur, ref, spec);
    MotionField ds = ds_search(cur, ref, spec);
    MotionField ar = arps_search(cur, ref, spec);
    for (int by = 0; by < es.bh; ++by)
      for (int bx = 0; bx < es.bw; ++bx) {
        const int i = es.idx(by, bx);
        NaiveBest want = naive_es(cur, ref, by * 8, bx * 8, 8, 4);
        if (es.u[static_cast<size_t>(i)] != want.u ||
            es.v[static_cast<size_t>(i)] != want.v ||
            int64_t(es.sad[static_cast<size_t>(i)]) != want.sad)
          ++es_mismatch;
        if (es.sad[static_cast<size_t>(i)] > ds.sad[static_cast<size_t>(i)])
          ++ds_viol;
        if (es.sad[static_cast<size_t>(i)] > ar.sad[static_cast<size_t>(i)])
          ++arps_viol;
      }
  }

  // Global translations of a noise texture must be recovered exactly on
  // blocks whose true match lies fully inside the frame.
  for (int trial = 0; trial < 20; ++trial) {
    LumaFrame tex = noise_frame(rng, 80, 80);
    const int su = static_cast<int>(rng.uniform_int(-4, 4));
    const int sv = static_cast<int>(rng.uniform_int(-4, 4));
    LumaFrame cur = LumaFrame::sized(64, 64), ref = LumaFrame::sized(64, 64);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        cur.at(r, c) = tex.at(8 + r, 8 + c);
        ref.at(r, c) = tex.at(8 + r + su, 8 + c + sv);
      }
    MotionField es = es_search(cur, ref, spec);
    for (int by = 1; by + 1 < es.bh; ++by)
      for (int bx = 1; bx + 1 < es.bw; ++bx) {
        const int i = es.idx(by, bx);
        if (es.u[static_cast<size_t>(i)] != -su ||
            es.v[static_cast<size_t>(i)] != -sv)
          ++trans_miss;
      }
  }

  const bool pass =
      es_mismatch == 0 && ds_viol == 0 && arps_viol == 0 && trans_miss == 0;
  return finish("search optimality", pass,
                cat("es vs naive mismatches ", es_mismatch, ", ds violations ",
                    ds_viol, ", arps violations ", arps_viol,
                    ", translation misses ", trans_miss),
                t0);
}

// ---------------------------------------------------------------- criterion 4

SelfTestResult st_aperture_impl(ToyRun& toy) {
  const double t0 = now_s();
  if (!toy.net)
    return finish("aperture coherence", false, "no trained toy model", t0);

  ApertureScene scene = make_aperture_scene(99);
  MvFieldSet cbt = predict_mv(*toy.net, scene.triplet);

  std::string detail;
  bool pass = true;
  for (int c = 0; c < 2; ++c) {
    const LumaFrame& ref =
        c == 0 ? scene.triplet.r_past : scene.triplet.r_future;
    MotionField es = es_search(scene.triplet.q, ref, SearchSpec{8, 8});
    std::vector<std::array<float, 2>> obj, bg;
    for (int by = 0; by < scene.blocks_h; ++by)
      for (int bx = 0; bx < scene.blocks_w; ++bx) {
        const size_t m = static_cast<size_t>(by) * scene.blocks_w + bx;
        if (scene.object_blocks[m])
          obj.push_back({cbt.mv(8, by, bx, 2 * c), cbt.mv(8, by, bx, 2 * c + 1)});
        if (scene.background_blocks[m]) {
          const int i = es.idx(by, bx);
          bg.push_back({float(es.u[static_cast<size_t>(i)]),
                        float(es.v[static_cast<size_t>(i)])});
        }
      }
    const double var_cbt = mv_variance(obj);
    const double var_es = mv_variance(bg);
    pass = pass && var_cbt < var_es;
    detail += cat(c ? "; " : "", "ref ", c, ": cbt object ", var_cbt,
                  " vs es background ", var_es);
  }
  return finish("aperture coherence", pass, detail, t0);
}

// ---------------------------------------------------------------- criterion 5

SelfTestResult st_toy_training_impl(ToyRun& toy) {
  const double t0 = now_s();

  SyntheticConfig tr;
  tr.seed = 11;
  tr.count = 2000;
  SyntheticConfig va;
  va.seed = 501;
  va.count = 200;
  SyntheticTranslationSource train_src(tr), val_src(va);

  toy.net = std::make_unique<CbtNet>(CbtNetConfig::toy());
  toy.net->init(3);

  TrainConfig cfg;
  cfg.layer_k = 4;
  cfg.batch = kToyBatch;
  cfg.lr = 1e-4;
  cfg.max_steps = kToySteps;
  cfg.seed = 17;
  toy.result = train(*toy.net, train_src, cfg);

  // The moving average sampled once per window; per-step deltas of an Adam
  // run in dB scale oscillate by design, the windowed trend must not.
  const auto& curve = toy.result.curve;
  int ma_violations = 0;
  const size_t win = 20;
  double prev_mean = 0.0;
  for (size_t b = 0; b + win <= curve.size(); b += win) {
    double mean = 0.0;
    for (size_t i = b; i < b + win; ++i) mean += curve[i].loss_db;
    mean /= static_cast<double>(win);
    if (b > 0 && !(mean < prev_mean)) ++ma_violations;
    prev_mean = mean;
  }

  toy.median_epe = median_stage4_epe(*toy.net, val_src, 0, va.count);

  const bool pass = !toy.result.aborted_non_finite && ma_violations == 0 &&
                    toy.median_epe <= 1.0;
  return finish(
      "toy convergence", pass,
      cat(toy.result.steps_run, " steps, ", ma_violations,
          " moving-average increases, median stage-4 EPE ", toy.median_epe,
          " px", toy.result.aborted_non_finite ? ", aborted non-finite" : ""),
      t0);
}

// ---------------------------------------------------------------- criterion 6

// Direct-formula reference: plain 2D windowed statistics, no separable
// passes, no tensor ops.
class MsSsimOracle {
 public:
  MsSsimOracle() {
    const int n = kWin * kWin;
    win_.resize(static_cast<size_t>(n));
    double sum = 0.0;
    for (int r = 0; r < kWin; ++r)
      for (int c = 0; c < kWin; ++c) {
        const double dr = r - (kWin - 1) / 2.0, dc = c - (kWin - 1) / 2.0;
        const double v = std::exp(-(dr * dr + dc * dc) / (2.0 * 1.5 * 1.5));
        win_[static_cast<size_t>(r * kWin + c)] = v;
        sum += v;
      }
    for (auto& v : win_) v /= sum;
  }

  double value(std::vector<double> a, std::vector<double> b, int h, int w) const {
    static constexpr double kW[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    int scales = 0;
    for (int hh = h, ww = w; scales < 5 && hh >= kWin && ww >= kWin;
         hh /= 2, ww /= 2)
      ++scales;
    double wsum = 0.0;
    for (int s = 0; s < scales; ++s) wsum += kW[s];

    double result = 1.0;
    for (int s = 0; s < scales; ++s) {
      auto [ml, mcs] = level_means(a, b, h, w);
      const double wgt = kW[s] / wsum;
      result *= std::pow(std::max(mcs, 1e-6), wgt);
      if (s == scales - 1) result *= std::pow(std::max(ml, 1e-6), wgt);
      if (s + 1 < scales) {
        a = downsample(a, h, w);
        b = downsample(b, h, w);
        h /= 2;
        w /= 2;
      }
    }
    return result;
  }

 private:
  static constexpr int kWin = 11;
  std::vector<double> win_;

  std::pair<double, double> level_means(const std::vector<double>& a,
                                        const std::vector<double>& b, int h,
                                        int w) const {
    const double c1 = 0.01 * 255.0 * 0.01 * 255.0;
    const double c2 = 0.03 * 255.0 * 0.03 * 255.0;
    const int oh = h - kWin + 1, ow = w - kWin + 1;
    double sum_l = 0.0, sum_cs = 0.0;
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            const double g = win_[static_cast<size_t>(i * kWin + j)];
            const double pa = a[static_cast<size_t>(r + i) * w + (c + j)];
            const double pb = b[static_cast<size_t>(r + i) * w + (c + j)];
            ma += g * pa;
            mb += g * pb;
            maa += g * pa * pa;
            mbb += g * pb * pb;
            mab += g * pa * pb;
          }
        const double va = maa - ma * ma, vb = mbb - mb * mb;
        const double cov = mab - ma * mb;
        sum_l += (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        sum_cs += (2 * cov + c2) / (va + vb + c2);
      }
    const double n = double(oh) * ow;
    return {sum_l / n, sum_cs / n};
  }

  static std::vector<double> downsample(const std::vector<double>& x, int h,
                                        int w) {
    const int oh = h / 2, ow = w / 2;
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c)
        out[static_cast<size_t>(r) * ow + c] =
            (x[static_cast<size_t>(2 * r) * w + 2 * c] +
             x[static_cast<size_t>(2 * r) * w + 2 * c + 1] +
             x[static_cast<size_t>(2 * r + 1) * w + 2 * c] +
             x[static_cast<size_t>(2 * r + 1) * w + 2 * c + 1]) /
            4.0;
    return out;
  }
};

LumaFrame gaussian_blur_frame(const LumaFrame& f, double sigma) {
  const int rad = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> taps(static_cast<size_t>(2 * rad + 1));
  double sum = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    taps[static_cast<size_t>(i + rad)] = std::exp(-i * i / (2 * sigma * sigma));
    sum += taps[static_cast<size_t>(i + rad)];
  }
  for (auto& t : taps) t /= sum;

  std::vector<double> tmp(static_cast<size_t>(f.w) * f.h);
  for (int r = 0; r < f.h; ++r)
    for (int c = 0; c < f.w; ++c) {
      double v = 0.0;
      for (int i = -rad; i <= rad; ++i)
        v += taps[static_cast<size_t>(i + rad)] *
             f.at(r, std::clamp(c + i, 0, f.w - 1));
      tmp[static_cast<size_t>(r) * f.w + c] = v;
    }
  LumaFrame out = LumaFrame::sized(f.w, f.h);
  for (int r = 0; r < f.h; ++r)
    for (int c = 0; c < f.w; ++c) {
      double v = 0.0;
      for (int i = -rad; i <= rad; ++i)
        v += taps[static_cast<size_t>(i + rad)] *
             tmp[static_cast<size_t>(std::clamp(r + i, 0, f.h - 1)) * f.w + c];
      out.at(r, c) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  return out;
}

SelfTestResult st_msssim_impl() {
  const double t0 = now_s();
  MsSsimOracle oracle;
  RandomSource rng(606);

  LumaFrame base = texture_frame(17, 256, 256);
  const double ident = ms_ssim_value(base, base);
  const double ident_err = std::abs(ident - 1.0);

  auto as_doubles = [](const LumaFrame& f) {
    return std::vector<double>(f.pix.begin(), f.pix.end());
  };

  double max_diff = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    LumaFrame a = texture_frame(1000 + static_cast<uint64_t>(trial), 256, 256);
    LumaFrame b = a;
    const double amp = (trial % 4 + 1) * 15.0;
    for (auto& p : b.pix) {
      const double v = p + rng.uniform(-amp, amp);
      p = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
    const double got = ms_ssim_value(a, b);
    const double want = oracle.value(as_doubles(a), as_doubles(b), 256, 256);
    max_diff = std::max(max_diff, std::abs(got - want));
  }

  double prev = 2.0;
  bool monotone = true;
  std::string mono;
  for (double sigma : {2.0, 8.0, 32.0}) {
    const double v = ms_ssim_value(base, gaussian_blur_frame(base, sigma));
    monotone = monotone && v < prev;
    mono += cat(" ", v);
    prev = v;
  }

  const bool pass = ident_err <= 1e-9 && max_diff <= 1e-4 && monotone;
  return finish("ms-ssim oracle", pass,
                cat("identity err ", ident_err, ", max oracle diff ", max_diff,
                    ", blur series", mono),
                t0);
}

// ---------------------------------------------------------------- criterion 7

// Walks the segment placing spans greedily; independent of the closed form.
int64_t count_by_walk(int64_t n_frames, const LayerSpec& layer) {
  int64_t count = 0;
  for (int64_t pos = 0; pos + layer.span() - 1 < n_frames;
       pos += layer.stride())
    ++count;
  return count;
}

SelfTestResult st_triplet_counts_impl() {
  const double t0 = now_s();
  int64_t count_bad = 0, layout_bad = 0;
  for (int k = 1; k <= 4; ++k) {
    const LayerSpec layer{k};
    for (int n = 0; n <= 200; ++n) {
      const int64_t want = count_by_walk(n, layer);
      if (triplet_count(n, layer) != want) ++count_bad;
      auto trips = extract_triplets(n, layer);
      if (static_cast<int64_t>(trips.size()) != want) ++count_bad;
      for (size_t i = 0; i < trips.size(); ++i) {
        const auto& tr = trips[i];
        const bool anchored = tr[0] == static_cast<int>(i) * layer.stride();
        const bool spaced = tr[1] - tr[0] == layer.d() &&
                            tr[2] - tr[1] == layer.d();
        const bool inside = tr[0] >= 0 && tr[2] < n;
        if (!anchored || !spaced || !inside) ++layout_bad;
      }
    }
  }
  return finish("triplet schedule", count_bad == 0 && layout_bad == 0,
                cat("count mismatches ", count_bad, ", layout errors ",
                    layout_bad),
                t0);
}

// ---------------------------------------------------------------- criterion 8

SelfTestResult st_export_exactness_impl() {
  const double t0 = now_s();
  RandomSource rng(4242);
  int64_t pack_bad = 0;
  for (int u = -508; u <= 508; ++u)
    for (int v = -508; v <= 508; ++v) {
      const QuarterPelMv q{u, v};
      if (unpack_mv(pack_mv(q)) != q) ++pack_bad;
    }
  const bool example_ok = pack_mv({-10, 5}) == 0xFFF60005u;

  MvFieldSet fields = MvFieldSet::zeros(128, 128);
  for (int size : MvFieldSet::kSizes) {
    Tensor& f = fields.field(size);
    for (int64_t i = 0; i < f.numel(); ++i)
      f.ptr()[i] = static_cast<float>(rng.uniform_int(-508, 508)) * 0.25f;
  }
  PackedSuperblockMvs packed = assemble_superblocks(fields);
  MvFieldSet back = scatter_superblocks(packed, 128, 128);
  PackedSuperblockMvs repacked = assemble_superblocks(back);
  int64_t scatter_bad = packed.words == repacked.words ? 0 : 1;
  for (int size : MvFieldSet::kSizes) {
    const Tensor& a = fields.field(size);
    const Tensor& b = back.field(size);
    for (int64_t i = 0; i < a.numel(); ++i)
      if (a.ptr()[i] != b.ptr()[i]) ++scatter_bad;
  }

  const auto path =
      (std::filesystem::temp_directory_path() / "cbt_selftest.cbmv").string();
  MvFile file;
  file.width = 128;
  file.height = 128;
  file.frames = {packed, packed};
  write_mv_file(path, file);
  MvFile rt = read_mv_file(path);
  std::filesystem::remove(path);
  bool file_ok = rt.width == file.width && rt.height == file.height &&
                 rt.ordering == file.ordering &&
                 rt.frames.size() == file.frames.size();
  for (size_t i = 0; file_ok && i < rt.frames.size(); ++i)
    file_ok = rt.frames[i].words == file.frames[i].words;

  PackedSuperblockMvs hd = assemble_superblocks(MvFieldSet::zeros(1920, 1088));
  const bool hd_ok = hd.sb_w == 30 && hd.sb_h == 17 &&
                     hd.words.size() == size_t(2) * 30 * 17 * 85;

  const bool pass =
      pack_bad == 0 && example_ok && scatter_bad == 0 && file_ok && hd_ok;
  return finish("mv export", pass,
                cat("pack errors ", pack_bad, ", example ",
                    example_ok ? "ok" : "bad", ", scatter errors ", scatter_bad,
                    ", file round-trip ", file_ok ? "ok" : "bad",
                    ", 1920x1088 layout ", hd_ok ? "ok" : "bad"),
                t0);
}

// ---------------------------------------------------------------- criterion 9

SelfTestResult st_feature_reuse_impl() {
  const double t0 = now_s();
  CbtNet net(CbtNetConfig::toy());
  net.init(5);
  RandomSource rng(8);
  Tensor input = Tensor::zeros({1, 3, 64, 64});
  for (int64_t i = 0; i < input.numel(); ++i)
    input.ptr()[i] = static_cast<float>(rng.canonical());

  net.reset_exec_counts();
  auto so = net.forward_graph(input, false);
  bool both_refs = true;
  for (const auto& mv : so.mv) both_refs = both_refs && mv.dim(1) == 4;

  auto counts_are = [&net](int64_t want) {
    const auto& counts = net.exec_counts();
    std::string bad;
    for (int i = 1; i <= 9; ++i) {
      const auto it = counts.find(cat("feat", i));
      if (it == counts.end() || it->second != want)
        bad += cat(" feat", i, "=", it == counts.end() ? 0 : it->second);
    }
    return bad;
  };
  const std::string first = counts_are(1);
  net.forward_graph(input, false);
  const std::string second = counts_are(2);

  const bool pass = first.empty() && second.empty() && both_refs;
  return finish("feature reuse", pass,
                pass ? "each feature layer ran once per forward, 4 MV channels"
                     : cat("after 1 forward:", first, "; after 2:", second,
                           both_refs ? "" : "; mv channels != 4"),
                t0);
}

// --------------------------------------------------------------- criterion 10

SelfTestResult st_bd_rate_impl() {
  const double t0 = now_s();
  RandomSource rng(1313);
  const std::vector<RdPoint> base{
      {100, 30}, {200, 34}, {400, 38}, {800, 42}};

  const double self_bd = std::abs(bd_rate(base, base));

  std::vector<RdPoint> scaled = base;
  for (auto& p : scaled) p.rate *= 1.10;
  const double scaled_err = std::abs(bd_rate(base, scaled) - 10.0);

  double worst_antisym = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    auto jitter = [&rng, &base]() {
      std::vector<RdPoint> c = base;
      for (auto& p : c) {
        p.rate *= 1.0 + rng.uniform(-0.008, 0.008);
        p.quality += rng.uniform(-0.3, 0.3);
      }
      return c;
    };
    std::vector<RdPoint> a = jitter(), b = jitter();
    worst_antisym =
        std::max(worst_antisym, std::abs(bd_rate(a, b) + bd_rate(b, a)));
  }

  const bool pass =
      self_bd <= 1e-12 && scaled_err <= 1e-6 && worst_antisym <= 0.05;
  return finish("bd-rate", pass,
                cat("self ", self_bd, ", +10% err ", scaled_err,
                    ", antisymmetry worst ", worst_antisym),
                t0);
}

}  // namespace

SelfTestResult st_gradient_suite() { return st_gradient_suite_impl(); }
SelfTestResult st_warp_oracle() { return st_warp_oracle_impl(); }
SelfTestResult st_search_oracles() { return st_search_oracles_impl(); }
SelfTestResult st_aperture(ToyRun& toy) { return st_aperture_impl(toy); }
SelfTestResult st_toy_training(ToyRun& toy) { return st_toy_training_impl(toy); }
SelfTestResult st_msssim() { return st_msssim_impl(); }
SelfTestResult st_triplet_counts() { return st_triplet_counts_impl(); }
SelfTestResult st_export_exactness() { return st_export_exactness_impl(); }
SelfTestResult st_feature_reuse() { return st_feature_reuse_impl(); }
SelfTestResult st_bd_rate() { return st_bd_rate_impl(); }

std::vector<SelfTestResult> run_selftests() {
  std::vector<SelfTestResult> out;
  out.push_back(st_gradient_suite());
  out.push_back(st_warp_oracle());
  out.push_back(st_search_oracles());

  ToyRun toy;
  SelfTestResult training = st_toy_training(toy);
  out.push_back(st_aperture(toy));
  out.push_back(std::move(training));

  out.push_back(st_msssim());
  out.push_back(st_triplet_counts());
  out.push_back(st_export_exactness());
  out.push_back(st_feature_reuse());
  out.push_back(st_bd_rate());
  return out;
}

}  // namespace cbt
