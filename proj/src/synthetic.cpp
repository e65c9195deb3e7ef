#include "cbt/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "cbt/common.hpp"

namespace cbt {
namespace {

uint64_t mix_seed(uint64_t seed, uint64_t idx) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (idx + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<double> make_lattice(RandomSource& rng, int h, int w, int cell,
                                 double amp) {
  const int gh = h / cell + 2;
  const int gw = w / cell + 2;
  std::vector<double> lattice(static_cast<size_t>(gh) * gw);
  for (auto& v : lattice) v = rng.uniform(-amp, amp);
  std::vector<double> out(static_cast<size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int gy = r / cell;
      const int gx = c / cell;
      const double ty = static_cast<double>(r % cell) / cell;
      const double tx = static_cast<double>(c % cell) / cell;
      const double fy = ty * ty * (3.0 - 2.0 * ty);  // C1 across cell seams
      const double fx = tx * tx * (3.0 - 2.0 * tx);
      const double* l0 = &lattice[static_cast<size_t>(gy) * gw + gx];
      const double top = l0[0] + fx * (l0[1] - l0[0]);
      const double bot = l0[gw] + fx * (l0[gw + 1] - l0[gw]);
      out[static_cast<size_t>(r) * w + c] = top + fy * (bot - top);
    }
  return out;
}

// Oriented waves over a fine lattice, plus baked-in grain, all static so
// crops translate exactly. Wavelengths stay above twice the largest shift,
// which keeps the photometric surface unimodal across the search range while
// the phases carry displacement redundantly through every image region; the
// lattice pins the optimum to the pixel and keeps local variance well past
// the SSIM stabilizers.
std::vector<uint8_t> make_texture(RandomSource& rng, int h, int w, int cell,
                                  double grain) {
  constexpr int kWaves = 8;
  double kx[kWaves], ky[kWaves], ph[kWaves];
  for (int j = 0; j < kWaves; ++j) {
    const double lambda = rng.uniform(1.25 * cell, 2.5 * cell);
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    kx[j] = 2.0 * M_PI / lambda * std::cos(theta);
    ky[j] = 2.0 * M_PI / lambda * std::sin(theta);
    ph[j] = rng.uniform(0.0, 2.0 * M_PI);
  }
  const std::vector<double> fine = make_lattice(rng, h, w, 3, 30.0);
  std::vector<uint8_t> tex(static_cast<size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double v = 128.0 + fine[static_cast<size_t>(r) * w + c];
      for (int j = 0; j < kWaves; ++j)
        v += 22.0 * std::cos(kx[j] * c + ky[j] * r + ph[j]);
      if (grain > 0) v += rng.uniform(-grain, grain);
      v = std::round(std::min(255.0, std::max(0.0, v)));
      tex[static_cast<size_t>(r) * w + c] = static_cast<uint8_t>(v);
    }
  return tex;
}

}  // namespace

SyntheticTranslationSource::SyntheticTranslationSource(
    const SyntheticConfig& cfg)
    : cfg_(cfg) {
  CBT_REQUIRE(cfg_.frame >= 64 && cfg_.frame % 64 == 0,
              "frame edge must be a 64-multiple, got ", cfg_.frame);
  CBT_REQUIRE(cfg_.layer_k >= 1 && cfg_.layer_k <= 4, "layer k must be 1..4");
  CBT_REQUIRE(cfg_.max_shift >= 1, "max_shift must be >= 1");
  CBT_REQUIRE(cfg_.min_shift >= 0 && cfg_.min_shift <= cfg_.max_shift,
              "min_shift must lie in [0, max_shift]");
}

std::pair<int, int> SyntheticTranslationSource::velocity(size_t idx) const {
  RandomSource rng(mix_seed(cfg_.seed, idx));
  const int d = 1 << (4 - cfg_.layer_k);
  const int q = std::max(1, cfg_.shift_step);
  const int m = cfg_.max_shift / d / q;
  const int lo = (cfg_.min_shift + d - 1) / d;
  int vu, vv;
  do {
    vu = q * static_cast<int>(rng.uniform_int(-m, m));
    vv = q * static_cast<int>(rng.uniform_int(-m, m));
  } while (std::max(std::abs(vu), std::abs(vv)) < lo);
  return {vu, vv};
}

std::pair<float, float> SyntheticTranslationSource::true_mv(size_t idx,
                                                            int ref) const {
  const auto [vu, vv] = velocity(idx);
  const int d = 1 << (4 - cfg_.layer_k);
  const float s = ref == 0 ? -1.0f : 1.0f;
  return {s * static_cast<float>(d * vu), s * static_cast<float>(d * vv)};
}

FrameTriplet SyntheticTranslationSource::get(size_t idx) {
  RandomSource rng(mix_seed(cfg_.seed, idx));
  const int d = 1 << (4 - cfg_.layer_k);
  const auto [vu, vv] = velocity(idx);

  const int margin = cfg_.max_shift;
  const int tw = cfg_.frame + 2 * margin;
  const std::vector<uint8_t> tex =
      make_texture(rng, tw, tw, 2 * cfg_.max_shift, 4.0);

  // Independent per-frame noise caps the reachable MS-SSIM below one, so the
  // dB loss keeps a bounded slope at the optimum instead of a singularity
  // that lets already-solved samples drown the batch gradient.
  auto frame_at = [&](int t) {
    RandomSource nrng(mix_seed(cfg_.seed ^ 0x5EB5045EC7A15EULL,
                               idx * 32 + static_cast<size_t>(t + 8)));
    LumaFrame f = LumaFrame::sized(cfg_.frame, cfg_.frame);
    const int off_r = margin - t * vu;
    const int off_c = margin - t * vv;
    for (int r = 0; r < cfg_.frame; ++r)
      for (int c = 0; c < cfg_.frame; ++c) {
        double v = tex[static_cast<size_t>(r + off_r) * tw + (c + off_c)];
        if (cfg_.sensor > 0) v += nrng.uniform(-cfg_.sensor, cfg_.sensor);
        f.at(r, c) = static_cast<float>(
            std::round(std::min(255.0, std::max(0.0, v))));
      }
    return f;
  };

  FrameTriplet t;
  t.r_past = frame_at(-d);
  t.q = frame_at(0);
  t.r_future = frame_at(d);
  t.layer_k = cfg_.layer_k;
  t.orig_w = cfg_.frame;
  t.orig_h = cfg_.frame;
  return t;
}

ApertureScene make_aperture_scene(uint64_t seed) {
  constexpr int kFrame = 128;
  constexpr int kObj = 48;
  constexpr int kObjR = 40, kObjC = 40;  // top-left in Q
  constexpr double kNoiseSigma = 2.0;

  ApertureScene scene;
  const int vu = scene.object_velocity.first;
  const int vv = scene.object_velocity.second;

  RandomSource rng(seed);
  const std::vector<uint8_t> obj_tex = make_texture(rng, kObj, kObj, 8, 4.0);

  auto frame_at = [&](int t) {
    LumaFrame f = LumaFrame::sized(kFrame, kFrame, 128);
    const int or_ = kObjR + t * vu;
    const int oc = kObjC + t * vv;
    for (int r = 0; r < kFrame; ++r)
      for (int c = 0; c < kFrame; ++c) {
        if (r >= or_ && r < or_ + kObj && c >= oc && c < oc + kObj) {
          f.at(r, c) = obj_tex[static_cast<size_t>(r - or_) * kObj + (c - oc)];
        } else {
          const double v = 128.0 + kNoiseSigma * rng.normal();
          f.at(r, c) = static_cast<uint8_t>(
              std::min(255.0, std::max(0.0, std::round(v))));
        }
      }
    return f;
  };

  scene.triplet.r_past = frame_at(-1);
  scene.triplet.q = frame_at(0);
  scene.triplet.r_future = frame_at(1);
  scene.triplet.layer_k = 4;
  scene.triplet.orig_w = kFrame;
  scene.triplet.orig_h = kFrame;

  scene.blocks_w = kFrame / 8;
  scene.blocks_h = kFrame / 8;
  scene.object_blocks.assign(
      static_cast<size_t>(scene.blocks_w) * scene.blocks_h, 0);
  scene.background_blocks.assign(
      static_cast<size_t>(scene.blocks_w) * scene.blocks_h, 0);

  // Object interior with an 8 px margin so boundary blocks stay out; the
  // background zone additionally clears the object's sweep across all frames.
  const int in_r0 = kObjR + 8, in_r1 = kObjR + kObj - 8;
  const int in_c0 = kObjC + 8, in_c1 = kObjC + kObj - 8;
  const int ex_r0 = kObjR - vu - 8, ex_r1 = kObjR + vu + kObj + 8;
  const int ex_c0 = kObjC - vv - 8, ex_c1 = kObjC + vv + kObj + 8;
  for (int by = 0; by < scene.blocks_h; ++by)
    for (int bx = 0; bx < scene.blocks_w; ++bx) {
      const int r0 = by * 8, r1 = r0 + 8;
      const int c0 = bx * 8, c1 = c0 + 8;
      const size_t i = static_cast<size_t>(by) * scene.blocks_w + bx;
      if (r0 >= in_r0 && r1 <= in_r1 && c0 >= in_c0 && c1 <= in_c1)
        scene.object_blocks[i] = 1;
      if (r1 <= ex_r0 || r0 >= ex_r1 || c1 <= ex_c0 || c0 >= ex_c1)
        scene.background_blocks[i] = 1;
    }
  return scene;
}

double mv_variance(const std::vector<std::array<float, 2>>& mvs) {
  CBT_REQUIRE(!mvs.empty(), "mv_variance needs at least one sample");
  double mu = 0, mv = 0;
  for (const auto& m : mvs) {
    mu += m[0];
    mv += m[1];
  }
  mu /= static_cast<double>(mvs.size());
  mv /= static_cast<double>(mvs.size());
  double var = 0;
  for (const auto& m : mvs)
    var += (m[0] - mu) * (m[0] - mu) + (m[1] - mv) * (m[1] - mv);
  return var / static_cast<double>(mvs.size());
}

double median_stage4_epe(CbtNet& net, SyntheticTranslationSource& src,
                         size_t first, size_t count) {
  CBT_REQUIRE(count > 0 && first + count <= src.size(),
              "held-out range [", first, ",", first + count,
              ") outside source of ", src.size());
  std::vector<double> epe;
  for (size_t idx = first; idx < first + count; ++idx) {
    FrameTriplet t = src.get(idx);
    MvFieldSet f = predict_mv(net, t);
    const Tensor& m8 = f.m8;
    const float* p = m8.ptr();
    for (int ref = 0; ref < 2; ++ref) {
      const auto [tu, tv] = src.true_mv(idx, ref);
      for (int64_t b = 0; b < m8.numel() / 4; ++b) {
        const double du = p[b * 4 + 2 * ref] - tu;
        const double dv = p[b * 4 + 2 * ref + 1] - tv;
        epe.push_back(std::hypot(du, dv));
      }
    }
  }
  std::sort(epe.begin(), epe.end());
  const size_t n = epe.size();
  return n % 2 == 1 ? epe[n / 2] : 0.5 * (epe[n / 2 - 1] + epe[n / 2]);
}

}  // namespace cbt
