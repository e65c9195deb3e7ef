#ifndef CBT_SYNTHETIC_HPP
#define CBT_SYNTHETIC_HPP

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "cbt/model.hpp"
#include "cbt/training.hpp"

namespace cbt {

struct SyntheticConfig {
  int frame = 64;       // square crop edge, 64-multiple
  int layer_k = 4;
  int max_shift = 8;    // bound on |d * velocity| per reference
  int min_shift = 0;    // floor on max(|u|,|v|); keeps triplets in motion
  int shift_step = 1;   // velocity grid pitch inside the bound
  double sensor = 2.0;  // per-frame noise amplitude, keeps MS-SSIM off 1
  uint64_t seed = 7;
  size_t count = 2000;
};

// Every triplet is three crops of one static texture, so the motion is an
// exact global integer translation with known per-block ground truth:
// MV_P = (-d*vu, -d*vv), MV_F = (+d*vu, +d*vv).
class SyntheticTranslationSource : public TripletSource {
 public:
  explicit SyntheticTranslationSource(const SyntheticConfig& cfg);

  size_t size() const override { return cfg_.count; }
  FrameTriplet get(size_t idx) override;

  std::pair<int, int> velocity(size_t idx) const;  // (vu, vv) per frame step
  std::pair<float, float> true_mv(size_t idx, int ref) const;

 private:
  SyntheticConfig cfg_;
};

// Textured 48x48 object translating (4,2)/frame over a flat background that
// carries per-frame sensor-style noise, so background blocks hold no coherent
// motion signal.
struct ApertureScene {
  FrameTriplet triplet;  // 128x128, layer 4
  int blocks_w = 16, blocks_h = 16;           // 8x8 block grid of Q
  std::vector<uint8_t> object_blocks;         // fully inside the object
  std::vector<uint8_t> background_blocks;     // fully clear of it, all frames
  std::pair<int, int> object_velocity{4, 2};  // (vu, vv)
};

ApertureScene make_aperture_scene(uint64_t seed);

// var(u) + var(v), population form.
double mv_variance(const std::vector<std::array<float, 2>>& mvs);

// Pooled over blocks and both references of each triplet in
// [first, first+count).
double median_stage4_epe(CbtNet& net, SyntheticTranslationSource& src,
                         size_t first, size_t count);

}  // namespace cbt

#endif
