#ifndef CBT_MV_CODEC_HPP
#define CBT_MV_CODEC_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cbt/frame.hpp"

namespace cbt {

struct QuarterPelMv {
  int u_q4 = 0;
  int v_q4 = 0;

  bool operator==(const QuarterPelMv&) const = default;
};

// x4 then round half away from zero; input components must be in [-127,127].
QuarterPelMv quantize_mv(float u, float v);

// Vertical component in the high 16 bits, horizontal in the low 16 bits,
// two's complement.
uint32_t pack_mv(const QuarterPelMv& q);
QuarterPelMv unpack_mv(uint32_t w);

// 85 = 1 + 4 + 16 + 64 blocks per 64x64 superblock, size-major (64, then
// 32s, 16s, 8s), raster within each size. Dims 2 x (W/64) x (H/64) x 85.
struct PackedSuperblockMvs {
  int sb_w = 0, sb_h = 0;
  std::vector<uint32_t> words;

  static constexpr int kBlocksPerSb = 85;

  size_t idx(int ref, int sx, int sy, int b) const {
    return ((static_cast<size_t>(ref) * sb_w + sx) * sb_h + sy) * kBlocksPerSb +
           b;
  }
  uint32_t at(int ref, int sx, int sy, int b) const {
    return words[idx(ref, sx, sy, b)];
  }
};

PackedSuperblockMvs assemble_superblocks(const MvFieldSet& mvs);

// Inverse of assemble: fields come back in full-pel units (quarter-pel / 4).
MvFieldSet scatter_superblocks(const PackedSuperblockMvs& p, int frame_w,
                               int frame_h);

constexpr uint32_t kMvOrderingSizeMajorRaster = 1;

struct MvFile {
  uint32_t width = 0, height = 0;
  uint32_t ordering = kMvOrderingSizeMajorRaster;
  std::vector<PackedSuperblockMvs> frames;
};

void write_mv_file(const std::string& path, const MvFile& file);
MvFile read_mv_file(const std::string& path);

// Float MV planes round-tripped losslessly between CLI stages.
void write_field_file(const std::string& path, const MvFieldSet& mvs);
MvFieldSet read_field_file(const std::string& path);

struct RgbImage {
  int w = 0, h = 0;
  std::vector<uint8_t> rgb;
};

// Hue encodes direction (atan2(u,v) onto the color wheel), saturation the
// magnitude normalized by the plane's max, value fixed at 1.
RgbImage mv_to_image(const Tensor& field, int ref);
void write_ppm(const std::string& path, const RgbImage& img);
void visualize_mv(const Tensor& field, int ref, const std::string& path);

// Max over consecutive pairs of the per-difference standard deviation.
double temporal_information(const std::vector<LumaFrame>& frames);

struct RdPoint {
  double rate = 0.0;
  double quality = 0.0;
};

// Cubic fit of log10(rate) against quality, averaged over the overlapping
// quality interval; positive means curve b spends more rate at equal quality.
double bd_rate(const std::vector<RdPoint>& a, const std::vector<RdPoint>& b);

}  // namespace cbt

#endif
