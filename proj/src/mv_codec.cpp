#include "cbt/mv_codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cbt/common.hpp"

namespace cbt {
namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  CBT_REQUIRE(is.gcount() == 4, "file truncated reading ", what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

float get_f32(std::istream& is, const char* what) {
  const uint32_t u = get_u32(is, what);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace

QuarterPelMv quantize_mv(float u, float v) {
  CBT_REQUIRE(u >= -127.0f && u <= 127.0f && v >= -127.0f && v <= 127.0f,
              "MV (", u, ",", v, ") outside [-127,127]");
  QuarterPelMv q;
  q.u_q4 = static_cast<int>(std::llround(u * 4.0));
  q.v_q4 = static_cast<int>(std::llround(v * 4.0));
  return q;
}

uint32_t pack_mv(const QuarterPelMv& q) {
  CBT_REQUIRE(q.u_q4 >= -32768 && q.u_q4 <= 32767 && q.v_q4 >= -32768 &&
                  q.v_q4 <= 32767,
              "quarter-pel MV (", q.u_q4, ",", q.v_q4,
              ") does not fit signed 16-bit");
  const uint16_t hi = static_cast<uint16_t>(static_cast<int16_t>(q.u_q4));
  const uint16_t lo = static_cast<uint16_t>(static_cast<int16_t>(q.v_q4));
  return (static_cast<uint32_t>(hi) << 16) | lo;
}

QuarterPelMv unpack_mv(uint32_t w) {
  QuarterPelMv q;
  q.u_q4 = static_cast<int16_t>(w >> 16);
  q.v_q4 = static_cast<int16_t>(w & 0xFFFF);
  return q;
}

namespace {

// Block b of a superblock in size-major order: the 64, then 2x2 32s, 4x4
// 16s, 8x8 8s, raster within each size. Returns {size index, local y, local x}.
void sb_block(int b, int& si, int& ly, int& lx) {
  if (b == 0) {
    si = 0;
    ly = lx = 0;
  } else if (b < 5) {
    si = 1;
    ly = (b - 1) / 2;
    lx = (b - 1) % 2;
  } else if (b < 21) {
    si = 2;
    ly = (b - 5) / 4;
    lx = (b - 5) % 4;
  } else {
    si = 3;
    ly = (b - 21) / 8;
    lx = (b - 21) % 8;
  }
}

}  // namespace

PackedSuperblockMvs assemble_superblocks(const MvFieldSet& mvs) {
  PackedSuperblockMvs p;
  p.sb_w = mvs.frame_w / 64;
  p.sb_h = mvs.frame_h / 64;
  p.words.assign(static_cast<size_t>(2) * p.sb_w * p.sb_h *
                     PackedSuperblockMvs::kBlocksPerSb,
                 0);
  for (int ref = 0; ref < 2; ++ref)
    for (int sx = 0; sx < p.sb_w; ++sx)
      for (int sy = 0; sy < p.sb_h; ++sy)
        for (int b = 0; b < PackedSuperblockMvs::kBlocksPerSb; ++b) {
          int si, ly, lx;
          sb_block(b, si, ly, lx);
          const int scale = 1 << si;  // blocks per superblock edge
          const int by = sy * scale + ly;
          const int bx = sx * scale + lx;
          const int size = MvFieldSet::kSizes[si];
          const float u = mvs.mv(size, by, bx, 2 * ref);
          const float v = mvs.mv(size, by, bx, 2 * ref + 1);
          p.words[p.idx(ref, sx, sy, b)] = pack_mv(quantize_mv(u, v));
        }
  return p;
}

MvFieldSet scatter_superblocks(const PackedSuperblockMvs& p, int frame_w,
                               int frame_h) {
  CBT_REQUIRE(p.sb_w == frame_w / 64 && p.sb_h == frame_h / 64,
              "superblock grid ", p.sb_w, "x", p.sb_h, " does not match ",
              frame_w, "x", frame_h);
  MvFieldSet out = MvFieldSet::zeros(frame_w, frame_h);
  for (int ref = 0; ref < 2; ++ref)
    for (int sx = 0; sx < p.sb_w; ++sx)
      for (int sy = 0; sy < p.sb_h; ++sy)
        for (int b = 0; b < PackedSuperblockMvs::kBlocksPerSb; ++b) {
          int si, ly, lx;
          sb_block(b, si, ly, lx);
          const int scale = 1 << si;
          const int by = sy * scale + ly;
          const int bx = sx * scale + lx;
          const int size = MvFieldSet::kSizes[si];
          const QuarterPelMv q = unpack_mv(p.at(ref, sx, sy, b));
          Tensor& f = out.field(size);
          float* cell =
              f.ptr() + (static_cast<int64_t>(by) * f.dim(1) + bx) * 4;
          cell[2 * ref] = static_cast<float>(q.u_q4) * 0.25f;
          cell[2 * ref + 1] = static_cast<float>(q.v_q4) * 0.25f;
        }
  return out;
}

void write_mv_file(const std::string& path, const MvFile& file) {
  CBT_REQUIRE(file.width % 64 == 0 && file.height % 64 == 0,
              "MV file dims must be 64-multiples, got ", file.width, "x",
              file.height);
  const size_t words_per_frame = static_cast<size_t>(2) * (file.width / 64) *
                                 (file.height / 64) *
                                 PackedSuperblockMvs::kBlocksPerSb;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    CBT_REQUIRE(os.good(), "cannot open ", tmp, " for writing");
    os.write("CBMV", 4);
    put_u32(os, 1);
    put_u32(os, file.width);
    put_u32(os, file.height);
    put_u32(os, static_cast<uint32_t>(file.frames.size()));
    put_u32(os, file.ordering);
    for (const auto& f : file.frames) {
      CBT_REQUIRE(f.words.size() == words_per_frame, "frame holds ",
                  f.words.size(), " words, header dims imply ",
                  words_per_frame);
      for (uint32_t w : f.words) put_u32(os, w);
    }
    os.flush();
    CBT_REQUIRE(os.good(), "write failed for ", tmp);
  }
  std::filesystem::rename(tmp, path);
}

MvFile read_mv_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  CBT_REQUIRE(is.good(), "cannot open ", path);
  char magic[4];
  is.read(magic, 4);
  CBT_REQUIRE(is.gcount() == 4 && std::memcmp(magic, "CBMV", 4) == 0, path,
              " is not an MV file");
  const uint32_t ver = get_u32(is, "version");
  CBT_REQUIRE(ver == 1, "unsupported MV file version ", ver);
  MvFile f;
  f.width = get_u32(is, "width");
  f.height = get_u32(is, "height");
  const uint32_t count = get_u32(is, "frame count");
  f.ordering = get_u32(is, "ordering");
  CBT_REQUIRE(f.width > 0 && f.width % 64 == 0 && f.height > 0 &&
                  f.height % 64 == 0,
              path, ": bad dims ", f.width, "x", f.height);
  CBT_REQUIRE(f.ordering == kMvOrderingSizeMajorRaster, path,
              ": unknown block ordering tag ", f.ordering);
  const int sb_w = static_cast<int>(f.width) / 64;
  const int sb_h = static_cast<int>(f.height) / 64;
  const size_t words_per_frame = static_cast<size_t>(2) * sb_w * sb_h *
                                 PackedSuperblockMvs::kBlocksPerSb;
  for (uint32_t i = 0; i < count; ++i) {
    PackedSuperblockMvs p;
    p.sb_w = sb_w;
    p.sb_h = sb_h;
    p.words.resize(words_per_frame);
    for (size_t j = 0; j < words_per_frame; ++j)
      p.words[j] = get_u32(is, "MV payload");
    f.frames.push_back(std::move(p));
  }
  char extra;
  CBT_REQUIRE(!is.read(&extra, 1), path, ": trailing bytes after payload");
  return f;
}

void write_field_file(const std::string& path, const MvFieldSet& mvs) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    CBT_REQUIRE(os.good(), "cannot open ", tmp, " for writing");
    os.write("CBMF", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<uint32_t>(mvs.frame_w));
    put_u32(os, static_cast<uint32_t>(mvs.frame_h));
    for (int size : MvFieldSet::kSizes) {
      const Tensor& f = mvs.field(size);
      for (int64_t i = 0; i < f.numel(); ++i) put_f32(os, f.ptr()[i]);
    }
    os.flush();
    CBT_REQUIRE(os.good(), "write failed for ", tmp);
  }
  std::filesystem::rename(tmp, path);
}

MvFieldSet read_field_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  CBT_REQUIRE(is.good(), "cannot open ", path);
  char magic[4];
  is.read(magic, 4);
  CBT_REQUIRE(is.gcount() == 4 && std::memcmp(magic, "CBMF", 4) == 0, path,
              " is not an MV field file");
  const uint32_t ver = get_u32(is, "version");
  CBT_REQUIRE(ver == 1, "unsupported MV field file version ", ver);
  const uint32_t w = get_u32(is, "width");
  const uint32_t h = get_u32(is, "height");
  MvFieldSet out =
      MvFieldSet::zeros(static_cast<int>(w), static_cast<int>(h));
  for (int size : MvFieldSet::kSizes) {
    Tensor& f = out.field(size);
    for (int64_t i = 0; i < f.numel(); ++i)
      f.ptr()[i] = get_f32(is, "field payload");
  }
  return out;
}

// --------------------------------------------------------------------------
// Visualization

namespace {

void hsv_to_rgb(double hue_deg, double sat, double val, uint8_t* out) {
  const double c = val * sat;
  const double hp = hue_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = val - c;
  out[0] = static_cast<uint8_t>(std::lround((r + m) * 255.0));
  out[1] = static_cast<uint8_t>(std::lround((g + m) * 255.0));
  out[2] = static_cast<uint8_t>(std::lround((b + m) * 255.0));
}

}  // namespace

RgbImage mv_to_image(const Tensor& field, int ref) {
  CBT_REQUIRE(field.ndim() == 3 && field.dim(2) == 4,
              "expected a {h,w,4} MV field, got ", shape_str(field.dims()));
  CBT_REQUIRE(ref == 0 || ref == 1, "reference index must be 0 or 1");
  RgbImage img;
  img.h = field.dim(0);
  img.w = field.dim(1);
  img.rgb.assign(static_cast<size_t>(img.w) * img.h * 3, 0);
  const float* p = field.ptr();
  double max_mag = 0.0;
  for (int i = 0; i < img.h * img.w; ++i) {
    const double u = p[i * 4 + 2 * ref];
    const double v = p[i * 4 + 2 * ref + 1];
    max_mag = std::max(max_mag, std::hypot(u, v));
  }
  const double denom = std::max(max_mag, 1.0);
  for (int i = 0; i < img.h * img.w; ++i) {
    const double u = p[i * 4 + 2 * ref];
    const double v = p[i * 4 + 2 * ref + 1];
    double hue = std::atan2(u, v) * 180.0 / M_PI;
    if (hue < 0) hue += 360.0;
    if (hue >= 360.0) hue = 0.0;
    const double sat = std::hypot(u, v) / denom;
    hsv_to_rgb(hue, sat, 1.0, &img.rgb[static_cast<size_t>(i) * 3]);
  }
  return img;
}

void write_ppm(const std::string& path, const RgbImage& img) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    CBT_REQUIRE(os.good(), "cannot open ", tmp, " for writing");
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
    os.flush();
    CBT_REQUIRE(os.good(), "write failed for ", tmp);
  }
  std::filesystem::rename(tmp, path);
}

void visualize_mv(const Tensor& field, int ref, const std::string& path) {
  write_ppm(path, mv_to_image(field, ref));
}

// --------------------------------------------------------------------------
// Metrics

double temporal_information(const std::vector<LumaFrame>& frames) {
  CBT_REQUIRE(frames.size() >= 2, "temporal information needs >= 2 frames");
  double ti = 0.0;
  for (size_t i = 1; i < frames.size(); ++i) {
    const LumaFrame& a = frames[i - 1];
    const LumaFrame& b = frames[i];
    CBT_REQUIRE(a.w == b.w && a.h == b.h, "frame dims differ at index ", i);
    const int64_t n = static_cast<int64_t>(a.w) * a.h;
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j)
      mean += static_cast<double>(b.pix[j]) - a.pix[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double d = (static_cast<double>(b.pix[j]) - a.pix[j]) - mean;
      var += d * d;
    }
    ti = std::max(ti, std::sqrt(var / static_cast<double>(n)));
  }
  return ti;
}

// --------------------------------------------------------------------------
// BD-rate

namespace {

// Least-squares cubic of log10(rate) against (quality - center).
std::array<double, 4> fit_log_rate(const std::vector<RdPoint>& pts,
                                   double center) {
  double ata[4][4] = {};
  double atb[4] = {};
  for (const auto& p : pts) {
    CBT_REQUIRE(p.rate > 0.0, "bitrates must be positive, got ", p.rate);
    const double q = p.quality - center;
    const double y = std::log10(p.rate);
    double pw[4] = {1.0, q, q * q, q * q * q};
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) ata[i][j] += pw[i] * pw[j];
      atb[i] += pw[i] * y;
    }
  }
  // Gaussian elimination with partial pivoting on the 4x4 normal equations.
  int perm[4] = {0, 1, 2, 3};
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(ata[perm[r]][col]) > std::abs(ata[perm[piv]][col])) piv = r;
    std::swap(perm[col], perm[piv]);
    const double d = ata[perm[col]][col];
    CBT_REQUIRE(std::abs(d) > 1e-12, "degenerate rate-quality curve");
    for (int r = col + 1; r < 4; ++r) {
      const double f = ata[perm[r]][col] / d;
      for (int c = col; c < 4; ++c) ata[perm[r]][c] -= f * ata[perm[col]][c];
      atb[perm[r]] -= f * atb[perm[col]];
    }
  }
  std::array<double, 4> coef{};
  for (int i = 3; i >= 0; --i) {
    double s = atb[perm[i]];
    for (int j = i + 1; j < 4; ++j) s -= ata[perm[i]][j] * coef[j];
    coef[i] = s / ata[perm[i]][i];
  }
  return coef;
}

double integrate_cubic(const std::array<double, 4>& c, double lo, double hi) {
  auto antider = [&](double x) {
    return x * (c[0] + x * (c[1] / 2 + x * (c[2] / 3 + x * c[3] / 4)));
  };
  return antider(hi) - antider(lo);
}

void check_curve(const std::vector<RdPoint>& pts, const char* name) {
  CBT_REQUIRE(pts.size() >= 4, name, " needs >= 4 rate-quality points, got ",
              pts.size());
  for (size_t i = 1; i < pts.size(); ++i) {
    CBT_REQUIRE(pts[i].rate > pts[i - 1].rate, name,
                " must have strictly increasing rate");
    CBT_REQUIRE(pts[i].quality > pts[i - 1].quality, name,
                " quality must increase with rate");
  }
}

}  // namespace

double bd_rate(const std::vector<RdPoint>& a, const std::vector<RdPoint>& b) {
  std::vector<RdPoint> ca = a, cb = b;
  auto by_rate = [](const RdPoint& x, const RdPoint& y) {
    return x.rate < y.rate;
  };
  std::sort(ca.begin(), ca.end(), by_rate);
  std::sort(cb.begin(), cb.end(), by_rate);
  check_curve(ca, "curve a");
  check_curve(cb, "curve b");

  const double lo = std::max(ca.front().quality, cb.front().quality);
  const double hi = std::min(ca.back().quality, cb.back().quality);
  CBT_REQUIRE(hi > lo, "curves share no quality overlap: [",
              ca.front().quality, ",", ca.back().quality, "] vs [",
              cb.front().quality, ",", cb.back().quality, "]");

  const double center = 0.5 * (lo + hi);
  const auto fa = fit_log_rate(ca, center);
  const auto fb = fit_log_rate(cb, center);
  const double avg_diff = (integrate_cubic(fb, lo - center, hi - center) -
                           integrate_cubic(fa, lo - center, hi - center)) /
                          (hi - lo);
  return (std::pow(10.0, avg_diff) - 1.0) * 100.0;
}

}  // namespace cbt
