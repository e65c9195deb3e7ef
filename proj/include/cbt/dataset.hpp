#ifndef CBT_DATASET_HPP
#define CBT_DATASET_HPP

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cbt/frame.hpp"

namespace cbt {

// Temporal layer k: references sit at distance d = 2^(4-k) around Q, and
// adjacent triplet spans are separated by delta unused frames.
struct LayerSpec {
  int k = 4;

  int d() const { return 1 << (4 - k); }
  int delta() const { return k == 4 ? 3 : 2; }
  int span() const { return 2 * d() + 1; }
  int stride() const { return 2 * d() + delta(); }
};

struct ManifestEntry {
  std::string id;
  std::string path;
  std::string format;  // "y4m" | "raw"
  int width = 0, height = 0;
  int frames = 0;
  std::vector<std::pair<int, int>> segments;  // [start, end)
  std::string partition;                      // "train" | "val"
};

std::vector<ManifestEntry> read_manifest(const std::string& path);

struct TripletRecord {
  std::string id;
  int segment = 0;
  int ip = 0, iq = 0, ifr = 0;
  int layer = 0;
  std::string resolution;
};

class VideoReader {
 public:
  // Raw mode needs explicit dims; declared_frames > 0 enforces the exact
  // byte count instead of inferring the frame count.
  VideoReader(const std::string& path, const std::string& format,
              int width = 0, int height = 0, int declared_frames = 0);

  int width() const { return w_; }
  int height() const { return h_; }
  int frame_count() const { return static_cast<int>(offsets_.size()); }

  LumaFrame read_frame(int index);

 private:
  void open_y4m(int declared_frames);
  void open_raw(int declared_frames);

  std::ifstream is_;
  std::string path_;
  int w_ = 0, h_ = 0;
  int bytes_per_sample_ = 1;
  int shift_ = 0;  // high-bit sources keep their top 8 bits
  std::vector<int64_t> offsets_;  // luma plane offset per frame
};

std::vector<LumaFrame> read_luma(const std::string& path,
                                 const std::string& format, int width = 0,
                                 int height = 0);

// Separable Lanczos (kernel width a), anti-aliased when downscaling,
// border-clamped, rounded and clipped to 0..255. Identity dims copy exactly.
LumaFrame lanczos_resize(const LumaFrame& in, int out_w, int out_h, int a = 3);

// Zero padding appended on the right/bottom only, so original pixels keep
// their coordinates.
LumaFrame pad_to_multiple(const LumaFrame& in, int multiple = 64);

// floor((N - (2d+1)) / (2d+delta)) + 1 for N >= 2d+1, else 0.
int64_t triplet_count(int64_t n_frames, const LayerSpec& layer);

// (ip, iq, if) offsets within a segment of n_frames frames, anchored at the
// segment start, advancing by the layer stride.
std::vector<std::array<int, 3>> extract_triplets(int n_frames,
                                                 const LayerSpec& layer);

// "1080p" -> 1920x1080, "720p" -> 1280x720, "WxH" parsed literally.
std::pair<int, int> resolution_dims(const std::string& tag);

// Decode, resample to the record's resolution, pad to 64-multiples.
FrameTriplet load_triplet(VideoReader& reader, const TripletRecord& rec);

struct DatabaseSummary {
  // [layer-1][0 = train, 1 = val] per resolution tag
  std::map<std::string, std::array<std::array<int64_t, 2>, 4>> counts;
  std::vector<std::string> skipped;  // unreadable manifest entries
};

struct BuildDatabaseResult {
  std::vector<TripletRecord> records;
  DatabaseSummary summary;
};

// Enumerate records for every (resolution, entry, segment, layer) in a
// deterministic order; unreadable entries are skipped and reported.
BuildDatabaseResult build_database(const std::vector<ManifestEntry>& manifest,
                                   const std::vector<std::string>& resolutions,
                                   bool probe_files = true);

void write_triplet_index(const std::string& path,
                         const std::vector<TripletRecord>& records);
std::vector<TripletRecord> read_triplet_index(const std::string& path);

std::vector<TripletRecord> filter_records(
    const std::vector<TripletRecord>& records,
    const std::vector<ManifestEntry>& manifest, const std::string& partition,
    int layer, const std::string& resolution);

}  // namespace cbt

#endif
