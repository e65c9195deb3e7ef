#include "cbt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cbt/common.hpp"

namespace cbt {

using nlohmann::json;

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  CBT_REQUIRE(is.good(), "cannot open manifest ", path);
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  std::map<std::string, std::string> partition_of;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw Error(cat(path, ":", line_no, ": bad manifest line: ", e.what()));
    }
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.format = j.at("format").get<std::string>();
    e.width = j.at("width").get<int>();
    e.height = j.at("height").get<int>();
    e.frames = j.at("frames").get<int>();
    e.partition = j.at("partition").get<std::string>();
    CBT_REQUIRE(e.format == "y4m" || e.format == "raw", path, ":", line_no,
                ": format must be y4m or raw, got '", e.format, "'");
    CBT_REQUIRE(e.partition == "train" || e.partition == "val", path, ":",
                line_no, ": partition must be train or val");
    CBT_REQUIRE(ids.insert(e.id).second, path, ":", line_no,
                ": duplicate content id '", e.id, "'");
    int prev_end = 0;
    for (const auto& s : j.at("segments")) {
      CBT_REQUIRE(s.is_array() && s.size() == 2, path, ":", line_no,
                  ": segment must be [start,end)");
      const int a = s[0].get<int>();
      const int b = s[1].get<int>();
      CBT_REQUIRE(0 <= a && a < b && b <= e.frames, path, ":", line_no,
                  ": segment [", a, ",", b, ") outside 0..", e.frames);
      CBT_REQUIRE(a >= prev_end, path, ":", line_no, ": segments overlap");
      prev_end = b;
      e.segments.emplace_back(a, b);
    }
    out.push_back(std::move(e));
  }
  return out;
}

// --------------------------------------------------------------------------
// Decoding

VideoReader::VideoReader(const std::string& path, const std::string& format,
                         int width, int height, int declared_frames)
    : path_(path) {
  is_.open(path, std::ios::binary);
  CBT_REQUIRE(is_.good(), "cannot open ", path);
  if (format == "y4m") {
    open_y4m(declared_frames);
  } else if (format == "raw") {
    w_ = width;
    h_ = height;
    open_raw(declared_frames);
  } else {
    throw Error(cat("unknown video format '", format, "'"));
  }
}

void VideoReader::open_y4m(int declared_frames) {
  std::string header;
  CBT_REQUIRE(static_cast<bool>(std::getline(is_, header)),
              path_, ": missing stream header");
  std::istringstream hs(header);
  std::string tok;
  hs >> tok;
  CBT_REQUIRE(tok == "YUV4MPEG2", path_, ": not a YUV4MPEG2 stream");
  std::string colorspace = "420jpeg";
  while (hs >> tok) {
    if (tok.empty()) continue;
    switch (tok[0]) {
      case 'W': w_ = std::stoi(tok.substr(1)); break;
      case 'H': h_ = std::stoi(tok.substr(1)); break;
      case 'C': colorspace = tok.substr(1); break;
      default: break;  // frame rate, interlacing, aspect, extensions
    }
  }
  CBT_REQUIRE(w_ > 0 && h_ > 0, path_, ": header lacks W/H");

  bytes_per_sample_ = 1;
  shift_ = 0;
  std::string sub = colorspace;
  if (sub.size() >= 3 && sub.compare(sub.size() - 3, 3, "p10") == 0) {
    bytes_per_sample_ = 2;
    shift_ = 2;
    sub = sub.substr(0, sub.size() - 3);
  } else if (sub.size() >= 3 && sub.compare(sub.size() - 3, 3, "p12") == 0) {
    bytes_per_sample_ = 2;
    shift_ = 4;
    sub = sub.substr(0, sub.size() - 3);
  }
  int64_t chroma_samples;
  if (sub.rfind("420", 0) == 0) {
    CBT_REQUIRE(w_ % 2 == 0 && h_ % 2 == 0, path_,
                ": 4:2:0 needs even dims, got ", w_, "x", h_);
    chroma_samples = 2 * (static_cast<int64_t>(w_) / 2) * (h_ / 2);
  } else if (sub.rfind("422", 0) == 0) {
    CBT_REQUIRE(w_ % 2 == 0, path_, ": 4:2:2 needs even width");
    chroma_samples = 2 * (static_cast<int64_t>(w_) / 2) * h_;
  } else if (sub.rfind("444", 0) == 0) {
    chroma_samples = 2 * static_cast<int64_t>(w_) * h_;
  } else if (sub.rfind("mono", 0) == 0) {
    chroma_samples = 0;
  } else {
    throw Error(cat(path_, ": unsupported colorspace C", colorspace));
  }
  const int64_t luma_bytes = static_cast<int64_t>(w_) * h_ * bytes_per_sample_;
  const int64_t plane_bytes = luma_bytes + chroma_samples * bytes_per_sample_;

  is_.seekg(0, std::ios::end);
  const int64_t file_size = is_.tellg();
  int64_t pos = static_cast<int64_t>(header.size()) + 1;
  is_.seekg(pos);
  std::string frame_line;
  while (pos < file_size) {
    CBT_REQUIRE(static_cast<bool>(std::getline(is_, frame_line)),
                path_, ": unreadable frame header at offset ", pos);
    CBT_REQUIRE(frame_line.rfind("FRAME", 0) == 0, path_,
                ": expected FRAME marker at offset ", pos);
    pos += static_cast<int64_t>(frame_line.size()) + 1;
    CBT_REQUIRE(pos + plane_bytes <= file_size, path_,
                ": truncated frame ", offsets_.size(), ": expected ",
                pos + plane_bytes, " bytes, file has ", file_size);
    offsets_.push_back(pos);
    pos += plane_bytes;
    is_.seekg(pos);
  }
  if (declared_frames > 0)
    CBT_REQUIRE(static_cast<int>(offsets_.size()) == declared_frames, path_,
                ": declared ", declared_frames, " frames, stream has ",
                offsets_.size());
  is_.clear();
}

void VideoReader::open_raw(int declared_frames) {
  CBT_REQUIRE(w_ > 0 && h_ > 0, path_, ": raw input needs explicit dims");
  CBT_REQUIRE(w_ % 2 == 0 && h_ % 2 == 0, path_,
              ": planar 4:2:0 needs even dims, got ", w_, "x", h_);
  const int64_t frame_bytes = static_cast<int64_t>(w_) * h_ * 3 / 2;
  is_.seekg(0, std::ios::end);
  const int64_t file_size = is_.tellg();
  int64_t count;
  if (declared_frames > 0) {
    count = declared_frames;
    CBT_REQUIRE(file_size == count * frame_bytes, path_, ": expected ",
                count * frame_bytes, " bytes for ", count, " frames of ", w_,
                "x", h_, " 4:2:0, file has ", file_size);
  } else {
    CBT_REQUIRE(file_size % frame_bytes == 0, path_, ": size ", file_size,
                " is not a multiple of the ", frame_bytes, "-byte frame");
    count = file_size / frame_bytes;
  }
  offsets_.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) offsets_.push_back(i * frame_bytes);
  is_.clear();
}

LumaFrame VideoReader::read_frame(int index) {
  CBT_REQUIRE(index >= 0 && index < frame_count(), path_, ": frame ", index,
              " out of range 0..", frame_count());
  LumaFrame f = LumaFrame::sized(w_, h_);
  is_.seekg(offsets_[static_cast<size_t>(index)]);
  const int64_t n = static_cast<int64_t>(w_) * h_;
  if (bytes_per_sample_ == 1) {
    is_.read(reinterpret_cast<char*>(f.pix.data()), n);
    CBT_REQUIRE(is_.gcount() == n, path_, ": short read on frame ", index);
  } else {
    std::vector<unsigned char> buf(static_cast<size_t>(n) * 2);
    is_.read(reinterpret_cast<char*>(buf.data()), n * 2);
    CBT_REQUIRE(is_.gcount() == n * 2, path_, ": short read on frame ", index);
    for (int64_t i = 0; i < n; ++i) {
      const unsigned v = buf[2 * i] | (static_cast<unsigned>(buf[2 * i + 1]) << 8);
      f.pix[static_cast<size_t>(i)] = static_cast<uint8_t>(v >> shift_);
    }
  }
  return f;
}

std::vector<LumaFrame> read_luma(const std::string& path,
                                 const std::string& format, int width,
                                 int height) {
  VideoReader r(path, format, width, height);
  std::vector<LumaFrame> out;
  out.reserve(static_cast<size_t>(r.frame_count()));
  for (int i = 0; i < r.frame_count(); ++i) out.push_back(r.read_frame(i));
  return out;
}

// --------------------------------------------------------------------------
// Resampling and padding

namespace {

double lanczos_kernel(double x, int a) {
  if (x == 0.0) return 1.0;
  if (x <= -a || x >= a) return 0.0;
  const double px = M_PI * x;
  return a * std::sin(px) * std::sin(px / a) / (px * px);
}

struct TapTable {
  int taps = 0;
  std::vector<int> first;        // per output coordinate
  std::vector<double> weights;   // taps per output coordinate, normalized
};

TapTable make_taps(int in_n, int out_n, int a) {
  TapTable t;
  const double scale = static_cast<double>(in_n) / out_n;
  const double fscale = std::max(1.0, scale);  // widen when downscaling
  const double support = a * fscale;
  t.taps = static_cast<int>(std::ceil(support)) * 2 + 1;
  t.first.resize(static_cast<size_t>(out_n));
  t.weights.assign(static_cast<size_t>(out_n) * t.taps, 0.0);
  for (int o = 0; o < out_n; ++o) {
    const double center = (o + 0.5) * scale - 0.5;
    const int first = static_cast<int>(std::ceil(center - support));
    t.first[static_cast<size_t>(o)] = first;
    double sum = 0.0;
    double* w = &t.weights[static_cast<size_t>(o) * t.taps];
    for (int i = 0; i < t.taps; ++i) {
      w[i] = lanczos_kernel((first + i - center) / fscale, a);
      sum += w[i];
    }
    for (int i = 0; i < t.taps; ++i) w[i] /= sum;
  }
  return t;
}

}  // namespace

LumaFrame lanczos_resize(const LumaFrame& in, int out_w, int out_h, int a) {
  CBT_REQUIRE(out_w >= 1 && out_h >= 1, "bad resize target ", out_w, "x",
              out_h);
  CBT_REQUIRE(a >= 1, "kernel width must be >= 1");
  if (out_w == in.w && out_h == in.h) return in;

  const TapTable tx = make_taps(in.w, out_w, a);
  std::vector<double> mid(static_cast<size_t>(in.h) * out_w);
  for (int r = 0; r < in.h; ++r) {
    const uint8_t* row = &in.pix[static_cast<size_t>(r) * in.w];
    for (int o = 0; o < out_w; ++o) {
      const int first = tx.first[static_cast<size_t>(o)];
      const double* w = &tx.weights[static_cast<size_t>(o) * tx.taps];
      double acc = 0.0;
      for (int i = 0; i < tx.taps; ++i) {
        const int c = std::min(std::max(first + i, 0), in.w - 1);
        acc += w[i] * row[c];
      }
      mid[static_cast<size_t>(r) * out_w + o] = acc;
    }
  }

  const TapTable ty = make_taps(in.h, out_h, a);
  LumaFrame out = LumaFrame::sized(out_w, out_h);
  for (int o = 0; o < out_h; ++o) {
    const int first = ty.first[static_cast<size_t>(o)];
    const double* w = &ty.weights[static_cast<size_t>(o) * ty.taps];
    for (int c = 0; c < out_w; ++c) {
      double acc = 0.0;
      for (int i = 0; i < ty.taps; ++i) {
        const int r = std::min(std::max(first + i, 0), in.h - 1);
        acc += w[i] * mid[static_cast<size_t>(r) * out_w + c];
      }
      const double v = std::round(acc);
      out.pix[static_cast<size_t>(o) * out_w + c] =
          static_cast<uint8_t>(std::min(255.0, std::max(0.0, v)));
    }
  }
  return out;
}

LumaFrame pad_to_multiple(const LumaFrame& in, int multiple) {
  CBT_REQUIRE(multiple >= 1, "bad padding multiple ", multiple);
  const int pw = (in.w + multiple - 1) / multiple * multiple;
  const int ph = (in.h + multiple - 1) / multiple * multiple;
  if (pw == in.w && ph == in.h) return in;
  LumaFrame out = LumaFrame::sized(pw, ph, 0);
  for (int r = 0; r < in.h; ++r)
    std::copy_n(&in.pix[static_cast<size_t>(r) * in.w], in.w,
                &out.pix[static_cast<size_t>(r) * pw]);
  return out;
}

// --------------------------------------------------------------------------
// Triplet extraction

int64_t triplet_count(int64_t n_frames, const LayerSpec& layer) {
  const int64_t span = layer.span();
  if (n_frames < span) return 0;
  return (n_frames - span) / layer.stride() + 1;
}

std::vector<std::array<int, 3>> extract_triplets(int n_frames,
                                                 const LayerSpec& layer) {
  CBT_REQUIRE(layer.k >= 1 && layer.k <= 4, "layer k must be 1..4, got ",
              layer.k);
  std::vector<std::array<int, 3>> out;
  const int d = layer.d();
  for (int a = 0; a + 2 * d < n_frames; a += layer.stride())
    out.push_back({a, a + d, a + 2 * d});
  return out;
}

std::pair<int, int> resolution_dims(const std::string& tag) {
  if (tag == "1080p") return {1920, 1080};
  if (tag == "720p") return {1280, 720};
  const auto x = tag.find('x');
  if (x != std::string::npos && x > 0) {
    try {
      const int w = std::stoi(tag.substr(0, x));
      const int h = std::stoi(tag.substr(x + 1));
      CBT_REQUIRE(w >= 1 && h >= 1, "bad resolution '", tag, "'");
      return {w, h};
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
    }
  }
  throw Error(cat("bad resolution '", tag, "' (use 1080p, 720p, or WxH)"));
}

FrameTriplet load_triplet(VideoReader& reader, const TripletRecord& rec) {
  const auto [tw, th] = resolution_dims(rec.resolution);
  auto prep = [&](int index) {
    LumaFrame f = reader.read_frame(index);
    if (f.w != tw || f.h != th) f = lanczos_resize(f, tw, th);
    return pad_to_multiple(f, 64);
  };
  FrameTriplet t;
  t.r_past = prep(rec.ip);
  t.q = prep(rec.iq);
  t.r_future = prep(rec.ifr);
  t.layer_k = rec.layer;
  t.orig_w = tw;
  t.orig_h = th;
  const int d = LayerSpec{rec.layer}.d();
  CBT_REQUIRE(rec.iq - rec.ip == d && rec.ifr - rec.iq == d,
              "record spacing does not match layer ", rec.layer);
  return t;
}

// --------------------------------------------------------------------------
// Database assembly

BuildDatabaseResult build_database(const std::vector<ManifestEntry>& manifest,
                                   const std::vector<std::string>& resolutions,
                                   bool probe_files) {
  BuildDatabaseResult out;
  for (const auto& res : resolutions) {
    resolution_dims(res);  // validate tags up front
    out.summary.counts[res] = {};
  }
  for (const auto& e : manifest) {
    if (probe_files) {
      try {
        VideoReader probe(e.path, e.format, e.width, e.height, e.frames);
      } catch (const std::exception& ex) {
        std::cerr << "warning: skipping " << e.id << ": " << ex.what()
                  << "\n";
        out.summary.skipped.push_back(cat(e.id, ": ", ex.what()));
        continue;
      }
    }
    const int part = e.partition == "train" ? 0 : 1;
    for (const auto& res : resolutions) {
      for (size_t si = 0; si < e.segments.size(); ++si) {
        const auto [s0, s1] = e.segments[si];
        for (int k = 1; k <= 4; ++k) {
          const LayerSpec layer{k};
          for (const auto& tri : extract_triplets(s1 - s0, layer)) {
            TripletRecord r;
            r.id = e.id;
            r.segment = static_cast<int>(si);
            r.ip = s0 + tri[0];
            r.iq = s0 + tri[1];
            r.ifr = s0 + tri[2];
            r.layer = k;
            r.resolution = res;
            out.records.push_back(std::move(r));
            ++out.summary.counts[res][static_cast<size_t>(k - 1)]
                               [static_cast<size_t>(part)];
          }
        }
      }
    }
  }
  return out;
}

void write_triplet_index(const std::string& path,
                         const std::vector<TripletRecord>& records) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    CBT_REQUIRE(os.good(), "cannot open ", tmp, " for writing");
    for (const auto& r : records) {
      json j{{"id", r.id},       {"segment", r.segment}, {"ip", r.ip},
             {"iq", r.iq},       {"if", r.ifr},          {"layer", r.layer},
             {"resolution", r.resolution}};
      os << j.dump() << "\n";
    }
    os.flush();
    CBT_REQUIRE(os.good(), "write failed for ", tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<TripletRecord> read_triplet_index(const std::string& path) {
  std::ifstream is(path);
  CBT_REQUIRE(is.good(), "cannot open triplet index ", path);
  std::vector<TripletRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw Error(cat(path, ":", line_no, ": bad index line: ", e.what()));
    }
    TripletRecord r;
    r.id = j.at("id").get<std::string>();
    r.segment = j.at("segment").get<int>();
    r.ip = j.at("ip").get<int>();
    r.iq = j.at("iq").get<int>();
    r.ifr = j.at("if").get<int>();
    r.layer = j.at("layer").get<int>();
    r.resolution = j.at("resolution").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TripletRecord> filter_records(
    const std::vector<TripletRecord>& records,
    const std::vector<ManifestEntry>& manifest, const std::string& partition,
    int layer, const std::string& resolution) {
  std::set<std::string> ids;
  for (const auto& e : manifest)
    if (e.partition == partition) ids.insert(e.id);
  std::vector<TripletRecord> out;
  for (const auto& r : records)
    if (r.layer == layer && r.resolution == resolution && ids.count(r.id))
      out.push_back(r);
  return out;
}

}  // namespace cbt
