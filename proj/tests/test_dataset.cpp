#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cbt/dataset.hpp"

using namespace cbt;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  fs::path dir = fs::temp_directory_path() / "cbt_dataset_tests";
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(os.good());
}

// 8-bit y4m with luma = frame_index*16 + row*width + col, chroma all 128.
std::string make_y4m(int w, int h, int frames, const std::string& colorspace) {
  std::string s = "YUV4MPEG2 W" + std::to_string(w) + " H" +
                  std::to_string(h) + " F25:1 Ip A1:1 C" + colorspace + "\n";
  int cw = w / 2, ch = h / 2;
  if (colorspace.rfind("422", 0) == 0) ch = h;
  if (colorspace.rfind("444", 0) == 0) {
    cw = w;
    ch = h;
  }
  const bool mono = colorspace.rfind("mono", 0) == 0;
  for (int f = 0; f < frames; ++f) {
    s += "FRAME\n";
    for (int i = 0; i < w * h; ++i)
      s += static_cast<char>(static_cast<uint8_t>(f * 16 + i));
    if (!mono) s += std::string(static_cast<size_t>(cw) * ch * 2, '\x80');
  }
  return s;
}

std::string make_y4m_p10(int w, int h, int frames) {
  std::string s = "YUV4MPEG2 W" + std::to_string(w) + " H" +
                  std::to_string(h) + " F25:1 C420p10\n";
  auto put16 = [&s](int v) {
    s += static_cast<char>(v & 0xff);
    s += static_cast<char>((v >> 8) & 0xff);
  };
  for (int f = 0; f < frames; ++f) {
    s += "FRAME\n";
    for (int i = 0; i < w * h; ++i) put16((f * 16 + i * 4) % 1024);
    for (int i = 0; i < (w / 2) * (h / 2) * 2; ++i) put16(512);
  }
  return s;
}

}  // namespace

TEST_CASE("y4m reader decodes frames across chroma layouts") {
  const auto dir = scratch_dir();
  for (const std::string cs : {"420jpeg", "422", "444", "mono"}) {
    const fs::path p = dir / ("fixture_" + cs + ".y4m");
    write_bytes(p, make_y4m(8, 4, 3, cs));
    VideoReader r(p.string(), "y4m");
    CHECK(r.width() == 8);
    CHECK(r.height() == 4);
    REQUIRE(r.frame_count() == 3);
    for (int f = 0; f < 3; ++f) {
      LumaFrame frame = r.read_frame(f);
      for (int i = 0; i < 32; ++i)
        CHECK(frame.pix[size_t(i)] == uint8_t(f * 16 + i));
    }
  }
}

TEST_CASE("10-bit sources keep their top 8 bits") {
  const auto dir = scratch_dir();
  const fs::path p = dir / "fixture_p10.y4m";
  write_bytes(p, make_y4m_p10(8, 4, 2));
  VideoReader r(p.string(), "y4m");
  REQUIRE(r.frame_count() == 2);
  for (int f = 0; f < 2; ++f) {
    LumaFrame frame = r.read_frame(f);
    for (int i = 0; i < 32; ++i)
      CHECK(frame.pix[size_t(i)] == uint8_t(((f * 16 + i * 4) % 1024) >> 2));
  }
}

TEST_CASE("raw reader infers frames and rejects bad sizes") {
  const auto dir = scratch_dir();
  const fs::path ok = dir / "ok.yuv";
  // Two 8x4 4:2:0 frames: 48 bytes each.
  std::string bytes;
  for (int f = 0; f < 2; ++f) {
    for (int i = 0; i < 32; ++i)
      bytes += static_cast<char>(static_cast<uint8_t>(f * 16 + i));
    bytes += std::string(16, '\x80');
  }
  write_bytes(ok, bytes);
  VideoReader r(ok.string(), "raw", 8, 4);
  REQUIRE(r.frame_count() == 2);
  CHECK(r.read_frame(1).pix[0] == 16);

  const fs::path bad = dir / "bad.yuv";
  write_bytes(bad, bytes.substr(0, 47));
  CHECK_THROWS(VideoReader(bad.string(), "raw", 8, 4));
  CHECK_THROWS_WITH_AS(VideoReader(ok.string(), "raw", 8, 4, 3),
                       doctest::Contains("expected"), Error);
}

TEST_CASE("truncated y4m payloads are rejected with byte counts") {
  const auto dir = scratch_dir();
  const fs::path p = dir / "short.y4m";
  std::string full = make_y4m(8, 4, 2, "420jpeg");
  write_bytes(p, full.substr(0, full.size() - 5));
  CHECK_THROWS_WITH_AS(VideoReader(p.string(), "y4m"),
                       doctest::Contains("expected"), Error);
}

TEST_CASE("lanczos identity and constant preservation") {
  RandomSource rng(300);
  LumaFrame f = LumaFrame::sized(17, 13);
  for (auto& p : f.pix) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  LumaFrame same = lanczos_resize(f, 17, 13);
  CHECK(same.pix == f.pix);

  LumaFrame flat = LumaFrame::sized(40, 30, 77);
  LumaFrame down = lanczos_resize(flat, 13, 9);
  for (auto p : down.pix) CHECK(int(p) == 77);
}

TEST_CASE("lanczos downscale matches a direct 2D evaluation") {
  RandomSource rng(301);
  const int in_w = 16, in_h = 16, out_w = 7, out_h = 5, a = 3;
  LumaFrame f = LumaFrame::sized(in_w, in_h);
  for (int r = 0; r < in_h; ++r)
    for (int c = 0; c < in_w; ++c)
      f.at(r, c) = static_cast<uint8_t>(std::lround(
          127.5 + 120 * std::sin(0.5 * r * r * 0.1 + 0.8 * c)));

  // Full 2D product kernel, no separable passes.
  auto taps1d = [a](int out_n, int in_n, int o) {
    const double scale = double(in_n) / out_n;
    const double fscale = std::max(1.0, scale);
    const double support = a * fscale;
    const double center = (o + 0.5) * scale - 0.5;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    std::vector<std::pair<int, double>> taps;
    double sum = 0.0;
    for (int i = lo; i <= hi; ++i) {
      const double x = (i - center) / fscale;
      double w = 0.0;
      if (std::abs(x) < a) {
        if (x == 0.0) {
          w = 1.0;
        } else {
          const double px = 3.14159265358979323846 * x;
          w = a * std::sin(px) * std::sin(px / a) / (px * px);
        }
      }
      if (w != 0.0) {
        taps.emplace_back(std::clamp(i, 0, in_n - 1), w);
        sum += w;
      }
    }
    for (auto& t : taps) t.second /= sum;
    return taps;
  };

  LumaFrame got = lanczos_resize(f, out_w, out_h, a);
  for (int ro = 0; ro < out_h; ++ro) {
    auto row_taps = taps1d(out_h, in_h, ro);
    for (int co = 0; co < out_w; ++co) {
      auto col_taps = taps1d(out_w, in_w, co);
      double v = 0.0;
      for (const auto& [ri, rw] : row_taps)
        for (const auto& [ci, cw] : col_taps) v += rw * cw * f.at(ri, ci);
      const double want = std::clamp(v, 0.0, 255.0);
      CHECK(std::abs(double(got.at(ro, co)) - want) <= 1.0);
    }
  }
}

TEST_CASE("padding appends zeros and keeps coordinates") {
  LumaFrame f = LumaFrame::sized(10, 7, 9);
  LumaFrame p = pad_to_multiple(f, 64);
  CHECK(p.w == 64);
  CHECK(p.h == 64);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      CHECK(int(p.at(r, c)) == ((r < 7 && c < 10) ? 9 : 0));
}

TEST_CASE("triplet schedule counts and spacing per layer") {
  // Greedy walk as the reference.
  for (int k = 1; k <= 4; ++k) {
    const LayerSpec layer{k};
    for (int n = 0; n <= 120; ++n) {
      int64_t want = 0;
      for (int pos = 0; pos + layer.span() - 1 < n; pos += layer.stride())
        ++want;
      CHECK(triplet_count(n, layer) == want);
      auto trips = extract_triplets(n, layer);
      CHECK(int64_t(trips.size()) == want);
      for (size_t i = 0; i < trips.size(); ++i) {
        CHECK(trips[i][0] == int(i) * layer.stride());
        CHECK(trips[i][1] - trips[i][0] == layer.d());
        CHECK(trips[i][2] - trips[i][1] == layer.d());
      }
    }
  }
  // 33-frame segment: one k=1 span, then 3/5/7 as the distance halves.
  CHECK(triplet_count(33, LayerSpec{1}) == 1);
  CHECK(triplet_count(33, LayerSpec{2}) == 3);
  CHECK(triplet_count(33, LayerSpec{3}) == 5);
  CHECK(triplet_count(33, LayerSpec{4}) == 7);
}

TEST_CASE("resolution tags parse or reject") {
  CHECK(resolution_dims("1080p") == std::pair<int, int>{1920, 1080});
  CHECK(resolution_dims("720p") == std::pair<int, int>{1280, 720});
  CHECK(resolution_dims("123x77") == std::pair<int, int>{123, 77});
  CHECK_THROWS(resolution_dims("4k-ish"));
}

TEST_CASE("manifest validation catches structural errors") {
  const auto dir = scratch_dir();
  const fs::path good = dir / "good.jsonl";
  write_bytes(good,
              R"({"id":"a","path":"a.y4m","format":"y4m","width":8,"height":4,"frames":33,"segments":[[0,33]],"partition":"train"})"
              "\n"
              R"({"id":"b","path":"b.y4m","format":"y4m","width":8,"height":4,"frames":40,"segments":[[0,20],[25,40]],"partition":"val"})"
              "\n");
  auto entries = read_manifest(good.string());
  REQUIRE(entries.size() == 2);
  CHECK(entries[1].segments.size() == 2);

  const fs::path dup = dir / "dup.jsonl";
  write_bytes(dup,
              R"({"id":"a","path":"a.y4m","format":"y4m","width":8,"height":4,"frames":10,"segments":[[0,10]],"partition":"train"})"
              "\n"
              R"({"id":"a","path":"a2.y4m","format":"y4m","width":8,"height":4,"frames":10,"segments":[[0,10]],"partition":"train"})"
              "\n");
  CHECK_THROWS_WITH_AS(read_manifest(dup.string()),
                       doctest::Contains("duplicate"), Error);

  const fs::path bad_seg = dir / "badseg.jsonl";
  write_bytes(bad_seg,
              R"({"id":"a","path":"a.y4m","format":"y4m","width":8,"height":4,"frames":10,"segments":[[5,3]],"partition":"train"})"
              "\n");
  CHECK_THROWS(read_manifest(bad_seg.string()));
}

TEST_CASE("database build, index round-trip and filtering") {
  const auto dir = scratch_dir();
  const fs::path video = dir / "clip33.y4m";
  write_bytes(video, make_y4m(8, 4, 33, "420jpeg"));
  const fs::path manifest_path = dir / "db.jsonl";
  write_bytes(manifest_path,
              "{\"id\":\"clip\",\"path\":\"" + video.string() +
                  "\",\"format\":\"y4m\",\"width\":8,\"height\":4,"
                  "\"frames\":33,\"segments\":[[0,33]],\"partition\":\"train\"}\n"
                  "{\"id\":\"gone\",\"path\":\"" +
                  (dir / "missing.y4m").string() +
                  "\",\"format\":\"y4m\",\"width\":8,\"height\":4,"
                  "\"frames\":10,\"segments\":[[0,10]],\"partition\":\"val\"}\n");

  auto manifest = read_manifest(manifest_path.string());
  BuildDatabaseResult db = build_database(manifest, {"8x4"});
  CHECK(db.summary.skipped.size() == 1);
  const auto& counts = db.summary.counts.at("8x4");
  CHECK(counts[0][0] == 1);
  CHECK(counts[1][0] == 3);
  CHECK(counts[2][0] == 5);
  CHECK(counts[3][0] == 7);
  CHECK(db.records.size() == 16);

  const fs::path index = dir / "index.jsonl";
  write_triplet_index(index.string(), db.records);
  auto back = read_triplet_index(index.string());
  REQUIRE(back.size() == db.records.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == db.records[i].id);
    CHECK(back[i].ip == db.records[i].ip);
    CHECK(back[i].iq == db.records[i].iq);
    CHECK(back[i].ifr == db.records[i].ifr);
    CHECK(back[i].layer == db.records[i].layer);
    CHECK(back[i].resolution == db.records[i].resolution);
  }

  auto layer4 = filter_records(back, manifest, "train", 4, "8x4");
  CHECK(layer4.size() == 7);
  CHECK(filter_records(back, manifest, "val", 4, "8x4").empty());

  // Loading an indexed triplet restores the original pixels, padded.
  VideoReader reader(video.string(), "y4m");
  FrameTriplet t = load_triplet(reader, layer4.front());
  CHECK(t.orig_w == 8);
  CHECK(t.orig_h == 4);
  CHECK(t.width() == 64);
  CHECK(t.height() == 64);
  CHECK(t.distance() == 1);
  for (int i = 0; i < 8; ++i) {
    CHECK(t.r_past.at(0, i) == uint8_t(layer4.front().ip * 16 + i));
    CHECK(t.q.at(0, i) == uint8_t(layer4.front().iq * 16 + i));
    CHECK(t.r_future.at(0, i) == uint8_t(layer4.front().ifr * 16 + i));
  }
}
