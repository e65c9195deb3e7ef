#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <vector>

#include "cbt/block_match.hpp"

using namespace cbt;

namespace {

LumaFrame noise(RandomSource& rng, int w, int h) {
  LumaFrame f = LumaFrame::sized(w, h);
  for (auto& p : f.pix) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  return f;
}

struct Probe {
  int64_t sad;
  int u, v;
};

// Independent full search: opposite loop nesting, own SAD, stable sort on
// the (sad, |u|+|v|, u, v) preference.
Probe brute_best(const LumaFrame& cur, const LumaFrame& ref, int r0, int c0,
                 int size, int range) {
  std::vector<Probe> all;
  for (int v = -range; v <= range; ++v)
    for (int u = -range; u <= range; ++u) {
      int64_t sad = 0;
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
          sad += std::abs(int(cur.at(r0 + r, c0 + c)) -
                          int(ref.at_clamped(r0 + r + u, c0 + c + v)));
      all.push_back({sad, u, v});
    }
  std::stable_sort(all.begin(), all.end(), [](const Probe& a, const Probe& b) {
    if (a.sad != b.sad) return a.sad < b.sad;
    const int ma = std::abs(a.u) + std::abs(a.v);
    const int mb = std::abs(b.u) + std::abs(b.v);
    if (ma != mb) return ma < mb;
    if (a.u != b.u) return a.u < b.u;
    return a.v < b.v;
  });
  return all.front();
}

}  // namespace

TEST_CASE("exhaustive search equals an independent full enumeration") {
  RandomSource rng(200);
  const SearchSpec spec{8, 3};
  for (int trial = 0; trial < 10; ++trial) {
    LumaFrame cur = noise(rng, 32, 32);
    LumaFrame ref = noise(rng, 32, 32);
    MotionField f = es_search(cur, ref, spec);
    for (int by = 0; by < f.bh; ++by)
      for (int bx = 0; bx < f.bw; ++bx) {
        Probe want = brute_best(cur, ref, by * 8, bx * 8, 8, 3);
        const int i = f.idx(by, bx);
        CHECK(f.u[size_t(i)] == want.u);
        CHECK(f.v[size_t(i)] == want.v);
        CHECK(int64_t(f.sad[size_t(i)]) == want.sad);
      }
  }
}

TEST_CASE("identical frames give the zero vector everywhere") {
  RandomSource rng(201);
  LumaFrame f = noise(rng, 64, 64);
  for (auto search : {es_search, ds_search, arps_search}) {
    MotionField m = search(f, f, SearchSpec{16, 7});
    for (size_t i = 0; i < m.u.size(); ++i) {
      CHECK(m.u[i] == 0);
      CHECK(m.v[i] == 0);
      CHECK(m.sad[i] == 0);
    }
  }
}

TEST_CASE("ties resolve by magnitude then vertical then horizontal") {
  // Period-2 columns make displacements (0,-1) and (0,1) both exact.
  LumaFrame cur = LumaFrame::sized(16, 8);
  LumaFrame ref = LumaFrame::sized(16, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 16; ++c) {
      cur.at(r, c) = c % 2 ? 200 : 50;
      ref.at(r, c) = c % 2 ? 50 : 200;
    }
  MotionField f = es_search(cur, ref, SearchSpec{4, 2});
  const int i = f.idx(1, 1);  // interior block, clamping can't bias it
  CHECK(f.sad[size_t(i)] == 0);
  CHECK(f.u[size_t(i)] == 0);
  CHECK(f.v[size_t(i)] == -1);
}

TEST_CASE("global translations are recovered on interior blocks") {
  RandomSource rng(202);
  for (int trial = 0; trial < 8; ++trial) {
    LumaFrame tex = noise(rng, 80, 80);
    const int su = static_cast<int>(rng.uniform_int(-4, 4));
    const int sv = static_cast<int>(rng.uniform_int(-4, 4));
    LumaFrame cur = LumaFrame::sized(64, 64), ref = LumaFrame::sized(64, 64);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        cur.at(r, c) = tex.at(8 + r, 8 + c);
        ref.at(r, c) = tex.at(8 + r + su, 8 + c + sv);
      }
    // Noise carries no SAD gradient, so only the exhaustive search is
    // guaranteed the exact shift; the fast searches get the SAD bound below.
    MotionField f = es_search(cur, ref, SearchSpec{8, 4});
    for (int by = 1; by + 1 < f.bh; ++by)
      for (int bx = 1; bx + 1 < f.bw; ++bx) {
        const int i = f.idx(by, bx);
        CHECK(f.u[size_t(i)] == -su);
        CHECK(f.v[size_t(i)] == -sv);
      }
  }
}

TEST_CASE("fast searches never beat the exhaustive baseline") {
  RandomSource rng(203);
  for (int trial = 0; trial < 10; ++trial) {
    LumaFrame cur = noise(rng, 48, 48);
    LumaFrame ref = noise(rng, 48, 48);
    const SearchSpec spec{8, 6};
    MotionField es = es_search(cur, ref, spec);
    MotionField ds = ds_search(cur, ref, spec);
    MotionField ar = arps_search(cur, ref, spec);
    for (size_t i = 0; i < es.sad.size(); ++i) {
      CHECK(es.sad[i] <= ds.sad[i]);
      CHECK(es.sad[i] <= ar.sad[i]);
    }
  }
}

TEST_CASE("probes are confined to the search range") {
  RandomSource rng(204);
  LumaFrame cur = noise(rng, 32, 32);
  LumaFrame ref = noise(rng, 32, 32);
  for (auto search : {es_search, ds_search, arps_search}) {
    MotionField f = search(cur, ref, SearchSpec{8, 2});
    for (size_t i = 0; i < f.u.size(); ++i) {
      CHECK(std::abs(f.u[i]) <= 2);
      CHECK(std::abs(f.v[i]) <= 2);
    }
  }
}

TEST_CASE("block_sad reads the reference with border replication") {
  LumaFrame cur = LumaFrame::sized(8, 8, 100);
  LumaFrame ref = LumaFrame::sized(8, 8, 0);
  for (int c = 0; c < 8; ++c) ref.at(0, c) = 100;
  // Displacement far above the frame: every read clamps to row 0 (all 100).
  CHECK(block_sad(cur, ref, 0, 0, 8, -50, 0) == 0);
  // Far below: clamps to row 7 (all 0) -> |100-0| per pixel.
  CHECK(block_sad(cur, ref, 0, 0, 8, 50, 0) == 100u * 64u);
}

TEST_CASE("run_baseline fills every plane and accounts its time") {
  RandomSource rng(205);
  FrameTriplet t;
  t.q = noise(rng, 128, 64);
  t.r_past = noise(rng, 128, 64);
  t.r_future = noise(rng, 128, 64);
  t.orig_w = 128;
  t.orig_h = 64;

  BaselineReport report;
  MvFieldSet mvs = run_baseline(t, MatchAlgo::ES, 4, &report);
  CHECK(report.invocations.size() == 8);
  double share = 0.0;
  for (double s : report.size_share) share += s;
  CHECK(share == doctest::Approx(1.0).epsilon(1e-9));

  for (int c = 0; c < 2; ++c) {
    const LumaFrame& ref = c == 0 ? t.r_past : t.r_future;
    for (int size : MvFieldSet::kSizes) {
      MotionField f = es_search(t.q, ref, SearchSpec{size, 4});
      for (int by = 0; by < f.bh; ++by)
        for (int bx = 0; bx < f.bw; ++bx) {
          const int i = f.idx(by, bx);
          CHECK(mvs.mv(size, by, bx, 2 * c) == float(f.u[size_t(i)]));
          CHECK(mvs.mv(size, by, bx, 2 * c + 1) == float(f.v[size_t(i)]));
        }
    }
  }
}
