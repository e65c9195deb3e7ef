#include "cbt/block_match.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>

#include "cbt/common.hpp"

namespace cbt {
namespace {

struct Cand {
  uint32_t sad = 0;
  int u = 0, v = 0;
};

// Smallest SAD, then smallest |u|+|v|, then smallest u, then smallest v —
// a strict total order, so static content always resolves to (0,0).
bool better(const Cand& a, const Cand& b) {
  if (a.sad != b.sad) return a.sad < b.sad;
  const int ma = std::abs(a.u) + std::abs(a.v);
  const int mb = std::abs(b.u) + std::abs(b.v);
  if (ma != mb) return ma < mb;
  if (a.u != b.u) return a.u < b.u;
  return a.v < b.v;
}

int clamp_range(int x, int r) { return std::min(std::max(x, -r), r); }

void check_spec(const LumaFrame& cur, const LumaFrame& ref,
                const SearchSpec& spec) {
  CBT_REQUIRE(spec.range >= 1, "search range must be >= 1, got ", spec.range);
  CBT_REQUIRE(spec.block >= 1, "block size must be >= 1, got ", spec.block);
  CBT_REQUIRE(cur.w == ref.w && cur.h == ref.h, "frame dims differ: ", cur.w,
              "x", cur.h, " vs ", ref.w, "x", ref.h);
  CBT_REQUIRE(cur.w % spec.block == 0 && cur.h % spec.block == 0,
              "frame ", cur.w, "x", cur.h, " not a multiple of block ",
              spec.block);
}

MotionField empty_field(const LumaFrame& cur, int block) {
  MotionField f;
  f.block = block;
  f.bw = cur.w / block;
  f.bh = cur.h / block;
  const size_t n = static_cast<size_t>(f.bw) * f.bh;
  f.u.assign(n, 0);
  f.v.assign(n, 0);
  f.sad.assign(n, 0);
  return f;
}

Cand eval(const LumaFrame& cur, const LumaFrame& ref, int r0, int c0, int size,
          int u, int v) {
  return Cand{block_sad(cur, ref, r0, c0, size, u, v), u, v};
}

// Unit-rood walk shared by DS's refinement cousin and ARPS: probe the four
// unit neighbors, recenter while something beats the center.
Cand unit_rood_refine(const LumaFrame& cur, const LumaFrame& ref, int r0,
                      int c0, int size, int range, Cand center) {
  static const int du[4] = {-1, 1, 0, 0};
  static const int dv[4] = {0, 0, -1, 1};
  for (;;) {
    Cand best = center;
    for (int i = 0; i < 4; ++i) {
      const int u = clamp_range(center.u + du[i], range);
      const int v = clamp_range(center.v + dv[i], range);
      if (u == center.u && v == center.v) continue;
      Cand c = eval(cur, ref, r0, c0, size, u, v);
      if (better(c, best)) best = c;
    }
    if (best.u == center.u && best.v == center.v) return center;
    center = best;
  }
}

Cand es_block(const LumaFrame& cur, const LumaFrame& ref, int r0, int c0,
              int size, int range) {
  Cand best = eval(cur, ref, r0, c0, size, -range, -range);
  for (int u = -range; u <= range; ++u)
    for (int v = -range; v <= range; ++v) {
      Cand c = eval(cur, ref, r0, c0, size, u, v);
      if (better(c, best)) best = c;
    }
  return best;
}

Cand ds_block(const LumaFrame& cur, const LumaFrame& ref, int r0, int c0,
              int size, int range) {
  // Large diamond: center, four at distance 2 on the axes, four diagonals.
  static const int ldu[8] = {-2, 2, 0, 0, -1, -1, 1, 1};
  static const int ldv[8] = {0, 0, -2, 2, -1, 1, -1, 1};
  Cand center = eval(cur, ref, r0, c0, size, 0, 0);
  for (;;) {
    Cand best = center;
    for (int i = 0; i < 8; ++i) {
      const int u = clamp_range(center.u + ldu[i], range);
      const int v = clamp_range(center.v + ldv[i], range);
      if (u == center.u && v == center.v) continue;
      Cand c = eval(cur, ref, r0, c0, size, u, v);
      if (better(c, best)) best = c;
    }
    if (best.u == center.u && best.v == center.v) break;
    center = best;
  }
  // One small-diamond step.
  static const int sdu[4] = {-1, 1, 0, 0};
  static const int sdv[4] = {0, 0, -1, 1};
  Cand best = center;
  for (int i = 0; i < 4; ++i) {
    const int u = clamp_range(center.u + sdu[i], range);
    const int v = clamp_range(center.v + sdv[i], range);
    if (u == center.u && v == center.v) continue;
    Cand c = eval(cur, ref, r0, c0, size, u, v);
    if (better(c, best)) best = c;
  }
  return best;
}

Cand arps_block(const LumaFrame& cur, const LumaFrame& ref, int r0, int c0,
                int size, int range, bool have_pred, int pu, int pv) {
  const int arm = have_pred ? std::max(std::abs(pu), std::abs(pv)) : 2;
  Cand cands[6];
  int n = 0;
  auto push = [&](int u, int v) {
    u = clamp_range(u, range);
    v = clamp_range(v, range);
    for (int i = 0; i < n; ++i)
      if (cands[i].u == u && cands[i].v == v) return;
    cands[n++] = eval(cur, ref, r0, c0, size, u, v);
  };
  push(0, 0);
  push(-arm, 0);
  push(arm, 0);
  push(0, -arm);
  push(0, arm);
  if (have_pred) push(pu, pv);
  Cand best = cands[0];
  for (int i = 1; i < n; ++i)
    if (better(cands[i], best)) best = cands[i];
  return unit_rood_refine(cur, ref, r0, c0, size, range, best);
}

}  // namespace

uint32_t block_sad(const LumaFrame& cur, const LumaFrame& ref, int r0, int c0,
                   int size, int u, int v) {
  uint32_t acc = 0;
  for (int r = r0; r < r0 + size; ++r)
    for (int c = c0; c < c0 + size; ++c) {
      const int a = cur.at(r, c);
      const int b = ref.at_clamped(r + u, c + v);
      acc += static_cast<uint32_t>(std::abs(a - b));
    }
  return acc;
}

MotionField es_search(const LumaFrame& cur, const LumaFrame& ref,
                      const SearchSpec& spec) {
  check_spec(cur, ref, spec);
  MotionField f = empty_field(cur, spec.block);
#pragma omp parallel for collapse(2) schedule(dynamic)
  for (int by = 0; by < f.bh; ++by)
    for (int bx = 0; bx < f.bw; ++bx) {
      Cand best = es_block(cur, ref, by * spec.block, bx * spec.block,
                           spec.block, spec.range);
      const int i = f.idx(by, bx);
      f.u[i] = static_cast<int16_t>(best.u);
      f.v[i] = static_cast<int16_t>(best.v);
      f.sad[i] = best.sad;
    }
  return f;
}

MotionField ds_search(const LumaFrame& cur, const LumaFrame& ref,
                      const SearchSpec& spec) {
  check_spec(cur, ref, spec);
  MotionField f = empty_field(cur, spec.block);
#pragma omp parallel for collapse(2) schedule(dynamic)
  for (int by = 0; by < f.bh; ++by)
    for (int bx = 0; bx < f.bw; ++bx) {
      Cand best = ds_block(cur, ref, by * spec.block, bx * spec.block,
                           spec.block, spec.range);
      const int i = f.idx(by, bx);
      f.u[i] = static_cast<int16_t>(best.u);
      f.v[i] = static_cast<int16_t>(best.v);
      f.sad[i] = best.sad;
    }
  return f;
}

MotionField arps_search(const LumaFrame& cur, const LumaFrame& ref,
                        const SearchSpec& spec) {
  check_spec(cur, ref, spec);
  MotionField f = empty_field(cur, spec.block);
  // Left-neighbor predictor makes rows sequential; rows stay independent.
#pragma omp parallel for schedule(dynamic)
  for (int by = 0; by < f.bh; ++by)
    for (int bx = 0; bx < f.bw; ++bx) {
      const int i = f.idx(by, bx);
      const bool have_pred = bx > 0;
      const int pu = have_pred ? f.u[i - 1] : 0;
      const int pv = have_pred ? f.v[i - 1] : 0;
      Cand best = arps_block(cur, ref, by * spec.block, bx * spec.block,
                             spec.block, spec.range, have_pred, pu, pv);
      f.u[i] = static_cast<int16_t>(best.u);
      f.v[i] = static_cast<int16_t>(best.v);
      f.sad[i] = best.sad;
    }
  return f;
}

MatchAlgo algo_from_name(const std::string& name) {
  if (name == "es") return MatchAlgo::ES;
  if (name == "ds") return MatchAlgo::DS;
  if (name == "arps") return MatchAlgo::ARPS;
  throw Error(cat("unknown matcher '", name, "' (expected es, ds, or arps)"));
}

MvFieldSet run_baseline(const FrameTriplet& t, MatchAlgo algo, int range,
                        BaselineReport* report) {
  MvFieldSet out = MvFieldSet::zeros(t.width(), t.height());
  BaselineReport rep;
  double size_time[4] = {0, 0, 0, 0};
  for (int c = 0; c < 2; ++c) {
    const LumaFrame& ref = c == 0 ? t.r_past : t.r_future;
    for (int si = 0; si < 4; ++si) {
      const int size = MvFieldSet::kSizes[si];
      SearchSpec spec{size, range};
      const auto t0 = std::chrono::steady_clock::now();
      MotionField mf;
      switch (algo) {
        case MatchAlgo::ES: mf = es_search(t.q, ref, spec); break;
        case MatchAlgo::DS: mf = ds_search(t.q, ref, spec); break;
        case MatchAlgo::ARPS: mf = arps_search(t.q, ref, spec); break;
      }
      const auto t1 = std::chrono::steady_clock::now();
      const double secs = std::chrono::duration<double>(t1 - t0).count();
      rep.invocations.push_back({size, c, secs});
      rep.total_seconds += secs;
      size_time[si] += secs;

      Tensor& field = out.field(size);
      float* p = field.ptr();
      for (int by = 0; by < mf.bh; ++by)
        for (int bx = 0; bx < mf.bw; ++bx) {
          const int i = mf.idx(by, bx);
          float* cell = p + (static_cast<int64_t>(by) * mf.bw + bx) * 4;
          cell[2 * c] = static_cast<float>(mf.u[i]);
          cell[2 * c + 1] = static_cast<float>(mf.v[i]);
        }
    }
  }
  if (rep.total_seconds > 0)
    for (int si = 0; si < 4; ++si)
      rep.size_share[si] = size_time[si] / rep.total_seconds;
  if (report != nullptr) *report = rep;
  return out;
}

}  // namespace cbt
