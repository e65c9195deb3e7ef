#ifndef CBT_BLOCK_MATCH_HPP
#define CBT_BLOCK_MATCH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cbt/frame.hpp"

namespace cbt {

struct SearchSpec {
  int block = 16;
  int range = 127;
};

// Integer MVs plus the matched SAD, one entry per block in raster order.
struct MotionField {
  int block = 0;
  int bw = 0, bh = 0;
  std::vector<int16_t> u, v;
  std::vector<uint32_t> sad;

  int idx(int by, int bx) const { return by * bw + bx; }
};

// Σ|cur − ref| over the block at (r0,c0) displaced by (u,v) in ref;
// reference reads are border-replicated.
uint32_t block_sad(const LumaFrame& cur, const LumaFrame& ref, int r0, int c0,
                   int size, int u, int v);

MotionField es_search(const LumaFrame& cur, const LumaFrame& ref,
                      const SearchSpec& spec);
MotionField ds_search(const LumaFrame& cur, const LumaFrame& ref,
                      const SearchSpec& spec);
MotionField arps_search(const LumaFrame& cur, const LumaFrame& ref,
                        const SearchSpec& spec);

enum class MatchAlgo { ES, DS, ARPS };

MatchAlgo algo_from_name(const std::string& name);  // "es" | "ds" | "arps"

struct BaselineInvocation {
  int block = 0;
  int ref = 0;  // 0 = past, 1 = future
  double seconds = 0.0;
};

struct BaselineReport {
  std::vector<BaselineInvocation> invocations;  // 4 sizes x 2 references
  double total_seconds = 0.0;
  double size_share[4] = {0, 0, 0, 0};  // per MvFieldSet::kSizes order
};

// One matcher run per (block size, reference) over the padded luma planes.
MvFieldSet run_baseline(const FrameTriplet& t, MatchAlgo algo, int range,
                        BaselineReport* report = nullptr);

}  // namespace cbt

#endif
