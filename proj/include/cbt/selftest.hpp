#ifndef CBT_SELFTEST_HPP
#define CBT_SELFTEST_HPP

#include <memory>
#include <string>
#include <vector>

#include "cbt/model.hpp"
#include "cbt/synthetic.hpp"
#include "cbt/training.hpp"

namespace cbt {

struct SelfTestResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// The toy training run feeds both the convergence check and the aperture
// comparison, so it is carried between them.
struct ToyRun {
  std::unique_ptr<CbtNet> net;
  TrainResult result;
  double median_epe = 0.0;
};

SelfTestResult st_gradient_suite();
SelfTestResult st_warp_oracle();
SelfTestResult st_search_oracles();
SelfTestResult st_aperture(ToyRun& toy);
SelfTestResult st_toy_training(ToyRun& toy);
SelfTestResult st_msssim();
SelfTestResult st_triplet_counts();
SelfTestResult st_export_exactness();
SelfTestResult st_feature_reuse();
SelfTestResult st_bd_rate();

// All ten, reported in numeric order (training runs before the aperture
// check that consumes it).
std::vector<SelfTestResult> run_selftests();

}  // namespace cbt

#endif
