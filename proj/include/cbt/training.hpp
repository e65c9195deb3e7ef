#ifndef CBT_TRAINING_HPP
#define CBT_TRAINING_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cbt/adam.hpp"
#include "cbt/block_match.hpp"
#include "cbt/dataset.hpp"
#include "cbt/frame.hpp"
#include "cbt/model.hpp"

namespace cbt {

struct TrainConfig {
  int layer_k = 4;
  std::string resolution = "1080p";
  int batch = 8;  // 16 for 720p
  double lr = 1e-4;
  int max_steps = 1000;
  int val_every = 0;        // 0 = never during the run
  int checkpoint_every = 0; // 0 = final only
  uint64_t seed = 1;
  // Desk-scale mode: aligned random crops, 64-multiples, offsets shared
  // across the three frames. 0 disables cropping.
  int crop_min = 0, crop_max = 0;
  std::string out_dir;  // loss curve + checkpoints; empty = no files
};

struct TripletSource {
  virtual ~TripletSource() = default;
  virtual size_t size() const = 0;
  virtual FrameTriplet get(size_t idx) = 0;
};

class DiskTripletSource : public TripletSource {
 public:
  DiskTripletSource(std::vector<ManifestEntry> manifest,
                    std::vector<TripletRecord> records);

  size_t size() const override { return records_.size(); }
  FrameTriplet get(size_t idx) override;
  const TripletRecord& record(size_t idx) const { return records_.at(idx); }

 private:
  std::map<std::string, ManifestEntry> by_id_;
  std::vector<TripletRecord> records_;
  std::map<std::string, std::unique_ptr<VideoReader>> readers_;
};

struct StepRecord {
  int64_t step = 0;
  double loss_db = 0.0;
  double ms[2][4] = {};  // batch-mean MS-SSIM [c][size index]
};

struct TrainResult {
  std::vector<StepRecord> curve;
  bool aborted_non_finite = false;
  int64_t steps_run = 0;
  double best_val_mad = 0.0;
  int64_t best_val_step = -1;  // -1 = no validation ran
  std::string last_checkpoint, best_checkpoint;
};

struct ValidationTable {
  double mad[4][2] = {};     // [size index][reference]
  double msssim[4][2] = {};
  int64_t triplets = 0;

  double mad_avg(int si) const { return (mad[si][0] + mad[si][1]) / 2.0; }
  double mean_mad() const {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += mad_avg(i);
    return s / 4.0;
  }
};

// Forward -> per-(reference,size) block warp -> perceptual loss -> Adam.
// Data order is shuffled per epoch from cfg.seed; a non-finite loss or
// gradient aborts the run with the last good parameters checkpointed.
TrainResult train(CbtNet& net, TripletSource& data, const TrainConfig& cfg,
                  TripletSource* val = nullptr);

ValidationTable validate_model(CbtNet& net, TripletSource& data,
                               size_t limit = 0);
ValidationTable validate_baseline(MatchAlgo algo, int range,
                                  TripletSource& data, size_t limit = 0);

void write_loss_curve_csv(const std::string& path,
                          const std::vector<StepRecord>& curve);

// One row per layer; columns are size x method, MAD first then MS-SSIM.
void write_validation_csv(
    const std::string& path, int layer_k,
    const std::vector<std::pair<std::string, ValidationTable>>& methods);

}  // namespace cbt

#endif
