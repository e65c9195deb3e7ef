#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "cbt/checkpoint.hpp"
#include "cbt/synthetic.hpp"
#include "cbt/training.hpp"

using namespace cbt;
namespace fs = std::filesystem;

namespace {

SyntheticConfig small_source(uint64_t seed, size_t count) {
  SyntheticConfig sc;
  sc.frame = 64;
  sc.max_shift = 4;
  sc.seed = seed;
  sc.count = count;
  return sc;
}

TrainConfig quick_config(int steps, int batch, double lr) {
  TrainConfig tc;
  tc.layer_k = 4;
  tc.batch = batch;
  tc.lr = lr;
  tc.max_steps = steps;
  tc.seed = 17;
  return tc;
}

std::vector<float> snapshot(const std::vector<Tensor>& params) {
  std::vector<float> flat;
  for (const auto& p : params)
    flat.insert(flat.end(), p.data().begin(), p.data().end());
  return flat;
}

// All three frames identical, so zero MVs reconstruct Q exactly.
struct StaticSource : TripletSource {
  FrameTriplet t;

  explicit StaticSource(uint64_t seed) {
    RandomSource rng(seed);
    LumaFrame f = LumaFrame::sized(64, 64);
    for (auto& p : f.pix) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
    t.r_past = f;
    t.q = f;
    t.r_future = f;
    t.layer_k = 4;
    t.orig_w = 64;
    t.orig_h = 64;
  }
  size_t size() const override { return 3; }
  FrameTriplet get(size_t) override { return t; }
};

}  // namespace

TEST_CASE("identical seeds give identical runs") {
  std::vector<double> curves[2];
  std::vector<float> finals[2];
  for (int run = 0; run < 2; ++run) {
    SyntheticTranslationSource src(small_source(3, 8));
    CbtNet net{CbtNetConfig::toy()};
    net.init(9);
    TrainResult r = train(net, src, quick_config(6, 2, 1e-4));
    REQUIRE(r.steps_run == 6);
    for (const auto& s : r.curve) curves[run].push_back(s.loss_db);
    finals[run] = snapshot(net.parameters());
  }
  CHECK(curves[0] == curves[1]);
  REQUIRE(finals[0].size() == finals[1].size());
  CHECK(std::memcmp(finals[0].data(), finals[1].data(),
                    finals[0].size() * sizeof(float)) == 0);
}

TEST_CASE("zero learning rate is a bitwise fixed point") {
  SyntheticTranslationSource src(small_source(5, 6));
  CbtNet net{CbtNetConfig::toy()};
  net.init(31);
  const std::vector<float> before = snapshot(net.parameters());
  TrainResult r = train(net, src, quick_config(3, 2, 0.0));
  CHECK(r.steps_run == 3);
  const std::vector<float> after = snapshot(net.parameters());
  REQUIRE(before.size() == after.size());
  CHECK(std::memcmp(before.data(), after.data(),
                    before.size() * sizeof(float)) == 0);
}

TEST_CASE("a fixed batch is overfit within 200 steps") {
  // count == batch, so every step sees the same four triplets.
  SyntheticTranslationSource src(small_source(13, 4));
  CbtNet net{CbtNetConfig::toy()};
  net.init(7);
  TrainResult r = train(net, src, quick_config(200, 4, 7e-5));
  REQUIRE(r.steps_run == 200);
  REQUIRE(!r.aborted_non_finite);

  // 20-step moving average, sampled per window: raw Adam steps in dB scale
  // oscillate, the windowed trend has to fall monotonically.
  const size_t w = 20;
  int violations = 0;
  double prev_mean = 0.0;
  for (size_t b = 0; b + w <= r.curve.size(); b += w) {
    double mean = 0.0;
    for (size_t i = b; i < b + w; ++i) mean += r.curve[i].loss_db;
    mean /= double(w);
    if (b > 0 && !(mean < prev_mean)) ++violations;
    prev_mean = mean;
  }
  CHECK(violations == 0);
  CHECK(r.curve.back().loss_db < r.curve.front().loss_db);
}

TEST_CASE("checkpoints restore the exact model and optimizer") {
  const fs::path dir = fs::temp_directory_path() / "cbt_training_tests";
  fs::remove_all(dir);

  SyntheticTranslationSource src(small_source(21, 6));
  CbtNet net{CbtNetConfig::toy()};
  net.init(55);
  TrainConfig tc = quick_config(5, 2, 1e-4);
  tc.out_dir = dir.string();
  TrainResult r = train(net, src, tc);
  REQUIRE(r.steps_run == 5);
  REQUIRE(r.last_checkpoint == (dir / "last.cbtn").string());
  REQUIRE(fs::exists(r.last_checkpoint));

  LoadedCheckpoint back = load_checkpoint(r.last_checkpoint);
  CHECK(back.meta.step == 5);
  CHECK(back.meta.seed == tc.seed);
  REQUIRE(back.adam.has_value());
  CHECK(back.adam->step_count == 5);

  FrameTriplet probe = src.get(0);
  MvFieldSet live = predict_mv(net, probe);
  MvFieldSet loaded = predict_mv(back.net, probe);
  for (int size : {64, 32, 16, 8})
    CHECK(std::memcmp(live.field(size).ptr(), loaded.field(size).ptr(),
                      sizeof(float) * size_t(live.field(size).numel())) == 0);

  // Loss curve file: exact header, one row per step, steps in order.
  std::ifstream is(dir / "loss_curve.csv");
  REQUIRE(is.good());
  std::string header;
  std::getline(is, header);
  CHECK(header ==
        "step,loss_db,ms_ssim_64_p,ms_ssim_64_f,ms_ssim_32_p,ms_ssim_32_f,"
        "ms_ssim_16_p,ms_ssim_16_f,ms_ssim_8_p,ms_ssim_8_f");
  int rows = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ++rows;
    CHECK(line.substr(0, line.find(',')) == std::to_string(rows));
  }
  CHECK(rows == 5);
  fs::remove_all(dir);
}

TEST_CASE("non-finite gradients abort at the last good step") {
  const fs::path dir = fs::temp_directory_path() / "cbt_training_abort";
  fs::remove_all(dir);

  SyntheticTranslationSource src(small_source(33, 4));
  CbtNet net{CbtNetConfig::toy()};
  net.init(2);
  // First feature kernel: the NaN dies at the ReLU in the forward pass but
  // resurfaces through the batch-norm backward, so the loss stays finite and
  // the gradient check has to catch it.
  net.parameters()[0].data()[0] = std::numeric_limits<float>::quiet_NaN();

  TrainConfig tc = quick_config(10, 2, 1e-4);
  tc.out_dir = dir.string();
  TrainResult r = train(net, src, tc);
  CHECK(r.aborted_non_finite);
  CHECK(r.steps_run == 0);
  CHECK(r.curve.empty());
  REQUIRE(fs::exists(dir / "last.cbtn"));
  CHECK(load_checkpoint((dir / "last.cbtn").string()).meta.step == 0);
  fs::remove_all(dir);
}

TEST_CASE("exhaustive search on static frames is a perfect predictor") {
  StaticSource src(44);
  ValidationTable vt = validate_baseline(MatchAlgo::ES, 8, src, 2);
  CHECK(vt.triplets == 2);
  for (int si = 0; si < 4; ++si)
    for (int ci = 0; ci < 2; ++ci) {
      CHECK(vt.mad[si][ci] == 0.0);
      CHECK(vt.msssim[si][ci] > 1.0 - 1e-6);
    }
}

TEST_CASE("model validation and the csv layout") {
  StaticSource src(45);
  CbtNet net{CbtNetConfig::toy()};
  net.init(4);
  ValidationTable model = validate_model(net, src, 2);
  CHECK(model.triplets == 2);
  for (int si = 0; si < 4; ++si)
    for (int ci = 0; ci < 2; ++ci) {
      CHECK(std::isfinite(model.mad[si][ci]));
      CHECK(model.msssim[si][ci] > 0.0);
      CHECK(model.msssim[si][ci] <= 1.0 + 1e-9);
    }

  ValidationTable es = validate_baseline(MatchAlgo::ES, 8, src, 1);
  const fs::path dir = fs::temp_directory_path() / "cbt_training_tests_csv";
  fs::create_directories(dir);
  const fs::path csv = dir / "validation.csv";
  write_validation_csv(csv.string(), 4, {{"cbt", model}, {"es", es}});
  std::ifstream is(csv);
  REQUIRE(is.good());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header.find("mad_64_cbt") != std::string::npos);
  CHECK(header.find("mad_8_es") != std::string::npos);
  CHECK(header.find("msssim_32_cbt") != std::string::npos);
  CHECK(row.substr(0, 2) == "4,");
  CHECK(std::count(header.begin(), header.end(), ',') ==
        std::count(row.begin(), row.end(), ','));
  fs::remove_all(dir);
}
