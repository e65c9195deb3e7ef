#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cbt/checkpoint.hpp"
#include "cbt/model.hpp"

using namespace cbt;
namespace fs = std::filesystem;

namespace {

Tensor random_input(uint64_t seed, int n, int h, int w) {
  RandomSource rng(seed);
  Tensor x = Tensor::zeros({n, 3, h, w});
  for (auto& v : x.data()) v = static_cast<float>(rng.canonical());
  return x;
}

FrameTriplet noise_triplet(uint64_t seed, int w, int h) {
  RandomSource rng(seed);
  FrameTriplet t;
  t.layer_k = 4;
  t.orig_w = w;
  t.orig_h = h;
  for (LumaFrame* f : {&t.r_past, &t.q, &t.r_future}) {
    *f = LumaFrame::sized(w, h);
    for (auto& p : f->pix) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  }
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("parameter count at the default width") {
  CbtNet net{CbtNetConfig::defaults()};
  CHECK(net.param_count() == 1878148);
  CHECK(net.param_count() >= 957416);
  CHECK(net.param_count() <= 3829664);
}

TEST_CASE("config validation rejects even kernels and bad widths") {
  CbtNetConfig ok = CbtNetConfig::defaults();
  CHECK_NOTHROW(ok.validate());
  CHECK_NOTHROW(CbtNetConfig::toy().validate());

  CbtNetConfig bad = ok;
  bad.feat_kernel = 4;
  CHECK_THROWS(bad.validate());
  bad = ok;
  bad.pred_kernel = 2;
  CHECK_THROWS(bad.validate());
  bad = ok;
  bad.feat_channels[3] = 0;
  CHECK_THROWS(bad.validate());
  bad = ok;
  bad.feat_strides[0] = 3;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("stage input widths follow the concat wiring") {
  const auto s = CbtNetConfig::defaults().stage_input_channels();
  CHECK(s[0] == 192);
  CHECK(s[1] == 128 + 104 + 4);
  CHECK(s[2] == 128 + 104 + 4);
  CHECK(s[3] == 96 + 104 + 4);
}

TEST_CASE("forward emits one MV plane per block size") {
  CbtNet net{CbtNetConfig::toy()};
  net.init(42);
  Tensor x = random_input(7, 2, 128, 64);
  auto out = net.forward_graph(x, false);
  const int sizes[4] = {64, 32, 16, 8};
  for (int s = 0; s < 4; ++s) {
    REQUIRE(out.mv[size_t(s)].dims().size() == 4);
    CHECK(out.mv[size_t(s)].dim(0) == 2);
    CHECK(out.mv[size_t(s)].dim(1) == 4);
    CHECK(out.mv[size_t(s)].dim(2) == 128 / sizes[s]);
    CHECK(out.mv[size_t(s)].dim(3) == 64 / sizes[s]);
    for (float v : out.mv[size_t(s)].data()) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) <= 127.0f);
    }
  }
}

TEST_CASE("zeroing a stage's MV only disturbs later stages") {
  CbtNet net{CbtNetConfig::toy()};
  net.init(5);
  Tensor x = random_input(11, 1, 64, 64);
  auto base = net.forward_graph(x, false);

  net.zero_mv_into_next_stage = 2;
  auto cut = net.forward_graph(x, false);
  net.zero_mv_into_next_stage = 0;

  for (int s = 0; s < 2; ++s)
    CHECK(std::memcmp(cut.mv[size_t(s)].ptr(), base.mv[size_t(s)].ptr(),
                      sizeof(float) * size_t(base.mv[size_t(s)].numel())) == 0);
  for (int s = 2; s < 4; ++s) {
    double diff = 0.0;
    for (int64_t i = 0; i < base.mv[size_t(s)].numel(); ++i)
      diff += std::abs(double(cut.mv[size_t(s)].ptr()[i]) -
                       base.mv[size_t(s)].ptr()[i]);
    CHECK(diff > 0.0);
  }
}

TEST_CASE("named tensors carry the batch-norm running stats") {
  CbtNet net{CbtNetConfig::toy()};
  net.init(1);
  auto named = net.named_tensors();
  int64_t stats = 0, from_params = 0;
  const auto params = net.parameters();
  for (const auto& [name, t] : named) {
    if (name.find("running") != std::string::npos) ++stats;
    for (const auto& p : params)
      if (p.ptr() == t.ptr()) {
        ++from_params;
        break;
      }
  }
  CHECK(stats == 18);
  CHECK(from_params == int64_t(params.size()));
  CHECK(named.size() == params.size() + 18);
}

TEST_CASE("checkpoint round trip is byte stable") {
  const fs::path dir = fs::temp_directory_path() / "cbt_model_tests";
  fs::create_directories(dir);
  const fs::path a = dir / "a.cbtn";
  const fs::path b = dir / "b.cbtn";

  CbtNet net{CbtNetConfig::toy()};
  net.init(99);
  CheckpointMeta meta;
  meta.seed = 99;
  meta.step = 1234;
  meta.layer_k = 3;
  meta.width = 128;
  meta.height = 64;

  auto params = net.parameters();
  AdamStateF adam;
  adam.init(params);
  adam.step_count = 7;
  for (auto& mv : adam.m)
    for (size_t i = 0; i < mv.size(); ++i) mv[i] = 0.001f * float(i % 13);
  for (auto& vv : adam.v)
    for (size_t i = 0; i < vv.size(); ++i) vv[i] = 0.002f * float(i % 7);

  save_checkpoint(a.string(), net, meta, &adam);
  LoadedCheckpoint back = load_checkpoint(a.string());
  CHECK(back.meta.seed == meta.seed);
  CHECK(back.meta.step == meta.step);
  CHECK(back.meta.layer_k == meta.layer_k);
  CHECK(back.meta.width == meta.width);
  CHECK(back.meta.height == meta.height);
  CHECK(back.config.up_feat_channels == CbtNetConfig::toy().up_feat_channels);
  CHECK(back.config.feat_channels == CbtNetConfig::toy().feat_channels);

  auto orig_named = net.named_tensors();
  auto back_named = back.net.named_tensors();
  REQUIRE(orig_named.size() == back_named.size());
  for (size_t i = 0; i < orig_named.size(); ++i) {
    CHECK(orig_named[i].first == back_named[i].first);
    REQUIRE(orig_named[i].second.numel() == back_named[i].second.numel());
    CHECK(std::memcmp(orig_named[i].second.ptr(), back_named[i].second.ptr(),
                      sizeof(float) *
                          size_t(orig_named[i].second.numel())) == 0);
  }

  REQUIRE(back.adam.has_value());
  CHECK(back.adam->step_count == 7);
  REQUIRE(back.adam->m.size() == adam.m.size());
  for (size_t i = 0; i < adam.m.size(); ++i) {
    CHECK(back.adam->m[i] == adam.m[i]);
    CHECK(back.adam->v[i] == adam.v[i]);
  }

  save_checkpoint(b.string(), back.net, back.meta, &*back.adam);
  CHECK(slurp(a) == slurp(b));

  // Without the optimizer block the file shrinks and loads clean.
  save_checkpoint(b.string(), net, meta, nullptr);
  LoadedCheckpoint lean = load_checkpoint(b.string());
  CHECK(!lean.adam.has_value());
  CHECK(slurp(b).size() < slurp(a).size());

  fs::remove(a);
  fs::remove(b);
}

TEST_CASE("corrupt checkpoints are refused") {
  const fs::path dir = fs::temp_directory_path() / "cbt_model_tests";
  fs::create_directories(dir);
  const fs::path p = dir / "corrupt.cbtn";

  CbtNet net{CbtNetConfig::toy()};
  net.init(3);
  save_checkpoint(p.string(), net, {});
  std::string bytes = slurp(p);

  {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << "XXXX" << bytes.substr(4);
  }
  CHECK_THROWS(load_checkpoint(p.string()));

  {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS(load_checkpoint(p.string()));
  fs::remove(p);
}

TEST_CASE("predict_mv fills every field of the pyramid") {
  CbtNet net{CbtNetConfig::toy()};
  net.init(21);
  FrameTriplet t = noise_triplet(77, 128, 64);
  MvFieldSet mv = predict_mv(net, t);
  CHECK(mv.frame_w == 128);
  CHECK(mv.frame_h == 64);
  CHECK(mv.m64.dim(0) == 1);
  CHECK(mv.m64.dim(1) == 2);
  CHECK(mv.m8.dim(0) == 8);
  CHECK(mv.m8.dim(1) == 16);
  for (int size : {64, 32, 16, 8})
    for (float v : mv.field(size).data()) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) <= 127.0f);
    }

  // Same checkpoint, same input: inference is a pure function.
  MvFieldSet again = predict_mv(net, t);
  for (int size : {64, 32, 16, 8})
    CHECK(std::memcmp(mv.field(size).ptr(), again.field(size).ptr(),
                      sizeof(float) * size_t(mv.field(size).numel())) == 0);
}
