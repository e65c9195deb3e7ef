#include "cbt/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "cbt/common.hpp"

namespace cbt {
namespace {

constexpr char kMagic[4] = {'C', 'B', 'T', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  CBT_REQUIRE(is.gcount() == 4, "checkpoint truncated reading ", what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is, const std::string& what) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  CBT_REQUIRE(is.gcount() == 8, "checkpoint truncated reading ", what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

float get_f32(std::istream& is, const std::string& what) {
  uint32_t u = get_u32(is, what);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

void put_f32_array(std::ostream& os, const float* p, int64_t n) {
  for (int64_t i = 0; i < n; ++i) put_f32(os, p[i]);
}

void get_f32_array(std::istream& is, float* p, int64_t n,
                   const std::string& what) {
  for (int64_t i = 0; i < n; ++i) p[i] = get_f32(is, what);
}

}  // namespace

void save_checkpoint(const std::string& path, const CbtNet& net,
                     const CheckpointMeta& meta, const AdamStateF* adam) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    CBT_REQUIRE(os.good(), "cannot open ", tmp, " for writing");

    os.write(kMagic, 4);
    put_u32(os, kVersion);

    const CbtNetConfig& cfg = net.config();
    for (int i = 0; i < 9; ++i) put_u32(os, cfg.feat_channels[i]);
    for (int i = 0; i < 9; ++i) put_u32(os, cfg.feat_strides[i]);
    put_u32(os, cfg.feat_kernel);
    put_u32(os, cfg.pred_kernel);
    put_u32(os, cfg.up_feat_channels);
    put_f32(os, cfg.mv_clip);

    put_u64(os, meta.seed);
    put_u64(os, meta.step);
    put_u32(os, meta.layer_k);
    put_u32(os, meta.width);
    put_u32(os, meta.height);

    auto named = net.named_tensors();
    put_u32(os, static_cast<uint32_t>(named.size()));
    for (auto& [name, t] : named) {
      put_u32(os, static_cast<uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(os, static_cast<uint32_t>(t.ndim()));
      for (int d = 0; d < t.ndim(); ++d) put_u32(os, t.dim(d));
      put_f32_array(os, t.ptr(), t.numel());
    }

    if (adam != nullptr) {
      auto params = net.parameters();
      CBT_REQUIRE(adam->matches(params),
                  "optimizer state does not match network parameters");
      put_u32(os, 1);
      put_u64(os, adam->step_count);
      put_u32(os, static_cast<uint32_t>(params.size()));
      for (size_t i = 0; i < params.size(); ++i) {
        put_u64(os, adam->m[i].size());
        put_f32_array(os, adam->m[i].data(),
                      static_cast<int64_t>(adam->m[i].size()));
        put_f32_array(os, adam->v[i].data(),
                      static_cast<int64_t>(adam->v[i].size()));
      }
    } else {
      put_u32(os, 0);
    }

    os.flush();
    CBT_REQUIRE(os.good(), "write failed for ", tmp);
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  CBT_REQUIRE(is.good(), "cannot open checkpoint ", path);

  char magic[4];
  is.read(magic, 4);
  CBT_REQUIRE(is.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0,
              path, " is not a checkpoint file");
  const uint32_t ver = get_u32(is, "version");
  CBT_REQUIRE(ver == kVersion, "unsupported checkpoint version ", ver);

  CbtNetConfig cfg;
  for (int i = 0; i < 9; ++i)
    cfg.feat_channels[i] = static_cast<int>(get_u32(is, "feat_channels"));
  for (int i = 0; i < 9; ++i)
    cfg.feat_strides[i] = static_cast<int>(get_u32(is, "feat_strides"));
  cfg.feat_kernel = static_cast<int>(get_u32(is, "feat_kernel"));
  cfg.pred_kernel = static_cast<int>(get_u32(is, "pred_kernel"));
  cfg.up_feat_channels = static_cast<int>(get_u32(is, "up_feat_channels"));
  cfg.mv_clip = get_f32(is, "mv_clip");

  CheckpointMeta meta;
  meta.seed = get_u64(is, "seed");
  meta.step = get_u64(is, "step");
  meta.layer_k = get_u32(is, "layer_k");
  meta.width = get_u32(is, "width");
  meta.height = get_u32(is, "height");

  LoadedCheckpoint lc{cfg, meta, CbtNet(cfg), std::nullopt};

  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : lc.net.named_tensors()) by_name.emplace(name, t);

  const uint32_t n_tensors = get_u32(is, "tensor count");
  CBT_REQUIRE(n_tensors == by_name.size(), "checkpoint holds ", n_tensors,
              " tensors, network expects ", by_name.size());
  for (uint32_t ti = 0; ti < n_tensors; ++ti) {
    const uint32_t name_len = get_u32(is, "tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    CBT_REQUIRE(is.gcount() == static_cast<std::streamsize>(name_len),
                "checkpoint truncated reading tensor name");
    auto it = by_name.find(name);
    CBT_REQUIRE(it != by_name.end(), "unknown tensor '", name,
                "' in checkpoint");
    Tensor& dst = it->second;
    const uint32_t ndim = get_u32(is, name + " ndim");
    CBT_REQUIRE(static_cast<int>(ndim) == dst.ndim(), "tensor '", name,
                "' rank mismatch");
    for (uint32_t d = 0; d < ndim; ++d) {
      const uint32_t dim = get_u32(is, name + " dims");
      CBT_REQUIRE(static_cast<int>(dim) == dst.dim(static_cast<int>(d)),
                  "tensor '", name, "' shape mismatch");
    }
    get_f32_array(is, dst.ptr(), dst.numel(), name + " data");
  }

  const uint32_t has_adam = get_u32(is, "optimizer flag");
  if (has_adam == 1) {
    auto params = lc.net.parameters();
    AdamStateF st;
    st.init(params);
    st.step_count = get_u64(is, "optimizer step count");
    const uint32_t np = get_u32(is, "optimizer tensor count");
    CBT_REQUIRE(np == params.size(), "optimizer state holds ", np,
                " tensors, network expects ", params.size());
    for (uint32_t i = 0; i < np; ++i) {
      const uint64_t len = get_u64(is, "optimizer slot length");
      CBT_REQUIRE(len == st.m[i].size(), "optimizer slot ", i,
                  " length mismatch");
      get_f32_array(is, st.m[i].data(), static_cast<int64_t>(len),
                    "optimizer m");
      get_f32_array(is, st.v[i].data(), static_cast<int64_t>(len),
                    "optimizer v");
    }
    lc.adam = std::move(st);
  } else {
    CBT_REQUIRE(has_adam == 0, "bad optimizer flag ", has_adam);
  }

  return lc;
}

}  // namespace cbt
