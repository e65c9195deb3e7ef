#include "cbt/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cbt/checkpoint.hpp"
#include "cbt/common.hpp"
#include "cbt/ops.hpp"
#include "cbt/quality.hpp"
#include "cbt/warp.hpp"

namespace cbt {

DiskTripletSource::DiskTripletSource(std::vector<ManifestEntry> manifest,
                                     std::vector<TripletRecord> records)
    : records_(std::move(records)) {
  for (auto& e : manifest) by_id_.emplace(e.id, std::move(e));
  for (const auto& r : records_)
    CBT_REQUIRE(by_id_.count(r.id), "record references unknown content '",
                r.id, "'");
}

FrameTriplet DiskTripletSource::get(size_t idx) {
  const TripletRecord& r = records_.at(idx);
  auto it = readers_.find(r.id);
  if (it == readers_.end()) {
    const ManifestEntry& e = by_id_.at(r.id);
    it = readers_
             .emplace(r.id, std::make_unique<VideoReader>(
                                e.path, e.format, e.width, e.height, e.frames))
             .first;
  }
  return load_triplet(*it->second, r);
}

namespace {

FrameTriplet crop_triplet(const FrameTriplet& t, int r0, int c0, int size) {
  auto crop = [&](const LumaFrame& f) {
    LumaFrame out = LumaFrame::sized(size, size);
    for (int r = 0; r < size; ++r)
      std::copy_n(&f.pix[static_cast<size_t>(r0 + r) * f.w + c0], size,
                  &out.pix[static_cast<size_t>(r) * size]);
    return out;
  };
  FrameTriplet out;
  out.r_past = crop(t.r_past);
  out.q = crop(t.q);
  out.r_future = crop(t.r_future);
  out.layer_k = t.layer_k;
  out.orig_w = size;
  out.orig_h = size;
  return out;
}

struct ForwardArtifacts {
  CbtLoss<float> loss;
};

// One training graph: model stages -> per-(reference,size) warps -> loss.
ForwardArtifacts forward_loss(CbtNet& net, const TripletBatch& batch,
                              bool training) {
  auto so = net.forward_graph(batch.input01, training);
  std::array<std::array<Tensor, 4>, 2> q_hat;
  for (int c = 0; c < 2; ++c) {
    const Tensor& ref = c == 0 ? batch.ref_p : batch.ref_f;
    for (int si = 0; si < 4; ++si) {
      Tensor mv_c = slice_channels(so.mv[si], 2 * c, 2);
      q_hat[c][si] = block_warp(ref, mv_c, MvFieldSet::kSizes[si]);
    }
  }
  ForwardArtifacts fa;
  fa.loss = cbt_loss(batch.q, q_hat, batch.orig_h, batch.orig_w);
  return fa;
}

bool grads_finite(const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    if (!all_finite(p.node()->grad.data(),
                    static_cast<int64_t>(p.node()->grad.size())))
      return false;
  }
  return true;
}

}  // namespace

TrainResult train(CbtNet& net, TripletSource& data, const TrainConfig& cfg,
                  TripletSource* val) {
  CBT_REQUIRE(data.size() > 0, "training set is empty");
  CBT_REQUIRE(cfg.batch >= 1, "batch size must be >= 1");
  if (cfg.crop_min > 0) {
    CBT_REQUIRE(cfg.crop_min % 64 == 0 && cfg.crop_max % 64 == 0 &&
                    cfg.crop_min <= cfg.crop_max,
                "crop bounds must be 64-multiples with min <= max");
  }

  TrainResult res;
  RandomSource rs(cfg.seed);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  rs.shuffle(order);
  size_t cursor = 0;

  auto params = net.parameters();
  net.set_requires_grad(true);
  AdamStateF adam;
  adam.init(params);
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  const bool files = !cfg.out_dir.empty();
  if (files) std::filesystem::create_directories(cfg.out_dir);
  const std::string last_path =
      files ? cfg.out_dir + "/last.cbtn" : std::string();
  const std::string best_path =
      files ? cfg.out_dir + "/best.cbtn" : std::string();

  CheckpointMeta meta;
  meta.seed = cfg.seed;
  meta.layer_k = static_cast<uint32_t>(cfg.layer_k);
  auto save_last = [&](int64_t step) {
    if (!files) return;
    meta.step = static_cast<uint64_t>(step);
    save_checkpoint(last_path, net, meta, &adam);
    res.last_checkpoint = last_path;
  };

  for (int64_t step = 1; step <= cfg.max_steps; ++step) {
    // Assemble the batch; one crop size per step, offsets per sample.
    std::vector<FrameTriplet> bt;
    bt.reserve(static_cast<size_t>(cfg.batch));
    int crop = 0;
    if (cfg.crop_min > 0)
      crop = 64 * static_cast<int>(rs.uniform_int(cfg.crop_min / 64,
                                                  cfg.crop_max / 64));
    for (int i = 0; i < cfg.batch; ++i) {
      if (cursor == order.size()) {
        rs.shuffle(order);
        cursor = 0;
      }
      FrameTriplet t = data.get(order[cursor++]);
      if (crop > 0) {
        const int cs = std::min({crop, t.orig_h / 64 * 64, t.orig_w / 64 * 64});
        CBT_REQUIRE(cs >= 64, "frame ", t.orig_w, "x", t.orig_h,
                    " too small for 64-aligned crops");
        const int r0 =
            static_cast<int>(rs.uniform_int(0, t.orig_h - cs));
        const int c0 =
            static_cast<int>(rs.uniform_int(0, t.orig_w - cs));
        t = crop_triplet(t, r0, c0, cs);
      }
      bt.push_back(std::move(t));
    }
    std::vector<const FrameTriplet*> ptrs;
    for (const auto& t : bt) ptrs.push_back(&t);
    TripletBatch batch = make_batch(ptrs);

    net.zero_grads();
    ForwardArtifacts fa = forward_loss(net, batch, true);
    const double loss = fa.loss.total.item();
    if (!std::isfinite(loss)) {
      save_last(step - 1);
      res.aborted_non_finite = true;
      break;
    }
    fa.loss.total.backward();
    if (!grads_finite(params)) {
      save_last(step - 1);
      res.aborted_non_finite = true;
      break;
    }
    adam_step(params, adam, acfg);

    StepRecord rec;
    rec.step = step;
    rec.loss_db = loss;
    for (int c = 0; c < 2; ++c)
      for (int si = 0; si < 4; ++si) rec.ms[c][si] = fa.loss.ms[c][si];
    res.curve.push_back(rec);
    res.steps_run = step;

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      save_last(step);

    if (val != nullptr && cfg.val_every > 0 && step % cfg.val_every == 0) {
      ValidationTable vt = validate_model(net, *val);
      const double m = vt.mean_mad();
      if (res.best_val_step < 0 || m < res.best_val_mad) {
        res.best_val_mad = m;
        res.best_val_step = step;
        if (files) {
          meta.step = static_cast<uint64_t>(step);
          save_checkpoint(best_path, net, meta, nullptr);
          res.best_checkpoint = best_path;
        }
      }
    }
  }

  if (!res.aborted_non_finite) save_last(res.steps_run);
  if (files) write_loss_curve_csv(cfg.out_dir + "/loss_curve.csv", res.curve);
  return res;
}

namespace {

void accumulate_validation(ValidationTable& vt, const FrameTriplet& t,
                           const MvFieldSet& mvs) {
  PredictionSet ps = predict_frames(t, mvs);
  const int oh = t.orig_h, ow = t.orig_w;
  std::vector<float> q_crop(static_cast<size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c)
      q_crop[static_cast<size_t>(r) * ow + c] =
          static_cast<float>(t.q.at(r, c));
  std::vector<float> p_crop(static_cast<size_t>(oh) * ow);
  for (int ci = 0; ci < 2; ++ci)
    for (int si = 0; si < 4; ++si) {
      const std::vector<float>& full = ps.q_hat[ci][si];
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c)
          p_crop[static_cast<size_t>(r) * ow + c] =
              full[static_cast<size_t>(r) * t.width() + c];
      vt.mad[si][ci] +=
          mad(p_crop.data(), q_crop.data(), static_cast<int64_t>(p_crop.size()));
      Tensor a = Tensor::from_data({1, 1, oh, ow}, p_crop);
      Tensor b = Tensor::from_data({1, 1, oh, ow}, q_crop);
      vt.msssim[si][ci] += static_cast<double>(ms_ssim(a, b).item());
    }
  ++vt.triplets;
}

void finish_validation(ValidationTable& vt) {
  CBT_REQUIRE(vt.triplets > 0, "validation set is empty");
  for (int si = 0; si < 4; ++si)
    for (int ci = 0; ci < 2; ++ci) {
      vt.mad[si][ci] /= static_cast<double>(vt.triplets);
      vt.msssim[si][ci] /= static_cast<double>(vt.triplets);
    }
}

}  // namespace

ValidationTable validate_model(CbtNet& net, TripletSource& data,
                               size_t limit) {
  const size_t n = limit > 0 ? std::min(limit, data.size()) : data.size();
  ValidationTable vt;
  for (size_t i = 0; i < n; ++i) {
    FrameTriplet t = data.get(i);
    MvFieldSet mvs = predict_mv(net, t);
    accumulate_validation(vt, t, mvs);
  }
  finish_validation(vt);
  return vt;
}

ValidationTable validate_baseline(MatchAlgo algo, int range,
                                  TripletSource& data, size_t limit) {
  const size_t n = limit > 0 ? std::min(limit, data.size()) : data.size();
  ValidationTable vt;
  for (size_t i = 0; i < n; ++i) {
    FrameTriplet t = data.get(i);
    MvFieldSet mvs = run_baseline(t, algo, range);
    accumulate_validation(vt, t, mvs);
  }
  finish_validation(vt);
  return vt;
}

void write_loss_curve_csv(const std::string& path,
                          const std::vector<StepRecord>& curve) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    CBT_REQUIRE(os.good(), "cannot open ", tmp, " for writing");
    os << "step,loss_db";
    for (int si = 0; si < 4; ++si)
      for (const char* c : {"p", "f"})
        os << ",ms_ssim_" << MvFieldSet::kSizes[si] << "_" << c;
    os << "\n";
    os.precision(10);
    for (const auto& r : curve) {
      os << r.step << "," << r.loss_db;
      for (int si = 0; si < 4; ++si)
        for (int c = 0; c < 2; ++c) os << "," << r.ms[c][si];
      os << "\n";
    }
    os.flush();
    CBT_REQUIRE(os.good(), "write failed for ", tmp);
  }
  std::filesystem::rename(tmp, path);
}

void write_validation_csv(
    const std::string& path, int layer_k,
    const std::vector<std::pair<std::string, ValidationTable>>& methods) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    CBT_REQUIRE(os.good(), "cannot open ", tmp, " for writing");
    os << "layer";
    for (int si = 0; si < 4; ++si)
      for (const auto& [name, vt] : methods)
        os << ",mad_" << MvFieldSet::kSizes[si] << "_" << name;
    for (int si = 0; si < 4; ++si)
      for (const auto& [name, vt] : methods)
        os << ",msssim_" << MvFieldSet::kSizes[si] << "_" << name;
    os << "\n" << layer_k;
    os.precision(10);
    for (int si = 0; si < 4; ++si)
      for (const auto& [name, vt] : methods) os << "," << vt.mad_avg(si);
    for (int si = 0; si < 4; ++si)
      for (const auto& [name, vt] : methods)
        os << "," << (vt.msssim[si][0] + vt.msssim[si][1]) / 2.0;
    os << "\n";
    os.flush();
    CBT_REQUIRE(os.good(), "write failed for ", tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace cbt
