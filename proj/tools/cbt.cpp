#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "cbt/block_match.hpp"
#include "cbt/checkpoint.hpp"
#include "cbt/dataset.hpp"
#include "cbt/model.hpp"
#include "cbt/mv_codec.hpp"
#include "cbt/quality.hpp"
#include "cbt/selftest.hpp"
#include "cbt/synthetic.hpp"
#include "cbt/training.hpp"
#include "cbt/warp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    CBT_REQUIRE(os.good(), "cannot open ", tmp, " for writing");
    os << text;
    CBT_REQUIRE(os.good(), "write to ", tmp, " failed");
  }
  fs::rename(tmp, path);
}

// Reproducibility record next to the primary artifacts: full resolved
// config, seed, version. Deliberately free of timestamps so identical
// invocations stay byte-identical.
void write_run_record(const std::string& path, const std::string& command,
                      const json& config) {
  json j;
  j["tool"] = "cbt";
  j["version"] = kVersion;
  j["command"] = command;
  j["config"] = config;
  write_text_atomic(path, j.dump(2) + "\n");
}

void apply_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

void write_pgm(const std::string& path, const cbt::LumaFrame& f) {
  std::string body = cbt::cat("P5\n", f.w, " ", f.h, "\n255\n");
  body.append(reinterpret_cast<const char*>(f.pix.data()), f.pix.size());
  write_text_atomic(path, body);
}

cbt::LumaFrame frame_from_floats(const std::vector<float>& v, int w, int h) {
  cbt::LumaFrame f = cbt::LumaFrame::sized(w, h);
  for (size_t i = 0; i < f.pix.size(); ++i)
    f.pix[i] = static_cast<uint8_t>(
        std::lround(std::clamp(v[i], 0.0f, 255.0f)));
  return f;
}

struct VideoArgs {
  std::string path;
  std::string format = "y4m";
  int width = 0, height = 0;

  void attach(CLI::App* cmd, const std::string& flag,
              const std::string& what) {
    cmd->add_option(flag, path, what)->required();
    cmd->add_option(flag + "-format", format, "container: y4m or raw 4:2:0")
        ->check(CLI::IsMember({"y4m", "raw"}));
    cmd->add_option(flag + "-width", width, "frame width (raw only)");
    cmd->add_option(flag + "-height", height, "frame height (raw only)");
  }

  std::unique_ptr<cbt::VideoReader> open() const {
    return std::make_unique<cbt::VideoReader>(path, format, width, height);
  }
};

// Three frames -> resampled, padded triplet; mirrors the dataset loader for
// ad-hoc frame indices.
cbt::FrameTriplet triplet_from_video(cbt::VideoReader& reader,
                                     const std::vector<int>& frames,
                                     const std::string& resolution) {
  CBT_REQUIRE(frames.size() == 3, "--frames wants exactly three indices");
  const int d = frames[1] - frames[0];
  CBT_REQUIRE(d >= 1 && frames[2] - frames[1] == d,
              "--frames must be evenly spaced, got ", frames[0], ",",
              frames[1], ",", frames[2]);
  int layer_k = 4;
  switch (d) {
    case 1: layer_k = 4; break;
    case 2: layer_k = 3; break;
    case 4: layer_k = 2; break;
    case 8: layer_k = 1; break;
    default:
      throw cbt::Error(cbt::cat("frame spacing ", d,
                                " is not a pyramid distance (1,2,4,8)"));
  }

  int out_w = reader.width(), out_h = reader.height();
  if (!resolution.empty()) {
    auto [w, h] = cbt::resolution_dims(resolution);
    out_w = w;
    out_h = h;
  }

  cbt::FrameTriplet t;
  t.layer_k = layer_k;
  t.orig_w = out_w;
  t.orig_h = out_h;
  cbt::LumaFrame* dst[3] = {&t.r_past, &t.q, &t.r_future};
  for (int i = 0; i < 3; ++i) {
    cbt::LumaFrame f = reader.read_frame(frames[static_cast<size_t>(i)]);
    if (f.w != out_w || f.h != out_h) f = cbt::lanczos_resize(f, out_w, out_h);
    *dst[i] = cbt::pad_to_multiple(f);
  }
  return t;
}

struct TrainOpts {
  std::string manifest, index, out_dir, resolution = "1080p";
  int layer = 4, batch = 8, steps = 1000, val_every = 0, ckpt_every = 0;
  int crop_min = 0, crop_max = 0, val_limit = 0;
  double lr = 1e-4;
  uint64_t seed = 1;
  bool toy = false;
  int synthetic = 0;
  int synthetic_shift = 8;
};

int run_train(const TrainOpts& o) {
  std::unique_ptr<cbt::TripletSource> data, val;
  if (o.synthetic > 0) {
    cbt::SyntheticConfig sc;
    sc.layer_k = o.layer;
    sc.max_shift = o.synthetic_shift;
    sc.seed = o.seed;
    sc.count = static_cast<size_t>(o.synthetic);
    data = std::make_unique<cbt::SyntheticTranslationSource>(sc);
    if (o.val_every > 0) {
      cbt::SyntheticConfig vc = sc;
      vc.seed = o.seed + 9001;
      vc.count = o.val_limit > 0 ? static_cast<size_t>(o.val_limit) : 200;
      val = std::make_unique<cbt::SyntheticTranslationSource>(vc);
    }
  } else {
    CBT_REQUIRE(!o.manifest.empty() && !o.index.empty(),
                "train needs --manifest and --index (or --synthetic N)");
    auto manifest = cbt::read_manifest(o.manifest);
    auto records = cbt::read_triplet_index(o.index);
    auto train_recs =
        cbt::filter_records(records, manifest, "train", o.layer, o.resolution);
    CBT_REQUIRE(!train_recs.empty(), "no train triplets for layer ", o.layer,
                " at ", o.resolution);
    data = std::make_unique<cbt::DiskTripletSource>(manifest, train_recs);
    if (o.val_every > 0) {
      auto val_recs =
          cbt::filter_records(records, manifest, "val", o.layer, o.resolution);
      CBT_REQUIRE(!val_recs.empty(), "no val triplets for layer ", o.layer,
                  " at ", o.resolution);
      val = std::make_unique<cbt::DiskTripletSource>(manifest, val_recs);
    }
  }

  cbt::CbtNet net(o.toy ? cbt::CbtNetConfig::toy() : cbt::CbtNetConfig::defaults());
  net.init(o.seed);

  cbt::TrainConfig tc;
  tc.layer_k = o.layer;
  tc.resolution = o.resolution;
  tc.batch = o.batch;
  tc.lr = o.lr;
  tc.max_steps = o.steps;
  tc.val_every = o.val_every;
  tc.checkpoint_every = o.ckpt_every;
  tc.seed = o.seed;
  tc.crop_min = o.crop_min;
  tc.crop_max = o.crop_max;
  tc.out_dir = o.out_dir;

  fs::create_directories(o.out_dir);
  write_run_record(
      o.out_dir + "/run_train.json", "train",
      json{{"manifest", o.manifest}, {"index", o.index},
           {"layer", o.layer}, {"resolution", o.resolution},
           {"batch", o.batch}, {"lr", o.lr}, {"steps", o.steps},
           {"val_every", o.val_every}, {"checkpoint_every", o.ckpt_every},
           {"crop_min", o.crop_min}, {"crop_max", o.crop_max},
           {"seed", o.seed}, {"toy", o.toy}, {"synthetic", o.synthetic},
           {"synthetic_shift", o.synthetic_shift},
           {"params", net.param_count()}});

  cbt::TrainResult res = cbt::train(net, *data, tc, val.get());
  std::cout << "steps " << res.steps_run;
  if (!res.curve.empty())
    std::cout << ", final loss " << res.curve.back().loss_db << " dB";
  if (res.best_val_step >= 0)
    std::cout << ", best val MAD " << res.best_val_mad << " @ step "
              << res.best_val_step;
  std::cout << "\n";
  if (res.aborted_non_finite) {
    std::cerr << "error: training aborted on non-finite loss/gradients; last "
                 "good checkpoint kept\n";
    return 1;
  }
  return 0;
}

struct ValidateOpts {
  std::string checkpoint, manifest, index, out_dir, resolution = "1080p";
  std::vector<std::string> algos;
  int layer = 4, range = 127, limit = 0;
  int synthetic = 0;
  int synthetic_shift = 8;
  uint64_t seed = 1;
};

int run_validate(const ValidateOpts& o) {
  std::unique_ptr<cbt::TripletSource> data;
  if (o.synthetic > 0) {
    cbt::SyntheticConfig sc;
    sc.layer_k = o.layer;
    sc.max_shift = o.synthetic_shift;
    sc.seed = o.seed;
    sc.count = static_cast<size_t>(o.synthetic);
    data = std::make_unique<cbt::SyntheticTranslationSource>(sc);
  } else {
    CBT_REQUIRE(!o.manifest.empty() && !o.index.empty(),
                "validate needs --manifest and --index (or --synthetic N)");
    auto manifest = cbt::read_manifest(o.manifest);
    auto records = cbt::read_triplet_index(o.index);
    auto val_recs =
        cbt::filter_records(records, manifest, "val", o.layer, o.resolution);
    CBT_REQUIRE(!val_recs.empty(), "no val triplets for layer ", o.layer,
                " at ", o.resolution);
    data = std::make_unique<cbt::DiskTripletSource>(manifest, val_recs);
  }

  std::vector<std::string> algos = o.algos;
  if (algos.empty()) {
    if (!o.checkpoint.empty()) algos.push_back("cbt");
    algos.insert(algos.end(), {"es", "ds", "arps"});
  }

  std::vector<std::pair<std::string, cbt::ValidationTable>> methods;
  for (const auto& name : algos) {
    if (name == "cbt") {
      CBT_REQUIRE(!o.checkpoint.empty(), "algo cbt needs --checkpoint");
      cbt::LoadedCheckpoint lc = cbt::load_checkpoint(o.checkpoint);
      methods.emplace_back(
          name, cbt::validate_model(lc.net, *data,
                                    static_cast<size_t>(o.limit)));
    } else {
      methods.emplace_back(
          name, cbt::validate_baseline(cbt::algo_from_name(name), o.range,
                                       *data, static_cast<size_t>(o.limit)));
    }
  }

  fs::create_directories(o.out_dir);
  cbt::write_validation_csv(o.out_dir + "/validation.csv", o.layer, methods);
  write_run_record(
      o.out_dir + "/run_validate.json", "validate",
      json{{"checkpoint", o.checkpoint}, {"manifest", o.manifest},
           {"index", o.index}, {"layer", o.layer},
           {"resolution", o.resolution}, {"algos", algos},
           {"range", o.range}, {"limit", o.limit}, {"seed", o.seed},
           {"synthetic", o.synthetic}});
  for (const auto& [name, table] : methods)
    std::cout << name << ": mean MAD " << table.mean_mad() << " over "
              << table.triplets << " triplets\n";
  return 0;
}

struct PredictOpts {
  VideoArgs video;
  std::string checkpoint, out_dir, resolution;
  std::vector<int> frames;
};

int run_predict(const PredictOpts& o) {
  auto reader = o.video.open();
  cbt::FrameTriplet t = triplet_from_video(*reader, o.frames, o.resolution);
  cbt::LoadedCheckpoint lc = cbt::load_checkpoint(o.checkpoint);
  cbt::MvFieldSet mvs = cbt::predict_mv(lc.net, t);

  fs::create_directories(o.out_dir);
  cbt::write_field_file(o.out_dir + "/mv.cbmf", mvs);
  cbt::PredictionSet preds = cbt::predict_frames(t, mvs);
  for (int c = 0; c < 2; ++c)
    for (int si = 0; si < 4; ++si) {
      const std::string path =
          cbt::cat(o.out_dir, "/pred_", c == 0 ? "p" : "f", "_",
                   cbt::MvFieldSet::kSizes[si], ".pgm");
      write_pgm(path, frame_from_floats(
                          preds.q_hat[c][si], preds.w, preds.h));
    }
  write_run_record(
      o.out_dir + "/run_predict.json", "predict",
      json{{"checkpoint", o.checkpoint}, {"video", o.video.path},
           {"format", o.video.format}, {"frames", o.frames},
           {"resolution", o.resolution},
           {"layer", t.layer_k}, {"width", t.width()},
           {"height", t.height()}});
  std::cout << "wrote MV fields and 8 predicted frames to " << o.out_dir
            << "\n";
  return 0;
}

struct MatchOpts {
  VideoArgs video;
  std::string algo = "es", out_dir, resolution;
  std::vector<int> frames;
  int range = 127;
};

int run_match(const MatchOpts& o) {
  auto reader = o.video.open();
  cbt::FrameTriplet t = triplet_from_video(*reader, o.frames, o.resolution);
  const cbt::MatchAlgo algo = cbt::algo_from_name(o.algo);

  cbt::BaselineReport report;
  cbt::MvFieldSet mvs = cbt::run_baseline(t, algo, o.range, &report);

  fs::create_directories(o.out_dir);
  cbt::write_field_file(o.out_dir + "/mv.cbmf", mvs);

  // Per-block SAD table, one row per (size, reference, block).
  std::ostringstream sad;
  sad << "size,ref,by,bx,u,v,sad\n";
  for (int c = 0; c < 2; ++c) {
    const cbt::LumaFrame& ref = c == 0 ? t.r_past : t.r_future;
    for (int size : cbt::MvFieldSet::kSizes) {
      cbt::SearchSpec spec{size, o.range};
      cbt::MotionField f = algo == cbt::MatchAlgo::ES
                               ? cbt::es_search(t.q, ref, spec)
                               : algo == cbt::MatchAlgo::DS
                                     ? cbt::ds_search(t.q, ref, spec)
                                     : cbt::arps_search(t.q, ref, spec);
      for (int by = 0; by < f.bh; ++by)
        for (int bx = 0; bx < f.bw; ++bx) {
          const int i = f.idx(by, bx);
          sad << size << ',' << c << ',' << by << ',' << bx << ','
              << f.u[static_cast<size_t>(i)] << ','
              << f.v[static_cast<size_t>(i)] << ','
              << f.sad[static_cast<size_t>(i)] << '\n';
        }
    }
  }
  write_text_atomic(o.out_dir + "/sad.csv", sad.str());

  std::ostringstream timing;
  timing << "size,ref,seconds\n";
  for (const auto& inv : report.invocations)
    timing << inv.block << ',' << inv.ref << ',' << inv.seconds << '\n';
  write_text_atomic(o.out_dir + "/timing.csv", timing.str());

  write_run_record(
      o.out_dir + "/run_match.json", "match",
      json{{"video", o.video.path}, {"format", o.video.format},
           {"frames", o.frames}, {"algo", o.algo}, {"range", o.range},
           {"resolution", o.resolution}});
  std::cout << o.algo << " total " << report.total_seconds << " s; share by "
            << "size 64/32/16/8: " << report.size_share[0] << "/"
            << report.size_share[1] << "/" << report.size_share[2] << "/"
            << report.size_share[3] << "\n";
  return 0;
}

int run_export(const std::string& in, const std::string& out) {
  cbt::MvFieldSet fields = cbt::read_field_file(in);
  cbt::MvFile file;
  file.width = static_cast<uint32_t>(fields.frame_w);
  file.height = static_cast<uint32_t>(fields.frame_h);
  file.frames.push_back(cbt::assemble_superblocks(fields));
  cbt::write_mv_file(out, file);

  cbt::MvFile check = cbt::read_mv_file(out);
  CBT_REQUIRE(check.frames.size() == 1 &&
                  check.frames[0].words == file.frames[0].words,
              "export verification failed for ", out);
  write_run_record(out + ".run.json", "export",
                   json{{"in", in}, {"out", out},
                        {"words", file.frames[0].words.size()}});
  std::cout << "wrote " << file.frames[0].words.size() << " MV words, "
            << "round-trip verified\n";
  return 0;
}

int run_viz(const std::string& in, int size, int ref, const std::string& out) {
  cbt::MvFieldSet fields = cbt::read_field_file(in);
  cbt::visualize_mv(fields.field(size), ref, out);
  write_run_record(out + ".run.json", "viz",
                   json{{"in", in}, {"size", size}, {"ref", ref},
                        {"out", out}});
  return 0;
}

struct MetricsOpts {
  VideoArgs a, b;
  std::string out;
  int limit = 0;
};

int run_metrics(const MetricsOpts& o) {
  auto ra = o.a.open();
  auto rb = o.b.open();
  CBT_REQUIRE(ra->width() == rb->width() && ra->height() == rb->height(),
              "metrics: dims ", ra->width(), "x", ra->height(), " vs ",
              rb->width(), "x", rb->height());
  int n = std::min(ra->frame_count(), rb->frame_count());
  if (o.limit > 0) n = std::min(n, o.limit);
  CBT_REQUIRE(n > 0, "metrics: no overlapping frames");

  std::vector<cbt::LumaFrame> fa, fb;
  std::ostringstream csv;
  csv << "frame,mad,psnr,msssim\n";
  for (int i = 0; i < n; ++i) {
    fa.push_back(ra->read_frame(i));
    fb.push_back(rb->read_frame(i));
    csv << i << ',' << cbt::mad(fa.back(), fb.back()) << ','
        << cbt::psnr(fa.back(), fb.back()) << ','
        << cbt::ms_ssim_value(fa.back(), fb.back()) << '\n';
  }
  const double ti_a = n > 1 ? cbt::temporal_information(fa) : 0.0;
  const double ti_b = n > 1 ? cbt::temporal_information(fb) : 0.0;
  std::cout << "frames " << n << ", TI a " << ti_a << ", TI b " << ti_b
            << "\n";
  if (!o.out.empty()) {
    write_text_atomic(o.out, csv.str());
    write_run_record(o.out + ".run.json", "metrics",
                     json{{"a", o.a.path}, {"b", o.b.path},
                          {"frames", n}, {"ti_a", ti_a}, {"ti_b", ti_b}});
  } else {
    std::cout << csv.str();
  }
  return 0;
}

std::vector<cbt::RdPoint> read_rd_csv(const std::string& path) {
  std::ifstream is(path);
  CBT_REQUIRE(is.good(), "cannot open ", path);
  std::vector<cbt::RdPoint> points;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    cbt::RdPoint p;
    if (!(ls >> p.rate >> p.quality)) {
      CBT_REQUIRE(lineno == 1, path, ":", lineno,
                  ": expected 'rate,quality'");
      continue;  // header row
    }
    points.push_back(p);
  }
  return points;
}

int run_bdrate(const std::string& anchor, const std::string& test) {
  const double bd = cbt::bd_rate(read_rd_csv(anchor), read_rd_csv(test));
  std::printf("%+.3f%%\n", bd);
  return 0;
}

int run_selftest(const std::string& out_dir) {
  std::vector<cbt::SelfTestResult> results = cbt::run_selftests();
  std::ostringstream report;
  bool all_pass = true;
  for (size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    report << (r.pass ? "PASS" : "FAIL") << "  " << i + 1 << " " << r.name
           << " (" << std::llround(r.seconds * 1000.0) / 1000.0 << " s): "
           << r.detail << "\n";
    all_pass = all_pass && r.pass;
  }
  std::cout << report.str();
  std::cout << (all_pass ? "all suites passed\n" : "FAILURES present\n");
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_atomic(out_dir + "/selftest.txt", report.str());
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block motion estimation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("cbt ") + kVersion);

  int threads = 0;

  auto* dataset = app.add_subcommand("dataset", "triplet database tooling");
  dataset->require_subcommand(1);
  auto* build = dataset->add_subcommand("build", "manifest -> triplet index");
  std::string b_manifest, b_out;
  std::vector<std::string> b_res{"1080p", "720p"};
  build->add_option("--manifest", b_manifest, "JSONL content manifest")
      ->required();
  build->add_option("--out", b_out, "output directory")->required();
  build->add_option("--resolution", b_res,
                    "target resolutions (1080p, 720p, WxH)");
  build->add_option("--threads", threads, "worker cap");

  auto* train = app.add_subcommand("train", "self-supervised training run");
  TrainOpts t_opts;
  train->add_option("--manifest", t_opts.manifest, "JSONL content manifest");
  train->add_option("--index", t_opts.index, "triplet index from dataset build");
  train->add_option("--layer", t_opts.layer, "pyramid layer 1..4")
      ->check(CLI::Range(1, 4));
  train->add_option("--resolution", t_opts.resolution, "1080p, 720p or WxH");
  train->add_option("--batch", t_opts.batch, "triplets per step");
  train->add_option("--lr", t_opts.lr, "Adam learning rate");
  train->add_option("--steps", t_opts.steps, "optimizer steps");
  train->add_option("--val-every", t_opts.val_every, "steps between validations");
  train->add_option("--checkpoint-every", t_opts.ckpt_every,
                    "steps between checkpoints");
  train->add_option("--crop-min", t_opts.crop_min, "min aligned crop edge");
  train->add_option("--crop-max", t_opts.crop_max, "max aligned crop edge");
  train->add_option("--seed", t_opts.seed, "run seed");
  train->add_option("--out", t_opts.out_dir, "output directory")->required();
  train->add_flag("--toy", t_opts.toy, "desk-scale model preset");
  train->add_option("--synthetic", t_opts.synthetic,
                    "train on N generated translation triplets");
  train->add_option("--synthetic-shift", t_opts.synthetic_shift,
                    "max |MV| of generated triplets");
  train->add_option("--threads", threads, "worker cap");

  auto* validate = app.add_subcommand("validate", "per-method MAD/MS-SSIM table");
  ValidateOpts v_opts;
  validate->add_option("--checkpoint", v_opts.checkpoint, "trained model");
  validate->add_option("--manifest", v_opts.manifest, "JSONL content manifest");
  validate->add_option("--index", v_opts.index, "triplet index");
  validate->add_option("--layer", v_opts.layer, "pyramid layer 1..4")
      ->check(CLI::Range(1, 4));
  validate->add_option("--resolution", v_opts.resolution, "1080p, 720p or WxH");
  validate->add_option("--algo", v_opts.algos,
                       "methods to tabulate (cbt, es, ds, arps)")
      ->check(CLI::IsMember({"cbt", "es", "ds", "arps"}));
  validate->add_option("--range", v_opts.range, "baseline search range");
  validate->add_option("--limit", v_opts.limit, "max triplets (0 = all)");
  validate->add_option("--seed", v_opts.seed, "synthetic corpus seed");
  validate->add_option("--synthetic", v_opts.synthetic,
                       "validate on N generated translation triplets");
  validate->add_option("--synthetic-shift", v_opts.synthetic_shift,
                       "max |MV| of generated triplets");
  validate->add_option("--out", v_opts.out_dir, "output directory")->required();
  validate->add_option("--threads", threads, "worker cap");

  auto* predict = app.add_subcommand("predict", "checkpoint + frames -> MVs");
  PredictOpts p_opts;
  p_opts.video.attach(predict, "--video", "input video");
  predict->add_option("--checkpoint", p_opts.checkpoint, "trained model")
      ->required();
  predict->add_option("--frames", p_opts.frames,
                      "past, current, future frame indices")
      ->expected(3)
      ->required();
  predict->add_option("--resolution", p_opts.resolution,
                      "resample before inference (1080p, 720p, WxH)");
  predict->add_option("--out", p_opts.out_dir, "output directory")->required();
  predict->add_option("--threads", threads, "worker cap");

  auto* match = app.add_subcommand("match", "classical block-matching baseline");
  MatchOpts m_opts;
  m_opts.video.attach(match, "--video", "input video");
  match->add_option("--algo", m_opts.algo, "es, ds or arps")
      ->check(CLI::IsMember({"es", "ds", "arps"}));
  match->add_option("--frames", m_opts.frames,
                    "past, current, future frame indices")
      ->expected(3)
      ->required();
  match->add_option("--range", m_opts.range, "search range");
  match->add_option("--resolution", m_opts.resolution,
                    "resample before matching");
  match->add_option("--out", m_opts.out_dir, "output directory")->required();
  match->add_option("--threads", threads, "worker cap");

  auto* exp = app.add_subcommand("export", "MV fields -> packed CBMV file");
  std::string e_in, e_out;
  exp->add_option("--in", e_in, "mv.cbmf from predict/match")->required();
  exp->add_option("--out", e_out, "CBMV output path")->required();

  auto* viz = app.add_subcommand("viz", "MV field -> PPM direction wheel");
  std::string z_in, z_out;
  int z_size = 8, z_ref = 0;
  viz->add_option("--in", z_in, "mv.cbmf from predict/match")->required();
  viz->add_option("--size", z_size, "block size plane")
      ->check(CLI::IsMember({64, 32, 16, 8}));
  viz->add_option("--ref", z_ref, "0 = past, 1 = future")
      ->check(CLI::Range(0, 1));
  viz->add_option("--out", z_out, "PPM output path")->required();

  auto* metrics = app.add_subcommand("metrics", "MAD/PSNR/MS-SSIM/TI report");
  MetricsOpts x_opts;
  x_opts.a.attach(metrics, "--a", "first video");
  x_opts.b.attach(metrics, "--b", "second video");
  metrics->add_option("--limit", x_opts.limit, "max frames (0 = all)");
  metrics->add_option("--out", x_opts.out, "CSV path (default: stdout)");
  metrics->add_option("--threads", threads, "worker cap");

  auto* bdrate = app.add_subcommand("bdrate", "BD-rate between two RD CSVs");
  std::string d_anchor, d_test;
  bdrate->add_option("--anchor", d_anchor, "rate,quality CSV")->required();
  bdrate->add_option("--test", d_test, "rate,quality CSV")->required();

  auto* selftest = app.add_subcommand("selftest", "gradient + oracle suites");
  std::string s_out;
  selftest->add_option("--out", s_out, "also write the report here");
  selftest->add_option("--threads", threads, "worker cap");

  CLI11_PARSE(app, argc, argv);

  try {
    apply_threads(threads);
    if (build->parsed()) {
      auto manifest = cbt::read_manifest(b_manifest);
      cbt::BuildDatabaseResult db = cbt::build_database(manifest, b_res);
      fs::create_directories(b_out);
      cbt::write_triplet_index(b_out + "/triplet_index.jsonl", db.records);
      write_run_record(b_out + "/run_dataset_build.json", "dataset build",
                       json{{"manifest", b_manifest},
                            {"resolutions", b_res},
                            {"records", db.records.size()},
                            {"skipped", db.summary.skipped}});
      for (const auto& [res, by_layer] : db.summary.counts) {
        std::cout << res << ":";
        for (int k = 1; k <= 4; ++k)
          std::cout << " layer" << k << " "
                    << by_layer[static_cast<size_t>(k - 1)][0] << "/"
                    << by_layer[static_cast<size_t>(k - 1)][1];
        std::cout << " (train/val)\n";
      }
      for (const auto& skip : db.summary.skipped)
        std::cout << "skipped: " << skip << "\n";
      std::cout << db.records.size() << " triplets -> " << b_out
                << "/triplet_index.jsonl\n";
      return 0;
    }
    if (train->parsed()) return run_train(t_opts);
    if (validate->parsed()) return run_validate(v_opts);
    if (predict->parsed()) return run_predict(p_opts);
    if (match->parsed()) return run_match(m_opts);
    if (exp->parsed()) return run_export(e_in, e_out);
    if (viz->parsed()) return run_viz(z_in, z_size, z_ref, z_out);
    if (metrics->parsed()) return run_metrics(x_opts);
    if (bdrate->parsed()) return run_bdrate(d_anchor, d_test);
    if (selftest->parsed()) return run_selftest(s_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
