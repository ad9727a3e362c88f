// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "../test_support.hpp"
#include "vstpose/dataset.hpp"
#include "vstpose/evaluation.hpp"
#include "vstpose/model.hpp"
#include "vstpose/rng.hpp"
#include "vstpose/synth.hpp"
#include "vstpose/training.hpp"
#include "vstpose/wavelet.hpp"

using namespace vstpose;
using vstpose::testing::tiny_config;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

/// Fails the criterion with a message when `cond` is false.
struct Check {
  bool ok = true;
  std::string first_failure;
  void operator()(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      first_failure = what;
    }
  }
};

// ---------------------------------------------------------------- 1

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  data::SynthConfig s;
  s.joints = 4;
  s.num_clips = 4;
  s.noise_sigma = 0.0;
  s.seed = 3;
  const auto windows = data::synth_generate(s);
  const auto norm = train::Normalizer::fit(windows);
  const std::vector<const data::CsiWindow*> batch{&windows[0]};
  const auto input = norm.input(data::stack_inputs(batch));
  const auto target = norm.coords(data::stack_targets(batch));
  const auto report = train::grad_check(tiny_config(), input, target, 1e-4);
  const double secs = seconds_since(t0);
  std::size_t covered = 0;
  for (const auto& t : report.tensors) covered += t.checked == t.total;
  return {report.max_rel_error < 1e-3 && secs < 60.0,
          fmt("max rel error %.3e (%s), %zu coordinates, %zu/%zu tensors exhaustive, %.1f s", report.max_rel_error,
              report.worst_tensor.c_str(), report.coordinates, covered, report.tensors.size(), secs)};
}

// ---------------------------------------------------------------- 2

model::ModelConfig random_config(Rng& rng) {
  model::ModelConfig c;
  c.window = 1 + rng.below(5);
  c.joints = 1 + rng.below(6);
  c.coord_dims = 2 + rng.below(2);
  const std::size_t heads[] = {1, 2, 4};
  c.heads = heads[rng.below(3)];
  c.embed_dim = c.heads * (1 + rng.below(3));
  c.depth = 1 + rng.below(3);
  c.mlp_ratio = 1 + rng.below(3);
  c.decoder_hidden = 2 + rng.below(6);
  c.in_channels = 1 + rng.below(3);
  c.in_rows = 2 + rng.below(7);
  c.in_steps = 2 + rng.below(4);
  c.conv1_channels = 1 + rng.below(4);
  c.conv2_channels = 1 + rng.below(4);
  c.ablation.velocity_branch = rng.below(4) != 0;
  c.ablation.velocity_source = static_cast<model::VelocitySource>(rng.below(3));
  c.ablation.velocity_fusion = rng.below(2) != 0;
  return c;
}

Outcome shape_contract() {
  Rng rng(2025);
  Check check;
  std::size_t fusion_off = 0, blocks = 0;
  const std::size_t runs = 60;
  for (std::size_t trial = 0; trial < runs && check.ok; ++trial) {
    const auto c = random_config(rng);
    const model::VstPose m(c, trial);
    const std::size_t b = 1 + rng.below(3);
    Tensor x({b, c.window, c.in_channels, c.in_rows, c.in_steps});
    for (auto& v : x.data()) v = rng.normal();
    model::ForwardTrace trace;
    ad::NoGradGuard guard;
    const auto p = m.forward(ad::constant(x), {}, &trace);
    const std::string tag = fmt("config %zu", trial);
    check(p.keypoints.shape() == Shape{b, c.window, c.joints, c.coord_dims}, tag + ": keypoint shape");
    check(p.velocity.shape() == Shape{b, c.joints, c.coord_dims}, tag + ": velocity shape");
    check(trace.encoded.shape() == Shape{b, c.window, c.joints, c.embed_dim}, tag + ": encoder shape");
    check(trace.keypoint_feature.shape() == trace.last_fused.shape(), tag + ": feature shape");
    check(trace.fusion_weights.size() == c.depth, tag + ": one fusion pair per block");
    for (const auto& w : trace.fusion_weights) {
      ++blocks;
      check(w.shape() == Shape{b, 2}, tag + ": fusion weight shape");
      for (std::size_t i = 0; i < b; ++i) check(std::abs(w[2 * i] + w[2 * i + 1] - 1.0) <= 1e-7, tag + ": a_ST + a_TS");
    }
    if (!c.ablation.velocity_fusion) {
      ++fusion_off;
      check(trace.keypoint_feature == trace.last_fused, tag + ": F_K differs from F^N with fusion off");
    }
  }
  check(fusion_off > 0, "no fusion-off configuration drawn");
  return {check.ok, check.ok ? fmt("%zu configs (%zu fusion off), %zu blocks", runs, fusion_off, blocks)
                             : check.first_failure};
}

// ---------------------------------------------------------------- 3

struct OverfitRun {
  double initial = 0.0, final = 0.0;
  model::Checkpoint ckpt;
};

OverfitRun overfit_once() {
  data::SynthConfig s;
  s.joints = 4;
  s.num_clips = 8;
  s.noise_sigma = 0.0;
  s.seed = 3;
  const auto windows = data::synth_generate(s);
  train::TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size_train = 128;
  tc.seed = 1;
  train::Trainer trainer(tiny_config(), tc);
  trainer.prepare(windows);
  std::vector<const data::CsiWindow*> batch;
  for (const auto& w : windows) batch.push_back(&w);
  OverfitRun run;
  run.initial = trainer.evaluate_loss(windows);
  for (int step = 0; step < 200; ++step) trainer.train_step(batch, tc.lr);
  run.final = trainer.evaluate_loss(windows);
  run.ckpt = trainer.checkpoint(true);
  return run;
}

Outcome overfit() {
  const auto t0 = Clock::now();
  const auto a = overfit_once();
  const auto b = overfit_once();
  const double secs = seconds_since(t0);
  const bool same = a.final == b.final && a.ckpt.parameters == b.ckpt.parameters;
  const double ratio = a.final / a.initial;
  return {ratio < 0.1 && same && secs < 300.0,
          fmt("loss %.5g -> %.5g (ratio %.4f), runs %s, %.1f s for two runs", a.initial, a.final, ratio,
              same ? "identical" : "DIFFER", secs)};
}

// ---------------------------------------------------------------- 4

Outcome learned_signal() {
  const auto t0 = Clock::now();
  data::SynthConfig s;
  s.joints = 4;
  s.num_clips = 200;
  s.noise_sigma = 0.0;
  s.seed = 3;
  const auto sp = data::split(data::synth_generate(s), {4, 1, 5});
  train::TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size_train = 32;
  tc.max_steps = 500;
  tc.seed = 1;
  train::Trainer trainer(tiny_config(), tc);
  trainer.prepare(sp.train);
  const auto before = train::predict_windows(trainer.model(), trainer.normalizer(), sp.test, 32);
  const double untrained = eval::mpjpe(before.keypoints, before.truth);
  for (std::size_t epoch = 0; trainer.steps() < tc.max_steps; ++epoch) trainer.run_epoch(sp.train, epoch);
  const auto after = train::predict_windows(trainer.model(), trainer.normalizer(), sp.test, 32);
  const double trained = eval::mpjpe(after.keypoints, after.truth);
  return {trainer.steps() == 500 && untrained >= 5.0 * trained,
          fmt("held-out MPJPE %.4g -> %.4g (%.2fx) after %zu steps on %zu windows, %.1f s", untrained, trained,
              untrained / trained, trainer.steps(), sp.train.size(), seconds_since(t0))};
}

// ---------------------------------------------------------------- 5

double pa_mpjpe_oracle(const Tensor& pred, const Tensor& gt) {
  const std::size_t n = pred.dim(0), j = pred.dim(1), c = pred.dim(2);
  double total = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    const auto p = testing::to_eigen(pred.slice0(f, 1).reshaped({j, c}));
    const auto q = testing::to_eigen(gt.slice0(f, 1).reshaped({j, c}));
    const Eigen::MatrixXd aligned = c == 2 ? testing::procrustes_grid_2d(p, q).points
                                           : testing::procrustes_quaternion_3d(p, q);
    total += (aligned - q).rowwise().norm().sum();
  }
  return total / static_cast<double>(n * j);
}

Outcome metric_oracles() {
  Rng rng(5);
  Check check;
  double worst = 0.0, worst_pa = 0.0;
  for (int trial = 0; trial < 100 && check.ok; ++trial) {
    const std::size_t n = 1 + rng.below(4), j = 3 + rng.below(6), c = 2 + rng.below(2);
    const auto gt = testing::random_tensor({n, j, c}, rng, 10.0);
    auto pred = gt;
    const double noise = rng.uniform(0.1, 8.0);
    for (auto& v : pred.data()) v += noise * rng.normal();
    std::vector<double> len(n);
    for (auto& l : len) l = rng.uniform(5.0, 30.0);
    const std::string tag = fmt("instance %d", trial);

    std::vector<double> prev_joint;
    double prev_avg = INFINITY;
    for (double alpha : eval::kPckThresholds) {
      const auto got = eval::pck(pred, gt, alpha, len);
      const auto want = testing::pck_oracle(pred, gt, alpha, len);
      for (std::size_t k = 0; k < j; ++k) {
        worst = std::max(worst, std::abs(got.per_joint[k] - want[k]));
        if (!prev_joint.empty()) check(got.per_joint[k] <= prev_joint[k], tag + ": per-joint PCK nesting");
      }
      check(got.average <= prev_avg, tag + ": average PCK nesting");
      prev_joint = got.per_joint;
      prev_avg = got.average;
    }
    const double m = eval::mpjpe(pred, gt);
    worst = std::max(worst, std::abs(m - testing::mpjpe_oracle(pred, gt)));
    const double pa = eval::pa_mpjpe(pred, gt);
    worst_pa = std::max(worst_pa, std::abs(pa - pa_mpjpe_oracle(pred, gt)));
    check(pa <= m, tag + ": pa_mpjpe > mpjpe");
  }
  check(worst <= 1e-12, fmt("PCK/MPJPE oracle gap %.3e", worst));
  check(worst_pa <= 1e-9, fmt("PA-MPJPE oracle gap %.3e", worst_pa));
  return {check.ok, check.ok ? fmt("100 instances, max gap %.2e (PCK/MPJPE), %.2e (PA-MPJPE)", worst, worst_pa)
                             : check.first_failure};
}

// ---------------------------------------------------------------- 6

Outcome procrustes_and_loss() {
  Rng rng(6);
  double worst = 0.0;
  for (std::size_t c : {2u, 3u}) {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t j = c + 1 + rng.below(10);
      const auto p = testing::random_tensor({1, j, c}, rng, 4.0);
      const auto r = testing::random_rotation(c, rng);
      std::vector<double> t(c);
      for (auto& v : t) v = rng.uniform(-50, 50);
      const double s = rng.uniform(0.2, 5.0);
      const auto q = testing::similarity(p, r, s, t).reshaped({j, c});
      const auto a = eval::procrustes_align(p.reshaped({j, c}), q);
      worst = std::max(worst, max_abs_diff(a.aligned, q));
    }
  }
  const Tensor k_gt({1, 2, 1, 1}, std::vector<double>{0, 2});
  const Tensor k_pred({1, 2, 1, 1}, std::vector<double>{1, 2});
  const Tensor v_pred({1, 1, 1}, std::vector<double>{0});
  const double l = train::loss_value(k_pred, v_pred, k_gt, 0.2);
  const double lg = train::loss(ad::constant(k_pred), ad::constant(v_pred), k_gt, 0.2).value()[0];
  const bool exact = std::abs(l - 1.2) <= 1e-15 && std::abs(lg - 1.2) <= 1e-15;
  return {worst < 1e-9 && exact, fmt("max residual %.2e over 100 similarity copies; worked loss %.17g", worst, l)};
}

// ---------------------------------------------------------------- 7

Outcome signal_processing() {
  Rng rng(7);
  double worst = 0.0;
  std::size_t cases = 0;
  for (auto family : {signal::WaveletFamily::Haar, signal::WaveletFamily::Db2, signal::WaveletFamily::Db4}) {
    for (int levels = 1; levels <= 3; ++levels) {
      for (std::size_t n = 2; n <= 1024; n *= 2) {
        if (n < signal::min_signal_length(levels)) continue;
        signal::WaveletConfig cfg;
        cfg.family = family;
        cfg.levels = levels;
        std::vector<double> x(n);
        for (auto& v : x) v = rng.normal();
        const auto y = signal::dwt_inverse(signal::dwt_forward(x, cfg), cfg);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(y[i] - x[i]));
        ++cases;
      }
    }
  }
  constexpr std::size_t n = 32;
  Rng noise(20240601);
  std::vector<double> clean(n), noisy(n);
  for (std::size_t i = 0; i < n; ++i) {
    clean[i] = std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    noisy[i] = clean[i] + 0.5 * noise.normal();
  }
  const auto denoised = signal::denoise(noisy, signal::WaveletConfig{});
  double before = 0.0, after = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    before += (noisy[i] - clean[i]) * (noisy[i] - clean[i]) / n;
    after += (denoised[i] - clean[i]) * (denoised[i] - clean[i]) / n;
  }
  const double reduction = 1.0 - after / before;
  return {worst < 1e-10 && reduction >= 0.3,
          fmt("reconstruction error %.2e over %zu cases; sine MSE %.4f -> %.4f (%.0f%% lower)", worst, cases, before,
              after, 100.0 * reduction)};
}

// ---------------------------------------------------------------- 8

Outcome pipeline_arithmetic() {
  Check check;
  Rng rng(8);
  data::RawCsiRecording rec;
  rec.amplitudes = Tensor({450, 3, 3, 30});
  for (auto& v : rec.amplitudes.data()) v = 10.0 + rng.normal();
  data::SkeletonSequence skel;
  skel.coords = Tensor({90, 17, 2});
  for (auto& v : skel.coords.data()) v = rng.uniform(0, 640);
  const auto frames = data::assemble_frames(data::denoise_recording(rec, signal::WaveletConfig{}));
  const auto clips = data::split_into_clips(data::align_with_video(frames, skel), 9);
  const auto windows = data::slide_windows(clips, 3, 2);
  check(frames.size() == 90 && clips.size() == 10 && windows.size() == 40,
        fmt("%zu frames, %zu clips, %zu windows", frames.size(), clips.size(), windows.size()));

  auto key = [](const data::CsiWindow& w) { return std::pair{w.clip_id, w.start}; };
  for (auto [tr, te] : {std::pair<std::size_t, std::size_t>{4, 1}, {3, 1}}) {
    for (auto granularity : {data::SplitGranularity::Clip, data::SplitGranularity::Window}) {
      const data::SplitSpec spec{tr, te, 42, granularity};
      const auto a = data::split(windows, spec), b = data::split(windows, spec);
      std::set<std::pair<std::size_t, std::size_t>> train_keys, test_keys;
      for (const auto& w : a.train) train_keys.insert(key(w));
      for (const auto& w : a.test) test_keys.insert(key(w));
      std::size_t shared = 0;
      for (const auto& k : test_keys) shared += train_keys.count(k);
      const std::string tag = fmt("%zu:%zu %s split", tr, te, granularity == data::SplitGranularity::Clip ? "clip" : "window");
      check(shared == 0, tag + " not disjoint");
      check(train_keys.size() + test_keys.size() == windows.size() && a.train.size() + a.test.size() == windows.size(),
            tag + " not exhaustive");
      bool same = a.train.size() == b.train.size() && a.test.size() == b.test.size();
      for (std::size_t i = 0; same && i < a.train.size(); ++i) same = key(a.train[i]) == key(b.train[i]);
      for (std::size_t i = 0; same && i < a.test.size(); ++i) same = key(a.test[i]) == key(b.test[i]);
      check(same, tag + " not reproducible");
      if (granularity == data::SplitGranularity::Clip) {
        std::set<std::size_t> train_clips, test_clips;
        for (const auto& w : a.train) train_clips.insert(w.clip_id);
        for (const auto& w : a.test) test_clips.insert(w.clip_id);
        for (auto id : test_clips) check(!train_clips.contains(id), tag + " shares a clip");
        check(train_clips.size() == data::train_count(10, spec), tag + " train clip count");
      }
    }
  }
  return {check.ok, check.ok ? "450 samples -> 90 frames -> 10 clips -> 40 windows; 4:1 and 3:1 splits disjoint, "
                               "exhaustive, reproducible"
                             : check.first_failure};
}

// ---------------------------------------------------------------- 9

Outcome checkpoint_round_trip() {
  testing::TempDir dir("acceptance");
  Check check;
  Rng rng(9);
  for (std::uint64_t seed : {1u, 2u}) {
    auto cfg = tiny_config();
    cfg.ablation.velocity_source = seed == 1 ? model::VelocitySource::TS : model::VelocitySource::Both;
    const model::VstPose m(cfg, seed);
    const auto path = dir / fmt("m%llu.ckpt", static_cast<unsigned long long>(seed));
    model::save_checkpoint(path, model::make_checkpoint(m));
    const auto restored = model::model_from_checkpoint(model::load_checkpoint(path));
    Tensor x({2, cfg.window, cfg.in_channels, cfg.in_rows, cfg.in_steps});
    for (auto& v : x.data()) v = rng.normal();
    const auto a = m.predict(x), b = restored.predict(x);
    check(a.keypoints.value() == b.keypoints.value(), "keypoints differ after reload");
    check(a.velocity.value() == b.velocity.value(), "velocity differs after reload");
  }
  return {check.ok, check.ok ? "save -> load -> forward bit-identical (2 models)" : check.first_failure};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"1 gradient fidelity", gradient_fidelity},
      {"2 shape and ablation contract", shape_contract},
      {"3 overfit regression", overfit},
      {"4 learned signal", learned_signal},
      {"5 metric oracles", metric_oracles},
      {"6 procrustes exactness and worked loss", procrustes_and_loss},
      {"7 signal processing", signal_processing},
      {"8 pipeline arithmetic", pipeline_arithmetic},
      {"9 checkpoint round trip", checkpoint_round_trip},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
