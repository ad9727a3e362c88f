#include "vstpose/synth.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vstpose/rng.hpp"

namespace vstpose::data {
namespace {

// Standing COCO-17 pose in a 640x480 image, kCoco17Names order.
constexpr std::array<std::array<double, 2>, kCoco17Joints> kTemplate{{{320, 110},
                                                                      {330, 100},
                                                                      {310, 100},
                                                                      {340, 105},
                                                                      {300, 105},
                                                                      {360, 160},
                                                                      {280, 160},
                                                                      {380, 220},
                                                                      {260, 220},
                                                                      {390, 280},
                                                                      {250, 280},
                                                                      {345, 280},
                                                                      {295, 280},
                                                                      {350, 350},
                                                                      {290, 350},
                                                                      {352, 420},
                                                                      {288, 420}}};

constexpr std::size_t kHarmonics = 3;
constexpr std::size_t kActions = 3;
constexpr std::size_t kSubjects = 2;

struct Harmonic {
  double amplitude, frequency, phase;
};

struct Trajectory {
  std::vector<double> base;                    // [J * C]
  std::vector<std::array<Harmonic, kHarmonics>> waves;  // [J * C]

  double at(std::size_t k, double t) const {
    double v = base[k];
    for (const auto& h : waves[k]) v += h.amplitude * std::sin(2.0 * std::numbers::pi * h.frequency * t + h.phase);
    return v;
  }
};

Trajectory make_trajectory(const SynthConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.joints * cfg.dims;
  Trajectory tr;
  tr.base.resize(n);
  tr.waves.resize(n);
  std::array<double, 3> shift{rng.uniform(-60, 60), rng.uniform(-40, 40), rng.uniform(-40, 40)};
  for (std::size_t j = 0; j < cfg.joints; ++j) {
    for (std::size_t c = 0; c < cfg.dims; ++c) {
      double base = 0.0;
      if (cfg.joints == kCoco17Joints && c < 2) {
        base = kTemplate[j][c];
      } else if (c < 2) {
        base = rng.uniform(c == 0 ? 120.0 : 100.0, c == 0 ? 520.0 : 380.0);
      } else {
        base = rng.uniform(250.0, 350.0);
      }
      tr.base[j * cfg.dims + c] = base + shift[c];
      for (auto& h : tr.waves[j * cfg.dims + c]) {
        h = Harmonic{rng.uniform(4.0, 20.0), rng.uniform(0.03, 0.12), rng.uniform(0.0, 2.0 * std::numbers::pi)};
      }
    }
  }
  return tr;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_clips == 0) throw std::invalid_argument("synth: num_clips must be >= 1");
  if (clip_len == 0 || window == 0 || stride == 0) {
    throw std::invalid_argument("synth: clip_len, window and stride must be >= 1");
  }
  if (joints == 0) throw std::invalid_argument("synth: joints must be >= 1");
  if (dims != 2 && dims != 3) throw std::invalid_argument("synth: dims must be 2 or 3");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synth: noise_sigma must be >= 0");
  if (frame_size() == 0) throw std::invalid_argument("synth: empty frame shape");
}

Tensor synth_csi_map(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0));
  const std::size_t rows = cfg.frame_size(), cols = cfg.feature_size();
  Tensor m(Shape{rows, cols});
  const double s = 1.0 / std::sqrt(static_cast<double>(cols));
  for (auto& v : m.data()) v = s * rng.normal();
  return m;
}

std::vector<double> synth_features(const Tensor& coords_t, const Tensor& coords_prev) {
  const std::size_t n = coords_t.numel();
  std::vector<double> f(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    f[i] = (coords_t[i] - kSynthPositionOffset) / kSynthPositionScale;
    f[n + i] = (coords_t[i] - coords_prev[i]) / kSynthVelocityScale;
  }
  return f;
}

std::vector<Clip> synth_clips(const SynthConfig& cfg) {
  cfg.validate();
  const Tensor map = synth_csi_map(cfg);
  const std::size_t frame = cfg.frame_size(), feat = cfg.feature_size(), jc = cfg.joints * cfg.dims;
  std::vector<Clip> clips;
  clips.reserve(cfg.num_clips);
  for (std::size_t c = 0; c < cfg.num_clips; ++c) {
    Rng rng(derive_seed(cfg.seed, 1 + c));
    const Trajectory tr = make_trajectory(cfg, rng);
    Clip clip;
    clip.clip_id = c;
    clip.action = "action_" + std::to_string(c % kActions);
    clip.subject = "subject_" + std::to_string(c % kSubjects);
    clip.frames = Tensor(Shape{cfg.clip_len, cfg.channels, cfg.rows, cfg.steps});
    clip.skeleton.coords = Tensor(Shape{cfg.clip_len, cfg.joints, cfg.dims});
    Tensor now(Shape{jc}), prev(Shape{jc});
    for (std::size_t t = 0; t < cfg.clip_len; ++t) {
      for (std::size_t k = 0; k < jc; ++k) {
        now[k] = tr.at(k, static_cast<double>(t));
        prev[k] = tr.at(k, static_cast<double>(t) - 1.0);
        clip.skeleton.coords[t * jc + k] = now[k];
      }
      const auto f = synth_features(now, prev);
      double* out = clip.frames.ptr() + t * frame;
      for (std::size_t r = 0; r < frame; ++r) {
        double v = 0.0;
        const double* row = map.ptr() + r * feat;
        for (std::size_t k = 0; k < feat; ++k) v += row[k] * f[k];
        out[r] = v + (cfg.noise_sigma > 0.0 ? cfg.noise_sigma * rng.normal() : 0.0);
      }
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::vector<CsiWindow> synth_generate(const SynthConfig& cfg) {
  return slide_windows(synth_clips(cfg), cfg.window, cfg.stride);
}

}  // namespace vstpose::data
