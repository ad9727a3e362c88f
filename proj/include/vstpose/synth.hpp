#pragma once

#include <cstdint>
#include <vector>

#include "vstpose/dataset.hpp"

namespace vstpose::data {

/// Desk-scale stand-in for a recorded dataset: smooth joint trajectories and
/// CSI-like frames produced by a fixed linear map of (position, velocity).
struct SynthConfig {
  std::size_t num_clips = 10;
  std::size_t clip_len = 9;
  std::size_t window = 3;
  std::size_t stride = 2;
  std::size_t joints = kCoco17Joints;
  std::size_t dims = 2;
  double noise_sigma = 0.05;
  std::uint64_t seed = 7;
  std::size_t channels = kTxAntennas;
  std::size_t rows = kFrameRows;
  std::size_t steps = kSamplesPerFrame;

  void validate() const;
  std::size_t frame_size() const { return channels * rows * steps; }
  /// Length of the per-frame latent feature vector (position and frame difference).
  std::size_t feature_size() const { return 2 * joints * dims; }
};

/// Position and frame-difference scalings applied before the linear map.
inline constexpr double kSynthPositionOffset = 300.0;
inline constexpr double kSynthPositionScale = 100.0;
inline constexpr double kSynthVelocityScale = 10.0;

/// The fixed map from latent features to a flattened frame, [frame_size, feature_size].
Tensor synth_csi_map(const SynthConfig& cfg);

/// Latent features of one frame: [(p_t - offset) / pos_scale, (p_t - p_{t-1}) / vel_scale].
std::vector<double> synth_features(const Tensor& coords_t, const Tensor& coords_prev);

std::vector<Clip> synth_clips(const SynthConfig& cfg);
/// synth_clips windowed with cfg.window / cfg.stride.
std::vector<CsiWindow> synth_generate(const SynthConfig& cfg);

}  // namespace vstpose::data
