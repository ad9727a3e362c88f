#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vstpose/tensor.hpp"
#include "vstpose/wavelet.hpp"

namespace vstpose::data {

inline constexpr std::size_t kTxAntennas = 3;
inline constexpr std::size_t kRxAntennas = 3;
inline constexpr std::size_t kSubcarriers = 30;
inline constexpr std::size_t kSamplesPerFrame = 5;
inline constexpr std::size_t kFrameRows = kRxAntennas * kSubcarriers;  // 90
inline constexpr double kCsiSampleRateHz = 150.0;
inline constexpr double kVideoFps = 30.0;
inline constexpr std::size_t kCoco17Joints = 17;
inline constexpr std::size_t kBody25Joints = 25;

/// COCO-17 joint names in reporting order.
extern const std::array<const char*, kCoco17Joints> kCoco17Names;
/// BODY_25 index for each COCO-17 joint, in kCoco17Names order.
extern const std::array<std::size_t, kCoco17Joints> kBody25ToCoco17;

/// Raw amplitude stream, [num_samples x tx x rx x subcarrier].
struct RawCsiRecording {
  Tensor amplitudes;
  double sample_rate_hz = kCsiSampleRateHz;

  std::size_t num_samples() const { return amplitudes.rank() ? amplitudes.dim(0) : 0; }
  void validate() const;
};

struct CsiFrame {
  Tensor image;  // [3, 90, 5]
  std::size_t frame_index = 0;
};

struct SkeletonSequence {
  Tensor coords;                     // [T, J, C]
  std::optional<Tensor> confidence;  // [T, J], values in [0, 1]

  std::size_t frames() const { return coords.dim(0); }
  std::size_t joints() const { return coords.dim(1); }
  std::size_t dims() const { return coords.dim(2); }
  void validate() const;
  /// Frames [begin, begin+count).
  SkeletonSequence slice(std::size_t begin, std::size_t count) const;
  double mean_confidence() const;
};

/// A contiguous run of CSI frames with one skeleton per frame.
struct Clip {
  Tensor frames;  // [L, channels, rows, steps]
  SkeletonSequence skeleton;
  std::string action;
  std::string subject;
  std::size_t clip_id = 0;

  std::size_t length() const { return frames.dim(0); }
  void validate() const;
};

struct CsiWindow {
  Tensor frames;  // [T, channels, rows, steps]
  SkeletonSequence skeleton;
  Tensor velocity_gt;  // [J, C] = coords[T-1] - coords[0]
  std::string action;
  std::string subject;
  std::size_t clip_id = 0;
  std::size_t start = 0;
};

/// coords[T-1] - coords[0] of a [T, J, C] tensor.
Tensor window_velocity(const Tensor& coords);

/// Groups consecutive 5-sample blocks into 3x90x5 frames (rx-antenna-major rows).
std::vector<CsiFrame> assemble_frames(const RawCsiRecording& rec);
/// Inverse reshape of one frame back to its [3, 3, 30, 5] block.
Tensor frame_to_block(const CsiFrame& frame);

/// Denoises each (tx, rx, subcarrier) amplitude stream over the whole recording.
RawCsiRecording denoise_recording(const RawCsiRecording& rec, const signal::WaveletConfig& cfg);

/// Pairs frame i with skeleton i, truncating to the shorter sequence.
Clip align_with_video(const std::vector<CsiFrame>& frames, const SkeletonSequence& skeletons,
                      double video_fps = kVideoFps, double sample_rate_hz = kCsiSampleRateHz);

/// Disjoint clips of `clip_len` frames (at most `max_clips`; 0 = no limit),
/// numbered first_id, first_id + 1, ...
std::vector<Clip> split_into_clips(const Clip& segment, std::size_t clip_len,
                                   std::size_t max_clips = 0, std::size_t first_id = 0);

/// floor((L - T) / stride) + 1 windows; empty (and logged) when L < T.
std::vector<CsiWindow> slide_windows(const Clip& clip, std::size_t window, std::size_t stride);
std::vector<CsiWindow> slide_windows(const std::vector<Clip>& clips, std::size_t window,
                                     std::size_t stride);

/// Drops windows whose mean keypoint confidence is below `threshold`.
std::vector<CsiWindow> filter_by_confidence(std::vector<CsiWindow> windows, double threshold);

struct Coco17Keypoints {
  Tensor coords;      // [17, 2]
  Tensor confidence;  // [17]
};

/// BODY_25 (x, y, confidence) rows -> COCO-17 subset in reporting order.
Coco17Keypoints select_coco17(const Tensor& body25);
/// [F, 25, 3] track -> SkeletonSequence with confidence.
SkeletonSequence select_coco17_sequence(const Tensor& body25_track);

enum class SplitGranularity { Clip, Window };

struct SplitSpec {
  std::size_t train_parts = 4;  // train:test = train_parts:test_parts
  std::size_t test_parts = 1;
  std::uint64_t seed = 0;
  SplitGranularity granularity = SplitGranularity::Clip;

  void validate() const;
};

struct Split {
  std::vector<CsiWindow> train;
  std::vector<CsiWindow> test;
};

/// Number of units placed on the train side (round half up).
std::size_t train_count(std::size_t units, const SplitSpec& spec);

Split split(const std::vector<CsiWindow>& windows, const SplitSpec& spec);

/// Stacks window inputs into [B, T, channels, rows, steps] and targets into [B, T, J, C].
Tensor stack_inputs(const std::vector<const CsiWindow*>& batch);
Tensor stack_targets(const std::vector<const CsiWindow*>& batch);

// ---------------------------------------------------------------- files

struct ManifestRow {
  std::filesystem::path csi_path;
  std::filesystem::path skeleton_path;
  std::string action;
  std::string subject;
};

/// Tab-separated rows; lines starting with '#' are comments. Relative paths
/// resolve against the manifest's directory.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

/// Writes each clip as <stem>_csi.tensor / <stem>_skel.tensor (+ _conf) and a manifest.tsv.
void write_clips(const std::filesystem::path& dir, const std::vector<Clip>& clips);
/// Reads a manifest of framed clips ([L, ch, rows, steps] + [L, J, C]).
std::vector<Clip> read_clips(const std::filesystem::path& manifest);

struct MmfiProtocol {
  std::size_t window = 10;
  std::size_t stride = 3;
  std::size_t train_parts = 3;
  std::size_t test_parts = 1;
  std::uint64_t seed = 0;
};

struct MmfiDataset {
  std::vector<Clip> sequences;
  Split split;
};

/// Loads `<root>/manifest.tsv` of 3D sequences, windows them, and splits by sequence.
MmfiDataset load_mmfi_style(const std::filesystem::path& root, const MmfiProtocol& protocol);

}  // namespace vstpose::data
