#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vstpose/tensor.hpp"

namespace vstpose::eval {

/// PCK thresholds reported everywhere, in percent of the reference length.
inline constexpr std::array<double, 5> kPckThresholds{50, 40, 30, 20, 10};

/// COCO-17 indices of the joints spanning the torso diagonal.
inline constexpr std::size_t kLeftShoulder = 5;
inline constexpr std::size_t kRightHip = 12;

struct PckResult {
  std::vector<double> per_joint;  // percent, per joint
  double average = 0.0;           // unweighted mean of per_joint
};

/// A joint is correct when ||pred - gt|| <= alpha/100 * norm_lengths[frame].
/// pred, gt: [N, J, C]; norm_lengths: [N], all > 0.
PckResult pck(const Tensor& pred, const Tensor& gt, double alpha_pct, std::span<const double> norm_lengths);

/// Mean over frames and joints of the per-joint Euclidean distance. [..., J, C].
double mpjpe(const Tensor& pred, const Tensor& gt);
/// Per-joint MPJPE for [N, J, C] inputs.
std::vector<double> mpjpe_per_joint(const Tensor& pred, const Tensor& gt);

struct SimilarityTransform {
  Tensor rotation;     // [C, C], det = +1, applied as P * R
  double scale = 1.0;
  Tensor translation;  // [C]
  Tensor aligned;      // [J, C] = scale * P * R + t
};

/// Least-squares similarity transform taking P onto Q (both [J, C], J >= C).
SimilarityTransform procrustes_align(const Tensor& p, const Tensor& q);

/// MPJPE after aligning each predicted frame to its ground-truth frame. [N, J, C].
double pa_mpjpe(const Tensor& pred, const Tensor& gt);

/// Left-shoulder to right-hip distance per ground-truth frame ([N, 17, C]).
std::vector<double> torso_lengths(const Tensor& gt);

struct NormalizationOption {
  enum class Kind { Torso, Fixed };
  Kind kind = Kind::Torso;
  double fixed_length = 100.0;

  std::vector<double> lengths(const Tensor& gt) const;
};

struct ReportOptions {
  NormalizationOption normalization;
  std::string units = "px";
  /// Frames whose mean ground-truth confidence is below this are excluded.
  double confidence_threshold = 0.1;
};

struct ReportInput {
  Tensor pred;  // [N, J, C]
  Tensor gt;    // [N, J, C]
  std::vector<std::string> actions;  // one label per frame, may be empty
  std::optional<Tensor> confidence;  // [N, J]
  std::vector<std::string> joint_names;  // defaults to COCO-17 names or "joint_i"
};

struct JointRow {
  std::string name;
  std::array<double, kPckThresholds.size()> pck{};
  double mpjpe = 0.0;
};

struct ActionRow {
  std::string action;
  double pck20 = 0.0;
  std::size_t frames = 0;
};

struct MetricReport {
  std::vector<JointRow> per_joint;
  std::vector<ActionRow> per_action;
  std::array<double, kPckThresholds.size()> average_pck{};
  double mpjpe = 0.0;
  double pa_mpjpe = 0.0;
  std::size_t frames = 0;
  std::string units;

  nlohmann::json to_json() const;
};

MetricReport build_report(const ReportInput& input, const ReportOptions& options = {});

/// Tab-separated per-joint table (Keypoint, PCK@50..PCK@10, MPJPE) with an Average row.
void write_report_table(const std::filesystem::path& path, const MetricReport& report);
void write_report_json(const std::filesystem::path& path, const MetricReport& report);
/// action<TAB>pck20 rows for external bar charts.
void write_action_chart(const std::filesystem::path& path, const MetricReport& report);

}  // namespace vstpose::eval
