#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vstpose/dataset.hpp"
#include "vstpose/evaluation.hpp"
#include "vstpose/model.hpp"
#include "vstpose/synth.hpp"
#include "vstpose/training.hpp"
#include "vstpose/wavelet.hpp"

namespace vstpose::cli {

/// Environment variable naming the default root for run directories.
inline constexpr const char* kOutputRootEnv = "VSTPOSE_OUTPUT_ROOT";

struct DataConfig {
  std::filesystem::path manifest;  // raw recordings (preprocess) or framed clips (everything else)
  std::size_t stride = 2;          // window stride; the window length is model.window
  std::size_t clip_len = 9;        // frames per clip written by preprocess
  std::size_t max_clips = 0;       // per recording, 0 = no limit
  data::SplitSpec split;
  double confidence_threshold = 0.1;
  bool denoise = true;
  bool mmfi = false;  // manifest lists whole 3D sequences split by sequence
};

struct EvalConfig {
  std::string normalization = "auto";  // auto, torso or fixed
  double fixed_length = 100.0;
  std::string units = "px";
  double confidence_threshold = 0.1;
};

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train = train::TrainConfig::self_collected_profile();
  data::SynthConfig synth;
  signal::WaveletConfig wavelet;
  DataConfig data;
  EvalConfig eval;
  /// Ablation axes: name -> list of values. Names: window, depth, velocity_branch,
  /// velocity_source, velocity_fusion, alpha.
  nlohmann::json ablate = nlohmann::json::object();

  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
};

using Override = std::pair<std::string, nlohmann::json>;

/// Parses "section.key=value"; value is read as JSON when it parses, else as a string.
Override parse_override(const std::string& text);

/// Defaults, then the config file, then overrides in order.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<Override>& overrides);

/// Eight hex digits of FNV-1a over the canonical resolved config.
std::string config_hash(const RunConfig& cfg);

/// `out` when given; else <root>/<command>_<timestamp>_<hash> with root from
/// `root`, then $VSTPOSE_OUTPUT_ROOT, then "runs".
std::filesystem::path output_dir(const std::string& command, const RunConfig& cfg,
                                 const std::optional<std::filesystem::path>& out,
                                 const std::optional<std::filesystem::path>& root);

eval::ReportOptions report_options(const RunConfig& cfg, const model::ModelConfig& model_cfg);

struct CommandOptions {
  std::optional<std::filesystem::path> checkpoint;  // eval, predict
  std::optional<std::filesystem::path> resume;      // train
  bool all_windows = false;                         // eval: every window instead of the test split
  double epsilon = 1e-4;                            // gradcheck
  double tolerance = 1e-3;                          // gradcheck
  std::size_t jobs = 1;                             // ablate: cells trained concurrently
};

/// Runs one command inside `out` (created, resolved config echoed to config.json).
/// Returns the process exit status; errors that abort the command throw.
int run_command(const std::string& command, const RunConfig& cfg, const std::filesystem::path& out,
                const CommandOptions& options = {});

/// Names of the supported commands.
const std::vector<std::string>& commands();

}  // namespace vstpose::cli
