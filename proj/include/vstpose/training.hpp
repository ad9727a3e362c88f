#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vstpose/autodiff.hpp"
#include "vstpose/dataset.hpp"
#include "vstpose/evaluation.hpp"
#include "vstpose/model.hpp"

namespace vstpose::train {

struct Scheduler {
  enum class Kind { None, Step };
  Kind kind = Kind::None;
  std::size_t step_size = 10;
  double gamma = 0.85;

  static Scheduler none() { return {}; }
  static Scheduler step(std::size_t size, double gamma) { return {Kind::Step, size, gamma}; }
};

struct TrainConfig {
  double alpha = 0.2;
  std::size_t epochs = 100;
  std::size_t batch_size_train = 128;
  std::size_t batch_size_eval = 32;
  double lr = 1e-4;
  Scheduler scheduler;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;  // max global gradient norm
  std::size_t max_steps = 0;         // stop after this many optimizer steps (0 = no cap)
  bool deterministic = true;         // single-threaded, seeded data order
  bool normalize = true;             // standardize inputs and coordinates

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);

  /// 100 epochs, constant lr.
  static TrainConfig self_collected_profile();
  /// 50 epochs, StepLR(10, 0.85).
  static TrainConfig mmfi_profile();
};

/// Step schedule lr * gamma^floor(epoch / step_size), or constant.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

/// alpha * mean((V_pred - V_gt)^2) + (1 - alpha) * mean((K_pred - K_gt)^2), with
/// V_gt = K_gt[:, T-1] - K_gt[:, 0]. K: [B, T, J, C], V: [B, J, C].
ad::Var loss(const ad::Var& k_pred, const ad::Var& v_pred, const Tensor& k_gt, double alpha);
double loss_value(const Tensor& k_pred, const Tensor& v_pred, const Tensor& k_gt, double alpha);

/// Affine standardization between recorded units and model units.
struct Normalizer {
  double input_mean = 0.0;
  double input_scale = 1.0;
  std::vector<double> coord_mean;  // per coordinate axis
  double coord_scale = 1.0;

  static Normalizer identity(std::size_t dims);
  static Normalizer fit(const std::vector<data::CsiWindow>& windows);

  Tensor input(const Tensor& x) const;
  Tensor coords(const Tensor& k) const;              // [..., C]
  Tensor coords_to_units(const Tensor& k) const;     // inverse of coords()
  Tensor velocity_to_units(const Tensor& v) const;   // scale only

  void store(std::map<std::string, Tensor>& extras) const;
  static Normalizer load(const std::map<std::string, Tensor>& extras, std::size_t dims);
};

class Adam {
 public:
  explicit Adam(const model::ParameterStore& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  /// grad_scale multiplies every gradient first (used for norm clipping).
  void step(const model::ParameterStore& params, double lr, double grad_scale = 1.0);
  std::size_t steps() const noexcept { return t_; }

  void store(std::map<std::string, Tensor>& extras) const;
  void load(const std::map<std::string, Tensor>& extras, std::size_t steps);

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor> m_, v_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::array<double, eval::kPckThresholds.size()> pck{};
  double mpjpe = 0.0;
  double pa_mpjpe = 0.0;
  std::size_t steps = 0;

  nlohmann::json to_json() const;
};

/// Model predictions in recorded units, flattened to frames.
struct Predictions {
  Tensor keypoints;  // [N*T, J, C]
  Tensor truth;      // [N*T, J, C]
  Tensor velocity;   // [N, J, C]
  std::vector<std::string> actions;  // per frame
  std::optional<Tensor> confidence;  // [N*T, J]
};

Predictions predict_windows(const model::VstPose& model, const Normalizer& norm,
                            const std::vector<data::CsiWindow>& windows, std::size_t batch_size);

/// Torso normalization for COCO-17 skeletons, a fixed reference length otherwise.
eval::ReportOptions default_report_options(const model::ModelConfig& cfg);

class Trainer {
 public:
  Trainer(model::ModelConfig model_cfg, TrainConfig cfg);

  /// Fits the normalizer on the training windows (no-op when normalize = false).
  void prepare(const std::vector<data::CsiWindow>& train);

  /// One optimizer step on the batch; returns the loss before the update.
  double train_step(const std::vector<const data::CsiWindow*>& batch, double lr);
  /// Mean loss over windows without updating.
  double evaluate_loss(const std::vector<data::CsiWindow>& windows) const;

  /// Runs one epoch with seeded shuffling; returns mean train loss.
  double run_epoch(const std::vector<data::CsiWindow>& train, std::size_t epoch);

  model::VstPose& model() noexcept { return model_; }
  const model::VstPose& model() const noexcept { return model_; }
  const Normalizer& normalizer() const noexcept { return norm_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  std::size_t steps() const noexcept { return adam_.steps(); }
  std::size_t epochs_done() const noexcept { return epochs_done_; }
  double effective_alpha() const;

  /// Parameters + normalizer (+ optimizer state when with_optimizer).
  model::Checkpoint checkpoint(bool with_optimizer) const;
  /// Restores parameters, normalizer and optimizer state.
  void resume(const model::Checkpoint& ckpt);

 private:
  std::vector<const data::CsiWindow*> epoch_order(const std::vector<data::CsiWindow>& train,
                                                  std::size_t epoch) const;

  model::ModelConfig model_cfg_;
  TrainConfig cfg_;
  model::VstPose model_;
  Adam adam_;
  Normalizer norm_;
  std::size_t epochs_done_ = 0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  model::Checkpoint best;
  double best_mpjpe = 0.0;
  std::size_t best_epoch = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> metric_log;    // line-delimited JSON, appended
  std::optional<std::filesystem::path> best_checkpoint;
  std::optional<std::filesystem::path> state_checkpoint;  // written after every epoch
  std::function<void(const EpochRecord&)> on_epoch;
  /// Continues from a state checkpoint written by a previous run.
  std::optional<model::Checkpoint> resume_from;
};

/// Full loop: per-epoch training, evaluation, metric logging, best-by-MPJPE checkpointing.
TrainResult train(const std::vector<data::CsiWindow>& train_set, const std::vector<data::CsiWindow>& eval_set,
                  const model::ModelConfig& model_cfg, const TrainConfig& cfg, const TrainOptions& options = {});

/// Evaluates a checkpoint on windows.
eval::MetricReport evaluate(const model::Checkpoint& ckpt, const std::vector<data::CsiWindow>& windows,
                            std::size_t batch_size, const std::optional<eval::ReportOptions>& options = {});

// ---------------------------------------------------------------- gradient check

struct TensorGradCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t total = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t coordinates = 0;
  std::vector<TensorGradCheck> tensors;
};

struct GradCheckOptions {
  double alpha = 0.2;
  std::uint64_t seed = 0;
  /// Tensors above this size are checked on a seeded coordinate sample.
  std::size_t sample_above = 10000;
  std::size_t sample_count = 512;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

double relative_error(double analytic, double numeric, double floor);

/// Central-difference check of d loss(forward(input), target) / d theta for every
/// parameter of a freshly initialized model. input: [B, T, ...], target: [B, T, J, C].
GradCheckReport grad_check(const model::ModelConfig& cfg, const Tensor& input, const Tensor& target,
                           double epsilon, const GradCheckOptions& options = {});

}  // namespace vstpose::train
