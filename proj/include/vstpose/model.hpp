#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vstpose/autodiff.hpp"
#include "vstpose/tensor.hpp"

namespace vstpose::model {

/// Which stream of each dual-stream block feeds the velocity branch.
enum class VelocitySource { TS, ST, Both };

std::string to_string(VelocitySource s);
VelocitySource velocity_source_from_string(const std::string& s);

struct Ablation {
  bool velocity_branch = true;
  VelocitySource velocity_source = VelocitySource::TS;
  bool velocity_fusion = true;

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct ModelConfig {
  std::size_t window = 3;       // T
  std::size_t joints = 17;      // J
  std::size_t coord_dims = 2;   // C
  std::size_t embed_dim = 32;   // D
  std::size_t depth = 5;        // N
  std::size_t heads = 8;        // H (spatial and temporal attention)
  std::size_t mlp_ratio = 4;    // MLP hidden width = ratio x token dim
  std::size_t decoder_hidden = 32;

  // Per-frame CSI input [channels x rows x steps] and encoder widths.
  std::size_t in_channels = 3;
  std::size_t in_rows = 90;
  std::size_t in_steps = 5;
  std::size_t conv1_channels = 32;
  std::size_t conv2_channels = 64;
  std::size_t kernel = 3;

  Ablation ablation;

  void validate() const;

  std::size_t spatial_head_dim() const { return embed_dim / heads; }
  std::size_t temporal_token_dim() const { return joints * embed_dim; }
  std::size_t temporal_head_dim() const { return temporal_token_dim() / heads; }
  std::size_t pooled_rows() const { return in_rows / 2; }
  std::size_t pooled_steps() const { return in_steps / 2; }

  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named parameter tensors in insertion order.
class ParameterStore {
 public:
  ad::Var add(const std::string& name, Tensor init);
  const ad::Var& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t element_count() const;
  const std::vector<std::pair<std::string, ad::Var>>& entries() const noexcept { return entries_; }

  void zero_grad();

 private:
  std::vector<std::pair<std::string, ad::Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct MlpParams {
  ad::Var fc1_w, fc1_b, fc2_w, fc2_b;
};

/// Multi-head self-attention followed by MLP, layer norm and residual.
struct AttentionBlockParams {
  ad::Var wq, wk, wv, wo;
  MlpParams mlp;
  ad::Var norm_gamma, norm_beta;
  std::size_t heads = 1;
};

struct StreamParams {
  AttentionBlockParams spatial;
  AttentionBlockParams temporal;
};

struct DstBlockParams {
  StreamParams st;  // spatial then temporal
  StreamParams ts;  // temporal then spatial
  ad::Var fusion_w;  // [2D, 2]
};

struct EncoderParams {
  ad::Var conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  ad::Var proj_w, proj_b;
};

struct ModelParams {
  EncoderParams encoder;
  ad::Var pos_temporal;  // [T, 1, D]
  ad::Var pos_spatial;   // [1, J, D]
  std::vector<DstBlockParams> blocks;
  std::optional<AttentionBlockParams> velocity_temporal;
  MlpParams keypoint_head;
  std::optional<MlpParams> velocity_head;
};

/// Test and diagnostic switches. Defaults give the regular forward pass.
struct ForwardOptions {
  bool bypass_mlp = false;        // attention-block MLPs act as identity
  bool bypass_norm = false;       // attention-block layer norms act as identity
  bool identity_streams = false;  // both streams of every block return their input
  std::optional<std::array<double, 2>> fusion_logits;  // replaces W . pool(concat)
  bool zero_velocity_feature = false;                  // forces F_V = 0
};

/// Intermediate values recorded during a forward pass.
struct ForwardTrace {
  std::vector<Tensor> attention_maps;  // softmax outputs, [groups*heads, N, N]
  std::vector<Tensor> fusion_weights;  // per block, [B, 2] = (a_ST, a_TS)
  std::vector<Tensor> block_outputs;   // F^i
  std::vector<Tensor> block_velocity;  // V^i
  Tensor encoded;                      // X_c
  Tensor last_fused;                   // F^N
  Tensor velocity_feature;             // F_V (empty when the branch is off)
  Tensor keypoint_feature;             // F_K
};

struct Context {
  ForwardOptions options;
  ForwardTrace* trace = nullptr;
};

struct BlockOutput {
  ad::Var fused;     // F^i      [B, T, J, D]
  ad::Var velocity;  // V^i      [B, T, J, D]
  ad::Var weights;   // (a_ST, a_TS) per sample, [B, 2]
  ad::Var st;        // T1(S1(F))
  ad::Var ts;        // S2(T2(F))
};

struct VistaOutput {
  ad::Var keypoint_feature;  // F_K
  ad::Var velocity_feature;  // F_V (undefined when the branch is off)
  ad::Var last_fused;        // F^N
};

struct Prediction {
  ad::Var keypoints;  // [B, T, J, C]
  ad::Var velocity;   // [B, J, C]
};

// Stages. Feature tensors are batched: [B, T, J, D].

/// [B, T, ch, rows, steps] -> [B, T, J, D]; frames are encoded independently.
ad::Var encode(const ad::Var& input, const EncoderParams& p, const ModelConfig& cfg);
ad::Var add_positional(const ad::Var& x, const ad::Var& pos_temporal, const ad::Var& pos_spatial);
/// Scaled dot-product MHSA over tokens [G, N, E]; returns [G, N, E].
ad::Var multi_head_attention(const ad::Var& tokens, const AttentionBlockParams& p, Context& ctx);
/// tokens + LN(MLP(MHSA(tokens))).
ad::Var attention_block(const ad::Var& tokens, const AttentionBlockParams& p, Context& ctx);
/// Attention over the J joints of every frame, weights shared across frames.
ad::Var spatial_block(const ad::Var& features, const AttentionBlockParams& p, Context& ctx);
/// Attention over T tokens of width J*D.
ad::Var temporal_block(const ad::Var& features, const AttentionBlockParams& p, Context& ctx);
BlockOutput dst_block(const ad::Var& features, const DstBlockParams& p, const ModelConfig& cfg, Context& ctx);
VistaOutput vista_former(const ad::Var& x, const ModelParams& p, const ModelConfig& cfg, Context& ctx);
Prediction decode(const VistaOutput& features, const ModelParams& p, const ModelConfig& cfg);

class VstPose {
 public:
  VstPose(ModelConfig cfg, std::uint64_t seed);
  // Stage views alias the store's nodes, so copies would share weights.
  VstPose(const VstPose&) = delete;
  VstPose& operator=(const VstPose&) = delete;
  VstPose(VstPose&&) = default;
  VstPose& operator=(VstPose&&) = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  const ParameterStore& parameters() const noexcept { return store_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ModelParams& params() const noexcept { return params_; }

  /// Records a graph when gradients are enabled. Input is [B, T, ch, rows, steps].
  Prediction forward(const ad::Var& input, const ForwardOptions& options = {},
                     ForwardTrace* trace = nullptr) const;
  /// Inference without graph recording.
  Prediction predict(const Tensor& input) const;

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  ModelParams params_;
};

// ---------------------------------------------------------------- checkpoint

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Tensor> parameters;
  std::map<std::string, Tensor> extras;  // e.g. normalization statistics, optimizer moments
  nlohmann::json metadata = nlohmann::json::object();
};

Checkpoint make_checkpoint(const VstPose& model);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Builds a model from a checkpoint, validating every parameter shape.
VstPose model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace vstpose::model
