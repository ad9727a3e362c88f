#include "vstpose/model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "vstpose/container.hpp"
#include "vstpose/rng.hpp"

namespace vstpose::model {
namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument("model config: " + what);
}

class Initializer {
 public:
  Initializer(ParameterStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  ad::Var uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = rng_.uniform(-bound, bound);
    return store_.add(name, std::move(t));
  }
  ad::Var constant(const std::string& name, Shape shape, double value) {
    return store_.add(name, Tensor(std::move(shape), value));
  }

  MlpParams mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out) {
    MlpParams m;
    m.fc1_w = uniform(prefix + ".fc1.weight", {in, hidden}, in);
    m.fc1_b = constant(prefix + ".fc1.bias", {hidden}, 0.0);
    m.fc2_w = uniform(prefix + ".fc2.weight", {hidden, out}, hidden);
    m.fc2_b = constant(prefix + ".fc2.bias", {out}, 0.0);
    return m;
  }

  AttentionBlockParams attention(const std::string& prefix, std::size_t dim, std::size_t heads,
                                 std::size_t mlp_ratio) {
    AttentionBlockParams a;
    a.heads = heads;
    a.wq = uniform(prefix + ".attn.wq", {dim, dim}, dim);
    a.wk = uniform(prefix + ".attn.wk", {dim, dim}, dim);
    a.wv = uniform(prefix + ".attn.wv", {dim, dim}, dim);
    a.wo = uniform(prefix + ".attn.wo", {dim, dim}, dim);
    a.mlp = mlp(prefix + ".mlp", dim, mlp_ratio * dim, dim);
    a.norm_gamma = constant(prefix + ".norm.gamma", {dim}, 1.0);
    a.norm_beta = constant(prefix + ".norm.beta", {dim}, 0.0);
    return a;
  }

 private:
  ParameterStore& store_;
  Rng rng_;
};

ad::Var apply_mlp(const ad::Var& x, const MlpParams& m) {
  return ad::linear(ad::gelu(ad::linear(x, m.fc1_w, m.fc1_b)), m.fc2_w, m.fc2_b);
}

// [G, N, E] -> [G*H, N, E/H]
ad::Var split_heads(const ad::Var& x, std::size_t heads) {
  const std::size_t g = x.dim(0), n = x.dim(1), e = x.dim(2), dh = e / heads;
  if (heads == 1) return x;
  auto h = ad::permute(ad::reshape(x, {g, n, heads, dh}), {0, 2, 1, 3});
  return ad::reshape(h, {g * heads, n, dh});
}

// [G*H, N, dh] -> [G, N, H*dh]
ad::Var merge_heads(const ad::Var& x, std::size_t groups, std::size_t heads) {
  if (heads == 1) return x;
  const std::size_t n = x.dim(1), dh = x.dim(2);
  auto h = ad::permute(ad::reshape(x, {groups, heads, n, dh}), {0, 2, 1, 3});
  return ad::reshape(h, {groups, n, heads * dh});
}

void check_features(const ad::Var& f, const char* where) {
  if (f.shape().size() != 4) {
    throw std::invalid_argument(std::string(where) + ": features must be [B, T, J, D], got " +
                                shape_str(f.shape()));
  }
}

}  // namespace

std::string to_string(VelocitySource s) {
  switch (s) {
    case VelocitySource::TS: return "TS";
    case VelocitySource::ST: return "ST";
    case VelocitySource::Both: return "TS+ST";
  }
  return "?";
}

VelocitySource velocity_source_from_string(const std::string& s) {
  if (s == "TS") return VelocitySource::TS;
  if (s == "ST") return VelocitySource::ST;
  if (s == "TS+ST" || s == "ST+TS") return VelocitySource::Both;
  throw std::invalid_argument("unknown velocity source '" + s + "' (expected TS, ST, TS+ST)");
}

void ModelConfig::validate() const {
  require(window >= 1, "window must be >= 1");
  require(joints >= 1, "joints must be >= 1");
  require(coord_dims == 2 || coord_dims == 3, "coord_dims must be 2 or 3");
  require(embed_dim >= 1 && heads >= 1, "embed_dim and heads must be >= 1");
  require(embed_dim % heads == 0, "embed_dim must be divisible by heads");
  require(depth >= 1, "depth must be >= 1");
  require(mlp_ratio >= 1 && decoder_hidden >= 1, "mlp_ratio and decoder_hidden must be >= 1");
  require(in_channels >= 1 && in_rows >= 2 && in_steps >= 2, "input frame must be at least 1x2x2");
  require(conv1_channels >= 1 && conv2_channels >= 1, "conv widths must be >= 1");
  require(kernel % 2 == 1, "kernel must be odd");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"window", window},
          {"joints", joints},
          {"coord_dims", coord_dims},
          {"embed_dim", embed_dim},
          {"depth", depth},
          {"heads", heads},
          {"mlp_ratio", mlp_ratio},
          {"decoder_hidden", decoder_hidden},
          {"in_channels", in_channels},
          {"in_rows", in_rows},
          {"in_steps", in_steps},
          {"conv1_channels", conv1_channels},
          {"conv2_channels", conv2_channels},
          {"kernel", kernel},
          {"velocity_branch", ablation.velocity_branch},
          {"velocity_source", to_string(ablation.velocity_source)},
          {"velocity_fusion", ablation.velocity_fusion}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (!j.is_object()) throw std::invalid_argument("model config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "window") c.window = value.get<std::size_t>();
    else if (key == "joints") c.joints = value.get<std::size_t>();
    else if (key == "coord_dims") c.coord_dims = value.get<std::size_t>();
    else if (key == "embed_dim") c.embed_dim = value.get<std::size_t>();
    else if (key == "depth") c.depth = value.get<std::size_t>();
    else if (key == "heads") c.heads = value.get<std::size_t>();
    else if (key == "mlp_ratio") c.mlp_ratio = value.get<std::size_t>();
    else if (key == "decoder_hidden") c.decoder_hidden = value.get<std::size_t>();
    else if (key == "in_channels") c.in_channels = value.get<std::size_t>();
    else if (key == "in_rows") c.in_rows = value.get<std::size_t>();
    else if (key == "in_steps") c.in_steps = value.get<std::size_t>();
    else if (key == "conv1_channels") c.conv1_channels = value.get<std::size_t>();
    else if (key == "conv2_channels") c.conv2_channels = value.get<std::size_t>();
    else if (key == "kernel") c.kernel = value.get<std::size_t>();
    else if (key == "velocity_branch") c.ablation.velocity_branch = value.get<bool>();
    else if (key == "velocity_source") c.ablation.velocity_source = velocity_source_from_string(value.get<std::string>());
    else if (key == "velocity_fusion") c.ablation.velocity_fusion = value.get<bool>();
    else throw std::invalid_argument("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- parameters

ad::Var ParameterStore::add(const std::string& name, Tensor init) {
  if (index_.contains(name)) throw std::logic_error("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, ad::parameter(std::move(init)));
  return entries_.back().second;
}

const ad::Var& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

// ---------------------------------------------------------------- stages

ad::Var encode(const ad::Var& input, const EncoderParams& p, const ModelConfig& cfg) {
  const Shape expected{cfg.window, cfg.in_channels, cfg.in_rows, cfg.in_steps};
  const Shape& s = input.shape();
  if (s.size() != 5 || !std::equal(expected.begin(), expected.end(), s.begin() + 1)) {
    throw std::invalid_argument("encode: input must be [B, " + std::to_string(cfg.window) + ", " +
                                std::to_string(cfg.in_channels) + ", " + std::to_string(cfg.in_rows) +
                                ", " + std::to_string(cfg.in_steps) + "], got " + shape_str(s));
  }
  const std::size_t b = s[0], frames = b * cfg.window;
  auto x = ad::reshape(input, {frames, cfg.in_channels, cfg.in_rows, cfg.in_steps});
  x = ad::max_pool2x2(ad::gelu(ad::conv2d_same(x, p.conv1_w, p.conv1_b)));
  x = ad::gelu(ad::conv2d_same(x, p.conv2_w, p.conv2_b));
  x = ad::conv2d_same(x, p.conv3_w, p.conv3_b);
  x = ad::reshape(x, {frames, cfg.joints, cfg.pooled_rows() * cfg.pooled_steps()});
  x = ad::linear(x, p.proj_w, p.proj_b);
  return ad::reshape(x, {b, cfg.window, cfg.joints, cfg.embed_dim});
}

ad::Var add_positional(const ad::Var& x, const ad::Var& pos_temporal, const ad::Var& pos_spatial) {
  return ad::add_broadcast(ad::add_broadcast(x, pos_temporal), pos_spatial);
}

ad::Var multi_head_attention(const ad::Var& tokens, const AttentionBlockParams& p, Context& ctx) {
  if (tokens.shape().size() != 3) {
    throw std::invalid_argument("attention: tokens must be [G, N, E], got " + shape_str(tokens.shape()));
  }
  const std::size_t groups = tokens.dim(0), e = tokens.dim(2);
  if (e % p.heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(e / p.heads));
  auto q = split_heads(ad::linear(tokens, p.wq), p.heads);
  auto k = split_heads(ad::linear(tokens, p.wk), p.heads);
  auto v = split_heads(ad::linear(tokens, p.wv), p.heads);
  auto weights = ad::softmax(ad::scale(ad::bmm(q, k, true), inv_sqrt));
  if (ctx.trace) ctx.trace->attention_maps.push_back(weights.value());
  auto heads = merge_heads(ad::bmm(weights, v), groups, p.heads);
  return ad::linear(heads, p.wo);
}

ad::Var attention_block(const ad::Var& tokens, const AttentionBlockParams& p, Context& ctx) {
  auto h = multi_head_attention(tokens, p, ctx);
  if (!ctx.options.bypass_mlp) h = apply_mlp(h, p.mlp);
  if (!ctx.options.bypass_norm) h = ad::layer_norm(h, p.norm_gamma, p.norm_beta);
  return ad::add(tokens, h);
}

ad::Var spatial_block(const ad::Var& features, const AttentionBlockParams& p, Context& ctx) {
  check_features(features, "spatial_block");
  const Shape s = features.shape();
  auto out = attention_block(ad::reshape(features, {s[0] * s[1], s[2], s[3]}), p, ctx);
  return ad::reshape(out, s);
}

ad::Var temporal_block(const ad::Var& features, const AttentionBlockParams& p, Context& ctx) {
  check_features(features, "temporal_block");
  const Shape s = features.shape();
  auto out = attention_block(ad::reshape(features, {s[0], s[1], s[2] * s[3]}), p, ctx);
  return ad::reshape(out, s);
}

BlockOutput dst_block(const ad::Var& features, const DstBlockParams& p, const ModelConfig& cfg,
                      Context& ctx) {
  check_features(features, "dst_block");
  const Shape s = features.shape();
  const std::size_t b = s[0], tokens = s[1] * s[2], d = s[3];
  BlockOutput out;
  if (ctx.options.identity_streams) {
    out.st = features;
    out.ts = features;
  } else {
    out.st = temporal_block(spatial_block(features, p.st.spatial, ctx), p.st.temporal, ctx);
    out.ts = spatial_block(temporal_block(features, p.ts.temporal, ctx), p.ts.spatial, ctx);
  }
  ad::Var logits;
  if (ctx.options.fusion_logits) {
    Tensor l(Shape{b, 2});
    for (std::size_t i = 0; i < b; ++i) {
      l[i * 2] = (*ctx.options.fusion_logits)[0];
      l[i * 2 + 1] = (*ctx.options.fusion_logits)[1];
    }
    logits = ad::constant(std::move(l));
  } else {
    auto both = ad::concat_last(ad::reshape(out.st, {b, tokens, d}), ad::reshape(out.ts, {b, tokens, d}));
    logits = ad::linear(ad::mean_middle(both), p.fusion_w);
  }
  out.weights = ad::softmax(logits);
  out.fused = ad::mix2(out.st, out.ts, out.weights);
  switch (cfg.ablation.velocity_source) {
    case VelocitySource::TS: out.velocity = out.ts; break;
    case VelocitySource::ST: out.velocity = out.st; break;
    case VelocitySource::Both: out.velocity = ad::scale(ad::add(out.st, out.ts), 0.5); break;
  }
  if (ctx.trace) {
    ctx.trace->fusion_weights.push_back(out.weights.value());
    ctx.trace->block_outputs.push_back(out.fused.value());
    ctx.trace->block_velocity.push_back(out.velocity.value());
  }
  return out;
}

VistaOutput vista_former(const ad::Var& x, const ModelParams& p, const ModelConfig& cfg, Context& ctx) {
  ad::Var f = x;
  ad::Var velocity_sum;
  for (const auto& block : p.blocks) {
    auto out = dst_block(f, block, cfg, ctx);
    f = out.fused;
    velocity_sum = velocity_sum.defined() ? ad::add(velocity_sum, out.velocity) : out.velocity;
  }
  VistaOutput out;
  out.last_fused = f;
  out.keypoint_feature = f;
  if (cfg.ablation.velocity_branch) {
    if (!p.velocity_temporal) throw std::logic_error("velocity branch enabled without parameters");
    out.velocity_feature = ctx.options.zero_velocity_feature
                               ? ad::constant(Tensor(f.shape(), 0.0))
                               : temporal_block(velocity_sum, *p.velocity_temporal, ctx);
    if (cfg.ablation.velocity_fusion) {
      out.keypoint_feature = ad::add(ad::scale(out.velocity_feature, 0.5), f);
    }
  }
  if (ctx.trace) {
    ctx.trace->last_fused = out.last_fused.value();
    ctx.trace->keypoint_feature = out.keypoint_feature.value();
    if (out.velocity_feature.defined()) ctx.trace->velocity_feature = out.velocity_feature.value();
  }
  return out;
}

Prediction decode(const VistaOutput& features, const ModelParams& p, const ModelConfig& cfg) {
  Prediction out;
  out.keypoints = apply_mlp(features.keypoint_feature, p.keypoint_head);
  const std::size_t last = cfg.window - 1;
  if (cfg.ablation.velocity_branch) {
    out.velocity = apply_mlp(ad::select(features.velocity_feature, 1, last), *p.velocity_head);
  } else {
    out.velocity = ad::sub(ad::select(out.keypoints, 1, last), ad::select(out.keypoints, 1, 0));
  }
  return out;
}

// ---------------------------------------------------------------- model

VstPose::VstPose(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Initializer init(store_, seed);
  const std::size_t d = cfg_.embed_dim, j = cfg_.joints, k = cfg_.kernel;
  auto& e = params_.encoder;
  e.conv1_w = init.uniform("encoder.conv1.weight", {cfg_.conv1_channels, cfg_.in_channels, k, k},
                           cfg_.in_channels * k * k);
  e.conv1_b = init.constant("encoder.conv1.bias", {cfg_.conv1_channels}, 0.0);
  e.conv2_w = init.uniform("encoder.conv2.weight", {cfg_.conv2_channels, cfg_.conv1_channels, k, k},
                           cfg_.conv1_channels * k * k);
  e.conv2_b = init.constant("encoder.conv2.bias", {cfg_.conv2_channels}, 0.0);
  e.conv3_w = init.uniform("encoder.conv3.weight", {j, cfg_.conv2_channels, k, k}, cfg_.conv2_channels * k * k);
  e.conv3_b = init.constant("encoder.conv3.bias", {j}, 0.0);
  const std::size_t flat = cfg_.pooled_rows() * cfg_.pooled_steps();
  e.proj_w = init.uniform("encoder.proj.weight", {flat, d}, flat);
  e.proj_b = init.constant("encoder.proj.bias", {d}, 0.0);

  params_.pos_temporal = init.constant("pos.temporal", {cfg_.window, 1, d}, 0.0);
  params_.pos_spatial = init.constant("pos.spatial", {1, j, d}, 0.0);

  const std::size_t flat_token = cfg_.temporal_token_dim();
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    const std::string pre = "blocks." + std::to_string(i);
    DstBlockParams b;
    b.st.spatial = init.attention(pre + ".st.spatial", d, cfg_.heads, cfg_.mlp_ratio);
    b.st.temporal = init.attention(pre + ".st.temporal", flat_token, cfg_.heads, cfg_.mlp_ratio);
    b.ts.temporal = init.attention(pre + ".ts.temporal", flat_token, cfg_.heads, cfg_.mlp_ratio);
    b.ts.spatial = init.attention(pre + ".ts.spatial", d, cfg_.heads, cfg_.mlp_ratio);
    b.fusion_w = init.uniform(pre + ".fusion.weight", {2 * d, 2}, 2 * d);
    params_.blocks.push_back(std::move(b));
  }
  if (cfg_.ablation.velocity_branch) {
    params_.velocity_temporal = init.attention("velocity.temporal", flat_token, cfg_.heads, cfg_.mlp_ratio);
  }
  params_.keypoint_head = init.mlp("decoder.keypoint", d, cfg_.decoder_hidden, cfg_.coord_dims);
  if (cfg_.ablation.velocity_branch) {
    params_.velocity_head = init.mlp("decoder.velocity", d, cfg_.decoder_hidden, cfg_.coord_dims);
  }
}

Prediction VstPose::forward(const ad::Var& input, const ForwardOptions& options, ForwardTrace* trace) const {
  Context ctx{options, trace};
  auto x = encode(input, params_.encoder, cfg_);
  if (trace) trace->encoded = x.value();
  x = add_positional(x, params_.pos_temporal, params_.pos_spatial);
  auto features = vista_former(x, params_, cfg_, ctx);
  return decode(features, params_, cfg_);
}

Prediction VstPose::predict(const Tensor& input) const {
  ad::NoGradGuard guard;
  return forward(ad::constant(input));
}

// ---------------------------------------------------------------- checkpoint

Checkpoint make_checkpoint(const VstPose& model) {
  Checkpoint c;
  c.config = model.config();
  for (const auto& [name, v] : model.parameters().entries()) c.parameters.emplace(name, v.value());
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open checkpoint for writing");
  nlohmann::json header{{"format", "vstpose-checkpoint"},
                        {"version", 1},
                        {"config", ckpt.config.to_json()},
                        {"metadata", ckpt.metadata},
                        {"parameters", ckpt.parameters.size()},
                        {"extras", ckpt.extras.size()}};
  const std::string line = header.dump() + "\n";
  os.write(line.data(), static_cast<std::streamsize>(line.size()));
  for (const auto& [name, t] : ckpt.parameters) {
    io::write_tensor(os, t, io::DType::F64, {{"name", name}, {"kind", "parameter"}});
  }
  for (const auto& [name, t] : ckpt.extras) {
    io::write_tensor(os, t, io::DType::F64, {{"name", name}, {"kind", "extra"}});
  }
  if (!os) throw std::runtime_error(path.string() + ": checkpoint write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open checkpoint");
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path.string() + ": empty checkpoint");
  Checkpoint c;
  std::size_t n_params = 0, n_extras = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != "vstpose-checkpoint") throw std::runtime_error("not a checkpoint");
    c.config = ModelConfig::from_json(header.at("config"));
    c.metadata = header.value("metadata", nlohmann::json::object());
    n_params = header.at("parameters").get<std::size_t>();
    n_extras = header.at("extras").get<std::size_t>();
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": malformed checkpoint header: " + e.what());
  }
  for (std::size_t i = 0; i < n_params + n_extras; ++i) {
    auto rec = io::read_tensor(is, path.string());
    if (!rec) throw std::runtime_error(path.string() + ": truncated checkpoint");
    const auto name = rec->header.value("name", std::string());
    const auto kind = rec->header.value("kind", std::string());
    auto& dest = kind == "parameter" ? c.parameters : c.extras;
    if (name.empty() || (kind != "parameter" && kind != "extra") || dest.contains(name)) {
      throw std::runtime_error(path.string() + ": bad checkpoint entry '" + name + "'");
    }
    dest.emplace(name, std::move(rec->tensor));
  }
  if (c.parameters.size() != n_params) throw std::runtime_error(path.string() + ": parameter count mismatch");
  return c;
}

VstPose model_from_checkpoint(const Checkpoint& ckpt) {
  VstPose model(ckpt.config, 0);
  std::set<std::string> used;
  for (const auto& [name, var] : model.parameters().entries()) {
    auto it = ckpt.parameters.find(name);
    if (it == ckpt.parameters.end()) throw std::runtime_error("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != var.shape()) {
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                               ", config expects " + shape_str(var.shape()));
    }
    if (!it->second.all_finite()) throw std::runtime_error("checkpoint parameter '" + name + "' is not finite");
    auto v = var;
    v.mutable_value() = it->second;
    used.insert(name);
  }
  for (const auto& [name, t] : ckpt.parameters) {
    if (!used.contains(name)) throw std::runtime_error("checkpoint has unexpected parameter '" + name + "'");
  }
  return model;
}

}  // namespace vstpose::model
