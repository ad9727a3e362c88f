#include "vstpose/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "vstpose/rng.hpp"

namespace vstpose::train {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 1000;

std::string scheduler_name(Scheduler::Kind k) { return k == Scheduler::Kind::Step ? "step" : "none"; }

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size_train == 0 || batch_size_eval == 0) throw std::invalid_argument("batch sizes must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive");
  if (scheduler.kind == Scheduler::Kind::Step) {
    if (scheduler.step_size == 0) throw std::invalid_argument("scheduler step_size must be positive");
    if (!(scheduler.gamma > 0.0 && scheduler.gamma <= 1.0)) throw std::invalid_argument("scheduler gamma must lie in (0, 1]");
  }
  if (grad_clip && !(*grad_clip > 0.0)) throw std::invalid_argument("grad_clip must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"alpha", alpha},
          {"epochs", epochs},
          {"batch_size_train", batch_size_train},
          {"batch_size_eval", batch_size_eval},
          {"lr", lr},
          {"scheduler", scheduler_name(scheduler.kind)},
          {"step_size", scheduler.step_size},
          {"gamma", scheduler.gamma},
          {"seed", seed},
          {"grad_clip", grad_clip ? nlohmann::json(*grad_clip) : nlohmann::json(nullptr)},
          {"max_steps", max_steps},
          {"deterministic", deterministic},
          {"normalize", normalize}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (!j.is_object()) throw std::invalid_argument("train config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "alpha") c.alpha = value.get<double>();
    else if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "batch_size_train") c.batch_size_train = value.get<std::size_t>();
    else if (key == "batch_size_eval") c.batch_size_eval = value.get<std::size_t>();
    else if (key == "lr") c.lr = value.get<double>();
    else if (key == "scheduler") {
      const auto s = value.get<std::string>();
      if (s == "none") c.scheduler.kind = Scheduler::Kind::None;
      else if (s == "step") c.scheduler.kind = Scheduler::Kind::Step;
      else throw std::invalid_argument("unknown scheduler '" + s + "' (expected none or step)");
    }
    else if (key == "step_size") c.scheduler.step_size = value.get<std::size_t>();
    else if (key == "gamma") c.scheduler.gamma = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "grad_clip") c.grad_clip = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    else if (key == "max_steps") c.max_steps = value.get<std::size_t>();
    else if (key == "deterministic") c.deterministic = value.get<bool>();
    else if (key == "normalize") c.normalize = value.get<bool>();
    else throw std::invalid_argument("unknown train config key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::self_collected_profile() {
  TrainConfig c;
  c.epochs = 100;
  c.scheduler = Scheduler::none();
  return c;
}

TrainConfig TrainConfig::mmfi_profile() {
  TrainConfig c;
  c.epochs = 50;
  c.scheduler = Scheduler::step(10, 0.85);
  return c;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (cfg.scheduler.kind == Scheduler::Kind::None) return cfg.lr;
  const auto k = static_cast<double>(epoch / cfg.scheduler.step_size);
  return cfg.lr * std::pow(cfg.scheduler.gamma, k);
}

// ---------------------------------------------------------------- loss

namespace {

void check_loss_shapes(const Shape& k_pred, const Shape& v_pred, const Tensor& k_gt) {
  if (k_gt.rank() != 4) throw std::invalid_argument("ground truth must be [B, T, J, C], got " + shape_str(k_gt.shape()));
  if (k_pred != k_gt.shape()) {
    throw std::invalid_argument("keypoint prediction " + shape_str(k_pred) + " does not match ground truth " +
                                shape_str(k_gt.shape()));
  }
  const Shape v{k_gt.dim(0), k_gt.dim(2), k_gt.dim(3)};
  if (v_pred != v) throw std::invalid_argument("velocity prediction " + shape_str(v_pred) + " must be " + shape_str(v));
  if (!k_gt.all_finite()) throw std::invalid_argument("ground truth contains non-finite values");
}

Tensor velocity_targets(const Tensor& k_gt) {
  const std::size_t b = k_gt.dim(0), t = k_gt.dim(1), jc = k_gt.dim(2) * k_gt.dim(3);
  Tensor v({b, k_gt.dim(2), k_gt.dim(3)});
  for (std::size_t i = 0; i < b; ++i) {
    const double* first = k_gt.ptr() + i * t * jc;
    const double* last = first + (t - 1) * jc;
    for (std::size_t e = 0; e < jc; ++e) v[i * jc + e] = last[e] - first[e];
  }
  return v;
}

}  // namespace

ad::Var loss(const ad::Var& k_pred, const ad::Var& v_pred, const Tensor& k_gt, double alpha) {
  check_loss_shapes(k_pred.shape(), v_pred.shape(), k_gt);
  if (!k_pred.value().all_finite() || !v_pred.value().all_finite()) {
    throw std::invalid_argument("prediction contains non-finite values");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  auto keypoint_term = ad::scale(ad::mean_squared_error(k_pred, ad::constant(k_gt)), 1.0 - alpha);
  if (alpha == 0.0) return keypoint_term;
  auto velocity_term = ad::scale(ad::mean_squared_error(v_pred, ad::constant(velocity_targets(k_gt))), alpha);
  return ad::add(velocity_term, keypoint_term);
}

double loss_value(const Tensor& k_pred, const Tensor& v_pred, const Tensor& k_gt, double alpha) {
  ad::NoGradGuard guard;
  return loss(ad::constant(k_pred), ad::constant(v_pred), k_gt, alpha).value()[0];
}

// ---------------------------------------------------------------- normalizer

Normalizer Normalizer::identity(std::size_t dims) {
  Normalizer n;
  n.coord_mean.assign(dims, 0.0);
  return n;
}

Normalizer Normalizer::fit(const std::vector<data::CsiWindow>& windows) {
  if (windows.empty()) throw std::invalid_argument("cannot fit normalization on an empty training set");
  const std::size_t dims = windows.front().skeleton.dims();
  Normalizer n = identity(dims);

  double in_sum = 0.0, in_sq = 0.0, in_count = 0.0;
  std::vector<double> c_sum(dims, 0.0);
  double c_count = 0.0;
  for (const auto& w : windows) {
    for (double x : w.frames.data()) {
      in_sum += x;
      in_sq += x * x;
    }
    in_count += static_cast<double>(w.frames.numel());
    const auto& k = w.skeleton.coords;
    for (std::size_t i = 0; i < k.numel(); ++i) c_sum[i % dims] += k[i];
    c_count += static_cast<double>(k.numel() / dims);
  }
  n.input_mean = in_sum / in_count;
  const double in_var = std::max(0.0, in_sq / in_count - n.input_mean * n.input_mean);
  n.input_scale = in_var > 1e-24 ? std::sqrt(in_var) : 1.0;

  for (std::size_t d = 0; d < dims; ++d) n.coord_mean[d] = c_sum[d] / c_count;
  double c_sq = 0.0;
  for (const auto& w : windows) {
    const auto& k = w.skeleton.coords;
    for (std::size_t i = 0; i < k.numel(); ++i) {
      const double c = k[i] - n.coord_mean[i % dims];
      c_sq += c * c;
    }
  }
  const double c_var = c_sq / (c_count * static_cast<double>(dims));
  n.coord_scale = c_var > 1e-24 ? std::sqrt(c_var) : 1.0;
  return n;
}

Tensor Normalizer::input(const Tensor& x) const {
  Tensor out = x;
  for (double& v : out.data()) v = (v - input_mean) / input_scale;
  return out;
}

Tensor Normalizer::coords(const Tensor& k) const {
  const std::size_t dims = coord_mean.size();
  if (k.rank() == 0 || k.shape().back() != dims) {
    throw std::invalid_argument("coordinates " + shape_str(k.shape()) + " do not end in " + std::to_string(dims));
  }
  Tensor out = k;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - coord_mean[i % dims]) / coord_scale;
  return out;
}

Tensor Normalizer::coords_to_units(const Tensor& k) const {
  const std::size_t dims = coord_mean.size();
  Tensor out = k;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] * coord_scale + coord_mean[i % dims];
  return out;
}

Tensor Normalizer::velocity_to_units(const Tensor& v) const {
  Tensor out = v;
  for (double& x : out.data()) x *= coord_scale;
  return out;
}

void Normalizer::store(std::map<std::string, Tensor>& extras) const {
  extras["normalizer.input"] = Tensor({2}, {input_mean, input_scale});
  extras["normalizer.coord_mean"] = Tensor({coord_mean.size()}, coord_mean);
  extras["normalizer.coord_scale"] = Tensor({1}, {coord_scale});
}

Normalizer Normalizer::load(const std::map<std::string, Tensor>& extras, std::size_t dims) {
  const auto in = extras.find("normalizer.input");
  const auto mean = extras.find("normalizer.coord_mean");
  const auto scale = extras.find("normalizer.coord_scale");
  if (in == extras.end() && mean == extras.end() && scale == extras.end()) return identity(dims);
  if (in == extras.end() || mean == extras.end() || scale == extras.end()) {
    throw std::runtime_error("checkpoint has incomplete normalization statistics");
  }
  if (in->second.numel() != 2 || mean->second.numel() != dims || scale->second.numel() != 1) {
    throw std::runtime_error("checkpoint normalization statistics have wrong sizes");
  }
  Normalizer n;
  n.input_mean = in->second[0];
  n.input_scale = in->second[1];
  n.coord_mean = mean->second.storage();
  n.coord_scale = scale->second[0];
  if (!(n.input_scale > 0.0) || !(n.coord_scale > 0.0)) {
    throw std::runtime_error("checkpoint normalization scales must be positive");
  }
  return n;
}

// ---------------------------------------------------------------- Adam

Adam::Adam(const model::ParameterStore& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, var] : params.entries()) {
    names_.push_back(name);
    m_.emplace_back(var.shape());
    v_.emplace_back(var.shape());
  }
}

void Adam::step(const model::ParameterStore& params, double lr, double grad_scale) {
  const auto& entries = params.entries();
  if (entries.size() != names_.size()) throw std::logic_error("optimizer bound to a different parameter set");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto var = entries[p].second;
    const Tensor g = var.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    auto& w = var.mutable_value();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i] * grad_scale;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

void Adam::store(std::map<std::string, Tensor>& extras) const {
  for (std::size_t p = 0; p < names_.size(); ++p) {
    extras["optimizer.m." + names_[p]] = m_[p];
    extras["optimizer.v." + names_[p]] = v_[p];
  }
}

void Adam::load(const std::map<std::string, Tensor>& extras, std::size_t steps) {
  for (std::size_t p = 0; p < names_.size(); ++p) {
    using Slot = std::pair<std::string, Tensor*>;
    for (const auto& [prefix, dest] : {Slot{"optimizer.m.", &m_[p]}, Slot{"optimizer.v.", &v_[p]}}) {
      const auto it = extras.find(prefix + names_[p]);
      if (it == extras.end()) throw std::runtime_error("checkpoint is missing optimizer state for '" + names_[p] + "'");
      if (it->second.shape() != dest->shape()) {
        throw std::runtime_error("optimizer state for '" + names_[p] + "' has the wrong shape");
      }
      *dest = it->second;
    }
  }
  t_ = steps;
}

// ---------------------------------------------------------------- records and prediction

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j{{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}, {"steps", steps}};
  for (std::size_t i = 0; i < pck.size(); ++i) {
    j["pck" + std::to_string(static_cast<int>(eval::kPckThresholds[i]))] = pck[i];
  }
  j["mpjpe"] = mpjpe;
  j["pa_mpjpe"] = pa_mpjpe;
  return j;
}

Predictions predict_windows(const model::VstPose& model, const Normalizer& norm,
                            const std::vector<data::CsiWindow>& windows, std::size_t batch_size) {
  if (windows.empty()) throw std::invalid_argument("no windows to predict");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  const auto& cfg = model.config();
  const std::size_t t = cfg.window, j = cfg.joints, c = cfg.coord_dims;

  std::vector<double> kp, truth, vel, conf;
  bool all_conf = true;
  Predictions out;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t end = std::min(windows.size(), begin + batch_size);
    std::vector<const data::CsiWindow*> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&windows[i]);
    const auto pred = model.predict(norm.input(data::stack_inputs(batch)));
    const Tensor k = norm.coords_to_units(pred.keypoints.value());
    const Tensor v = norm.velocity_to_units(pred.velocity.value());
    kp.insert(kp.end(), k.storage().begin(), k.storage().end());
    vel.insert(vel.end(), v.storage().begin(), v.storage().end());
    for (const auto* w : batch) {
      truth.insert(truth.end(), w->skeleton.coords.storage().begin(), w->skeleton.coords.storage().end());
      for (std::size_t f = 0; f < t; ++f) out.actions.push_back(w->action);
      if (w->skeleton.confidence) {
        conf.insert(conf.end(), w->skeleton.confidence->storage().begin(), w->skeleton.confidence->storage().end());
      } else {
        all_conf = false;
      }
    }
  }
  const std::size_t frames = windows.size() * t;
  out.keypoints = Tensor({frames, j, c}, std::move(kp));
  out.truth = Tensor({frames, j, c}, std::move(truth));
  out.velocity = Tensor({windows.size(), j, c}, std::move(vel));
  if (all_conf) out.confidence = Tensor({frames, j}, std::move(conf));
  return out;
}

eval::ReportOptions default_report_options(const model::ModelConfig& cfg) {
  eval::ReportOptions o;
  if (cfg.joints != data::kCoco17Joints) o.normalization.kind = eval::NormalizationOption::Kind::Fixed;
  return o;
}

namespace {

eval::MetricReport report_for(const Predictions& p, const eval::ReportOptions& options) {
  eval::ReportInput in{p.keypoints, p.truth, p.actions, p.confidence, {}};
  return eval::build_report(in, options);
}

}  // namespace

// ---------------------------------------------------------------- trainer

Trainer::Trainer(model::ModelConfig model_cfg, TrainConfig cfg)
    : model_cfg_(std::move(model_cfg)),
      cfg_(std::move(cfg)),
      model_((cfg_.validate(), model_cfg_), derive_seed(cfg_.seed, kInitStream)),
      adam_(model_.parameters()),
      norm_(Normalizer::identity(model_cfg_.coord_dims)) {}

double Trainer::effective_alpha() const { return model_cfg_.ablation.velocity_branch ? cfg_.alpha : 0.0; }

void Trainer::prepare(const std::vector<data::CsiWindow>& train) {
  if (cfg_.normalize) norm_ = Normalizer::fit(train);
}

double Trainer::train_step(const std::vector<const data::CsiWindow*>& batch, double lr) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  auto& store = model_.parameters();
  store.zero_grad();
  const Tensor input = norm_.input(data::stack_inputs(batch));
  const Tensor target = norm_.coords(data::stack_targets(batch));
  const auto pred = model_.forward(ad::constant(input));
  if (!pred.keypoints.value().all_finite() || !pred.velocity.value().all_finite()) {
    throw TrainingDiverged("non-finite prediction at step " + std::to_string(steps() + 1));
  }
  const auto l = loss(pred.keypoints, pred.velocity, target, effective_alpha());
  const double value = l.value()[0];
  if (!std::isfinite(value)) throw TrainingDiverged("non-finite loss at step " + std::to_string(steps() + 1));
  l.backward();

  double sq = 0.0;
  for (const auto& [name, var] : store.entries()) {
    const Tensor g = var.grad();
    for (double v : g.data()) sq += v * v;
  }
  if (!std::isfinite(sq)) throw TrainingDiverged("non-finite gradient at step " + std::to_string(steps() + 1));
  double grad_scale = 1.0;
  if (cfg_.grad_clip) {
    const double norm = std::sqrt(sq);
    if (norm > *cfg_.grad_clip) grad_scale = *cfg_.grad_clip / norm;
  }
  adam_.step(store, lr, grad_scale);
  return value;
}

double Trainer::evaluate_loss(const std::vector<data::CsiWindow>& windows) const {
  if (windows.empty()) throw std::invalid_argument("no windows to evaluate");
  double total = 0.0;
  for (std::size_t begin = 0; begin < windows.size(); begin += cfg_.batch_size_eval) {
    const std::size_t end = std::min(windows.size(), begin + cfg_.batch_size_eval);
    std::vector<const data::CsiWindow*> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&windows[i]);
    const auto pred = model_.predict(norm_.input(data::stack_inputs(batch)));
    const double l = loss_value(pred.keypoints.value(), pred.velocity.value(),
                                norm_.coords(data::stack_targets(batch)), effective_alpha());
    total += l * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(windows.size());
}

std::vector<const data::CsiWindow*> Trainer::epoch_order(const std::vector<data::CsiWindow>& train,
                                                         std::size_t epoch) const {
  std::vector<const data::CsiWindow*> order;
  order.reserve(train.size());
  for (const auto& w : train) order.push_back(&w);
  Rng rng(derive_seed(cfg_.seed, kShuffleStream + epoch));
  rng.shuffle(order);
  return order;
}

double Trainer::run_epoch(const std::vector<data::CsiWindow>& train, std::size_t epoch) {
  if (train.empty()) throw std::invalid_argument("empty training set");
  const auto order = epoch_order(train, epoch);
  const double lr = lr_at(epoch, cfg_);
  double total = 0.0;
  std::size_t seen = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size_train) {
    if (cfg_.max_steps && steps() >= cfg_.max_steps) break;
    const std::size_t end = std::min(order.size(), begin + cfg_.batch_size_train);
    std::vector<const data::CsiWindow*> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                              order.begin() + static_cast<std::ptrdiff_t>(end));
    total += train_step(batch, lr) * static_cast<double>(batch.size());
    seen += batch.size();
  }
  epochs_done_ = epoch + 1;
  return seen ? total / static_cast<double>(seen) : 0.0;
}

model::Checkpoint Trainer::checkpoint(bool with_optimizer) const {
  auto c = model::make_checkpoint(model_);
  norm_.store(c.extras);
  c.metadata["train_config"] = cfg_.to_json();
  c.metadata["epochs_done"] = epochs_done_;
  c.metadata["steps"] = steps();
  if (with_optimizer) adam_.store(c.extras);
  return c;
}

void Trainer::resume(const model::Checkpoint& ckpt) {
  if (!(ckpt.config == model_cfg_)) throw std::runtime_error("checkpoint model config differs from the requested one");
  auto restored = model::model_from_checkpoint(ckpt);
  for (const auto& [name, var] : model_.parameters().entries()) {
    auto v = var;
    v.mutable_value() = restored.parameters().at(name).value();
  }
  norm_ = Normalizer::load(ckpt.extras, model_cfg_.coord_dims);
  adam_.load(ckpt.extras, ckpt.metadata.value("steps", std::size_t{0}));
  epochs_done_ = ckpt.metadata.value("epochs_done", std::size_t{0});
}

// ---------------------------------------------------------------- loop

TrainResult train(const std::vector<data::CsiWindow>& train_set, const std::vector<data::CsiWindow>& eval_set,
                  const model::ModelConfig& model_cfg, const TrainConfig& cfg, const TrainOptions& options) {
  if (train_set.empty()) throw std::invalid_argument("empty training set");
  Trainer trainer(model_cfg, cfg);
  if (options.resume_from) {
    trainer.resume(*options.resume_from);
  } else {
    trainer.prepare(train_set);
  }
  const auto& metric_set = eval_set.empty() ? train_set : eval_set;
  const auto report_options = default_report_options(model_cfg);

  std::ofstream log;
  if (options.metric_log) {
    log.open(*options.metric_log, std::ios::app);
    if (!log) throw std::runtime_error(options.metric_log->string() + ": cannot open metric log");
  }

  TrainResult result;
  result.best_mpjpe = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = trainer.epochs_done(); epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && trainer.steps() >= cfg.max_steps) break;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, cfg);
    rec.train_loss = trainer.run_epoch(train_set, epoch);
    rec.steps = trainer.steps();

    const auto report =
        report_for(predict_windows(trainer.model(), trainer.normalizer(), metric_set, cfg.batch_size_eval),
                   report_options);
    rec.pck = report.average_pck;
    rec.mpjpe = report.mpjpe;
    rec.pa_mpjpe = report.pa_mpjpe;
    spdlog::info("epoch {} lr {:.3g} loss {:.6g} mpjpe {:.4g} pck20 {:.2f}", epoch, rec.lr, rec.train_loss,
                 rec.mpjpe, rec.pck[3]);

    if (log) log << rec.to_json().dump() << '\n' << std::flush;
    if (rec.mpjpe < result.best_mpjpe) {
      result.best_mpjpe = rec.mpjpe;
      result.best_epoch = epoch;
      result.best = trainer.checkpoint(false);
      result.best.metadata["best_mpjpe"] = rec.mpjpe;
      if (options.best_checkpoint) model::save_checkpoint(*options.best_checkpoint, result.best);
    }
    if (options.state_checkpoint) model::save_checkpoint(*options.state_checkpoint, trainer.checkpoint(true));
    if (options.on_epoch) options.on_epoch(rec);
    result.log.push_back(rec);
  }
  if (result.log.empty()) result.best = trainer.checkpoint(false);
  return result;
}

eval::MetricReport evaluate(const model::Checkpoint& ckpt, const std::vector<data::CsiWindow>& windows,
                            std::size_t batch_size, const std::optional<eval::ReportOptions>& options) {
  const auto model = model::model_from_checkpoint(ckpt);
  const auto norm = Normalizer::load(ckpt.extras, ckpt.config.coord_dims);
  return report_for(predict_windows(model, norm, windows, batch_size),
                    options.value_or(default_report_options(ckpt.config)));
}

// ---------------------------------------------------------------- gradient check

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const model::ModelConfig& cfg, const Tensor& input, const Tensor& target, double epsilon,
                           const GradCheckOptions& options) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  model::VstPose model(cfg, options.seed);
  const double alpha = cfg.ablation.velocity_branch ? options.alpha : 0.0;
  const auto x = ad::constant(input);

  model.parameters().zero_grad();
  {
    const auto pred = model.forward(x);
    loss(pred.keypoints, pred.velocity, target, alpha).backward();
  }
  auto eval_loss = [&] {
    ad::NoGradGuard guard;
    const auto pred = model.forward(x);
    return loss(pred.keypoints, pred.velocity, target, alpha).value()[0];
  };

  GradCheckReport report;
  Rng rng(derive_seed(options.seed, 77));
  for (const auto& [name, entry] : model.parameters().entries()) {
    auto var = entry;
    const Tensor analytic = var.grad();
    const std::size_t n = var.value().numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > options.sample_above) {
      rng.shuffle(coords);
      coords.resize(options.sample_count);
    }
    TensorGradCheck tc{name, coords.size(), n, 0.0, 0.0};
    for (std::size_t i : coords) {
      double& w = var.mutable_value()[i];
      const double saved = w;
      w = saved + epsilon;
      const double plus = eval_loss();
      w = saved - epsilon;
      const double minus = eval_loss();
      w = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      tc.max_abs_error = std::max(tc.max_abs_error, std::abs(analytic[i] - numeric));
      tc.max_rel_error = std::max(tc.max_rel_error, relative_error(analytic[i], numeric, options.floor));
    }
    report.coordinates += coords.size();
    if (tc.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = tc.max_rel_error;
      report.worst_tensor = name;
    }
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

}  // namespace vstpose::train
