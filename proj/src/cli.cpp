#include "vstpose/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <spdlog/spdlog.h>

#include "vstpose/container.hpp"
#include "vstpose/rng.hpp"

namespace vstpose::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void unknown_key(const std::string& section, const std::string& key) {
  throw std::invalid_argument("unknown config key '" + section + "." + key + "'");
}

void require_object(const json& j, const std::string& section) {
  if (!j.is_object()) throw std::invalid_argument("config section '" + section + "' must be an object");
}

// ---------------------------------------------------------------- section codecs

json synth_to_json(const data::SynthConfig& s) {
  return {{"num_clips", s.num_clips}, {"clip_len", s.clip_len},       {"window", s.window},
          {"stride", s.stride},       {"joints", s.joints},           {"dims", s.dims},
          {"noise_sigma", s.noise_sigma}, {"seed", s.seed},           {"channels", s.channels},
          {"rows", s.rows},           {"steps", s.steps}};
}

data::SynthConfig synth_from_json(const json& j) {
  require_object(j, "synth");
  data::SynthConfig s;
  for (const auto& [key, v] : j.items()) {
    if (key == "num_clips") s.num_clips = v.get<std::size_t>();
    else if (key == "clip_len") s.clip_len = v.get<std::size_t>();
    else if (key == "window") s.window = v.get<std::size_t>();
    else if (key == "stride") s.stride = v.get<std::size_t>();
    else if (key == "joints") s.joints = v.get<std::size_t>();
    else if (key == "dims") s.dims = v.get<std::size_t>();
    else if (key == "noise_sigma") s.noise_sigma = v.get<double>();
    else if (key == "seed") s.seed = v.get<std::uint64_t>();
    else if (key == "channels") s.channels = v.get<std::size_t>();
    else if (key == "rows") s.rows = v.get<std::size_t>();
    else if (key == "steps") s.steps = v.get<std::size_t>();
    else unknown_key("synth", key);
  }
  return s;
}

json wavelet_to_json(const signal::WaveletConfig& w) {
  return {{"family", signal::to_string(w.family)},
          {"levels", w.levels},
          {"mode", w.mode == signal::ThresholdMode::Soft ? "soft" : "hard"},
          {"threshold", w.rule.kind == signal::ThresholdRule::Kind::Universal ? json("universal") : json(w.rule.value)}};
}

signal::WaveletConfig wavelet_from_json(const json& j) {
  require_object(j, "wavelet");
  signal::WaveletConfig w;
  for (const auto& [key, v] : j.items()) {
    if (key == "family") w.family = signal::wavelet_family_from_string(v.get<std::string>());
    else if (key == "levels") w.levels = v.get<int>();
    else if (key == "mode") {
      const auto m = v.get<std::string>();
      if (m == "soft") w.mode = signal::ThresholdMode::Soft;
      else if (m == "hard") w.mode = signal::ThresholdMode::Hard;
      else throw std::invalid_argument("wavelet.mode must be soft or hard, got '" + m + "'");
    } else if (key == "threshold") {
      if (v.is_string() && v.get<std::string>() == "universal") w.rule = signal::ThresholdRule::universal();
      else if (v.is_number()) w.rule = signal::ThresholdRule::fixed(v.get<double>());
      else throw std::invalid_argument("wavelet.threshold must be \"universal\" or a number");
    } else {
      unknown_key("wavelet", key);
    }
  }
  w.validate();
  return w;
}

json data_to_json(const DataConfig& d) {
  return {{"manifest", d.manifest.string()},
          {"stride", d.stride},
          {"clip_len", d.clip_len},
          {"max_clips", d.max_clips},
          {"train_parts", d.split.train_parts},
          {"test_parts", d.split.test_parts},
          {"split_seed", d.split.seed},
          {"split_by", d.split.granularity == data::SplitGranularity::Clip ? "clip" : "window"},
          {"confidence_threshold", d.confidence_threshold},
          {"denoise", d.denoise},
          {"mmfi", d.mmfi}};
}

DataConfig data_from_json(const json& j) {
  require_object(j, "data");
  DataConfig d;
  for (const auto& [key, v] : j.items()) {
    if (key == "manifest") d.manifest = v.get<std::string>();
    else if (key == "stride") d.stride = v.get<std::size_t>();
    else if (key == "clip_len") d.clip_len = v.get<std::size_t>();
    else if (key == "max_clips") d.max_clips = v.get<std::size_t>();
    else if (key == "train_parts") d.split.train_parts = v.get<std::size_t>();
    else if (key == "test_parts") d.split.test_parts = v.get<std::size_t>();
    else if (key == "split_seed") d.split.seed = v.get<std::uint64_t>();
    else if (key == "split_by") {
      const auto g = v.get<std::string>();
      if (g == "clip") d.split.granularity = data::SplitGranularity::Clip;
      else if (g == "window") d.split.granularity = data::SplitGranularity::Window;
      else throw std::invalid_argument("data.split_by must be clip or window, got '" + g + "'");
    } else if (key == "confidence_threshold") d.confidence_threshold = v.get<double>();
    else if (key == "denoise") d.denoise = v.get<bool>();
    else if (key == "mmfi") d.mmfi = v.get<bool>();
    else unknown_key("data", key);
  }
  if (d.stride == 0 || d.clip_len == 0) throw std::invalid_argument("data.stride and data.clip_len must be >= 1");
  d.split.validate();
  return d;
}

json eval_to_json(const EvalConfig& e) {
  return {{"normalization", e.normalization},
          {"fixed_length", e.fixed_length},
          {"units", e.units},
          {"confidence_threshold", e.confidence_threshold}};
}

EvalConfig eval_from_json(const json& j) {
  require_object(j, "eval");
  EvalConfig e;
  for (const auto& [key, v] : j.items()) {
    if (key == "normalization") e.normalization = v.get<std::string>();
    else if (key == "fixed_length") e.fixed_length = v.get<double>();
    else if (key == "units") e.units = v.get<std::string>();
    else if (key == "confidence_threshold") e.confidence_threshold = v.get<double>();
    else unknown_key("eval", key);
  }
  if (e.normalization != "auto" && e.normalization != "torso" && e.normalization != "fixed") {
    throw std::invalid_argument("eval.normalization must be auto, torso or fixed");
  }
  if (!(e.fixed_length > 0.0)) throw std::invalid_argument("eval.fixed_length must be positive");
  return e;
}

const std::vector<std::string> kAblationAxes{"window", "depth", "velocity_branch", "velocity_source",
                                             "velocity_fusion", "alpha"};

void validate_ablate(const json& j) {
  require_object(j, "ablate");
  for (const auto& [key, v] : j.items()) {
    if (std::find(kAblationAxes.begin(), kAblationAxes.end(), key) == kAblationAxes.end()) unknown_key("ablate", key);
    if (!v.is_array()) throw std::invalid_argument("ablate." + key + " must be a list of values");
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- data loading

void require_manifest(const RunConfig& cfg) {
  if (cfg.data.manifest.empty()) throw std::invalid_argument("data.manifest is required (use --manifest)");
}

/// All windows of the framed-clip manifest in manifest order.
std::vector<data::CsiWindow> load_windows(const RunConfig& cfg, std::size_t window) {
  require_manifest(cfg);
  const auto clips = data::read_clips(cfg.data.manifest);
  auto windows = data::slide_windows(clips, window, cfg.data.stride);
  return data::filter_by_confidence(std::move(windows), cfg.data.confidence_threshold);
}

data::Split load_split(const RunConfig& cfg, std::size_t window) {
  require_manifest(cfg);
  if (cfg.data.mmfi) {
    data::MmfiProtocol p{window, cfg.data.stride, cfg.data.split.train_parts, cfg.data.split.test_parts,
                         cfg.data.split.seed};
    return data::load_mmfi_style(cfg.data.manifest.parent_path(), p).split;
  }
  return data::split(load_windows(cfg, window), cfg.data.split);
}

void check_geometry(const std::vector<data::CsiWindow>& windows, const model::ModelConfig& m) {
  if (windows.empty()) throw std::runtime_error("dataset produced no windows");
  const auto& w = windows.front();
  const Shape frame{m.window, m.in_channels, m.in_rows, m.in_steps};
  if (w.frames.shape() != frame) {
    throw std::runtime_error("window frames are " + shape_str(w.frames.shape()) + " but the model expects " +
                             shape_str(frame));
  }
  if (w.skeleton.joints() != m.joints || w.skeleton.dims() != m.coord_dims) {
    throw std::runtime_error("skeletons have " + std::to_string(w.skeleton.joints()) + " joints x " +
                             std::to_string(w.skeleton.dims()) + " dims but the model expects " +
                             std::to_string(m.joints) + " x " + std::to_string(m.coord_dims));
  }
}

json summary_of(const eval::MetricReport& r) {
  json j = r.to_json()["averages"];
  j["frames"] = r.frames;
  return j;
}

void write_reports(const fs::path& out, const eval::MetricReport& r) {
  eval::write_report_table(out / "report.tsv", r);
  eval::write_report_json(out / "report.json", r);
  if (!r.per_action.empty()) eval::write_action_chart(out / "actions.tsv", r);
}

struct TrainOutcome {
  train::TrainResult result;
  eval::MetricReport report;
};

TrainOutcome train_and_evaluate(const RunConfig& cfg, const data::Split& split, const fs::path& out,
                                const std::optional<fs::path>& resume) {
  check_geometry(split.train, cfg.model);
  train::TrainOptions opts;
  opts.metric_log = out / "metrics.jsonl";
  opts.best_checkpoint = out / "best.ckpt";
  opts.state_checkpoint = out / "state.ckpt";
  if (resume) opts.resume_from = model::load_checkpoint(*resume);
  TrainOutcome o;
  o.result = train::train(split.train, split.test, cfg.model, cfg.train, opts);
  const auto& eval_set = split.test.empty() ? split.train : split.test;
  o.report = train::evaluate(o.result.best, eval_set, cfg.train.batch_size_eval, report_options(cfg, cfg.model));
  return o;
}

// ---------------------------------------------------------------- commands

int cmd_synth(const RunConfig& cfg, const fs::path& out) {
  const auto clips = data::synth_clips(cfg.synth);
  fs::create_directories(out / "data");
  data::write_clips(out / "data", clips);
  write_json(out / "summary.json", {{"clips", clips.size()}, {"manifest", (out / "data" / "manifest.tsv").string()}});
  spdlog::info("wrote {} synthetic clips to {}", clips.size(), (out / "data").string());
  return 0;
}

data::SkeletonSequence load_skeletons(const fs::path& path) {
  const auto t = io::load_tensor(path);
  if (t.rank() != 3) throw std::runtime_error(path.string() + ": skeleton tensor must be [frames, joints, dims]");
  // BODY_25 tracks carry (x, y, confidence) and are reduced to COCO-17.
  if (t.dim(1) == data::kBody25Joints && t.dim(2) == 3) return data::select_coco17_sequence(t);
  data::SkeletonSequence s;
  s.coords = t;
  s.validate();
  return s;
}

int cmd_preprocess(const RunConfig& cfg, const fs::path& out) {
  require_manifest(cfg);
  const auto rows = data::read_manifest(cfg.data.manifest);
  std::vector<data::Clip> clips;
  std::size_t frames_total = 0;
  for (const auto& row : rows) {
    data::RawCsiRecording rec;
    rec.amplitudes = io::load_tensor(row.csi_path);
    try {
      rec.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(row.csi_path.string() + ": " + e.what());
    }
    if (cfg.data.denoise) rec = data::denoise_recording(rec, cfg.wavelet);
    const auto frames = data::assemble_frames(rec);
    frames_total += frames.size();
    auto segment = data::align_with_video(frames, load_skeletons(row.skeleton_path));
    segment.action = row.action;
    segment.subject = row.subject;
    auto part = data::split_into_clips(segment, cfg.data.clip_len, cfg.data.max_clips, clips.size());
    for (auto& c : part) clips.push_back(std::move(c));
  }
  fs::create_directories(out / "data");
  data::write_clips(out / "data", clips);
  const auto windows = data::slide_windows(clips, cfg.model.window, cfg.data.stride);
  write_json(out / "summary.json", {{"recordings", rows.size()},
                                    {"frames", frames_total},
                                    {"clips", clips.size()},
                                    {"windows", windows.size()},
                                    {"manifest", (out / "data" / "manifest.tsv").string()}});
  spdlog::info("{} recordings -> {} frames -> {} clips -> {} windows", rows.size(), frames_total, clips.size(),
               windows.size());
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& out, const CommandOptions& options) {
  const auto split = load_split(cfg, cfg.model.window);
  spdlog::info("train windows {}, test windows {}", split.train.size(), split.test.size());
  const auto o = train_and_evaluate(cfg, split, out, options.resume);
  write_reports(out, o.report);
  json s = summary_of(o.report);
  s["best_epoch"] = o.result.best_epoch;
  s["epochs_run"] = o.result.log.size();
  write_json(out / "summary.json", s);
  return 0;
}

model::Checkpoint require_checkpoint(const CommandOptions& options) {
  if (!options.checkpoint) throw std::invalid_argument("--checkpoint is required");
  return model::load_checkpoint(*options.checkpoint);
}

int cmd_eval(const RunConfig& cfg, const fs::path& out, const CommandOptions& options) {
  const auto ckpt = require_checkpoint(options);
  std::vector<data::CsiWindow> windows;
  if (options.all_windows && !cfg.data.mmfi) {
    windows = load_windows(cfg, ckpt.config.window);
  } else {
    auto split = load_split(cfg, ckpt.config.window);
    windows = std::move(split.test);
    if (options.all_windows) windows.insert(windows.end(), split.train.begin(), split.train.end());
  }
  check_geometry(windows, ckpt.config);
  const auto report = train::evaluate(ckpt, windows, cfg.train.batch_size_eval, report_options(cfg, ckpt.config));
  write_reports(out, report);
  write_json(out / "summary.json", summary_of(report));
  std::cout << summary_of(report).dump() << '\n';
  return 0;
}

int cmd_predict(const RunConfig& cfg, const fs::path& out, const CommandOptions& options) {
  const auto ckpt = require_checkpoint(options);
  const auto windows = load_windows(cfg, ckpt.config.window);
  check_geometry(windows, ckpt.config);
  const auto model = model::model_from_checkpoint(ckpt);
  const auto norm = train::Normalizer::load(ckpt.extras, ckpt.config.coord_dims);
  const auto p = train::predict_windows(model, norm, windows, cfg.train.batch_size_eval);
  io::save_tensor(out / "keypoints.tensor", p.keypoints, io::DType::F64);
  io::save_tensor(out / "velocity.tensor", p.velocity, io::DType::F64);
  write_json(out / "summary.json", {{"windows", windows.size()}, {"frames", p.keypoints.dim(0)}});
  return 0;
}

std::vector<json> grid_cells(const json& axes) {
  if (axes.empty()) throw std::invalid_argument("ablation grid is empty: set at least one axis under 'ablate'");
  std::vector<json> cells{json::object()};
  for (const auto& [key, values] : axes.items()) {
    if (values.empty()) throw std::invalid_argument("ablation axis '" + key + "' has no values");
    std::vector<json> next;
    for (const auto& cell : cells) {
      for (const auto& v : values) {
        auto c = cell;
        c[key] = v;
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

RunConfig apply_cell(RunConfig cfg, const json& cell) {
  auto& a = cfg.model.ablation;
  for (const auto& [key, v] : cell.items()) {
    if (key == "window") cfg.model.window = v.get<std::size_t>();
    else if (key == "depth") cfg.model.depth = v.get<std::size_t>();
    else if (key == "velocity_branch") a.velocity_branch = v.get<bool>();
    else if (key == "velocity_source") a.velocity_source = model::velocity_source_from_string(v.get<std::string>());
    else if (key == "velocity_fusion") a.velocity_fusion = v.get<bool>();
    else if (key == "alpha") cfg.train.alpha = v.get<double>();
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

struct CellResult {
  std::string row;  // tab-separated fields after the cell index
  bool ok = false;
};

CellResult run_cell(const RunConfig& cfg, const json& cell, const fs::path& dir, std::size_t index) {
  CellResult r;
  std::ostringstream row;
  row << std::setprecision(10);
  try {
    fs::create_directories(dir);
    const auto cell_cfg = apply_cell(cfg, cell);
    write_json(dir / "config.json", cell_cfg.to_json());
    const auto& m = cell_cfg.model;
    row << '\t' << m.window << '\t' << m.depth << '\t' << (m.ablation.velocity_branch ? "on" : "off") << '\t'
        << model::to_string(m.ablation.velocity_source) << '\t' << (m.ablation.velocity_fusion ? "on" : "off") << '\t'
        << cell_cfg.train.alpha;
    const auto o = train_and_evaluate(cell_cfg, load_split(cell_cfg, m.window), dir, std::nullopt);
    write_reports(dir, o.report);
    for (double v : o.report.average_pck) row << '\t' << v;
    row << '\t' << o.report.mpjpe << '\t' << o.report.pa_mpjpe << "\tok";
    r.ok = true;
    spdlog::info("cell {} {}: mpjpe {:.4g}", index, cell.dump(), o.report.mpjpe);
  } catch (const std::exception& e) {
    spdlog::error("cell {} {} failed: {}", index, cell.dump(), e.what());
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\t', ' ');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    row << "\terror: " << msg;
  }
  r.row = row.str();
  return r;
}

int cmd_ablate(const RunConfig& cfg, const fs::path& out, std::size_t jobs) {
  const auto cells = grid_cells(cfg.ablate);
  std::ofstream table(out / "ablation.tsv", std::ios::trunc);
  if (!table) throw std::runtime_error((out / "ablation.tsv").string() + ": cannot open for writing");
  table << "cell\twindow\tdepth\tvelocity_branch\tvelocity_source\tvelocity_fusion\talpha";
  for (double a : eval::kPckThresholds) table << "\tPCK@" << static_cast<int>(a);
  table << "\tMPJPE\tPA-MPJPE\tstatus\n";
  table.flush();

  // Rows are written in cell order as soon as every earlier cell has finished.
  std::vector<std::optional<CellResult>> results(cells.size());
  std::size_t written = 0, failures = 0;
  std::mutex mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      auto r = run_cell(cfg, cells[i], out / ("cell_" + std::to_string(i)), i);
      const std::lock_guard lock(mutex);
      results[i] = std::move(r);
      for (; written < cells.size() && results[written]; ++written) {
        failures += !results[written]->ok;
        table << written << results[written]->row << '\n';
      }
      table.flush();
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, cells.size());
  if (threads == 1) {
    worker();
  } else {
    spdlog::info("ablate: {} cells on {} threads", cells.size(), threads);
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  write_json(out / "summary.json", {{"cells", cells.size()}, {"failed", failures}});
  return failures ? 1 : 0;
}

int cmd_gradcheck(const RunConfig& cfg, const fs::path& out, const CommandOptions& options) {
  const auto& m = cfg.model;
  Rng rng(derive_seed(cfg.train.seed, 5));
  Tensor input({1, m.window, m.in_channels, m.in_rows, m.in_steps});
  Tensor target({1, m.window, m.joints, m.coord_dims});
  for (auto& v : input.data()) v = rng.normal();
  for (auto& v : target.data()) v = rng.normal();
  train::GradCheckOptions gopts;
  gopts.alpha = cfg.train.alpha;
  gopts.seed = cfg.train.seed;
  const auto start = std::chrono::steady_clock::now();
  const auto report = train::grad_check(m, input, target, options.epsilon, gopts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json tensors = json::array();
  for (const auto& t : report.tensors) {
    tensors.push_back({{"name", t.name}, {"checked", t.checked}, {"total", t.total},
                       {"max_rel_error", t.max_rel_error}, {"max_abs_error", t.max_abs_error}});
  }
  const json j{{"epsilon", options.epsilon},       {"max_rel_error", report.max_rel_error},
               {"worst_tensor", report.worst_tensor}, {"coordinates", report.coordinates},
               {"seconds", seconds},               {"tolerance", options.tolerance},
               {"tensors", tensors}};
  write_json(out / "gradcheck.json", j);
  spdlog::info("gradient check: max relative error {:.3g} ({}) over {} coordinates in {:.1f}s",
               report.max_rel_error, report.worst_tensor, report.coordinates, seconds);
  return report.max_rel_error < options.tolerance ? 0 : 1;
}

}  // namespace

// ---------------------------------------------------------------- config

json RunConfig::to_json() const {
  return {{"model", model.to_json()},      {"train", train.to_json()}, {"synth", synth_to_json(synth)},
          {"wavelet", wavelet_to_json(wavelet)}, {"data", data_to_json(data)}, {"eval", eval_to_json(eval)},
          {"ablate", ablate}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be an object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "model") c.model = model::ModelConfig::from_json(v);
    else if (key == "train") c.train = train::TrainConfig::from_json(v);
    else if (key == "synth") c.synth = synth_from_json(v);
    else if (key == "wavelet") c.wavelet = wavelet_from_json(v);
    else if (key == "data") c.data = data_from_json(v);
    else if (key == "eval") c.eval = eval_from_json(v);
    else if (key == "ablate") {
      validate_ablate(v);
      c.ablate = v;
    } else {
      throw std::invalid_argument("unknown config section '" + key + "'");
    }
  }
  c.synth.validate();
  return c;
}

Override parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like section.key=value: " + text);
  const std::string key = text.substr(0, eq), raw = text.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  return {key, value};
}

RunConfig resolve_config(const std::optional<fs::path>& file, const std::vector<Override>& overrides) {
  json j = RunConfig{}.to_json();
  if (file) {
    std::ifstream is(*file);
    if (!is) throw std::runtime_error(file->string() + ": cannot open config file");
    json from_file;
    try {
      from_file = json::parse(is);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(file->string() + ": malformed config: " + e.what());
    }
    if (!from_file.is_object()) throw std::runtime_error(file->string() + ": config must be an object");
    for (const auto& [section, body] : from_file.items()) {
      if (!j.contains(section)) throw std::invalid_argument(file->string() + ": unknown config section '" + section + "'");
      if (section == "ablate") j[section] = body;  // replaced, not merged
      else if (!body.is_object()) throw std::invalid_argument(file->string() + ": section '" + section + "' must be an object");
      else j[section].update(body);
    }
  }
  for (const auto& [key, value] : overrides) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw std::invalid_argument("override key must be section.key: " + key);
    const auto section = key.substr(0, dot), name = key.substr(dot + 1);
    if (!j.contains(section)) throw std::invalid_argument("unknown config section '" + section + "'");
    j[section][name] = value;
  }
  return RunConfig::from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : cfg.to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << (h & 0xffffffffULL);
  return os.str();
}

fs::path output_dir(const std::string& command, const RunConfig& cfg, const std::optional<fs::path>& out,
                    const std::optional<fs::path>& root) {
  if (out) return *out;
  fs::path base = "runs";
  if (root) base = *root;
  else if (const char* env = std::getenv(kOutputRootEnv); env && *env) base = env;
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream name;
  name << command << '_' << std::put_time(&tm, "%Y%m%d-%H%M%S") << '_' << config_hash(cfg);
  return base / name.str();
}

eval::ReportOptions report_options(const RunConfig& cfg, const model::ModelConfig& model_cfg) {
  auto o = train::default_report_options(model_cfg);
  if (cfg.eval.normalization == "torso") o.normalization.kind = eval::NormalizationOption::Kind::Torso;
  if (cfg.eval.normalization == "fixed") o.normalization.kind = eval::NormalizationOption::Kind::Fixed;
  o.normalization.fixed_length = cfg.eval.fixed_length;
  o.units = cfg.eval.units;
  o.confidence_threshold = cfg.eval.confidence_threshold;
  return o;
}

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"synth", "preprocess", "train", "eval", "predict", "ablate", "gradcheck"};
  return names;
}

int run_command(const std::string& command, const RunConfig& cfg, const fs::path& out, const CommandOptions& options) {
  if (std::find(commands().begin(), commands().end(), command) == commands().end()) {
    throw std::invalid_argument("unknown command '" + command + "'");
  }
  fs::create_directories(out);
  write_json(out / "config.json", cfg.to_json());
  spdlog::info("{}: output directory {}", command, out.string());
  if (command == "synth") return cmd_synth(cfg, out);
  if (command == "preprocess") return cmd_preprocess(cfg, out);
  if (command == "train") return cmd_train(cfg, out, options);
  if (command == "eval") return cmd_eval(cfg, out, options);
  if (command == "predict") return cmd_predict(cfg, out, options);
  if (command == "ablate") return cmd_ablate(cfg, out, options.jobs);
  return cmd_gradcheck(cfg, out, options);
}

}  // namespace vstpose::cli
