#include "vstpose/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vstpose/container.hpp"
#include "vstpose/rng.hpp"

namespace vstpose::data {

const std::array<const char*, kCoco17Joints> kCoco17Names{
    "Nose",   "L.Eye",   "R.Eye",   "L.Ear",  "R.Ear",  "L.Shoulder", "R.Shoulder", "L.Elbow", "R.Elbow",
    "L.Wrist", "R.Wrist", "L.Hip", "R.Hip", "L.Knee", "R.Knee",     "L.Ankle",    "R.Ankle"};

// BODY_25: 0 Nose 1 Neck 2 RSho 3 RElb 4 RWri 5 LSho 6 LElb 7 LWri 8 MidHip 9 RHip
// 10 RKnee 11 RAnk 12 LHip 13 LKnee 14 LAnk 15 REye 16 LEye 17 REar 18 LEar 19-24 feet.
const std::array<std::size_t, kCoco17Joints> kBody25ToCoco17{0, 16, 15, 18, 17, 5, 2, 6, 3,
                                                             7, 4,  12, 9,  13, 10, 14, 11};

namespace {

void check_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw std::invalid_argument(what + " contains non-finite values");
}

}  // namespace

void RawCsiRecording::validate() const {
  const Shape expected_tail{kTxAntennas, kRxAntennas, kSubcarriers};
  if (amplitudes.rank() != 4 || !std::equal(expected_tail.begin(), expected_tail.end(),
                                            amplitudes.shape().begin() + 1)) {
    throw std::invalid_argument("raw CSI recording must be [samples, 3, 3, 30], got " +
                                shape_str(amplitudes.shape()));
  }
  if (num_samples() < kSamplesPerFrame) {
    throw std::invalid_argument("raw CSI recording needs at least 5 samples, got " +
                                std::to_string(num_samples()));
  }
  for (double v : amplitudes.data()) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("raw CSI amplitudes must be finite and non-negative");
    }
  }
}

void SkeletonSequence::validate() const {
  if (coords.rank() != 3) {
    throw std::invalid_argument("skeleton coords must be [T, J, C], got " + shape_str(coords.shape()));
  }
  if (dims() != 2 && dims() != 3) {
    throw std::invalid_argument("skeleton coordinate dim must be 2 or 3, got " + std::to_string(dims()));
  }
  check_finite(coords, "skeleton coords");
  if (confidence) {
    if (confidence->shape() != Shape{frames(), joints()}) {
      throw std::invalid_argument("skeleton confidence must be [T, J], got " +
                                  shape_str(confidence->shape()));
    }
    for (double v : confidence->data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("skeleton confidence outside [0, 1]");
    }
  }
}

SkeletonSequence SkeletonSequence::slice(std::size_t begin, std::size_t count) const {
  SkeletonSequence out;
  out.coords = coords.slice0(begin, count);
  if (confidence) out.confidence = confidence->slice0(begin, count);
  return out;
}

double SkeletonSequence::mean_confidence() const {
  if (!confidence || confidence->numel() == 0) return 1.0;
  double s = 0.0;
  for (double v : confidence->data()) s += v;
  return s / static_cast<double>(confidence->numel());
}

void Clip::validate() const {
  if (frames.rank() != 4) {
    throw std::invalid_argument("clip frames must be [L, channels, rows, steps], got " +
                                shape_str(frames.shape()));
  }
  skeleton.validate();
  if (skeleton.frames() != frames.dim(0)) {
    throw std::invalid_argument("clip has " + std::to_string(frames.dim(0)) + " CSI frames but " +
                                std::to_string(skeleton.frames()) + " skeleton frames");
  }
  check_finite(frames, "clip CSI frames");
}

Tensor window_velocity(const Tensor& coords) {
  const std::size_t t = coords.dim(0), j = coords.dim(1), c = coords.dim(2);
  Tensor v(Shape{j, c});
  const std::size_t last = (t - 1) * j * c;
  for (std::size_t i = 0; i < j * c; ++i) v[i] = coords[last + i] - coords[i];
  return v;
}

std::vector<CsiFrame> assemble_frames(const RawCsiRecording& rec) {
  rec.validate();
  const std::size_t count = rec.num_samples() / kSamplesPerFrame;
  const auto& a = rec.amplitudes;
  std::vector<CsiFrame> frames;
  frames.reserve(count);
  for (std::size_t f = 0; f < count; ++f) {
    CsiFrame frame{Tensor(Shape{kTxAntennas, kFrameRows, kSamplesPerFrame}), f};
    for (std::size_t k = 0; k < kSamplesPerFrame; ++k) {
      const std::size_t sample = f * kSamplesPerFrame + k;
      for (std::size_t tx = 0; tx < kTxAntennas; ++tx) {
        for (std::size_t rx = 0; rx < kRxAntennas; ++rx) {
          for (std::size_t sc = 0; sc < kSubcarriers; ++sc) {
            const std::size_t row = rx * kSubcarriers + sc;
            frame.image[(tx * kFrameRows + row) * kSamplesPerFrame + k] =
                a[((sample * kTxAntennas + tx) * kRxAntennas + rx) * kSubcarriers + sc];
          }
        }
      }
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

Tensor frame_to_block(const CsiFrame& frame) {
  if (frame.image.shape() != Shape{kTxAntennas, kFrameRows, kSamplesPerFrame}) {
    throw std::invalid_argument("frame image must be [3, 90, 5], got " + shape_str(frame.image.shape()));
  }
  Tensor block(Shape{kTxAntennas, kRxAntennas, kSubcarriers, kSamplesPerFrame});
  for (std::size_t tx = 0; tx < kTxAntennas; ++tx) {
    for (std::size_t row = 0; row < kFrameRows; ++row) {
      const std::size_t rx = row / kSubcarriers, sc = row % kSubcarriers;
      for (std::size_t k = 0; k < kSamplesPerFrame; ++k) {
        block[((tx * kRxAntennas + rx) * kSubcarriers + sc) * kSamplesPerFrame + k] =
            frame.image[(tx * kFrameRows + row) * kSamplesPerFrame + k];
      }
    }
  }
  return block;
}

RawCsiRecording denoise_recording(const RawCsiRecording& rec, const signal::WaveletConfig& cfg) {
  rec.validate();
  RawCsiRecording out = rec;
  const std::size_t n = rec.num_samples();
  const std::size_t streams = kTxAntennas * kRxAntennas * kSubcarriers;
  std::vector<double> stream(n);
  for (std::size_t s = 0; s < streams; ++s) {
    for (std::size_t i = 0; i < n; ++i) stream[i] = rec.amplitudes[i * streams + s];
    const auto clean = signal::denoise(stream, cfg);
    // Amplitudes are magnitudes; shrinkage can dip marginally below zero.
    for (std::size_t i = 0; i < n; ++i) out.amplitudes[i * streams + s] = std::max(0.0, clean[i]);
  }
  return out;
}

Clip align_with_video(const std::vector<CsiFrame>& frames, const SkeletonSequence& skeletons,
                      double video_fps, double sample_rate_hz) {
  if (frames.empty()) throw std::invalid_argument("align_with_video: no CSI frames");
  if (skeletons.coords.rank() != 3 || skeletons.frames() == 0) {
    throw std::invalid_argument("align_with_video: no skeleton frames");
  }
  const double ratio = sample_rate_hz / video_fps;
  if (std::abs(ratio - static_cast<double>(kSamplesPerFrame)) > 1e-9) {
    throw std::invalid_argument("align_with_video: CSI rate / video rate must be exactly 5, got " +
                                std::to_string(ratio));
  }
  const std::size_t n = std::min(frames.size(), skeletons.frames());
  std::vector<Tensor> images;
  images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) images.push_back(frames[i].image);
  Clip clip;
  clip.frames = stack(images);
  clip.skeleton = skeletons.slice(0, n);
  return clip;
}

std::vector<Clip> split_into_clips(const Clip& segment, std::size_t clip_len, std::size_t max_clips,
                                   std::size_t first_id) {
  if (clip_len == 0) throw std::invalid_argument("clip length must be positive");
  std::size_t count = segment.length() / clip_len;
  if (max_clips != 0) count = std::min(count, max_clips);
  std::vector<Clip> clips;
  clips.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    Clip clip;
    clip.frames = segment.frames.slice0(c * clip_len, clip_len);
    clip.skeleton = segment.skeleton.slice(c * clip_len, clip_len);
    clip.action = segment.action;
    clip.subject = segment.subject;
    clip.clip_id = first_id + c;
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::vector<CsiWindow> slide_windows(const Clip& clip, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw std::invalid_argument("window and stride must be >= 1");
  const std::size_t len = clip.length();
  if (len < window) {
    spdlog::debug("clip {} has {} frames, shorter than window {}; no windows", clip.clip_id, len, window);
    return {};
  }
  const std::size_t count = (len - window) / stride + 1;
  std::vector<CsiWindow> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    CsiWindow win;
    win.start = w * stride;
    win.frames = clip.frames.slice0(win.start, window);
    win.skeleton = clip.skeleton.slice(win.start, window);
    win.velocity_gt = window_velocity(win.skeleton.coords);
    win.action = clip.action;
    win.subject = clip.subject;
    win.clip_id = clip.clip_id;
    out.push_back(std::move(win));
  }
  return out;
}

std::vector<CsiWindow> slide_windows(const std::vector<Clip>& clips, std::size_t window,
                                     std::size_t stride) {
  std::vector<CsiWindow> out;
  for (const auto& clip : clips) {
    auto w = slide_windows(clip, window, stride);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<CsiWindow> filter_by_confidence(std::vector<CsiWindow> windows, double threshold) {
  std::erase_if(windows, [threshold](const CsiWindow& w) {
    return w.skeleton.mean_confidence() < threshold;
  });
  return windows;
}

Coco17Keypoints select_coco17(const Tensor& body25) {
  if (body25.shape() != Shape{kBody25Joints, 3}) {
    throw std::invalid_argument("select_coco17 expects [25, 3] (x, y, confidence), got " +
                                shape_str(body25.shape()));
  }
  Coco17Keypoints out{Tensor(Shape{kCoco17Joints, 2}), Tensor(Shape{kCoco17Joints})};
  for (std::size_t j = 0; j < kCoco17Joints; ++j) {
    const std::size_t src = kBody25ToCoco17[j];
    out.coords[j * 2] = body25[src * 3];
    out.coords[j * 2 + 1] = body25[src * 3 + 1];
    out.confidence[j] = body25[src * 3 + 2];
  }
  return out;
}

SkeletonSequence select_coco17_sequence(const Tensor& track) {
  if (track.rank() != 3 || track.dim(1) != kBody25Joints || track.dim(2) != 3) {
    throw std::invalid_argument("BODY_25 track must be [F, 25, 3], got " + shape_str(track.shape()));
  }
  const std::size_t f = track.dim(0);
  SkeletonSequence seq{Tensor(Shape{f, kCoco17Joints, 2}), Tensor(Shape{f, kCoco17Joints})};
  for (std::size_t i = 0; i < f; ++i) {
    auto kp = select_coco17(track.slice0(i, 1).reshaped({kBody25Joints, 3}));
    std::copy_n(kp.coords.ptr(), kp.coords.numel(), seq.coords.ptr() + i * kCoco17Joints * 2);
    std::copy_n(kp.confidence.ptr(), kCoco17Joints, seq.confidence->ptr() + i * kCoco17Joints);
  }
  return seq;
}

void SplitSpec::validate() const {
  if (train_parts == 0 || test_parts == 0) {
    throw std::invalid_argument("split ratio parts must both be positive (0 < ratio < 1)");
  }
}

std::size_t train_count(std::size_t units, const SplitSpec& spec) {
  spec.validate();
  const std::size_t total = spec.train_parts + spec.test_parts;
  return (2 * units * spec.train_parts + total) / (2 * total);
}

Split split(const std::vector<CsiWindow>& windows, const SplitSpec& spec) {
  spec.validate();
  if (windows.empty()) throw std::invalid_argument("split: empty dataset");
  Rng rng(spec.seed);
  Split out;
  if (spec.granularity == SplitGranularity::Window) {
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const std::size_t n_train = train_count(order.size(), spec);
    std::vector<bool> is_train(windows.size(), false);
    for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      (is_train[i] ? out.train : out.test).push_back(windows[i]);
    }
    return out;
  }
  std::set<std::size_t> id_set;
  for (const auto& w : windows) id_set.insert(w.clip_id);
  std::vector<std::size_t> ids(id_set.begin(), id_set.end());
  rng.shuffle(ids);
  const std::size_t n_train = train_count(ids.size(), spec);
  std::set<std::size_t> train_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  for (const auto& w : windows) (train_ids.contains(w.clip_id) ? out.train : out.test).push_back(w);
  return out;
}

Tensor stack_inputs(const std::vector<const CsiWindow*>& batch) {
  std::vector<Tensor> items;
  items.reserve(batch.size());
  for (const auto* w : batch) items.push_back(w->frames);
  return stack(items);
}

Tensor stack_targets(const std::vector<const CsiWindow*>& batch) {
  std::vector<Tensor> items;
  items.reserve(batch.size());
  for (const auto* w : batch) items.push_back(w->skeleton.coords);
  return stack(items);
}

// ---------------------------------------------------------------- files

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path.string() + ": cannot open manifest");
  const auto base = path.parent_path();
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() < 2 || fields.size() > 4) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 2-4 tab-separated fields");
    }
    ManifestRow row;
    row.csi_path = base / fields[0];
    row.skeleton_path = base / fields[1];
    if (fields.size() > 2) row.action = fields[2];
    if (fields.size() > 3) row.subject = fields[3];
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open manifest for writing");
  os << "# csi_path\tskeleton_path\taction_label\tsubject_id\n";
  const auto base = path.parent_path();
  for (const auto& r : rows) {
    os << r.csi_path.lexically_relative(base).generic_string() << '\t'
       << r.skeleton_path.lexically_relative(base).generic_string() << '\t' << r.action << '\t'
       << r.subject << '\n';
  }
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

namespace {

std::filesystem::path confidence_path(const std::filesystem::path& skeleton_path) {
  auto p = skeleton_path;
  p.replace_extension(".conf.tensor");
  return p;
}

}  // namespace

void write_clips(const std::filesystem::path& dir, const std::vector<Clip>& clips) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& clip = clips[i];
    char stem[32];
    std::snprintf(stem, sizeof(stem), "clip_%05zu", i);
    ManifestRow row{dir / (std::string(stem) + "_csi.tensor"), dir / (std::string(stem) + "_skel.tensor"),
                    clip.action, clip.subject};
    io::save_tensor(row.csi_path, clip.frames);
    io::save_tensor(row.skeleton_path, clip.skeleton.coords);
    if (clip.skeleton.confidence) io::save_tensor(confidence_path(row.skeleton_path), *clip.skeleton.confidence);
    rows.push_back(std::move(row));
  }
  write_manifest(dir / "manifest.tsv", rows);
}

std::vector<Clip> read_clips(const std::filesystem::path& manifest) {
  const auto rows = read_manifest(manifest);
  std::vector<Clip> clips;
  clips.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    Clip clip;
    clip.frames = io::load_tensor(row.csi_path);
    clip.skeleton.coords = io::load_tensor(row.skeleton_path);
    const auto conf = confidence_path(row.skeleton_path);
    if (std::filesystem::exists(conf)) clip.skeleton.confidence = io::load_tensor(conf);
    clip.action = row.action;
    clip.subject = row.subject;
    clip.clip_id = i;
    try {
      clip.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(row.csi_path.string() + " / " + row.skeleton_path.string() + ": " + e.what());
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

MmfiDataset load_mmfi_style(const std::filesystem::path& root, const MmfiProtocol& protocol) {
  const auto manifest = root / "manifest.tsv";
  if (!std::filesystem::exists(manifest)) {
    throw std::runtime_error(manifest.string() + ": missing manifest");
  }
  MmfiDataset ds;
  ds.sequences = read_clips(manifest);
  for (const auto& clip : ds.sequences) {
    if (clip.skeleton.dims() != 3) {
      throw std::runtime_error("MMFi-style sequence " + std::to_string(clip.clip_id) +
                               " must carry 3D joints, got C=" + std::to_string(clip.skeleton.dims()));
    }
  }
  if (ds.sequences.empty()) throw std::runtime_error(manifest.string() + ": no sequences listed");
  const auto windows = slide_windows(ds.sequences, protocol.window, protocol.stride);
  if (windows.empty()) throw std::runtime_error(manifest.string() + ": sequences shorter than window");
  ds.split = split(windows, SplitSpec{protocol.train_parts, protocol.test_parts, protocol.seed,
                                      SplitGranularity::Clip});
  return ds;
}

}  // namespace vstpose::data
