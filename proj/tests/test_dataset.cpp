#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "test_support.hpp"
#include "vstpose/container.hpp"
#include "vstpose/dataset.hpp"
#include "vstpose/rng.hpp"

using namespace vstpose;
using namespace vstpose::data;
using vstpose::testing::TempDir;

namespace {

RawCsiRecording recording(std::size_t samples, std::uint64_t seed) {
  RawCsiRecording rec;
  rec.amplitudes = Tensor({samples, kTxAntennas, kRxAntennas, kSubcarriers});
  Rng rng(seed);
  for (auto& v : rec.amplitudes.data()) v = rng.uniform(0.0, 40.0);
  return rec;
}

SkeletonSequence skeletons(std::size_t frames, std::uint64_t seed, std::size_t joints = kCoco17Joints,
                           std::size_t dims = 2) {
  SkeletonSequence s;
  s.coords = Tensor({frames, joints, dims});
  Rng rng(seed);
  for (auto& v : s.coords.data()) v = rng.uniform(0.0, 640.0);
  return s;
}

Clip clip_of(std::size_t len, std::size_t id, std::uint64_t seed = 1) {
  Clip c;
  c.frames = Tensor({len, 1, 2, 2});
  Rng rng(seed);
  for (auto& v : c.frames.data()) v = rng.normal();
  c.skeleton = skeletons(len, seed + 1, 3, 2);
  c.clip_id = id;
  return c;
}

std::vector<CsiWindow> windows_from_clips(std::size_t clips, std::size_t len = 9) {
  std::vector<Clip> cs;
  for (std::size_t i = 0; i < clips; ++i) cs.push_back(clip_of(len, i, i + 10));
  return slide_windows(cs, 3, 2);
}

}  // namespace

TEST(AssembleFrames, FrameCounts) {
  EXPECT_EQ(assemble_frames(recording(450, 1)).size(), 90u);
  EXPECT_EQ(assemble_frames(recording(5, 1)).size(), 1u);
  EXPECT_EQ(assemble_frames(recording(9, 1)).size(), 1u);
  EXPECT_THROW(assemble_frames(recording(4, 1)), std::invalid_argument);
}

TEST(AssembleFrames, RxMajorRows) {
  const auto rec = recording(10, 2);
  const auto frames = assemble_frames(rec);
  const auto& a = rec.amplitudes;
  // Frame 1, tx 2, rx 1, subcarrier 7, sample offset 3.
  const std::size_t sample = 5 + 3;
  EXPECT_EQ(frames[1].image.at({2, 1 * 30 + 7, 3}), a.at({sample, 2, 1, 7}));
  EXPECT_EQ(frames[1].image.shape(), (Shape{3, 90, 5}));
  EXPECT_EQ(frames[1].frame_index, 1u);
}

TEST(AssembleFrames, InverseReshapeIsLossless) {
  const auto rec = recording(25, 3);
  const auto frames = assemble_frames(rec);
  for (const auto& f : frames) {
    const auto block = frame_to_block(f);
    for (std::size_t tx = 0; tx < 3; ++tx)
      for (std::size_t rx = 0; rx < 3; ++rx)
        for (std::size_t sc = 0; sc < 30; ++sc)
          for (std::size_t k = 0; k < 5; ++k) {
            ASSERT_EQ(block.at({tx, rx, sc, k}), rec.amplitudes.at({f.frame_index * 5 + k, tx, rx, sc}));
          }
  }
}

TEST(AssembleFrames, RejectsInvalidRecordings) {
  auto rec = recording(10, 4);
  rec.amplitudes[7] = -1.0;
  EXPECT_THROW(assemble_frames(rec), std::invalid_argument);
  RawCsiRecording wrong;
  wrong.amplitudes = Tensor({10, 3, 3, 29});
  EXPECT_THROW(assemble_frames(wrong), std::invalid_argument);
}

TEST(Denoise, RecordingStreamsStayNonNegative) {
  const auto rec = recording(64, 5);
  const auto out = denoise_recording(rec, signal::WaveletConfig{});
  EXPECT_EQ(out.amplitudes.shape(), rec.amplitudes.shape());
  for (double v : out.amplitudes.data()) EXPECT_GE(v, 0.0);
  EXPECT_GT(max_abs_diff(out.amplitudes, rec.amplitudes), 0.0);
}

TEST(Align, TruncatesToShorter) {
  const auto frames = assemble_frames(recording(450, 6));
  EXPECT_EQ(align_with_video(frames, skeletons(90, 1)).length(), 90u);
  const auto clip = align_with_video(frames, skeletons(92, 1));
  EXPECT_EQ(clip.length(), 90u);
  EXPECT_EQ(clip.skeleton.frames(), 90u);
  EXPECT_EQ(align_with_video(frames, skeletons(50, 1)).length(), 50u);
  EXPECT_THROW(align_with_video({}, skeletons(90, 1)), std::invalid_argument);
  EXPECT_THROW(align_with_video(frames, skeletons(90, 1), 25.0), std::invalid_argument);
}

TEST(Windows, WorkedCounts) {
  const auto w = slide_windows(clip_of(9, 0), 3, 2);
  ASSERT_EQ(w.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(w[i].start, 2 * i);
  EXPECT_EQ(slide_windows(clip_of(90, 0), 3, 2).size(), 44u);
  EXPECT_EQ(slide_windows(clip_of(3, 0), 3, 2).size(), 1u);
  EXPECT_TRUE(slide_windows(clip_of(2, 0), 3, 2).empty());
  EXPECT_THROW(slide_windows(clip_of(5, 0), 0, 2), std::invalid_argument);
}

TEST(Windows, CountFormulaProperty) {
  Rng rng(123);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t t = 1 + rng.below(6);
    const std::size_t s = 1 + rng.below(5);
    const std::size_t l = t + rng.below(30);
    const auto w = slide_windows(clip_of(l, 0, trial), t, s);
    ASSERT_EQ(w.size(), (l - t) / s + 1) << "L=" << l << " T=" << t << " s=" << s;
    for (const auto& win : w) ASSERT_EQ(win.frames.dim(0), t);
  }
}

TEST(Windows, VelocityIsLastMinusFirstBitwise) {
  for (const auto& w : slide_windows(clip_of(20, 0, 9), 4, 3)) {
    const auto& k = w.skeleton.coords;
    const std::size_t jc = k.dim(1) * k.dim(2);
    for (std::size_t i = 0; i < jc; ++i) ASSERT_EQ(w.velocity_gt[i], k[3 * jc + i] - k[i]);
  }
}

TEST(Coco17, IdentityFixtureSelectsBody25Indices) {
  Tensor body25({25, 3});
  for (std::size_t j = 0; j < 25; ++j) {
    body25.at({j, 0}) = static_cast<double>(j);
    body25.at({j, 1}) = 100.0 + static_cast<double>(j);
    body25.at({j, 2}) = 0.5;
  }
  const auto kp = select_coco17(body25);
  // Nose, L.Eye, R.Eye, L.Ear, R.Ear, L.Shoulder, R.Shoulder, L.Elbow, R.Elbow,
  // L.Wrist, R.Wrist, L.Hip, R.Hip, L.Knee, R.Knee, L.Ankle, R.Ankle in BODY_25 numbering.
  const std::vector<double> expected{0, 16, 15, 18, 17, 5, 2, 6, 3, 7, 4, 12, 9, 13, 10, 14, 11};
  ASSERT_EQ(kp.coords.shape(), (Shape{17, 2}));
  for (std::size_t j = 0; j < 17; ++j) {
    EXPECT_EQ(kp.coords.at({j, 0}), expected[j]) << kCoco17Names[j];
    EXPECT_EQ(kp.coords.at({j, 1}), 100.0 + expected[j]);
    EXPECT_EQ(kp.confidence[j], 0.5);
  }
}

TEST(Coco17, ZeroInAndWrongArity) {
  const auto kp = select_coco17(Tensor({25, 3}));
  for (double v : kp.coords.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(select_coco17(Tensor({24, 3})), std::invalid_argument);
  EXPECT_THROW(select_coco17_sequence(Tensor({4, 24, 3})), std::invalid_argument);
}

TEST(Coco17, SequenceKeepsConfidence) {
  Tensor track({2, 25, 3}, 0.25);
  track.at({1, 16, 0}) = 42.0;
  const auto seq = select_coco17_sequence(track);
  EXPECT_EQ(seq.coords.at({1, 1, 0}), 42.0);
  ASSERT_TRUE(seq.confidence);
  EXPECT_EQ(seq.confidence->shape(), (Shape{2, 17}));
  EXPECT_DOUBLE_EQ(seq.mean_confidence(), 0.25);
}

TEST(Confidence, LowConfidenceWindowsAreDropped) {
  auto c = clip_of(9, 0);
  c.skeleton.confidence = Tensor({9, 3}, 0.9);
  for (std::size_t j = 0; j < 3; ++j) c.skeleton.confidence->at({0, j}) = 0.0;
  for (std::size_t f = 1; f < 3; ++f)
    for (std::size_t j = 0; j < 3; ++j) c.skeleton.confidence->at({f, j}) = 0.05;
  const auto kept = filter_by_confidence(slide_windows(c, 3, 2), 0.1);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept.front().start, 2u);
}

TEST(Split, TrainCountRoundsHalfUp) {
  EXPECT_EQ(train_count(10, {4, 1}), 8u);
  EXPECT_EQ(train_count(2, {1, 1}), 1u);
  EXPECT_EQ(train_count(4, {3, 1}), 3u);
  EXPECT_EQ(train_count(7, {1, 1}), 4u);
  EXPECT_THROW(train_count(5, {0, 1}), std::invalid_argument);
}

TEST(Split, TenClipsFourToOne) {
  const auto w = windows_from_clips(10);
  const auto s = split(w, {4, 1, 17});
  std::set<std::size_t> train_ids, test_ids;
  for (const auto& x : s.train) train_ids.insert(x.clip_id);
  for (const auto& x : s.test) test_ids.insert(x.clip_id);
  EXPECT_EQ(train_ids.size(), 8u);
  EXPECT_EQ(test_ids.size(), 2u);
  EXPECT_EQ(s.train.size() + s.test.size(), w.size());
}

TEST(Split, OneToOneOnTwoClips) {
  const auto s = split(windows_from_clips(2), {1, 1, 3});
  EXPECT_EQ(s.train.size(), 4u);
  EXPECT_EQ(s.test.size(), 4u);
}

TEST(Split, DisjointExhaustiveAndSeeded) {
  const auto w = windows_from_clips(13);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    for (auto gran : {SplitGranularity::Clip, SplitGranularity::Window}) {
      const SplitSpec spec{4, 1, seed, gran};
      const auto a = split(w, spec), b = split(w, spec);
      std::multiset<std::pair<std::size_t, std::size_t>> seen;
      std::set<std::size_t> train_ids;
      for (const auto& x : a.train) {
        seen.insert({x.clip_id, x.start});
        train_ids.insert(x.clip_id);
      }
      for (const auto& x : a.test) {
        seen.insert({x.clip_id, x.start});
        if (gran == SplitGranularity::Clip) ASSERT_FALSE(train_ids.contains(x.clip_id));
      }
      ASSERT_EQ(seen.size(), w.size());
      for (const auto& x : w) ASSERT_EQ(seen.count({x.clip_id, x.start}), 1u);
      ASSERT_EQ(a.train.size(), b.train.size());
      for (std::size_t i = 0; i < a.train.size(); ++i) {
        ASSERT_EQ(a.train[i].clip_id, b.train[i].clip_id);
        ASSERT_EQ(a.train[i].start, b.train[i].start);
      }
    }
  }
  EXPECT_THROW(split({}, {}), std::invalid_argument);
}

TEST(Pipeline, FourHundredFiftySamplesToFortyWindows) {
  const auto frames = assemble_frames(recording(450, 8));
  ASSERT_EQ(frames.size(), 90u);
  const auto segment = align_with_video(frames, skeletons(90, 2));
  const auto clips = split_into_clips(segment, 9);
  ASSERT_EQ(clips.size(), 10u);
  EXPECT_EQ(clips[3].clip_id, 3u);
  EXPECT_EQ(clips[3].frames.slice0(0, 1), segment.frames.slice0(27, 1));
  EXPECT_EQ(slide_windows(clips, 3, 2).size(), 40u);
}

TEST(Files, ManifestRoundTripAndComments) {
  TempDir dir("manifest");
  const std::vector<ManifestRow> rows{{dir / "a.tensor", dir / "b.tensor", "walk", "s1"},
                                      {dir / "sub/c.tensor", dir / "sub/d.tensor", "", ""}};
  write_manifest(dir / "m.tsv", rows);
  const auto back = read_manifest(dir / "m.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].csi_path, rows[0].csi_path);
  EXPECT_EQ(back[1].skeleton_path, rows[1].skeleton_path);
  EXPECT_EQ(back[0].action, "walk");
  EXPECT_EQ(back[0].subject, "s1");
  {
    std::ofstream os(dir / "bad.tsv");
    os << "only_one_field\n";
  }
  EXPECT_THROW(read_manifest(dir / "bad.tsv"), std::runtime_error);
}

TEST(Files, ClipsRoundTrip) {
  TempDir dir("clips");
  std::vector<Clip> clips{clip_of(5, 0, 1), clip_of(6, 1, 2)};
  clips[0].action = "wave";
  clips[1].skeleton.confidence = Tensor({6, 3}, 0.5);
  write_clips(dir.path(), clips);
  const auto back = read_clips(dir / "manifest.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].action, "wave");
  EXPECT_EQ(back[1].length(), 6u);
  EXPECT_FALSE(back[0].skeleton.confidence);
  ASSERT_TRUE(back[1].skeleton.confidence);
  EXPECT_LT(max_abs_diff(back[0].skeleton.coords, clips[0].skeleton.coords), 1e-4);
}

namespace {

void write_mmfi_fixture(const std::filesystem::path& root, std::size_t sequences, std::size_t len) {
  std::vector<Clip> clips;
  for (std::size_t i = 0; i < sequences; ++i) {
    Clip c;
    c.frames = Tensor({len, 3, 114, 10}, 1.0);
    c.skeleton = skeletons(len, i, 17, 3);
    c.action = "A0" + std::to_string(i % 3);
    c.subject = "S01";
    clips.push_back(c);
  }
  write_clips(root, clips);
}

}  // namespace

TEST(Mmfi, LoadsSequencesAndSplitsThreeToOne) {
  TempDir dir("mmfi");
  write_mmfi_fixture(dir.path(), 2, 16);
  const auto two = load_mmfi_style(dir.path(), {});
  EXPECT_EQ(two.sequences.size(), 2u);
  EXPECT_EQ(two.sequences[0].skeleton.dims(), 3u);
  const std::size_t per = (16 - 10) / 3 + 1;
  EXPECT_EQ(two.split.train.size() + two.split.test.size(), 2 * per);

  TempDir four("mmfi4");
  write_mmfi_fixture(four.path(), 4, 13);
  const auto ds = load_mmfi_style(four.path(), {});
  std::set<std::size_t> train_ids, test_ids;
  for (const auto& w : ds.split.train) train_ids.insert(w.clip_id);
  for (const auto& w : ds.split.test) test_ids.insert(w.clip_id);
  EXPECT_EQ(train_ids.size(), 3u);
  EXPECT_EQ(test_ids.size(), 1u);
  EXPECT_EQ(ds.split.train.front().frames.shape(), (Shape{10, 3, 114, 10}));
}

TEST(Mmfi, CorruptedHeaderNamesFile) {
  TempDir dir("mmfi_bad");
  write_mmfi_fixture(dir.path(), 2, 12);
  {
    std::ofstream os(dir / "clip_00001_skel.tensor", std::ios::binary | std::ios::trunc);
    os << "{not json\n";
  }
  try {
    load_mmfi_style(dir.path(), {});
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("clip_00001_skel.tensor"), std::string::npos) << e.what();
  }
}

TEST(Mmfi, MissingManifestAndTwoDimensionalJoints) {
  TempDir dir("mmfi_missing");
  EXPECT_THROW(load_mmfi_style(dir.path(), {}), std::runtime_error);
  write_clips(dir.path(), {clip_of(12, 0)});
  EXPECT_THROW(load_mmfi_style(dir.path(), {}), std::runtime_error);
}
