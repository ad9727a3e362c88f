#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <numbers>

#include "oracles.hpp"
#include "test_support.hpp"
#include "vstpose/dataset.hpp"
#include "vstpose/evaluation.hpp"
#include "vstpose/rng.hpp"

using namespace vstpose;
using namespace vstpose::eval;
using namespace vstpose::testing;

// ---------------------------------------------------------------- PCK / MPJPE

TEST(Pck, HalfInsideExample) {
  // One frame, two joints, reference 100, PCK@50: errors 10 and 80.
  const Tensor gt({1, 2, 2});
  const Tensor pred({1, 2, 2}, std::vector<double>{6, 8, 0, 80});
  const std::vector<double> len{100.0};
  const auto r = pck(pred, gt, 50, len);
  EXPECT_EQ(r.per_joint, (std::vector<double>{100.0, 0.0}));
  EXPECT_EQ(r.average, 50.0);
}

TEST(Pck, PerfectPredictionAndErrors) {
  Rng rng(1);
  const auto gt = random_tensor({3, 4, 2}, rng);
  const std::vector<double> len(3, 1.0);
  for (double a : kPckThresholds) EXPECT_EQ(pck(gt, gt, a, len).average, 100.0);
  EXPECT_THROW(pck(gt, gt, 50, std::vector<double>{1.0, 0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(pck(gt, gt, 50, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Mpjpe, ThreeFourFiveOffset) {
  Rng rng(2);
  const auto gt = random_tensor({2, 5, 2}, rng);
  auto pred = gt;
  for (std::size_t i = 0; i < pred.numel(); i += 2) {
    pred[i] += 3.0;
    pred[i + 1] += 4.0;
  }
  EXPECT_NEAR(mpjpe(pred, gt), 5.0, 1e-12);
  EXPECT_EQ(mpjpe(gt, gt), 0.0);
  EXPECT_THROW(mpjpe(gt, random_tensor({2, 4, 2}, rng)), std::invalid_argument);
}

TEST(Metrics, MatchScalarLoopOraclesOnRandomInstances) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(4), j = 3 + rng.below(5), c = 2 + rng.below(2);
    const auto gt = random_tensor({n, j, c}, rng, 10.0);
    auto pred = gt;
    const double noise = rng.uniform(0.1, 8.0);
    for (auto& v : pred.data()) v += noise * rng.normal();
    std::vector<double> len(n);
    for (auto& l : len) l = rng.uniform(5.0, 30.0);

    std::array<double, kPckThresholds.size()> avg{};
    for (std::size_t a = 0; a < kPckThresholds.size(); ++a) {
      const auto got = pck(pred, gt, kPckThresholds[a], len);
      const auto want = pck_oracle(pred, gt, kPckThresholds[a], len);
      for (std::size_t k = 0; k < j; ++k) ASSERT_NEAR(got.per_joint[k], want[k], 1e-12);
      avg[a] = got.average;
      if (a > 0) ASSERT_LE(avg[a], avg[a - 1]);  // nested thresholds
    }
    const double m = mpjpe(pred, gt);
    ASSERT_NEAR(m, mpjpe_oracle(pred, gt), 1e-12);
    const auto per_joint = mpjpe_per_joint(pred, gt);
    for (std::size_t k = 0; k < j; ++k) {
      double s = 0.0;
      for (std::size_t f = 0; f < n; ++f) s += dist(pred, gt, f, k);
      ASSERT_NEAR(per_joint[k], s / static_cast<double>(n), 1e-12);
    }
    // Least-squares alignment never raises the per-frame squared error. The mean
    // distance (pa_mpjpe vs mpjpe) carries no such guarantee.
    for (std::size_t f = 0; f < n; ++f) {
      const auto p = pred.slice0(f, 1).reshaped({j, c}), g = gt.slice0(f, 1).reshaped({j, c});
      const auto a = procrustes_align(p, g);
      const double aligned = (to_eigen(a.aligned) - to_eigen(g)).squaredNorm();
      const double raw = (to_eigen(p) - to_eigen(g)).squaredNorm();
      ASSERT_LE(aligned, raw * (1.0 + 1e-12)) << "trial " << trial;
    }
  }
}

TEST(Metrics, PaMpjpeCanExceedMpjpe) {
  // Exact on two joints, 4 off on the third. Minimizing squared error spreads the
  // outlier over every joint, which raises the mean distance.
  const Tensor gt({1, 3, 2}, std::vector<double>{-1, -2, -3, -2, -2, 3});
  const Tensor pred({1, 3, 2}, std::vector<double>{-1, 2, -3, -2, -2, 3});
  EXPECT_NEAR(mpjpe(pred, gt), 4.0 / 3.0, 1e-12);
  const auto g = to_eigen(gt.reshaped({3, 2}));
  const auto oracle = procrustes_grid_2d(to_eigen(pred.reshaped({3, 2})), g);
  const double oracle_pa = (oracle.points - g).rowwise().norm().mean();
  EXPECT_NEAR(pa_mpjpe(pred, gt), oracle_pa, 1e-9);
  EXPECT_GT(oracle_pa, 1.5);
}

// ---------------------------------------------------------------- Procrustes

TEST(Procrustes, MatchesGridSearchIn2d) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t j = 3 + rng.below(6);
    const auto p = random_tensor({j, 2}, rng, 5.0), q = random_tensor({j, 2}, rng, 5.0);
    const auto got = procrustes_align(p, q);
    const auto want = procrustes_grid_2d(to_eigen(p), to_eigen(q));
    ASSERT_LT((to_eigen(got.aligned) - want.points).cwiseAbs().maxCoeff(), 1e-9) << "trial " << trial;
    ASSERT_NEAR(got.scale, want.scale, 1e-9);
    ASSERT_NEAR(to_eigen(got.rotation).determinant(), 1.0, 1e-12);
  }
}

TEST(Procrustes, MatchesQuaternionSolutionIn3d) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t j = 4 + rng.below(10);
    const auto p = random_tensor({j, 3}, rng, 5.0), q = random_tensor({j, 3}, rng, 5.0);
    const auto got = procrustes_align(p, q);
    const auto want = procrustes_quaternion_3d(to_eigen(p), to_eigen(q));
    ASSERT_LT((to_eigen(got.aligned) - want).cwiseAbs().maxCoeff(), 1e-9) << "trial " << trial;
    ASSERT_NEAR(to_eigen(got.rotation).determinant(), 1.0, 1e-12);
  }
}

TEST(Procrustes, RecoversExactSimilarity) {
  Rng rng(6);
  for (std::size_t c : {2u, 3u}) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto p = random_tensor({1, 6, c}, rng, 4.0);
      const auto r = random_rotation(c, rng);
      std::vector<double> t(c);
      for (auto& v : t) v = rng.uniform(-50, 50);
      const auto q = similarity(p, r, 1.7, t);
      const auto a = procrustes_align(p.reshaped({6, c}), q.reshaped({6, c}));
      EXPECT_LT(max_abs_diff(a.aligned, q.reshaped({6, c})), 1e-9);
      EXPECT_NEAR(a.scale, 1.7, 1e-9);
      EXPECT_LT(max_abs_diff(a.rotation, r), 1e-9);
      for (std::size_t k = 0; k < c; ++k) EXPECT_NEAR(a.translation[k], t[k], 1e-9);
    }
  }
}

TEST(Procrustes, IdentityWhenEqual) {
  Rng rng(7);
  const auto p = random_tensor({5, 3}, rng);
  const auto a = procrustes_align(p, p);
  EXPECT_LT(max_abs_diff(a.rotation, Tensor({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1})), 1e-12);
  EXPECT_NEAR(a.scale, 1.0, 1e-12);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a.translation[k], 0.0, 1e-12);
}

TEST(Procrustes, MirroredInputKeepsProperRotation) {
  Rng rng(8);
  const auto q = random_tensor({7, 2}, rng, 3.0);
  auto p = q;
  for (std::size_t i = 0; i < 7; ++i) p.at({i, 0}) = -p.at({i, 0});
  const auto a = procrustes_align(p, q);
  EXPECT_NEAR(to_eigen(a.rotation).determinant(), 1.0, 1e-12);
  const auto grid = procrustes_grid_2d(to_eigen(p), to_eigen(q));
  const double residual = (to_eigen(a.aligned) - to_eigen(q)).squaredNorm();
  EXPECT_NEAR(residual, grid.residual, 1e-9);
  EXPECT_GT(residual, 1e-3);  // a reflection cannot be undone by a rotation
}

TEST(Procrustes, DegenerateTargetIsRejected) {
  const Tensor p({3, 2}, std::vector<double>{0, 0, 1, 0, 0, 1});
  const Tensor q({3, 2}, 2.0);
  EXPECT_THROW(procrustes_align(p, q), std::invalid_argument);
  EXPECT_THROW(procrustes_align(Tensor({1, 2}), Tensor({1, 2})), std::invalid_argument);
  EXPECT_THROW(pa_mpjpe(Tensor({1, 3, 2}), Tensor({1, 3, 2}, 1.0)), std::invalid_argument);
}

TEST(PaMpjpe, InvariantToPerFrameSimilarity) {
  Rng rng(9);
  for (std::size_t c : {2u, 3u}) {
    const auto gt = random_tensor({4, 8, c}, rng, 10.0);
    auto pred = gt;
    for (auto& v : pred.data()) v += rng.normal();
    const double base = pa_mpjpe(pred, gt);
    Tensor moved(pred.shape());
    for (std::size_t f = 0; f < 4; ++f) {
      std::vector<double> t(c);
      for (auto& v : t) v = rng.uniform(-100, 100);
      const auto frame = similarity(pred.slice0(f, 1), random_rotation(c, rng), rng.uniform(0.3, 3.0), t);
      std::copy_n(frame.ptr(), frame.numel(), moved.ptr() + f * frame.numel());
    }
    EXPECT_NEAR(pa_mpjpe(moved, gt), base, 1e-9);
    const auto exact = similarity(gt, random_rotation(c, rng), 0.6, std::vector<double>(c, 12.0));
    EXPECT_LT(pa_mpjpe(exact, gt), 1e-9);
  }
}

// ---------------------------------------------------------------- report

TEST(Report, PerfectPrediction) {
  Rng rng(10);
  const auto gt = random_tensor({1, 17, 2}, rng, 50.0);
  const auto r = build_report({gt, gt, {}, std::nullopt, {}});
  for (double v : r.average_pck) EXPECT_EQ(v, 100.0);
  EXPECT_EQ(r.mpjpe, 0.0);
  EXPECT_LT(r.pa_mpjpe, 1e-9);
  ASSERT_EQ(r.per_joint.size(), 17u);
  EXPECT_EQ(r.per_joint[0].name, data::kCoco17Names[0]);
  EXPECT_EQ(r.frames, 1u);
}

TEST(Report, AveragesAreMeansOfRows) {
  Rng rng(11);
  const auto gt = random_tensor({6, 17, 2}, rng, 50.0);
  auto pred = gt;
  for (auto& v : pred.data()) v += 8.0 * rng.normal();
  const auto r = build_report({pred, gt, {}, std::nullopt, {}});
  for (std::size_t a = 0; a < kPckThresholds.size(); ++a) {
    double s = 0.0;
    for (const auto& row : r.per_joint) {
      EXPECT_GE(row.pck[a], 0.0);
      EXPECT_LE(row.pck[a], 100.0);
      s += row.pck[a];
    }
    EXPECT_NEAR(r.average_pck[a], s / 17.0, 1e-9);
  }
  EXPECT_NEAR(r.mpjpe, mpjpe(pred, gt), 1e-9);
  // Torso normalization: the reference length of each frame is |left shoulder - right hip|.
  const auto torso = torso_lengths(gt);
  const double dx = gt.at({2, kLeftShoulder, 0}) - gt.at({2, kRightHip, 0});
  const double dy = gt.at({2, kLeftShoulder, 1}) - gt.at({2, kRightHip, 1});
  EXPECT_NEAR(torso[2], std::hypot(dx, dy), 1e-12);
}

TEST(Report, PerActionRowsAndConfidenceFilter) {
  Rng rng(12);
  const auto gt = random_tensor({4, 3, 2}, rng, 10.0);
  auto pred = gt;
  pred.at({2, 0, 0}) += 50.0;  // miss in a "wave" frame
  Tensor conf({4, 3}, 1.0);
  for (std::size_t k = 0; k < 3; ++k) conf.at({3, k}) = 0.0;  // frame 3 dropped
  ReportOptions opts;
  opts.normalization.kind = NormalizationOption::Kind::Fixed;
  opts.normalization.fixed_length = 10.0;
  const auto r = build_report({pred, gt, {"walk", "walk", "wave", "wave"}, conf, {"a", "b", "c"}}, opts);
  EXPECT_EQ(r.frames, 3u);
  ASSERT_EQ(r.per_action.size(), 2u);
  EXPECT_EQ(r.per_action[0].action, "walk");
  EXPECT_EQ(r.per_action[0].pck20, 100.0);
  EXPECT_EQ(r.per_action[0].frames, 2u);
  EXPECT_EQ(r.per_action[1].action, "wave");
  EXPECT_NEAR(r.per_action[1].pck20, 200.0 / 3.0, 1e-12);
  EXPECT_EQ(r.per_joint[1].name, "b");
  EXPECT_THROW(build_report({pred, gt, {"walk"}, std::nullopt, {}}), std::invalid_argument);
  EXPECT_THROW(build_report({pred, gt, {}, std::nullopt, {}}), std::invalid_argument);  // torso needs J=17
}

TEST(Report, ExportsTableJsonAndChart) {
  Rng rng(13);
  const auto gt = random_tensor({2, 17, 2}, rng, 50.0);
  auto pred = gt;
  for (auto& v : pred.data()) v += rng.normal();
  const auto r = build_report({pred, gt, {"sit", "stand"}, std::nullopt, {}});
  TempDir dir("report");
  write_report_table(dir / "table.tsv", r);
  write_report_json(dir / "report.json", r);
  write_action_chart(dir / "actions.tsv", r);

  std::ifstream table(dir / "table.tsv");
  std::string line;
  std::getline(table, line);
  EXPECT_EQ(line, "Keypoint\tPCK@50\tPCK@40\tPCK@30\tPCK@20\tPCK@10\tMPJPE(px)");
  std::size_t rows = 0;
  std::string last;
  while (std::getline(table, line)) {
    if (line.rfind("#", 0) != 0) last = line, ++rows;
  }
  EXPECT_EQ(rows, 18u);
  EXPECT_EQ(last.rfind("Average\t", 0), 0u);

  std::ifstream js(dir / "report.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j.at("per_joint").size(), 17u);
  EXPECT_NEAR(j.at("averages").at("mpjpe").get<double>(), r.mpjpe, 1e-12);
  EXPECT_EQ(j.at("per_action").size(), 2u);

  std::ifstream chart(dir / "actions.tsv");
  rows = 0;
  while (std::getline(chart, line)) ++rows;
  EXPECT_EQ(rows, 3u);
}
