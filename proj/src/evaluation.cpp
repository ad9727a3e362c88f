#include "vstpose/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "vstpose/dataset.hpp"

namespace vstpose::eval {
namespace {

using Mat = Eigen::MatrixXd;

void require_pose_pair(const Tensor& pred, const Tensor& gt, const char* op) {
  if (pred.shape() != gt.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(pred.shape()) + " vs " +
                                shape_str(gt.shape()));
  }
  if (pred.rank() < 2) throw std::invalid_argument(std::string(op) + ": expected [..., J, C]");
}

void require_frames(const Tensor& t, const char* op) {
  if (t.rank() != 3) throw std::invalid_argument(std::string(op) + ": expected [N, J, C], got " + shape_str(t.shape()));
}

double joint_distance(const double* a, const double* b, std::size_t c) {
  double s = 0.0;
  for (std::size_t k = 0; k < c; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

Mat to_matrix(const Tensor& t) {
  const auto rows = static_cast<Eigen::Index>(t.dim(0)), cols = static_cast<Eigen::Index>(t.dim(1));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = t[static_cast<std::size_t>(i * cols + j)];
  }
  return m;
}

Tensor to_tensor(const Mat& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  }
  return t;
}

}  // namespace

PckResult pck(const Tensor& pred, const Tensor& gt, double alpha_pct, std::span<const double> norm_lengths) {
  require_pose_pair(pred, gt, "pck");
  require_frames(pred, "pck");
  const std::size_t n = pred.dim(0), j = pred.dim(1), c = pred.dim(2);
  if (norm_lengths.size() != n) throw std::invalid_argument("pck: need one normalization length per frame");
  for (double len : norm_lengths) {
    if (!(len > 0.0)) throw std::invalid_argument("pck: normalization lengths must be positive");
  }
  if (n == 0) throw std::invalid_argument("pck: no frames");
  PckResult r;
  r.per_joint.assign(j, 0.0);
  for (std::size_t f = 0; f < n; ++f) {
    const double threshold = alpha_pct / 100.0 * norm_lengths[f];
    for (std::size_t k = 0; k < j; ++k) {
      const std::size_t off = (f * j + k) * c;
      if (joint_distance(pred.ptr() + off, gt.ptr() + off, c) <= threshold) r.per_joint[k] += 1.0;
    }
  }
  for (auto& v : r.per_joint) v = 100.0 * v / static_cast<double>(n);
  double s = 0.0;
  for (double v : r.per_joint) s += v;
  r.average = s / static_cast<double>(j);
  return r;
}

double mpjpe(const Tensor& pred, const Tensor& gt) {
  require_pose_pair(pred, gt, "mpjpe");
  const std::size_t c = pred.shape().back();
  const std::size_t joints = pred.numel() / c;
  if (joints == 0) throw std::invalid_argument("mpjpe: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < joints; ++i) s += joint_distance(pred.ptr() + i * c, gt.ptr() + i * c, c);
  return s / static_cast<double>(joints);
}

std::vector<double> mpjpe_per_joint(const Tensor& pred, const Tensor& gt) {
  require_pose_pair(pred, gt, "mpjpe_per_joint");
  require_frames(pred, "mpjpe_per_joint");
  const std::size_t n = pred.dim(0), j = pred.dim(1), c = pred.dim(2);
  std::vector<double> out(j, 0.0);
  for (std::size_t f = 0; f < n; ++f) {
    for (std::size_t k = 0; k < j; ++k) {
      const std::size_t off = (f * j + k) * c;
      out[k] += joint_distance(pred.ptr() + off, gt.ptr() + off, c);
    }
  }
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

SimilarityTransform procrustes_align(const Tensor& p, const Tensor& q) {
  if (p.rank() != 2 || p.shape() != q.shape()) {
    throw std::invalid_argument("procrustes_align: expected two [J, C] point sets, got " + shape_str(p.shape()) +
                                " and " + shape_str(q.shape()));
  }
  const std::size_t j = p.dim(0), c = p.dim(1);
  if (j < c) throw std::invalid_argument("procrustes_align: need at least C points");
  const Mat pm = to_matrix(p), qm = to_matrix(q);
  const Eigen::RowVectorXd mu_p = pm.colwise().mean(), mu_q = qm.colwise().mean();
  const Mat p0 = pm.rowwise() - mu_p, q0 = qm.rowwise() - mu_q;
  const double var_q = q0.squaredNorm(), var_p = p0.squaredNorm();
  if (!(var_q > 0.0)) throw std::invalid_argument("procrustes_align: degenerate target (all points identical)");

  Mat rotation = Mat::Identity(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
  double scale = 0.0;
  if (var_p > 0.0) {
    Eigen::JacobiSVD<Mat> svd(p0.transpose() * q0, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Mat& u = svd.matrixU();
    const Mat& v = svd.matrixV();
    Eigen::VectorXd d = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(c));
    if ((u * v.transpose()).determinant() < 0.0) d(static_cast<Eigen::Index>(c) - 1) = -1.0;
    rotation = u * d.asDiagonal() * v.transpose();
    scale = svd.singularValues().dot(d) / var_p;
  }
  const Eigen::RowVectorXd t = mu_q - scale * mu_p * rotation;
  const Mat aligned = (scale * pm * rotation).rowwise() + t;

  SimilarityTransform out;
  out.rotation = to_tensor(rotation);
  out.scale = scale;
  out.translation = Tensor(Shape{c});
  for (std::size_t k = 0; k < c; ++k) out.translation[k] = t(static_cast<Eigen::Index>(k));
  out.aligned = to_tensor(aligned);
  return out;
}

double pa_mpjpe(const Tensor& pred, const Tensor& gt) {
  require_pose_pair(pred, gt, "pa_mpjpe");
  require_frames(pred, "pa_mpjpe");
  const std::size_t n = pred.dim(0), j = pred.dim(1), c = pred.dim(2);
  if (n == 0) throw std::invalid_argument("pa_mpjpe: no frames");
  double s = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    const Tensor pf = pred.slice0(f, 1).reshaped({j, c});
    const Tensor gf = gt.slice0(f, 1).reshaped({j, c});
    s += mpjpe(procrustes_align(pf, gf).aligned, gf);
  }
  return s / static_cast<double>(n);
}

std::vector<double> torso_lengths(const Tensor& gt) {
  require_frames(gt, "torso_lengths");
  if (gt.dim(1) != data::kCoco17Joints) {
    throw std::invalid_argument("torso normalization requires COCO-17 joints, got J=" + std::to_string(gt.dim(1)));
  }
  const std::size_t n = gt.dim(0), j = gt.dim(1), c = gt.dim(2);
  std::vector<double> out(n);
  for (std::size_t f = 0; f < n; ++f) {
    out[f] = joint_distance(gt.ptr() + (f * j + kLeftShoulder) * c, gt.ptr() + (f * j + kRightHip) * c, c);
  }
  return out;
}

std::vector<double> NormalizationOption::lengths(const Tensor& gt) const {
  if (kind == Kind::Torso) return torso_lengths(gt);
  return std::vector<double>(gt.dim(0), fixed_length);
}

MetricReport build_report(const ReportInput& input, const ReportOptions& options) {
  require_pose_pair(input.pred, input.gt, "build_report");
  require_frames(input.pred, "build_report");
  const std::size_t n_all = input.pred.dim(0), j = input.pred.dim(1), c = input.pred.dim(2);
  if (n_all == 0) throw std::invalid_argument("build_report: empty evaluation set");
  if (!input.actions.empty() && input.actions.size() != n_all) {
    throw std::invalid_argument("build_report: need one action label per frame");
  }

  // Confidence filter.
  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < n_all; ++f) {
    if (input.confidence) {
      double s = 0.0;
      for (std::size_t k = 0; k < j; ++k) s += (*input.confidence)[f * j + k];
      if (s / static_cast<double>(j) < options.confidence_threshold) continue;
    }
    keep.push_back(f);
  }
  if (keep.empty()) throw std::invalid_argument("build_report: every frame is below the confidence threshold");
  const std::size_t n = keep.size();
  Tensor pred(Shape{n, j, c}), gt(Shape{n, j, c});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(input.pred.ptr() + keep[i] * j * c, j * c, pred.ptr() + i * j * c);
    std::copy_n(input.gt.ptr() + keep[i] * j * c, j * c, gt.ptr() + i * j * c);
  }

  MetricReport r;
  r.frames = n;
  r.units = options.units;
  const auto norms = options.normalization.lengths(gt);
  std::vector<PckResult> per_threshold;
  for (double alpha : kPckThresholds) per_threshold.push_back(pck(pred, gt, alpha, norms));
  const auto joint_err = mpjpe_per_joint(pred, gt);
  for (std::size_t k = 0; k < j; ++k) {
    JointRow row;
    if (!input.joint_names.empty()) row.name = input.joint_names.at(k);
    else if (j == data::kCoco17Joints) row.name = data::kCoco17Names[k];
    else row.name = "joint_" + std::to_string(k);
    for (std::size_t a = 0; a < kPckThresholds.size(); ++a) row.pck[a] = per_threshold[a].per_joint[k];
    row.mpjpe = joint_err[k];
    r.per_joint.push_back(std::move(row));
  }
  for (std::size_t a = 0; a < kPckThresholds.size(); ++a) {
    double s = 0.0;
    for (const auto& row : r.per_joint) s += row.pck[a];
    r.average_pck[a] = s / static_cast<double>(j);
  }
  double s = 0.0;
  for (const auto& row : r.per_joint) s += row.mpjpe;
  r.mpjpe = s / static_cast<double>(j);
  r.pa_mpjpe = pa_mpjpe(pred, gt);

  if (!input.actions.empty()) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[input.actions[keep[i]]].push_back(i);
    constexpr std::size_t kPck20 = 3;
    static_assert(kPckThresholds[kPck20] == 20);
    for (const auto& [action, frames] : groups) {
      Tensor ap(Shape{frames.size(), j, c}), ag(Shape{frames.size(), j, c});
      std::vector<double> an;
      for (std::size_t i = 0; i < frames.size(); ++i) {
        std::copy_n(pred.ptr() + frames[i] * j * c, j * c, ap.ptr() + i * j * c);
        std::copy_n(gt.ptr() + frames[i] * j * c, j * c, ag.ptr() + i * j * c);
        an.push_back(norms[frames[i]]);
      }
      r.per_action.push_back({action, pck(ap, ag, kPckThresholds[kPck20], an).average, frames.size()});
    }
  }
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["frames"] = frames;
  j["units"] = units;
  nlohmann::json avg;
  for (std::size_t a = 0; a < kPckThresholds.size(); ++a) {
    avg["pck@" + std::to_string(static_cast<int>(kPckThresholds[a]))] = average_pck[a];
  }
  avg["mpjpe"] = mpjpe;
  avg["pa_mpjpe"] = pa_mpjpe;
  j["averages"] = avg;
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& row : per_joint) {
    nlohmann::json jr{{"name", row.name}, {"mpjpe", row.mpjpe}};
    for (std::size_t a = 0; a < kPckThresholds.size(); ++a) {
      jr["pck@" + std::to_string(static_cast<int>(kPckThresholds[a]))] = row.pck[a];
    }
    joints.push_back(std::move(jr));
  }
  j["per_joint"] = joints;
  nlohmann::json actions = nlohmann::json::array();
  for (const auto& row : per_action) actions.push_back({{"action", row.action}, {"pck@20", row.pck20}, {"frames", row.frames}});
  j["per_action"] = actions;
  return j;
}

void write_report_table(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << "Keypoint";
  for (double a : kPckThresholds) os << "\tPCK@" << static_cast<int>(a);
  os << "\tMPJPE(" << report.units << ")\n";
  os.setf(std::ios::fixed);
  os.precision(2);
  for (const auto& row : report.per_joint) {
    os << row.name;
    for (double v : row.pck) os << '\t' << v;
    os << '\t' << row.mpjpe << '\n';
  }
  os << "Average";
  for (double v : report.average_pck) os << '\t' << v;
  os << '\t' << report.mpjpe << '\n';
  os << "# PA-MPJPE(" << report.units << ")\t" << report.pa_mpjpe << '\n';
}

void write_report_json(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << report.to_json().dump(2) << '\n';
}

void write_action_chart(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << "action\tpck@20\tframes\n";
  for (const auto& row : report.per_action) os << row.action << '\t' << row.pck20 << '\t' << row.frames << '\n';
}

}  // namespace vstpose::eval
