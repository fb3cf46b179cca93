#include "kpm/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "kpm/error.hpp"

namespace kpm {

GroundTruth ground_truth_from_distances(Matrix distance, double threshold) {
  if (!(threshold > 0.0)) throw Error(ErrorCode::InvalidConfig, "threshold must be positive");
  GroundTruth gt;
  gt.threshold = threshold;
  gt.distance = std::move(distance);
  const Eigen::Index n_a = gt.distance.rows();
  const Eigen::Index n_b = gt.distance.cols();

  std::vector<Eigen::Index> col_best(static_cast<std::size_t>(n_b), -1);
  for (Eigen::Index j = 0; j < n_b && n_a > 0; ++j) {
    gt.distance.col(j).minCoeff(&col_best[static_cast<std::size_t>(j)]);
  }
  std::vector<char> b_matched(static_cast<std::size_t>(n_b), 0);
  for (Eigen::Index i = 0; i < n_a; ++i) {
    Eigen::Index j = -1;
    double d = std::numeric_limits<double>::infinity();
    if (n_b > 0) d = gt.distance.row(i).minCoeff(&j);
    if (j >= 0 && d < threshold && col_best[static_cast<std::size_t>(j)] == i) {
      gt.matches.push_back({static_cast<int>(i), static_cast<int>(j), d});
      b_matched[static_cast<std::size_t>(j)] = 1;
    } else {
      gt.unmatched_a.push_back(static_cast<int>(i));
    }
  }
  for (Eigen::Index j = 0; j < n_b; ++j) {
    if (!b_matched[static_cast<std::size_t>(j)]) gt.unmatched_b.push_back(static_cast<int>(j));
  }
  return gt;
}

Matrix reprojection_distances(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                              const Pose& T_AB, const FeatureSet& feats_A,
                              const FeatureSet& feats_B) {
  const double inf = std::numeric_limits<double>::infinity();
  Matrix d = Matrix::Constant(feats_A.size(), feats_B.size(), inf);
  for (Eigen::Index i = 0; i < feats_A.size(); ++i) {
    if (!feats_A.has_depth(i)) continue;
    const auto w = warp_keypoint(K_A, K_B, T_AB, feats_A.keypoint(i), feats_A.depths(i));
    if (!w) continue;
    for (Eigen::Index j = 0; j < feats_B.size(); ++j) {
      d(i, j) = (w->pixel - feats_B.keypoint(j)).norm();
    }
  }
  return d;
}

Matrix reprojection_distances(const CameraIntrinsics& K_B, const Homography& H_AB,
                              const FeatureSet& feats_A, const FeatureSet& feats_B) {
  const double inf = std::numeric_limits<double>::infinity();
  Matrix d = Matrix::Constant(feats_A.size(), feats_B.size(), inf);
  for (Eigen::Index i = 0; i < feats_A.size(); ++i) {
    const Vec3 x = H_AB.matrix() * feats_A.keypoint(i).homogeneous();
    if (std::abs(x.z()) < 1e-12) continue;
    const Vec2 p = x.hnormalized();
    if (!K_B.in_view(p)) continue;
    for (Eigen::Index j = 0; j < feats_B.size(); ++j) {
      d(i, j) = (p - feats_B.keypoint(j)).norm();
    }
  }
  return d;
}

GroundTruth build_ground_truth(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                               const Pose& T_AB, const FeatureSet& feats_A,
                               const FeatureSet& feats_B, double threshold) {
  if (feats_A.depths.size() != feats_A.size()) {
    throw Error(ErrorCode::MissingDepth, "pose-based ground truth needs keypoint depths");
  }
  return ground_truth_from_distances(reprojection_distances(K_A, K_B, T_AB, feats_A, feats_B),
                                     threshold);
}

GroundTruth build_ground_truth(const CameraIntrinsics& K_B, const Homography& H_AB,
                               const FeatureSet& feats_A, const FeatureSet& feats_B,
                               double threshold) {
  return ground_truth_from_distances(reprojection_distances(K_B, H_AB, feats_A, feats_B),
                                     threshold);
}

const char* to_string(LossKind kind) {
  return kind == LossKind::Matching ? "matching" : "projection";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "matching") return LossKind::Matching;
  if (name == "projection") return LossKind::Projection;
  throw Error(ErrorCode::InvalidConfig, "unknown loss kind '" + name + "'");
}

namespace {

void append_negative_terms(const GroundTruth& gt, std::vector<ad::LogTerm>& terms) {
  const std::size_t count = gt.unmatched_a.size() + gt.unmatched_b.size();
  if (count == 0) return;
  const double w = 1.0 / static_cast<double>(count);
  for (int i : gt.unmatched_a) terms.push_back({i, gt.n_b(), w});
  for (int j : gt.unmatched_b) terms.push_back({gt.n_a(), j, w});
}

}  // namespace

std::vector<ad::LogTerm> matching_loss_terms(const GroundTruth& gt) {
  std::vector<ad::LogTerm> terms;
  if (!gt.matches.empty()) {
    const double w = 2.0 / static_cast<double>(gt.matches.size());
    for (const auto& m : gt.matches) terms.push_back({m.a, m.b, w});
  }
  append_negative_terms(gt, terms);
  return terms;
}

std::vector<ad::LogTerm> projection_loss_terms(const GroundTruth& gt_margin, double threshold) {
  if (!(gt_margin.threshold > threshold)) {
    throw Error(ErrorCode::InvalidConfig, "margin must exceed the pixel threshold");
  }
  std::vector<ad::LogTerm> terms;
  if (!gt_margin.matches.empty()) {
    const double w = 2.0 / static_cast<double>(gt_margin.matches.size());
    for (const auto& m : gt_margin.matches) {
      terms.push_back({m.a, m.b, w * projection_weight(m.distance, threshold)});
    }
  }
  append_negative_terms(gt_margin, terms);
  return terms;
}

double evaluate_loss_terms(const Matrix& P_augmented, const std::vector<ad::LogTerm>& terms) {
  double total = 0.0;
  for (const auto& t : terms) {
    total -= t.weight * std::log(std::max(P_augmented(t.row, t.col), kLogClampEpsilon));
  }
  return total;
}

double matching_loss(const Matrix& P_augmented, const GroundTruth& gt) {
  return evaluate_loss_terms(P_augmented, matching_loss_terms(gt));
}

double projection_loss(const Matrix& P_augmented, const GroundTruth& gt_margin, double threshold) {
  return evaluate_loss_terms(P_augmented, projection_loss_terms(gt_margin, threshold));
}

}  // namespace kpm
