#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "kpm/autodiff.hpp"
#include "kpm/features.hpp"
#include "kpm/geometry.hpp"

namespace kpm {

struct GtMatch {
  int a = 0;
  int b = 0;
  double distance = 0.0;  // pixels
};

// Ground-truth correspondences from a reprojection distance matrix.
struct GroundTruth {
  Matrix distance;  // N_A x N_B pixels, +inf where the warp is invalid
  double threshold = 0.0;
  std::vector<GtMatch> matches;  // ordered by a
  std::vector<int> unmatched_a;
  std::vector<int> unmatched_b;

  Eigen::Index n_a() const { return distance.rows(); }
  Eigen::Index n_b() const { return distance.cols(); }
};

// (i, j) is matched when d_ij < threshold and d_ij is the minimum of both row
// i and column j. Equal minima resolve to the first index so the result stays
// a partial matching.
GroundTruth ground_truth_from_distances(Matrix distance, double threshold);

// Pixel distances between A keypoints warped into B and B keypoints.
Matrix reprojection_distances(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                              const Pose& T_AB, const FeatureSet& feats_A,
                              const FeatureSet& feats_B);
Matrix reprojection_distances(const CameraIntrinsics& K_B, const Homography& H_AB,
                              const FeatureSet& feats_A, const FeatureSet& feats_B);

// Throws MissingDepth when A has no depths at all.
GroundTruth build_ground_truth(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                               const Pose& T_AB, const FeatureSet& feats_A,
                               const FeatureSet& feats_B, double threshold);
GroundTruth build_ground_truth(const CameraIntrinsics& K_B, const Homography& H_AB,
                               const FeatureSet& feats_A, const FeatureSet& feats_B,
                               double threshold);

inline constexpr double kLogClampEpsilon = 1e-12;

enum class LossKind { Matching, Projection };

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

// Loss as -sum_k w_k log P̄[r_k, c_k] over an augmented assignment matrix.
// Positive terms carry 2 / #matched (times exp(th - d) for the projection
// loss); dustbin terms carry 1 / (#I + #J).
std::vector<ad::LogTerm> matching_loss_terms(const GroundTruth& gt);
std::vector<ad::LogTerm> projection_loss_terms(const GroundTruth& gt_margin, double threshold);

double evaluate_loss_terms(const Matrix& P_augmented, const std::vector<ad::LogTerm>& terms);

double matching_loss(const Matrix& P_augmented, const GroundTruth& gt);

// gt_margin is built with threshold mg; `threshold` is th.
double projection_loss(const Matrix& P_augmented, const GroundTruth& gt_margin, double threshold);

// exp(th - d), the positive-term weight of the projection loss.
inline double projection_weight(double distance, double threshold) {
  return std::exp(threshold - distance);
}

}  // namespace kpm
