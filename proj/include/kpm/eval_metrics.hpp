#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "kpm/assignment.hpp"
#include "kpm/geometry.hpp"
#include "kpm/losses.hpp"

namespace kpm {

struct MatchReport {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  // Recomputes the ratios from the counts. Empty denominators give 0.
  void finalize();
  MatchReport& operator+=(const MatchReport& other);
};

// TP: predicted pairs in the ground-truth match set; FP: other predicted
// pairs; FN: ground-truth pairs not predicted. Keypoints the model sends to a
// dustbin only ever count as FN.
MatchReport score_matches(const MatchSet& pred, const GroundTruth& gt);

struct RansacOptions {
  int iterations = 1000;
  double inlier_px = 3.0;
  std::uint64_t seed = 0;
};

struct RansacResult {
  Homography H;
  std::vector<char> inliers;
  std::size_t inlier_count = 0;
};

// 4-point DLT hypotheses on seeded samples, best by inlier count, refit on
// the inliers. Throws InsufficientMatches for fewer than 4 pairs.
RansacResult estimate_homography_ransac(std::span<const std::pair<Vec2, Vec2>> matches,
                                        const RansacOptions& options = {});

struct PoseRansacOptions {
  int iterations = 500;
  double inlier_m = 0.05;  // 3-D distance after alignment
  std::uint64_t seed = 0;
};

struct PoseRansacResult {
  Pose T;  // maps the first points onto the second
  std::vector<char> inliers;
  std::size_t inlier_count = 0;
};

// Rigid alignment of back-projected RGB-D matches: 3-point Umeyama
// hypotheses, best by inlier count, refit on the inliers. Throws
// InsufficientMatches for fewer than 3 pairs.
PoseRansacResult estimate_pose_rgbd_ransac(std::span<const std::pair<Vec3, Vec3>> matches,
                                           const PoseRansacOptions& options = {});

struct HomographyAccuracy {
  double mean_corner_error = 0.0;
  bool pass = false;
};

HomographyAccuracy homography_accuracy(const Homography& H_est, const Homography& H_gt,
                                       double width, double height, double threshold_px);

// Area under the cumulative error curve up to each threshold, normalized by
// the threshold. The curve passes through (e_k, k/n) for the sorted errors
// e_1..e_n, linearly interpolated, and stays flat past the last error not
// exceeding the threshold. Throws EmptyErrors.
std::vector<double> pose_auc(std::span<const double> errors, std::span<const double> thresholds);

}  // namespace kpm
