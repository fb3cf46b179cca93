#include "kpm/eval_metrics.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <optional>
#include <random>
#include <set>

#include <Eigen/Geometry>

#include "kpm/error.hpp"

namespace kpm {

void MatchReport::finalize() {
  precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

MatchReport& MatchReport::operator+=(const MatchReport& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  finalize();
  return *this;
}

MatchReport score_matches(const MatchSet& pred, const GroundTruth& gt) {
  std::set<std::pair<int, int>> truth;
  for (const auto& m : gt.matches) truth.emplace(m.a, m.b);
  MatchReport r;
  for (const auto& m : pred.matches) {
    if (truth.count({m.a, m.b})) {
      ++r.tp;
    } else {
      ++r.fp;
    }
  }
  r.fn = truth.size() - r.tp;
  r.finalize();
  return r;
}

namespace {

double transfer_error(const Homography& H, const std::pair<Vec2, Vec2>& m) {
  const Vec3 x = H.matrix() * m.first.homogeneous();
  if (std::abs(x.z()) < 1e-12) return std::numeric_limits<double>::infinity();
  return (x.hnormalized() - m.second).norm();
}

std::size_t count_inliers(const Homography& H, std::span<const std::pair<Vec2, Vec2>> matches,
                          double inlier_px, std::vector<char>* mask) {
  std::size_t n = 0;
  if (mask) mask->assign(matches.size(), 0);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (transfer_error(H, matches[i]) < inlier_px) {
      ++n;
      if (mask) (*mask)[i] = 1;
    }
  }
  return n;
}

}  // namespace

RansacResult estimate_homography_ransac(std::span<const std::pair<Vec2, Vec2>> matches,
                                        const RansacOptions& options) {
  if (matches.size() < 4) {
    throw Error(ErrorCode::InsufficientMatches, "RANSAC needs at least 4 matches");
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, matches.size() - 1);

  std::optional<Homography> best;
  std::size_t best_count = 0;
  std::array<std::pair<Vec2, Vec2>, 4> sample;
  for (int it = 0; it < options.iterations; ++it) {
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) {
      std::size_t c;
      do {
        c = pick(rng);
      } while (std::find(idx.begin(), idx.begin() + static_cast<long>(k), c) !=
               idx.begin() + static_cast<long>(k));
      idx[k] = c;
      sample[k] = matches[c];
    }
    Homography H;
    try {
      H = fit_homography_dlt(sample);
    } catch (const Error&) {
      continue;  // degenerate sample
    }
    const std::size_t count = count_inliers(H, matches, options.inlier_px, nullptr);
    if (!best || count > best_count) {
      best = H;
      best_count = count;
    }
  }
  if (!best) throw Error(ErrorCode::DegenerateDivision, "every RANSAC sample was degenerate");

  RansacResult result{*best, {}, 0};
  std::vector<char> mask;
  count_inliers(*best, matches, options.inlier_px, &mask);
  std::vector<std::pair<Vec2, Vec2>> inliers;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (mask[i]) inliers.push_back(matches[i]);
  }
  if (inliers.size() >= 4) {
    try {
      result.H = fit_homography_dlt(inliers);
    } catch (const Error&) {
      // keep the minimal-sample hypothesis
    }
  }
  result.inlier_count = count_inliers(result.H, matches, options.inlier_px, &result.inliers);
  return result;
}

namespace {

std::optional<Pose> rigid_fit(std::span<const std::pair<Vec3, Vec3>> pairs) {
  Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(pairs.size()));
  Eigen::Matrix3Xd dst(3, src.cols());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    src.col(static_cast<Eigen::Index>(i)) = pairs[i].first;
    dst.col(static_cast<Eigen::Index>(i)) = pairs[i].second;
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
  if (!T.allFinite()) return std::nullopt;
  return Pose(T.topLeftCorner<3, 3>(), T.topRightCorner<3, 1>());
}

std::size_t count_pose_inliers(const Pose& T, std::span<const std::pair<Vec3, Vec3>> matches,
                               double threshold, std::vector<char>* mask) {
  std::size_t count = 0;
  if (mask) mask->assign(matches.size(), 0);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if ((T * matches[i].first - matches[i].second).norm() < threshold) {
      ++count;
      if (mask) (*mask)[i] = 1;
    }
  }
  return count;
}

bool collinear(const std::array<std::pair<Vec3, Vec3>, 3>& s) {
  const Vec3 n = (s[1].first - s[0].first).cross(s[2].first - s[0].first);
  return n.norm() < 1e-9;
}

}  // namespace

PoseRansacResult estimate_pose_rgbd_ransac(std::span<const std::pair<Vec3, Vec3>> matches,
                                           const PoseRansacOptions& options) {
  if (matches.size() < 3) {
    throw Error(ErrorCode::InsufficientMatches, "pose RANSAC needs at least 3 matches");
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, matches.size() - 1);
  std::optional<Pose> best;
  std::size_t best_count = 0;
  std::array<std::pair<Vec3, Vec3>, 3> sample;
  for (int it = 0; it < options.iterations; ++it) {
    std::array<std::size_t, 3> idx{};
    for (std::size_t k = 0; k < 3; ++k) {
      std::size_t c;
      do {
        c = pick(rng);
      } while (std::find(idx.begin(), idx.begin() + static_cast<long>(k), c) !=
               idx.begin() + static_cast<long>(k));
      idx[k] = c;
      sample[k] = matches[c];
    }
    if (collinear(sample)) continue;
    const auto T = rigid_fit(sample);
    if (!T) continue;
    const std::size_t count = count_pose_inliers(*T, matches, options.inlier_m, nullptr);
    if (!best || count > best_count) {
      best = *T;
      best_count = count;
    }
  }
  if (!best) throw Error(ErrorCode::DegenerateDivision, "every RANSAC sample was degenerate");

  PoseRansacResult result{*best, {}, 0};
  std::vector<char> mask;
  count_pose_inliers(*best, matches, options.inlier_m, &mask);
  std::vector<std::pair<Vec3, Vec3>> inliers;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (mask[i]) inliers.push_back(matches[i]);
  }
  if (inliers.size() >= 3) {
    if (const auto T = rigid_fit(inliers)) result.T = *T;
  }
  result.inlier_count = count_pose_inliers(result.T, matches, options.inlier_m, &result.inliers);
  return result;
}

HomographyAccuracy homography_accuracy(const Homography& H_est, const Homography& H_gt,
                                       double width, double height, double threshold_px) {
  const std::array<Vec2, 4> corners{Vec2(0.0, 0.0), Vec2(width, 0.0), Vec2(width, height),
                                    Vec2(0.0, height)};
  double total = 0.0;
  for (const auto& c : corners) {
    total += (warp_homography(H_est, c) - warp_homography(H_gt, c)).norm();
  }
  HomographyAccuracy out;
  out.mean_corner_error = total / 4.0;
  out.pass = out.mean_corner_error < threshold_px;
  return out;
}

std::vector<double> pose_auc(std::span<const double> errors, std::span<const double> thresholds) {
  if (errors.empty()) throw Error(ErrorCode::EmptyErrors, "no pose errors");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());

  std::vector<double> out;
  out.reserve(thresholds.size());
  for (const double t : thresholds) {
    double area = 0.0;
    double prev_e = 0.0;
    double prev_r = 0.0;
    for (std::size_t k = 0; k < sorted.size() && sorted[k] <= t; ++k) {
      const double r = static_cast<double>(k + 1) / n;
      area += 0.5 * (prev_r + r) * (sorted[k] - prev_e);
      prev_e = sorted[k];
      prev_r = r;
    }
    area += prev_r * (t - prev_e);
    out.push_back(area / t);
  }
  return out;
}

}  // namespace kpm
