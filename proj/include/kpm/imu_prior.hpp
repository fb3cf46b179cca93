#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kpm/features.hpp"
#include "kpm/geometry.hpp"

namespace kpm {

struct ImuSample {
  double timestamp = 0.0;  // seconds
  Vec3 omega = Vec3::Zero();  // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // m/s^2 specific force, body frame
};

struct ImuState {
  Mat3 orientation = Mat3::Identity();  // world-from-body
  Vec3 velocity = Vec3::Zero();
  Vec3 position = Vec3::Zero();
};

// Midpoint strapdown propagation over [t_start, t_end]. Measurements are
// linearly interpolated at the interval ends and held constant outside the
// sampled range.
ImuState propagate_imu(std::span<const ImuSample> samples, const ImuState& initial,
                       const Vec3& gravity, double t_start, double t_end);

// Motion of the body from t_start to t_end: pose of the body at t_end
// expressed in the body frame at t_start. Gravity and initial velocity are
// given in the start body frame. Use `.inverse()` to obtain the transform
// that maps start-frame points into the end frame (the warp direction).
Pose integrate_imu(std::span<const ImuSample> samples, const Vec3& initial_velocity,
                   const Vec3& gravity, double t_start, double t_end);

// Scales the previous relative motion by dt_cur / dt_prev on se(3).
Pose constant_velocity_prior(const Pose& T_prev, double dt_prev, double dt_cur);

enum class PriorDirection { SelfA, SelfB, CrossAB, CrossBA };

const char* to_string(PriorDirection direction);

// Squared maximum distance in normalized image coordinates (unit square
// diagonal). Rows that cannot be warped carry this distance everywhere.
inline constexpr double kMaxSquaredDistance = 2.0;

// Gaussian spatial prior s_ij = exp(-d_ij^2 / sigma) over normalized
// coordinates. Invalid rows have s = 0 and a constant squared distance, so
// they shift every logit of the row equally.
struct PriorMatrix {
  PriorDirection direction = PriorDirection::SelfA;
  double sigma = 0.1;
  Matrix sq_dist;
  Matrix s;
  std::vector<char> valid_rows;

  Eigen::Index rows() const { return s.rows(); }
  Eigen::Index cols() const { return s.cols(); }

  // sq_dist minus its row minimum. Uniform rows become exactly zero.
  Matrix centered_sq_dist() const;
  // -d^2 / sigma with the row constant removed (softmax-equivalent).
  Matrix logit_offset(double sigma_value) const;

  // Builds a prior from squared distances; rows flagged invalid get zeros.
  static PriorMatrix from_sq_dist(PriorDirection direction, Matrix sq_dist,
                                  std::vector<char> valid_rows, double sigma);
};

PriorMatrix self_prior(const FeatureSet& feats, const CameraIntrinsics& K, double sigma,
                       PriorDirection direction = PriorDirection::SelfA);

// T_AB maps A-camera coordinates into B-camera coordinates.
PriorMatrix cross_prior(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B, const Pose& T_AB,
                        const FeatureSet& feats_A, const FeatureSet& feats_B, double sigma,
                        PriorDirection direction = PriorDirection::CrossAB);

// Planar variant: H maps A pixels to B pixels.
PriorMatrix cross_prior_homography(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                                   const Homography& H, const FeatureSet& feats_A,
                                   const FeatureSet& feats_B, double sigma,
                                   PriorDirection direction = PriorDirection::CrossAB);

struct PairPriors {
  PriorMatrix self_a;
  PriorMatrix self_b;
  PriorMatrix cross_ab;
  PriorMatrix cross_ba;

  // Priors for the pair with A and B exchanged.
  PairPriors swapped() const;
};

PairPriors compute_pair_priors(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                               const Pose& T_AB, const FeatureSet& feats_A,
                               const FeatureSet& feats_B, double sigma);

PairPriors compute_pair_priors(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                               const Homography& H_AB, const FeatureSet& feats_A,
                               const FeatureSet& feats_B, double sigma);

// Unit square corners, the default reference for homography noise.
std::vector<Vec2> unit_square_corners();

// Perturbs the images of `corners` under H_gt with i.i.d. N(0, noise_scale^2)
// pixel offsets and refits by DLT. noise_scale = 0 returns H_gt unchanged.
Homography noisy_homography_prior(const Homography& H_gt, double noise_scale, std::uint64_t seed,
                                  std::span<const Vec2> corners = {});

}  // namespace kpm
