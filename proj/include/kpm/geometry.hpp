#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>
#include <span>
#include <utility>

namespace kpm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

Mat3 skew(const Vec3& v);

// Rodrigues exponential and its inverse. so3_log returns the rotation vector
// with angle in [0, pi].
Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& R);

// Rigid transform x -> R x + t.
class Pose {
 public:
  Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}
  // Quaternion is accepted at I/O boundaries only; stored as a matrix.
  Pose(const Eigen::Quaterniond& q, const Vec3& translation)
      : rotation_(q.normalized().toRotationMatrix()), translation_(translation) {}

  static Pose identity() { return Pose(); }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Vec3 operator*(const Vec3& x) const { return rotation_ * x + translation_; }

  // Twist (rho, phi) with the rotation part last.
  Eigen::Matrix<double, 6, 1> log() const;
  static Pose exp(const Eigen::Matrix<double, 6, 1>& twist);

  // Max deviation of R Rᵀ from I and of det(R) from 1.
  double orthonormality_error() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double width = 1.0;
  double height = 1.0;

  // Throws InvalidConfig unless fx, fy, width and height are positive.
  void validate() const;
  bool in_view(const Vec2& pixel) const {
    return pixel.x() >= 0.0 && pixel.x() < width && pixel.y() >= 0.0 && pixel.y() < height;
  }
  Vec2 normalize(const Vec2& pixel) const { return {pixel.x() / width, pixel.y() / height}; }
};

class Homography {
 public:
  Homography() : H_(Mat3::Identity()) {}
  // Scales so that H(2,2) = 1 when that entry is not ~0; throws
  // DegenerateDivision when |det H| <= 1e-12.
  explicit Homography(const Mat3& H);

  static Homography translation(double tx, double ty);

  const Mat3& matrix() const { return H_; }
  Homography inverse() const { return Homography(H_.inverse()); }

 private:
  Mat3 H_;
};

Vec2 project(const CameraIntrinsics& K, const Vec3& landmark);
Vec3 unproject(const CameraIntrinsics& K, const Vec2& pixel, double depth);

struct WarpedPoint {
  Vec2 pixel;
  double depth;  // z in the target camera
};

// Warps a pixel with known depth from image A into image B. `T_AB` maps
// A-camera coordinates into B-camera coordinates. Returns nullopt when the
// point lands behind B or outside its image bounds.
std::optional<WarpedPoint> warp_keypoint(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                                         const Pose& T_AB, const Vec2& pixel, double depth);

Vec2 warp_homography(const Homography& H, const Vec2& pixel);

struct AngularErrors {
  double rot_deg = 0.0;
  double trans_deg = 0.0;
};

AngularErrors pose_angular_errors(const Pose& T_est, const Pose& T_gt);

// Normalized DLT over >= 4 correspondences (src -> dst). Throws
// InsufficientMatches for fewer than 4 points and DegenerateDivision when the
// fitted matrix is singular.
Homography fit_homography_dlt(std::span<const std::pair<Vec2, Vec2>> correspondences);

}  // namespace kpm
