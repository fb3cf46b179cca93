#include "kpm/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>

#include "kpm/error.hpp"

namespace kpm {

namespace {
constexpr double kSmallAngle = 1e-8;
constexpr double kRadToDeg = 180.0 / M_PI;
}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return S;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < kSmallAngle) {
    return Mat3::Identity() + skew(omega);
  }
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Vec3 so3_log(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  double angle = aa.angle();
  Vec3 axis = aa.axis();
  if (angle > M_PI) {
    angle = 2.0 * M_PI - angle;
    axis = -axis;
  }
  return angle * axis;
}

Pose Pose::inverse() const {
  const Mat3 Rt = rotation_.transpose();
  return Pose(Rt, -(Rt * translation_));
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
}

namespace {

// Left Jacobian of SO(3) and its inverse.
Mat3 left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-5) {
    return Mat3::Identity() + 0.5 * K + K * K / 6.0;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() + (1.0 - std::cos(theta)) / t2 * K +
         (theta - std::sin(theta)) / (t2 * theta) * K * K;
}

Mat3 left_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < 1e-5) {
    return Mat3::Identity() - 0.5 * K + K * K / 12.0;
  }
  const double coeff =
      (1.0 - theta * std::sin(theta) / (2.0 * (1.0 - std::cos(theta)))) / (theta * theta);
  return Mat3::Identity() - 0.5 * K + coeff * K * K;
}

}  // namespace

Eigen::Matrix<double, 6, 1> Pose::log() const {
  const Vec3 phi = so3_log(rotation_);
  Eigen::Matrix<double, 6, 1> twist;
  twist.head<3>() = left_jacobian_inverse(phi) * translation_;
  twist.tail<3>() = phi;
  return twist;
}

Pose Pose::exp(const Eigen::Matrix<double, 6, 1>& twist) {
  const Vec3 rho = twist.head<3>();
  const Vec3 phi = twist.tail<3>();
  return Pose(so3_exp(phi), left_jacobian(phi) * rho);
}

double Pose::orthonormality_error() const {
  const double ortho = (rotation_ * rotation_.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(rotation_.determinant() - 1.0));
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0 && width > 0.0 && height > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "intrinsics require fx, fy, width, height > 0");
  }
}

Homography::Homography(const Mat3& H) : H_(H) {
  if (std::abs(H_(2, 2)) > 1e-12) {
    H_ /= H_(2, 2);
  } else if (H_.norm() > 0.0) {
    H_ /= H_.norm();
  }
  if (!H_.allFinite() || std::abs(H_.determinant()) <= 1e-12) {
    throw Error(ErrorCode::DegenerateDivision, "singular homography");
  }
}

Homography Homography::translation(double tx, double ty) {
  Mat3 H = Mat3::Identity();
  H(0, 2) = tx;
  H(1, 2) = ty;
  return Homography(H);
}

Vec2 project(const CameraIntrinsics& K, const Vec3& landmark) {
  if (landmark.z() <= 1e-9) {
    throw Error(ErrorCode::NonPositiveDepth, "landmark at or behind the camera plane");
  }
  return {K.fx * landmark.x() / landmark.z() + K.cx, K.fy * landmark.y() / landmark.z() + K.cy};
}

Vec3 unproject(const CameraIntrinsics& K, const Vec2& pixel, double depth) {
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::NonPositiveDepth, "depth must be positive");
  }
  return {(pixel.x() - K.cx) / K.fx * depth, (pixel.y() - K.cy) / K.fy * depth, depth};
}

std::optional<WarpedPoint> warp_keypoint(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                                         const Pose& T_AB, const Vec2& pixel, double depth) {
  const Vec3 in_b = T_AB * unproject(K_A, pixel, depth);
  if (in_b.z() <= 1e-9) {
    return std::nullopt;
  }
  const Vec2 warped = project(K_B, in_b);
  if (!K_B.in_view(warped)) {
    return std::nullopt;
  }
  return WarpedPoint{warped, in_b.z()};
}

Vec2 warp_homography(const Homography& H, const Vec2& pixel) {
  const Vec3 x = H.matrix() * pixel.homogeneous();
  if (std::abs(x.z()) < 1e-12) {
    throw Error(ErrorCode::DegenerateDivision, "point maps to infinity");
  }
  return x.hnormalized();
}

AngularErrors pose_angular_errors(const Pose& T_est, const Pose& T_gt) {
  AngularErrors out;
  out.rot_deg = so3_log(T_est.rotation() * T_gt.rotation().transpose()).norm() * kRadToDeg;

  const double n_est = T_est.translation().norm();
  const double n_gt = T_gt.translation().norm();
  const bool est_zero = n_est <= 1e-9;
  const bool gt_zero = n_gt <= 1e-9;
  if (est_zero && gt_zero) {
    out.trans_deg = 0.0;
  } else if (est_zero || gt_zero) {
    out.trans_deg = 180.0;
  } else {
    const Vec3 a = T_est.translation() / n_est;
    const Vec3 b = T_gt.translation() / n_gt;
    out.trans_deg = std::atan2(a.cross(b).norm(), a.dot(b)) * kRadToDeg;
  }
  return out;
}

namespace {

// Similarity taking points to zero centroid and mean distance sqrt(2).
Mat3 normalizing_transform(std::span<const Vec2> pts) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 1e-15 ? std::sqrt(2.0) / mean_dist : 1.0;
  Mat3 T;
  T << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return T;
}

}  // namespace

Homography fit_homography_dlt(std::span<const std::pair<Vec2, Vec2>> correspondences) {
  const auto n = correspondences.size();
  if (n < 4) {
    throw Error(ErrorCode::InsufficientMatches, "homography needs at least 4 correspondences");
  }
  std::vector<Vec2> src(n), dst(n);
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = correspondences[i].first;
    dst[i] = correspondences[i].second;
  }
  const Mat3 Ts = normalizing_transform(src);
  const Mat3 Td = normalizing_transform(dst);

  Eigen::MatrixXd A(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = Ts * src[i].homogeneous();
    const Vec3 q = Td * dst[i].homogeneous();
    const double x = p.x(), y = p.y(), u = q.x() / q.z(), v = q.y() / q.z();
    const auto r = static_cast<Eigen::Index>(2 * i);
    A.row(r) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
    A.row(r + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
  }
  // 4 points give an 8x9 system; pad so the full V is available.
  if (A.rows() < 9) {
    A.conservativeResize(9, 9);
    A.row(8).setZero();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Homography(Td.inverse() * Hn * Ts);
}

}  // namespace kpm
