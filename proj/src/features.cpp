#include "kpm/features.hpp"

#include "kpm/error.hpp"

namespace kpm {

Eigen::MatrixX2d FeatureSet::normalized_positions(const CameraIntrinsics& K) const {
  Eigen::MatrixX2d out(keypoints.rows(), 2);
  out.col(0) = keypoints.col(0) / K.width;
  out.col(1) = keypoints.col(1) / K.height;
  return out;
}

void FeatureSet::validate() const {
  if (keypoints.rows() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "feature set needs at least one keypoint");
  }
  if (descriptors.rows() != keypoints.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "descriptor rows differ from keypoint count");
  }
  if (depths.size() != 0 && depths.size() != keypoints.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "depth count differs from keypoint count");
  }
  if (!descriptors.allFinite()) {
    throw Error(ErrorCode::ShapeMismatch, "descriptors must be finite");
  }
}

FeatureSet FeatureSet::permuted(std::span<const Eigen::Index> perm) const {
  FeatureSet out;
  const auto n = static_cast<Eigen::Index>(perm.size());
  out.keypoints.resize(n, 2);
  out.descriptors.resize(n, descriptors.cols());
  if (depths.size() != 0) out.depths.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.keypoints.row(i) = keypoints.row(perm[i]);
    out.descriptors.row(i) = descriptors.row(perm[i]);
    if (depths.size() != 0) out.depths(i) = depths(perm[i]);
  }
  return out;
}

}  // namespace kpm
