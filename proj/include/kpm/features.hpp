#pragma once

#include <Eigen/Core>
#include <cmath>
#include <span>

#include "kpm/geometry.hpp"

namespace kpm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Keypoints of one image. Positions are kept in pixels; the model consumes
// them normalized by the image width and height.
struct FeatureSet {
  Eigen::MatrixX2d keypoints;  // N x 2, pixels
  Matrix descriptors;          // N x D
  Vector depths;               // N, NaN where depth is unknown; empty when none

  Eigen::Index size() const { return keypoints.rows(); }
  Eigen::Index dim() const { return descriptors.cols(); }
  bool has_depth(Eigen::Index i) const {
    return depths.size() == keypoints.rows() && std::isfinite(depths(i)) && depths(i) > 0.0;
  }
  Vec2 keypoint(Eigen::Index i) const { return keypoints.row(i).transpose(); }

  Eigen::MatrixX2d normalized_positions(const CameraIntrinsics& K) const;

  // Throws ShapeMismatch unless N >= 1, row counts agree and descriptors
  // are finite.
  void validate() const;

  // Rows reordered so that row i of the result is row perm[i] of this set.
  FeatureSet permuted(std::span<const Eigen::Index> perm) const;
};

}  // namespace kpm
