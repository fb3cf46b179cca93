#pragma once

#include <cstdint>
#include <vector>

#include "kpm/pipeline.hpp"

namespace kpm {

struct SynthConfig {
  int n_points = 64;  // keypoints per image
  int descriptor_dim = 16;
  double descriptor_noise = 0.3;
  double outlier_fraction = 0.2;
  double pose_magnitude = 1.0;     // scales the max rotation and translation
  double max_rotation_deg = 10.0;  // at pose_magnitude = 1
  double max_translation_m = 0.3;  // at pose_magnitude = 1
  double min_depth_m = 2.0;
  double max_depth_m = 6.0;
  double keypoint_jitter_px = 1.0;   // Gaussian std on detected positions
  double prior_rotation_error_deg = 2.0;  // uniform magnitude bound
  double prior_translation_error_m = 0.03;
  CameraIntrinsics camera{500.0, 500.0, 320.0, 240.0, 640.0, 480.0};
};

struct SynthPair {
  PairData data;
  Pose T_ab;        // ground truth, A-camera to B-camera coordinates
  Pose T_ab_prior;  // perturbed motion prior
  // For each A keypoint, the B keypoint observing the same landmark or -1.
  std::vector<int> correspondence;
};

// Random landmarks seen by two cameras related by a bounded random pose.
// Co-visible landmarks share a base descriptor, perturbed independently per
// image; outlier keypoints get independent descriptors. Keypoint order in
// both images is shuffled.
SynthPair synth_scene(const SynthConfig& config, std::uint64_t seed);

// Random homography pair over a plane: B keypoints are A keypoints mapped by
// H_ab (plus jitter); outliers as in synth_scene. Depths are absent.
struct SynthHomographyPair {
  PairData data;
  Homography H_ab;
  std::vector<int> correspondence;
};

SynthHomographyPair synth_homography_pair(const SynthConfig& config, double max_corner_shift_px,
                                          std::uint64_t seed);

}  // namespace kpm
