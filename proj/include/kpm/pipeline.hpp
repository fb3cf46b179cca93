#pragma once

#include <variant>

#include "kpm/assignment.hpp"
#include "kpm/attention_gnn.hpp"
#include "kpm/autodiff.hpp"
#include "kpm/imu_prior.hpp"

namespace kpm {

// One image pair as the matcher sees it.
struct PairData {
  FeatureSet a;
  FeatureSet b;
  CameraIntrinsics K_a;
  CameraIntrinsics K_b;
};

// Motion prior between the two images: a rigid transform mapping A-camera
// coordinates into B-camera coordinates, or a planar homography A -> B.
using MotionPrior = std::variant<Pose, Homography>;

PairPriors compute_priors(const PairData& pair, const MotionPrior& prior, double sigma);

struct SinkhornOptions {
  int iterations = 100;
  double temperature = 1.0;
};

// Encoder, GNN, score matrix with dustbins and Sinkhorn, recorded on `tape`.
// Returns log P̄.
ad::Var build_log_assignment(ad::Tape& tape, const ModelParams& params, const PairData& pair,
                             const PairPriors& priors, const SinkhornOptions& sinkhorn);

struct MatchOptions {
  double prior_sigma = 0.1;
  SinkhornOptions sinkhorn;
  double confidence_threshold = 0.2;
};

struct StageTimings {
  double prior_ms = 0.0;
  double gnn_ms = 0.0;
  double sinkhorn_ms = 0.0;
  double recovery_ms = 0.0;

  double total_ms() const { return prior_ms + gnn_ms + sinkhorn_ms + recovery_ms; }
};

struct MatchResult {
  Matrix P;  // augmented assignment
  MatchSet matches;
  StageTimings timings;
};

MatchResult match_pair(const ModelParams& params, const PairData& pair, const MotionPrior& prior,
                       const MatchOptions& options);

// Same as match_pair with priors already computed (prior_ms stays 0).
MatchResult match_pair(const ModelParams& params, const PairData& pair, const PairPriors& priors,
                       const MatchOptions& options);

}  // namespace kpm
