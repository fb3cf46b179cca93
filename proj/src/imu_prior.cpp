#include "kpm/imu_prior.hpp"

#include <algorithm>
#include <random>

#include "kpm/error.hpp"

namespace kpm {

namespace {

void check_samples(std::span<const ImuSample> samples) {
  if (samples.empty()) {
    throw Error(ErrorCode::EmptyMeasurements, "no IMU samples");
  }
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].timestamp > samples[i - 1].timestamp)) {
      throw Error(ErrorCode::NonMonotonicTimestamps,
                  "timestamp " + std::to_string(i) + " does not increase");
    }
  }
}

// Linear interpolation of (omega, accel) at time t, clamped to the ends.
std::pair<Vec3, Vec3> measurement_at(std::span<const ImuSample> samples, double t) {
  if (t <= samples.front().timestamp) return {samples.front().omega, samples.front().accel};
  if (t >= samples.back().timestamp) return {samples.back().omega, samples.back().accel};
  const auto it = std::upper_bound(samples.begin(), samples.end(), t,
                                   [](double v, const ImuSample& s) { return v < s.timestamp; });
  const ImuSample& hi = *it;
  const ImuSample& lo = *(it - 1);
  if (t == lo.timestamp) return {lo.omega, lo.accel};
  const double w = (t - lo.timestamp) / (hi.timestamp - lo.timestamp);
  return {(1.0 - w) * lo.omega + w * hi.omega, (1.0 - w) * lo.accel + w * hi.accel};
}

}  // namespace

ImuState propagate_imu(std::span<const ImuSample> samples, const ImuState& initial,
                       const Vec3& gravity, double t_start, double t_end) {
  check_samples(samples);
  if (!(t_end > t_start)) {
    throw Error(ErrorCode::EmptyMeasurements, "integration interval is empty");
  }

  std::vector<double> knots{t_start};
  for (const auto& s : samples) {
    if (s.timestamp > t_start && s.timestamp < t_end) knots.push_back(s.timestamp);
  }
  knots.push_back(t_end);

  ImuState state = initial;
  auto [omega0, accel0] = measurement_at(samples, knots.front());
  for (std::size_t k = 1; k < knots.size(); ++k) {
    const double dt = knots[k] - knots[k - 1];
    const auto [omega1, accel1] = measurement_at(samples, knots[k]);

    const Mat3 R0 = state.orientation;
    const Mat3 R1 = R0 * so3_exp(0.5 * (omega0 + omega1) * dt);
    const Vec3 acc_world = 0.5 * (R0 * accel0 + R1 * accel1) - gravity;

    state.position += state.velocity * dt + 0.5 * acc_world * dt * dt;
    state.velocity += acc_world * dt;
    state.orientation = R1;

    omega0 = omega1;
    accel0 = accel1;
  }
  return state;
}

Pose integrate_imu(std::span<const ImuSample> samples, const Vec3& initial_velocity,
                   const Vec3& gravity, double t_start, double t_end) {
  ImuState start;
  start.velocity = initial_velocity;
  const ImuState end = propagate_imu(samples, start, gravity, t_start, t_end);
  return Pose(start.orientation, start.position).inverse() * Pose(end.orientation, end.position);
}

Pose constant_velocity_prior(const Pose& T_prev, double dt_prev, double dt_cur) {
  if (!(dt_prev > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "dt_prev must be positive");
  }
  if (dt_cur == dt_prev) return T_prev;
  return Pose::exp(T_prev.log() * (dt_cur / dt_prev));
}

const char* to_string(PriorDirection direction) {
  switch (direction) {
    case PriorDirection::SelfA: return "self-A";
    case PriorDirection::SelfB: return "self-B";
    case PriorDirection::CrossAB: return "cross-A->B";
    case PriorDirection::CrossBA: return "cross-B->A";
  }
  return "?";
}

Matrix PriorMatrix::centered_sq_dist() const {
  Matrix out = sq_dist;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i).array() -= out.row(i).minCoeff();
  }
  return out;
}

Matrix PriorMatrix::logit_offset(double sigma_value) const {
  if (!(sigma_value > 0.0)) {
    throw Error(ErrorCode::NonPositiveSigma, "sigma must be positive");
  }
  return centered_sq_dist() * (-1.0 / sigma_value);
}

PriorMatrix PriorMatrix::from_sq_dist(PriorDirection direction, Matrix sq_dist,
                                      std::vector<char> valid_rows, double sigma) {
  if (!(sigma > 0.0)) {
    throw Error(ErrorCode::NonPositiveSigma, "sigma must be positive");
  }
  PriorMatrix p;
  p.direction = direction;
  p.sigma = sigma;
  p.s = (-sq_dist.array() / sigma).exp().matrix();
  for (Eigen::Index i = 0; i < sq_dist.rows(); ++i) {
    if (!valid_rows[static_cast<std::size_t>(i)]) {
      sq_dist.row(i).setConstant(kMaxSquaredDistance);
      p.s.row(i).setZero();
    }
  }
  p.sq_dist = std::move(sq_dist);
  p.valid_rows = std::move(valid_rows);
  return p;
}

namespace {

Matrix pairwise_sq_dist(const Eigen::MatrixX2d& src, const Eigen::MatrixX2d& dst) {
  Matrix d(src.rows(), dst.rows());
  for (Eigen::Index i = 0; i < src.rows(); ++i) {
    for (Eigen::Index j = 0; j < dst.rows(); ++j) {
      d(i, j) = (src.row(i) - dst.row(j)).squaredNorm();
    }
  }
  return d;
}

template <typename WarpFn>
PriorMatrix warped_prior(const CameraIntrinsics& K_B, const FeatureSet& feats_A,
                         const FeatureSet& feats_B, double sigma, PriorDirection direction,
                         WarpFn&& warp) {
  const Eigen::Index n = feats_A.size();
  Eigen::MatrixX2d warped = Eigen::MatrixX2d::Zero(n, 2);
  std::vector<char> valid(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (const auto pixel = warp(i)) {
      warped.row(i) = K_B.normalize(*pixel).transpose();
      valid[static_cast<std::size_t>(i)] = 1;
    }
  }
  return PriorMatrix::from_sq_dist(direction, pairwise_sq_dist(warped, feats_B.normalized_positions(K_B)),
                                   std::move(valid), sigma);
}

}  // namespace

PriorMatrix self_prior(const FeatureSet& feats, const CameraIntrinsics& K, double sigma,
                       PriorDirection direction) {
  const auto pos = feats.normalized_positions(K);
  return PriorMatrix::from_sq_dist(direction, pairwise_sq_dist(pos, pos),
                                   std::vector<char>(static_cast<std::size_t>(feats.size()), 1),
                                   sigma);
}

PriorMatrix cross_prior(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B, const Pose& T_AB,
                        const FeatureSet& feats_A, const FeatureSet& feats_B, double sigma,
                        PriorDirection direction) {
  return warped_prior(K_B, feats_A, feats_B, sigma, direction,
                      [&](Eigen::Index i) -> std::optional<Vec2> {
                        if (!feats_A.has_depth(i)) return std::nullopt;
                        const auto w = warp_keypoint(K_A, K_B, T_AB, feats_A.keypoint(i),
                                                     feats_A.depths(i));
                        if (!w) return std::nullopt;
                        return w->pixel;
                      });
}

PriorMatrix cross_prior_homography(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                                   const Homography& H, const FeatureSet& feats_A,
                                   const FeatureSet& feats_B, double sigma,
                                   PriorDirection direction) {
  (void)K_A;
  return warped_prior(K_B, feats_A, feats_B, sigma, direction,
                      [&](Eigen::Index i) -> std::optional<Vec2> {
                        const Vec3 x = H.matrix() * feats_A.keypoint(i).homogeneous();
                        if (std::abs(x.z()) < 1e-12) return std::nullopt;
                        const Vec2 p = x.hnormalized();
                        if (!K_B.in_view(p)) return std::nullopt;
                        return p;
                      });
}

PairPriors PairPriors::swapped() const {
  PairPriors out{self_b, self_a, cross_ba, cross_ab};
  out.self_a.direction = PriorDirection::SelfA;
  out.self_b.direction = PriorDirection::SelfB;
  out.cross_ab.direction = PriorDirection::CrossAB;
  out.cross_ba.direction = PriorDirection::CrossBA;
  return out;
}

PairPriors compute_pair_priors(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                               const Pose& T_AB, const FeatureSet& feats_A,
                               const FeatureSet& feats_B, double sigma) {
  return {self_prior(feats_A, K_A, sigma, PriorDirection::SelfA),
          self_prior(feats_B, K_B, sigma, PriorDirection::SelfB),
          cross_prior(K_A, K_B, T_AB, feats_A, feats_B, sigma, PriorDirection::CrossAB),
          cross_prior(K_B, K_A, T_AB.inverse(), feats_B, feats_A, sigma, PriorDirection::CrossBA)};
}

PairPriors compute_pair_priors(const CameraIntrinsics& K_A, const CameraIntrinsics& K_B,
                               const Homography& H_AB, const FeatureSet& feats_A,
                               const FeatureSet& feats_B, double sigma) {
  return {self_prior(feats_A, K_A, sigma, PriorDirection::SelfA),
          self_prior(feats_B, K_B, sigma, PriorDirection::SelfB),
          cross_prior_homography(K_A, K_B, H_AB, feats_A, feats_B, sigma, PriorDirection::CrossAB),
          cross_prior_homography(K_B, K_A, H_AB.inverse(), feats_B, feats_A, sigma,
                                 PriorDirection::CrossBA)};
}

std::vector<Vec2> unit_square_corners() {
  return {Vec2(0.0, 0.0), Vec2(1.0, 0.0), Vec2(1.0, 1.0), Vec2(0.0, 1.0)};
}

Homography noisy_homography_prior(const Homography& H_gt, double noise_scale, std::uint64_t seed,
                                  std::span<const Vec2> corners) {
  if (noise_scale < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "noise scale must be non-negative");
  }
  if (noise_scale == 0.0) return H_gt;

  const std::vector<Vec2> default_corners = unit_square_corners();
  if (corners.empty()) corners = default_corners;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_scale);
  std::vector<std::pair<Vec2, Vec2>> pairs;
  pairs.reserve(corners.size());
  for (const auto& c : corners) {
    Vec2 target = warp_homography(H_gt, c);
    target.x() += noise(rng);
    target.y() += noise(rng);
    pairs.emplace_back(c, target);
  }
  return fit_homography_dlt(pairs);
}

}  // namespace kpm
