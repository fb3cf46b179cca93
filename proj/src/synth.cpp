#include "kpm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kpm/error.hpp"

namespace kpm {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double std) { return std::normal_distribution<double>(0.0, std)(rng_); }

  Vec3 unit_vector() {
    Vec3 v;
    do {
      v = Vec3(normal(1.0), normal(1.0), normal(1.0));
    } while (v.norm() < 1e-9);
    return v.normalized();
  }

  Eigen::RowVectorXd unit_descriptor(int dim) {
    Eigen::RowVectorXd d(dim);
    do {
      for (int k = 0; k < dim; ++k) d(k) = normal(1.0);
    } while (d.norm() < 1e-9);
    return d.normalized();
  }

  // normalize(base + noise * e), e ~ N(0, I / dim).
  Eigen::RowVectorXd perturb(const Eigen::RowVectorXd& base, double noise) {
    if (noise == 0.0) return base;
    Eigen::RowVectorXd d = base;
    const double std = noise / std::sqrt(static_cast<double>(base.size()));
    for (Eigen::Index k = 0; k < d.size(); ++k) d(k) += normal(std);
    return d.normalized();
  }

  Vec2 pixel(const CameraIntrinsics& K) {
    return {uniform(0.0, K.width), uniform(0.0, K.height)};
  }

  Vec2 jitter(const Vec2& p, double std, const CameraIntrinsics& K) {
    if (std == 0.0) return p;
    Vec2 q(p.x() + normal(std), p.y() + normal(std));
    q.x() = std::clamp(q.x(), 0.0, std::nextafter(K.width, 0.0));
    q.y() = std::clamp(q.y(), 0.0, std::nextafter(K.height, 0.0));
    return q;
  }

  Pose random_pose(double max_angle_rad, double max_translation) {
    const Vec3 axis = unit_vector();
    const double angle = uniform(0.0, 1.0) * max_angle_rad;
    const Vec3 dir = unit_vector();
    const double dist = uniform(0.0, 1.0) * max_translation;
    return Pose(so3_exp(axis * angle), dir * dist);
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct Observation {
  Vec2 pixel;
  double depth;
  Eigen::RowVectorXd descriptor;
  int partner;  // index in the other image before shuffling, or -1
};

void validate(const SynthConfig& c) {
  if (c.n_points < 2) throw Error(ErrorCode::InvalidConfig, "n_points must be >= 2");
  if (c.descriptor_dim < 1) throw Error(ErrorCode::InvalidConfig, "descriptor_dim must be >= 1");
  if (c.outlier_fraction < 0.0 || c.outlier_fraction > 1.0) {
    throw Error(ErrorCode::InvalidConfig, "outlier_fraction must be in [0, 1]");
  }
  if (c.descriptor_noise < 0.0 || c.pose_magnitude < 0.0 || c.keypoint_jitter_px < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "noise and magnitudes must be non-negative");
  }
  c.camera.validate();
}

// Shuffles both observation lists and assembles the feature sets.
void assemble(std::vector<Observation>& obs_a, std::vector<Observation>& obs_b, int dim,
              bool with_depth, Sampler& rng, PairData& data, std::vector<int>& correspondence) {
  const auto n_a = obs_a.size();
  const auto n_b = obs_b.size();
  std::vector<int> perm_a(n_a), perm_b(n_b);
  std::iota(perm_a.begin(), perm_a.end(), 0);
  std::iota(perm_b.begin(), perm_b.end(), 0);
  std::shuffle(perm_a.begin(), perm_a.end(), rng.engine());
  std::shuffle(perm_b.begin(), perm_b.end(), rng.engine());
  // new position of each old index in B
  std::vector<int> where_b(n_b);
  for (std::size_t k = 0; k < n_b; ++k) where_b[static_cast<std::size_t>(perm_b[k])] = static_cast<int>(k);

  auto fill = [&](FeatureSet& fs, const std::vector<Observation>& obs, const std::vector<int>& perm) {
    const auto n = static_cast<Eigen::Index>(obs.size());
    fs.keypoints.resize(n, 2);
    fs.descriptors.resize(n, dim);
    if (with_depth) fs.depths.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const Observation& o = obs[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
      fs.keypoints.row(k) = o.pixel.transpose();
      fs.descriptors.row(k) = o.descriptor;
      if (with_depth) fs.depths(k) = o.depth;
    }
  };
  fill(data.a, obs_a, perm_a);
  fill(data.b, obs_b, perm_b);

  correspondence.assign(n_a, -1);
  for (std::size_t k = 0; k < n_a; ++k) {
    const int partner = obs_a[static_cast<std::size_t>(perm_a[k])].partner;
    if (partner >= 0) correspondence[k] = where_b[static_cast<std::size_t>(partner)];
  }
}

}  // namespace

SynthPair synth_scene(const SynthConfig& config, std::uint64_t seed) {
  validate(config);
  Sampler rng(seed);
  const CameraIntrinsics& K = config.camera;
  const int n = config.n_points;
  const int n_outliers = static_cast<int>(std::lround(config.outlier_fraction * n));

  SynthPair out;
  out.data.K_a = K;
  out.data.K_b = K;
  out.T_ab = rng.random_pose(config.pose_magnitude * config.max_rotation_deg * kDegToRad,
                             config.pose_magnitude * config.max_translation_m);

  std::vector<Observation> obs_a, obs_b;
  const int wanted_shared = n - n_outliers;
  for (int attempt = 0; static_cast<int>(obs_a.size()) < wanted_shared && attempt < 1000 * n;
       ++attempt) {
    const Vec2 pa = rng.pixel(K);
    const double depth = rng.uniform(config.min_depth_m, config.max_depth_m);
    const Vec3 xb = out.T_ab * unproject(K, pa, depth);
    if (xb.z() <= 1e-9) continue;
    const Vec2 pb = project(K, xb);
    if (!K.in_view(pb)) continue;
    const Eigen::RowVectorXd base = rng.unit_descriptor(config.descriptor_dim);
    const int idx = static_cast<int>(obs_a.size());
    obs_a.push_back({rng.jitter(pa, config.keypoint_jitter_px, K), depth,
                     rng.perturb(base, config.descriptor_noise), idx});
    obs_b.push_back({rng.jitter(pb, config.keypoint_jitter_px, K), xb.z(),
                     rng.perturb(base, config.descriptor_noise), idx});
  }
  for (auto* obs : {&obs_a, &obs_b}) {
    while (static_cast<int>(obs->size()) < n) {
      obs->push_back({rng.pixel(K), rng.uniform(config.min_depth_m, config.max_depth_m),
                      rng.unit_descriptor(config.descriptor_dim), -1});
    }
  }
  assemble(obs_a, obs_b, config.descriptor_dim, true, rng, out.data, out.correspondence);

  const Pose error = rng.random_pose(config.prior_rotation_error_deg * kDegToRad,
                                     config.prior_translation_error_m);
  out.T_ab_prior = error * out.T_ab;
  return out;
}

SynthHomographyPair synth_homography_pair(const SynthConfig& config, double max_corner_shift_px,
                                          std::uint64_t seed) {
  validate(config);
  Sampler rng(seed);
  const CameraIntrinsics& K = config.camera;
  const int n = config.n_points;
  const int n_outliers = static_cast<int>(std::lround(config.outlier_fraction * n));

  SynthHomographyPair out;
  out.data.K_a = K;
  out.data.K_b = K;
  const std::array<Vec2, 4> corners{Vec2(0.0, 0.0), Vec2(K.width, 0.0), Vec2(K.width, K.height),
                                    Vec2(0.0, K.height)};
  std::vector<std::pair<Vec2, Vec2>> corr;
  for (const auto& c : corners) {
    corr.emplace_back(c, c + Vec2(rng.uniform(-max_corner_shift_px, max_corner_shift_px),
                                  rng.uniform(-max_corner_shift_px, max_corner_shift_px)));
  }
  out.H_ab = fit_homography_dlt(corr);

  std::vector<Observation> obs_a, obs_b;
  const int wanted_shared = n - n_outliers;
  for (int attempt = 0; static_cast<int>(obs_a.size()) < wanted_shared && attempt < 1000 * n;
       ++attempt) {
    const Vec2 pa = rng.pixel(K);
    const Vec2 pb = warp_homography(out.H_ab, pa);
    if (!K.in_view(pb)) continue;
    const Eigen::RowVectorXd base = rng.unit_descriptor(config.descriptor_dim);
    const int idx = static_cast<int>(obs_a.size());
    obs_a.push_back({rng.jitter(pa, config.keypoint_jitter_px, K), 0.0,
                     rng.perturb(base, config.descriptor_noise), idx});
    obs_b.push_back({rng.jitter(pb, config.keypoint_jitter_px, K), 0.0,
                     rng.perturb(base, config.descriptor_noise), idx});
  }
  for (auto* obs : {&obs_a, &obs_b}) {
    while (static_cast<int>(obs->size()) < n) {
      obs->push_back({rng.pixel(K), 0.0, rng.unit_descriptor(config.descriptor_dim), -1});
    }
  }
  assemble(obs_a, obs_b, config.descriptor_dim, false, rng, out.data, out.correspondence);
  return out;
}

}  // namespace kpm
