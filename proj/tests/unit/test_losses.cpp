#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "kpm/losses.hpp"
#include "kpm/synth.hpp"
#include "test_util.hpp"

using namespace kpm;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

// Pairs (i, j) with d_ij < threshold that are the first minimum of both their
// row and column.
std::set<std::pair<int, int>> gt_oracle(const Matrix& d, double threshold) {
  std::set<std::pair<int, int>> out;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      if (!(d(i, j) < threshold)) continue;
      bool ok = true;
      for (Eigen::Index k = 0; k < d.cols(); ++k) {
        if (d(i, k) < d(i, j) || (d(i, k) == d(i, j) && k < j)) ok = false;
      }
      for (Eigen::Index k = 0; k < d.rows(); ++k) {
        if (d(k, j) < d(i, j) || (d(k, j) == d(i, j) && k < i)) ok = false;
      }
      if (ok) out.emplace(int(i), int(j));
    }
  }
  return out;
}

Matrix random_assignment(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix P = testing::random_matrix(rng, rows, cols, 0.01, 1.0);
  return P;
}

}  // namespace

TEST_CASE("ground truth on a hand example") {
  Matrix d(3, 3);
  d << 1.0, 5.0, kInf,
       0.5, 2.7, 9.0,
       kInf, 2.5, 2.9;
  const auto gt = ground_truth_from_distances(d, 3.0);
  // row 0 prefers column 0 but column 0 prefers row 1
  REQUIRE(gt.matches.size() == 2);
  CHECK(gt.matches[0].a == 1);
  CHECK(gt.matches[0].b == 0);
  CHECK(gt.matches[0].distance == 0.5);
  CHECK(gt.matches[1].a == 2);
  CHECK(gt.matches[1].b == 1);
  CHECK(gt.unmatched_a == std::vector<int>{0});
  CHECK(gt.unmatched_b == std::vector<int>{2});

  const auto tight = ground_truth_from_distances(d, 0.5);  // strict comparison
  CHECK(tight.matches.empty());
  CHECK_ERROR_CODE(ground_truth_from_distances(d, 0.0), ErrorCode::InvalidConfig);
}

TEST_CASE("ground truth against the exhaustive oracle") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::Index n = static_cast<Eigen::Index>(rng() % 9);
    const Eigen::Index m = static_cast<Eigen::Index>(rng() % 9);
    Matrix d = testing::random_matrix(rng, n, m, 0.0, 8.0);
    if (trial % 2 == 0) d = d.array().round().matrix();  // ties
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (rng() % 7 == 0) d.data()[i] = kInf;
    }
    const auto gt = ground_truth_from_distances(d, 3.0);
    std::set<std::pair<int, int>> got;
    std::set<int> rows, cols;
    for (const auto& g : gt.matches) {
      got.emplace(g.a, g.b);
      rows.insert(g.a);
      cols.insert(g.b);
    }
    CHECK(got == gt_oracle(d, 3.0));
    // a partial matching that covers every keypoint exactly once
    CHECK(rows.size() == gt.matches.size());
    CHECK(cols.size() == gt.matches.size());
    CHECK(gt.matches.size() + gt.unmatched_a.size() == static_cast<std::size_t>(n));
    CHECK(gt.matches.size() + gt.unmatched_b.size() == static_cast<std::size_t>(m));
  }
}

TEST_CASE("a larger threshold keeps every match of a smaller one") {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix d = testing::random_matrix(rng, 10, 12, 0.0, 15.0);
    const auto small = ground_truth_from_distances(d, 3.0);
    const auto large = ground_truth_from_distances(d, 10.0);
    std::set<std::pair<int, int>> big;
    for (const auto& g : large.matches) big.emplace(g.a, g.b);
    for (const auto& g : small.matches) CHECK(big.count({g.a, g.b}) == 1);
  }
}

TEST_CASE("reprojection distances") {
  const auto s = synth_scene(SynthConfig{}, 3);
  const auto& d = s.data;
  const Matrix dist = reprojection_distances(d.K_a, d.K_b, s.T_ab, d.a, d.b);
  for (Eigen::Index i = 0; i < d.a.size(); ++i) {
    const Vec3 X = s.T_ab * unproject(d.K_a, d.a.keypoint(i), d.a.depths(i));
    const Vec2 p = project(d.K_b, X);
    const bool valid = X.z() > 0 && d.K_b.in_view(p);
    for (Eigen::Index j = 0; j < d.b.size(); ++j) {
      if (valid) {
        CHECK(dist(i, j) == doctest::Approx((p - d.b.keypoint(j)).norm()).epsilon(1e-9));
      } else {
        CHECK(std::isinf(dist(i, j)));
      }
    }
  }
  // every co-visible landmark lands within a few jitter widths of its partner
  for (std::size_t i = 0; i < s.correspondence.size(); ++i) {
    const int j = s.correspondence[i];
    if (j >= 0) CHECK(dist(Eigen::Index(i), j) < 10.0);
  }

  FeatureSet no_depth = d.a;
  no_depth.depths.resize(0);
  CHECK_ERROR_CODE(build_ground_truth(d.K_a, d.K_b, s.T_ab, no_depth, d.b, 3.0), ErrorCode::MissingDepth);
}

TEST_CASE("homography distances") {
  SynthConfig c;
  c.keypoint_jitter_px = 0.0;
  const auto s = synth_homography_pair(c, 40.0, 5);
  const auto gt = build_ground_truth(s.data.K_b, s.H_ab, s.data.a, s.data.b, 1e-6);
  std::size_t shared = 0;
  for (int j : s.correspondence) shared += j >= 0;
  CHECK(gt.matches.size() == shared);
  for (const auto& m : gt.matches) CHECK(s.correspondence[std::size_t(m.a)] == m.b);
}

TEST_CASE("loss kinds") {
  CHECK(loss_kind_from_string("matching") == LossKind::Matching);
  CHECK(loss_kind_from_string(to_string(LossKind::Projection)) == LossKind::Projection);
  CHECK_ERROR_CODE(loss_kind_from_string("focal"), ErrorCode::InvalidConfig);
}

TEST_CASE("projection weight") {
  CHECK(projection_weight(3.0, 3.0) == 1.0);
  CHECK(projection_weight(0.0, 3.0) == doctest::Approx(std::exp(3.0)));
  // at the margin boundary with th = 3, mg = 10
  CHECK(projection_weight(10.0, 3.0) == doctest::Approx(std::exp(-7.0)).epsilon(1e-15));
  CHECK(projection_weight(10.0, 3.0) == doctest::Approx(9.118819655545162e-4).epsilon(1e-12));
}

TEST_CASE("matching loss against an explicit sum") {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix d = testing::random_matrix(rng, 6, 7, 0.0, 12.0);
    const auto gt = ground_truth_from_distances(d, 3.0);
    const Matrix P = random_assignment(rng, 7, 8);
    double pos = 0.0, neg = 0.0;
    for (const auto& m : gt.matches) pos += std::log(P(m.a, m.b));
    for (int i : gt.unmatched_a) neg += std::log(P(i, 7));
    for (int j : gt.unmatched_b) neg += std::log(P(6, j));
    const double n_pos = static_cast<double>(gt.matches.size());
    const double n_neg = static_cast<double>(gt.unmatched_a.size() + gt.unmatched_b.size());
    const double expected = (n_pos > 0 ? -2.0 * pos / n_pos : 0.0) + (n_neg > 0 ? -neg / n_neg : 0.0);
    CHECK(matching_loss(P, gt) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("projection loss against an explicit sum") {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix d = testing::random_matrix(rng, 6, 7, 0.0, 20.0);
    const auto gt = ground_truth_from_distances(d, 10.0);
    const Matrix P = random_assignment(rng, 7, 8);
    double pos = 0.0, neg = 0.0;
    for (const auto& m : gt.matches) pos += std::exp(3.0 - m.distance) * std::log(P(m.a, m.b));
    for (int i : gt.unmatched_a) neg += std::log(P(i, 7));
    for (int j : gt.unmatched_b) neg += std::log(P(6, j));
    const double n_pos = static_cast<double>(gt.matches.size());
    const double n_neg = static_cast<double>(gt.unmatched_a.size() + gt.unmatched_b.size());
    const double expected = (n_pos > 0 ? -2.0 * pos / n_pos : 0.0) + (n_neg > 0 ? -neg / n_neg : 0.0);
    CHECK(projection_loss(P, gt, 3.0) == doctest::Approx(expected).epsilon(1e-12));
  }
  const auto gt = ground_truth_from_distances(Matrix::Constant(2, 2, 1.0), 3.0);
  CHECK_ERROR_CODE(projection_loss(Matrix::Constant(3, 3, 0.5), gt, 3.0), ErrorCode::InvalidConfig);
}

TEST_CASE("losses at the ideal assignment") {
  Matrix d(2, 2);
  d << 0.0, kInf, kInf, kInf;
  const auto gt = ground_truth_from_distances(d, 3.0);
  Matrix P = Matrix::Zero(3, 3);
  P(0, 0) = 1.0;
  P(1, 2) = 1.0;
  P(2, 1) = 1.0;
  CHECK(matching_loss(P, gt) == 0.0);
  // zero entries are clamped rather than giving infinity
  P(0, 0) = 0.0;
  CHECK(matching_loss(P, gt) == doctest::Approx(-2.0 * std::log(kLogClampEpsilon)));
}

TEST_CASE("losses are non-negative on stochastic matrices") {
  std::mt19937_64 rng(35);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix d = testing::random_matrix(rng, 5, 5, 0.0, 12.0);
    Matrix P = random_assignment(rng, 6, 6);
    P = P.array() / P.maxCoeff();
    CHECK(matching_loss(P, ground_truth_from_distances(d, 3.0)) >= 0.0);
    CHECK(projection_loss(P, ground_truth_from_distances(d, 10.0), 3.0) >= 0.0);
  }
}
