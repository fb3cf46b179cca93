#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kpm/assignment.hpp"
#include "test_util.hpp"

using namespace kpm;

namespace {

// Multiplicative scaling in the linear domain: rows first, then columns.
Matrix sinkhorn_oracle(const Matrix& scores, const Vector& a, const Vector& b, int iterations) {
  const Matrix K = (scores.array() - scores.maxCoeff()).exp().matrix();
  Vector r = Vector::Ones(K.rows());
  Vector c = Vector::Ones(K.cols());
  for (int t = 0; t < iterations; ++t) {
    r = a.array() / (K * c).array();
    c = b.array() / (K.transpose() * r).array();
  }
  return r.asDiagonal() * K * c.asDiagonal();
}

double brute_force_min_cost(const Matrix& cost) {
  std::vector<int> perm(static_cast<std::size_t>(cost.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += cost(static_cast<Eigen::Index>(i), perm[i]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Mutual maxima by exhaustive comparison, first index wins ties.
std::vector<std::pair<int, int>> mutual_oracle(const Matrix& P, double threshold) {
  const Eigen::Index n_a = P.rows() - 1, n_b = P.cols() - 1;
  std::vector<std::pair<int, int>> out;
  for (Eigen::Index i = 0; i < n_a; ++i) {
    for (Eigen::Index j = 0; j < n_b; ++j) {
      bool row_best = true, col_best = true;
      for (Eigen::Index k = 0; k < n_b; ++k) {
        if (P(i, k) > P(i, j) || (P(i, k) == P(i, j) && k < j)) row_best = false;
      }
      for (Eigen::Index k = 0; k < n_a; ++k) {
        if (P(k, j) > P(i, j) || (P(k, j) == P(i, j) && k < i)) col_best = false;
      }
      if (row_best && col_best && P(i, j) > threshold) out.emplace_back(int(i), int(j));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("score matrix") {
  Matrix fa(2, 2), fb(3, 2);
  fa << 1, 0, 0.5, 0.5;
  fb << 1, 0, 0, 1, 0.6, 0.8;
  const auto s = score_matrix(fa, fb, -0.7);
  CHECK(s.augmented.rows() == 3);
  CHECK(s.augmented.cols() == 4);
  CHECK(s.inner(1, 2) == doctest::Approx(0.7));
  CHECK(s.augmented(0, 2) == doctest::Approx(0.6));
  CHECK(s.augmented(2, 1) == -0.7);
  CHECK(s.augmented(0, 3) == -0.7);
  CHECK(s.augmented(2, 3) == -0.7);
  CHECK_ERROR_CODE(score_matrix(fa, Matrix::Ones(2, 3), 0.0), ErrorCode::ShapeMismatch);
}

TEST_CASE("dustbin marginals") {
  const Vector a = dustbin_row_marginal(3, 5);
  const Vector b = dustbin_col_marginal(3, 5);
  CHECK(a.size() == 4);
  CHECK(b.size() == 6);
  CHECK(a(3) == 5.0);
  CHECK(b(5) == 3.0);
  CHECK(a.sum() == b.sum());
}

TEST_CASE("sinkhorn on a 1x1 problem") {
  // Augmented 2x2 with marginals [1, 1]: any scores give the doubly stochastic
  // matrix with diagonal p = 1/(1 + exp(-(s00 + s11 - s01 - s10)/2)).
  Matrix S(2, 2);
  S << 2.0, 0.0, 0.0, 0.0;
  const auto r = sinkhorn_with_dustbins(S, 1000, 1.0);
  const double p = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(r.P(0, 0) == doctest::Approx(p).epsilon(1e-12));
  CHECK(r.P(0, 1) == doctest::Approx(1.0 - p).epsilon(1e-12));
  CHECK(r.residual() < 1e-12);
}

TEST_CASE("sinkhorn matches linear-domain scaling") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 12);
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng() % 12);
    const Matrix S = testing::random_matrix(rng, n + 1, m + 1, -3, 3);
    const int iters = 1 + trial;
    const double tau = trial % 2 == 0 ? 1.0 : 0.7;
    const auto r = sinkhorn(S, dustbin_row_marginal(n, m), dustbin_col_marginal(n, m), iters, tau);
    const Matrix o = sinkhorn_oracle(S / tau, dustbin_row_marginal(n, m), dustbin_col_marginal(n, m), iters);
    CHECK((r.P - o).cwiseAbs().maxCoeff() < 1e-10);
    // the last update is on columns, so those marginals hold exactly
    CHECK(r.col_residual < 1e-12);
  }
}

TEST_CASE("sinkhorn converges on bounded scores") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix S = testing::random_matrix(rng, 31, 25, -2, 2);
    const auto r = sinkhorn_with_dustbins(S, 100, 1.0);
    CHECK(r.P.minCoeff() >= 0.0);
    CHECK(r.residual() < 1e-3);
  }
}

TEST_CASE("sinkhorn is invariant to a constant score shift") {
  std::mt19937_64 rng(23);
  // Dyadic values keep the shift exact in floating point.
  Matrix S(6, 5);
  for (Eigen::Index i = 0; i < S.size(); ++i) S.data()[i] = static_cast<double>(rng() % 64) / 16.0 - 2.0;
  const auto base = sinkhorn_with_dustbins(S, 50, 1.0);
  for (double c : {-8.0, 0.5, 32.0}) {
    const Matrix shifted = (S.array() + c).matrix();
    CHECK(sinkhorn_with_dustbins(shifted, 50, 1.0).P == base.P);
  }
}

TEST_CASE("sinkhorn errors") {
  const Matrix S = Matrix::Zero(3, 3);
  CHECK_ERROR_CODE(sinkhorn_with_dustbins(S, 10, 0.0), ErrorCode::NonPositiveTemperature);
  CHECK_ERROR_CODE(sinkhorn_with_dustbins(S, 10, -1.0), ErrorCode::NonPositiveTemperature);
  CHECK_ERROR_CODE(sinkhorn_with_dustbins(S, 0, 1.0), ErrorCode::InvalidConfig);
  CHECK_ERROR_CODE(sinkhorn(S, Vector::Ones(2), Vector::Ones(3), 5, 1.0), ErrorCode::ShapeMismatch);
}

TEST_CASE("sinkhorn history has one entry per iteration") {
  std::mt19937_64 rng(24);
  const Matrix L = testing::random_matrix(rng, 4, 3);
  SinkhornHistory h;
  log_sinkhorn_kernel(L, Vector::Zero(4), Vector::Zero(3), 7, &h);
  CHECK(h.u.size() == 8);
  CHECK(h.v.size() == 8);
  CHECK(h.u[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hungarian") {
  Matrix C(3, 3);
  C << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const auto r = hungarian(C);
  CHECK(r.cost == doctest::Approx(5.0));
  CHECK(r.assignment == std::vector<int>{1, 0, 2});

  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 6);
    Matrix M = testing::random_matrix(rng, n, n, -5, 5);
    if (trial % 3 == 0) M = M.array().round().matrix();  // ties
    const auto h = hungarian(M);
    std::vector<int> sorted = h.assignment;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < int(n); ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
    double c = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) c += M(i, h.assignment[static_cast<std::size_t>(i)]);
    CHECK(c == doctest::Approx(h.cost).epsilon(1e-12));
    CHECK(h.cost == doctest::Approx(brute_force_min_cost(M)).epsilon(1e-12));
  }
  CHECK_ERROR_CODE(hungarian(Matrix::Zero(2, 3)), ErrorCode::NonSquare);
  CHECK(hungarian(Matrix(0, 0)).assignment.empty());
}

TEST_CASE("recover_matches on a hand example") {
  Matrix P(4, 4);
  P << 0.9, 0.05, 0.0, 0.05,
       0.1, 0.15, 0.6, 0.15,
       0.0, 0.6, 0.3, 0.1,
       0.0, 0.2, 0.1, 0.0;
  const auto m = recover_matches(P, 0.2);
  REQUIRE(m.matches.size() == 3);
  CHECK(m.matches[0].a == 0);
  CHECK(m.matches[0].b == 0);
  CHECK(m.matches[0].confidence == 0.9);
  CHECK(m.matches[1].a == 1);
  CHECK(m.matches[1].b == 2);
  CHECK(m.matches[2].a == 2);
  CHECK(m.matches[2].b == 1);
  CHECK(m.unmatched_a.empty());
  CHECK(m.unmatched_b.empty());

  const auto strict = recover_matches(P, 0.6);
  CHECK(strict.matches.size() == 1);
  CHECK(strict.unmatched_a == std::vector<int>{1, 2});
  CHECK(strict.unmatched_b == std::vector<int>{1, 2});
}

TEST_CASE("recover_matches ties go to the first index") {
  Matrix P = Matrix::Constant(3, 3, 0.0);
  P(0, 0) = P(0, 1) = 0.5;
  P(1, 0) = 0.5;
  const auto m = recover_matches(P, 0.2);
  REQUIRE(m.matches.size() == 1);
  CHECK(m.matches[0].a == 0);
  CHECK(m.matches[0].b == 0);
}

TEST_CASE("recover_matches against the exhaustive oracle") {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::Index n = static_cast<Eigen::Index>(rng() % 8);
    const Eigen::Index m = static_cast<Eigen::Index>(rng() % 8);
    Matrix P = testing::random_matrix(rng, n + 1, m + 1, 0, 1);
    if (trial % 2 == 0) P = (P * 4.0).array().round().matrix() / 4.0;  // ties
    const double threshold = (trial % 5) * 0.2;
    const auto got = recover_matches(P, threshold);
    const auto want = mutual_oracle(P, threshold);
    REQUIRE(got.matches.size() == want.size());
    for (std::size_t k = 0; k < want.size(); ++k) {
      CHECK(got.matches[k].a == want[k].first);
      CHECK(got.matches[k].b == want[k].second);
    }
    CHECK(got.matches.size() + got.unmatched_a.size() == static_cast<std::size_t>(n));
    CHECK(got.matches.size() + got.unmatched_b.size() == static_cast<std::size_t>(m));
  }
}
