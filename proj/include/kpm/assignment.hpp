#pragma once

#include <Eigen/Core>
#include <vector>

namespace kpm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ScoreMatrix {
  Matrix inner;      // S, N_A x N_B
  Matrix augmented;  // S̄, (N_A+1) x (N_B+1)
};

// S_ij = <f_i^A, f_j^B>, plus a dustbin row/column holding `dustbin`.
ScoreMatrix score_matrix(const Matrix& f_a, const Matrix& f_b, double dustbin);

// Marginals a = [1,...,1, N_B] and b = [1,...,1, N_A] for an augmented
// (N_A+1) x (N_B+1) problem.
Vector dustbin_row_marginal(Eigen::Index n_a, Eigen::Index n_b);
Vector dustbin_col_marginal(Eigen::Index n_a, Eigen::Index n_b);

// Row potentials u_t and column potentials v_t for t = 0..T; u_0 = v_0 = 0.
struct SinkhornHistory {
  std::vector<Vector> u;
  std::vector<Vector> v;
};

// Alternating log-domain normalization of a kernel whose log is `log_kernel`.
// Returns log P = log_kernel + u 1ᵀ + 1 vᵀ after the final column update.
Matrix log_sinkhorn_kernel(const Matrix& log_kernel, const Vector& log_a, const Vector& log_b,
                           int iterations, SinkhornHistory* history = nullptr);

// log_kernel = (S̄ - max S̄) / temperature. Throws NonPositiveTemperature.
Matrix sinkhorn_log_kernel(const Matrix& scores, double temperature);

struct AssignmentMatrix {
  Matrix P;
  double row_residual = 0.0;  // max |P 1 - a|
  double col_residual = 0.0;  // max |Pᵀ 1 - b|

  double residual() const { return std::max(row_residual, col_residual); }
};

AssignmentMatrix sinkhorn(const Matrix& scores, const Vector& a, const Vector& b, int iterations,
                          double temperature);

// Dustbin-augmented problem with marginals from dustbin_*_marginal.
AssignmentMatrix sinkhorn_with_dustbins(const Matrix& augmented_scores, int iterations,
                                        double temperature);

struct HungarianResult {
  std::vector<int> assignment;  // row i -> column assignment[i]
  double cost = 0.0;
};

// Exact minimum-cost perfect matching on a square cost matrix. Throws
// NonSquare.
HungarianResult hungarian(const Matrix& cost);

struct Match {
  int a = 0;
  int b = 0;
  double confidence = 0.0;
};

struct MatchSet {
  std::vector<Match> matches;  // ordered by a
  std::vector<int> unmatched_a;
  std::vector<int> unmatched_b;
};

// Mutual strict maxima of the inner block above `threshold`. Ties on a row
// resolve to the smallest column, ties on a column to the smallest row.
MatchSet recover_matches(const Matrix& P_augmented, double threshold);

}  // namespace kpm
