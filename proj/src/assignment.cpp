#include "kpm/assignment.hpp"

#include <cmath>
#include <limits>

#include "kpm/error.hpp"

namespace kpm {

ScoreMatrix score_matrix(const Matrix& f_a, const Matrix& f_b, double dustbin) {
  if (f_a.cols() != f_b.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "descriptor widths differ");
  }
  ScoreMatrix out;
  out.inner = f_a * f_b.transpose();
  out.augmented.setConstant(f_a.rows() + 1, f_b.rows() + 1, dustbin);
  out.augmented.topLeftCorner(f_a.rows(), f_b.rows()) = out.inner;
  return out;
}

Vector dustbin_row_marginal(Eigen::Index n_a, Eigen::Index n_b) {
  Vector a = Vector::Ones(n_a + 1);
  a(n_a) = static_cast<double>(n_b);
  return a;
}

Vector dustbin_col_marginal(Eigen::Index n_a, Eigen::Index n_b) {
  Vector b = Vector::Ones(n_b + 1);
  b(n_b) = static_cast<double>(n_a);
  return b;
}

Matrix log_sinkhorn_kernel(const Matrix& log_kernel, const Vector& log_a, const Vector& log_b,
                           int iterations, SinkhornHistory* history) {
  const Eigen::Index m = log_kernel.rows();
  const Eigen::Index n = log_kernel.cols();
  Vector u = Vector::Zero(m);
  Vector v = Vector::Zero(n);
  if (history) {
    history->u.assign(1, u);
    history->v.assign(1, v);
  }
  Matrix work(m, n);
  for (int t = 0; t < iterations; ++t) {
    work = log_kernel.rowwise() + v.transpose();
    Vector mx = work.rowwise().maxCoeff();
    u = log_a - mx - (work.colwise() - mx).array().exp().rowwise().sum().log().matrix();

    work = log_kernel.colwise() + u;
    Eigen::RowVectorXd my = work.colwise().maxCoeff();
    v = log_b - my.transpose() -
        (work.rowwise() - my).array().exp().colwise().sum().log().matrix().transpose();

    if (history) {
      history->u.push_back(u);
      history->v.push_back(v);
    }
  }
  return (log_kernel.colwise() + u).rowwise() + v.transpose();
}

Matrix sinkhorn_log_kernel(const Matrix& scores, double temperature) {
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::NonPositiveTemperature, "temperature must be positive");
  }
  return (scores.array() - scores.maxCoeff()).matrix() / temperature;
}

AssignmentMatrix sinkhorn(const Matrix& scores, const Vector& a, const Vector& b, int iterations,
                          double temperature) {
  if (iterations < 1) {
    throw Error(ErrorCode::InvalidConfig, "sinkhorn needs at least one iteration");
  }
  if (a.size() != scores.rows() || b.size() != scores.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "marginal sizes do not match the score matrix");
  }
  const Matrix log_kernel = sinkhorn_log_kernel(scores, temperature);
  AssignmentMatrix out;
  out.P = log_sinkhorn_kernel(log_kernel, a.array().log().matrix(), b.array().log().matrix(),
                              iterations)
              .array()
              .exp()
              .matrix();
  out.row_residual = (out.P.rowwise().sum() - a).cwiseAbs().maxCoeff();
  out.col_residual = (out.P.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
  return out;
}

AssignmentMatrix sinkhorn_with_dustbins(const Matrix& augmented_scores, int iterations,
                                        double temperature) {
  const Eigen::Index n_a = augmented_scores.rows() - 1;
  const Eigen::Index n_b = augmented_scores.cols() - 1;
  return sinkhorn(augmented_scores, dustbin_row_marginal(n_a, n_b),
                  dustbin_col_marginal(n_a, n_b), iterations, temperature);
}

HungarianResult hungarian(const Matrix& cost) {
  if (cost.rows() != cost.cols()) {
    throw Error(ErrorCode::NonSquare, "hungarian needs a square cost matrix");
  }
  const int n = static_cast<int>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // Potentials over 1-based indices; column 0 is a virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> row_of(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    row_of[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = row_of[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const int j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  HungarianResult out;
  out.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) {
    out.assignment[static_cast<std::size_t>(row_of[j] - 1)] = j - 1;
  }
  for (int i = 0; i < n; ++i) {
    out.cost += cost(i, out.assignment[static_cast<std::size_t>(i)]);
  }
  return out;
}

MatchSet recover_matches(const Matrix& P_augmented, double threshold) {
  const Eigen::Index n_a = P_augmented.rows() - 1;
  const Eigen::Index n_b = P_augmented.cols() - 1;
  const auto inner = P_augmented.topLeftCorner(n_a, n_b);

  // maxCoeff returns the first index among equal maxima.
  std::vector<Eigen::Index> row_best(static_cast<std::size_t>(n_a), -1);
  std::vector<Eigen::Index> col_best(static_cast<std::size_t>(n_b), -1);
  for (Eigen::Index i = 0; i < n_a && n_b > 0; ++i) {
    inner.row(i).maxCoeff(&row_best[static_cast<std::size_t>(i)]);
  }
  for (Eigen::Index j = 0; j < n_b && n_a > 0; ++j) {
    inner.col(j).maxCoeff(&col_best[static_cast<std::size_t>(j)]);
  }

  MatchSet out;
  std::vector<char> b_used(static_cast<std::size_t>(n_b), 0);
  for (Eigen::Index i = 0; i < n_a; ++i) {
    const Eigen::Index j = row_best[static_cast<std::size_t>(i)];
    if (j >= 0 && col_best[static_cast<std::size_t>(j)] == i && inner(i, j) > threshold) {
      out.matches.push_back({static_cast<int>(i), static_cast<int>(j), inner(i, j)});
      b_used[static_cast<std::size_t>(j)] = 1;
    } else {
      out.unmatched_a.push_back(static_cast<int>(i));
    }
  }
  for (Eigen::Index j = 0; j < n_b; ++j) {
    if (!b_used[static_cast<std::size_t>(j)]) out.unmatched_b.push_back(static_cast<int>(j));
  }
  return out;
}

}  // namespace kpm
