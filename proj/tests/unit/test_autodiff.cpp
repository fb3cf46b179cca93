#include <doctest.h>

#include <functional>
#include <random>

#include "kpm/assignment.hpp"
#include "kpm/autodiff.hpp"
#include "test_util.hpp"

using namespace kpm;
using ad::Tape;
using ad::Var;

namespace {

// Builds a scalar from one input tensor; used for both the taped gradient
// and central differences.
using Graph = std::function<Var(Tape&, Var)>;

double max_relative_gradient_error(const Graph& graph, Matrix x, double h = 1e-6) {
  Tape tape;
  const Var out = graph(tape, tape.parameter(x));
  tape.backward(out);
  const Matrix g = tape.grad_of(x);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    Tape up(false);
    const double f_up = graph(up, up.parameter(x)).value()(0, 0);
    x.data()[i] = saved - h;
    Tape down(false);
    const double f_down = graph(down, down.parameter(x)).value()(0, 0);
    x.data()[i] = saved;
    const double fd = (f_up - f_down) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(g.data()[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - g.data()[i]) / denom);
  }
  return worst;
}

// Scalar readout with distinct weights so every entry matters.
Var readout(Tape& tape, Var x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Matrix w = testing::random_matrix(rng, x.rows(), x.cols());
  const Var prod = ad::mul_const(x, w);
  return ad::matmul(ad::matmul(tape.constant(Matrix::Ones(1, x.rows())), prod),
                    tape.constant(Matrix::Ones(x.cols(), 1)));
}

}  // namespace

TEST_CASE("op gradients match central differences") {
  std::mt19937_64 rng(1);
  const Matrix A = testing::random_matrix(rng, 3, 4);
  const Matrix B = testing::random_matrix(rng, 4, 2);
  const Matrix C = testing::random_matrix(rng, 5, 4);
  const Matrix row = testing::random_matrix(rng, 1, 4);
  const Matrix k = testing::random_matrix(rng, 1, 1);

  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::matmul(x, t.constant(B))); }, A) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::matmul_nt(t.constant(A), x)); }, C) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::matmul_nt(x, t.constant(C))); }, A) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::add(x, ad::scale(x, 2.5))); }, A) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::add_row(t.constant(A), x)); }, row) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::exp(x)); }, A) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::relu(x)); }, A) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::concat_cols(x, ad::scale(x, -1.0))); }, A) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::softmax_rows(x)); }, A) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::add_scaled_const(t.constant(A), A, x)); }, k) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::augment_dustbin(t.constant(A), x)); }, k) < 1e-6);
  CHECK(max_relative_gradient_error([&](Tape& t, Var x) { return readout(t, ad::augment_dustbin(x, t.constant(k))); }, A) < 1e-6);
}

TEST_CASE("log_sinkhorn gradient matches central differences") {
  std::mt19937_64 rng(2);
  const Matrix S = testing::random_matrix(rng, 5, 4, -2.0, 2.0);
  const Vector log_a = dustbin_row_marginal(4, 3).array().log().matrix();
  const Vector log_b = dustbin_col_marginal(4, 3).array().log().matrix();
  for (double tau : {1.0, 0.5}) {
    for (int iters : {1, 3, 50}) {
      const double err = max_relative_gradient_error(
          [&](Tape& t, Var x) { return readout(t, ad::log_sinkhorn(x, log_a, log_b, iters, tau)); }, S);
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("log_sinkhorn forward matches the plain kernel") {
  std::mt19937_64 rng(3);
  const Matrix S = testing::random_matrix(rng, 6, 5, -3.0, 3.0);
  const Vector log_a = dustbin_row_marginal(5, 4).array().log().matrix();
  const Vector log_b = dustbin_col_marginal(5, 4).array().log().matrix();
  Tape tape;
  const Var lp = ad::log_sinkhorn(tape.constant(S), log_a, log_b, 100, 1.0);
  const Matrix expected = log_sinkhorn_kernel(sinkhorn_log_kernel(S, 1.0), log_a, log_b, 100);
  CHECK(lp.value() == expected);
}

TEST_CASE("weighted_neg_log_sum respects the floor") {
  Matrix lp(2, 2);
  lp << -0.5, -40.0, -1.0, -2.0;
  const std::vector<ad::LogTerm> terms{{0, 0, 2.0}, {0, 1, 1.0}, {1, 1, 0.5}};
  Tape tape;
  const Var x = tape.parameter(lp);
  const Var loss = ad::weighted_neg_log_sum(x, terms, std::log(1e-12));
  CHECK(loss.value()(0, 0) == doctest::Approx(2.0 * 0.5 - std::log(1e-12) + 0.5 * 2.0));
  tape.backward(loss);
  const Matrix g = tape.grad_of(lp);
  CHECK(g(0, 0) == -2.0);
  CHECK(g(0, 1) == 0.0);  // clamped
  CHECK(g(1, 1) == -0.5);
  CHECK(g(1, 0) == 0.0);
}

TEST_CASE("tape behaviour") {
  std::mt19937_64 rng(4);
  const Matrix A = testing::random_matrix(rng, 3, 3);
  const Matrix unused = testing::random_matrix(rng, 2, 2);

  SUBCASE("parameters are bound once and unused tensors get zero gradient") {
    Tape tape;
    const Var a1 = tape.parameter(A);
    const Var a2 = tape.parameter(A);
    CHECK(a1.id == a2.id);
    tape.parameter(unused);
    const Var out = readout(tape, ad::add(a1, a2));
    tape.backward(out);
    CHECK(tape.grad_of(unused).cwiseAbs().maxCoeff() == 0.0);
    Tape single;
    const Var once = readout(single, ad::scale(single.parameter(A), 2.0));
    single.backward(once);
    CHECK((tape.grad_of(A) - single.grad_of(A)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("recording and non-recording tapes give identical values") {
    Tape rec(true), plain(false);
    auto build = [&](Tape& t) {
      const Var x = t.parameter(A);
      return ad::softmax_rows(ad::relu(ad::matmul_nt(x, ad::exp(x))));
    };
    CHECK(build(rec).value() == build(plain).value());
  }
  SUBCASE("backward needs a scalar on a recording tape") {
    Tape tape;
    const Var x = tape.parameter(A);
    CHECK_ERROR_CODE(tape.backward(x), ErrorCode::ShapeMismatch);
  }
  SUBCASE("shape checks") {
    Tape tape;
    const Var x = tape.constant(A);
    const Var y = tape.constant(Matrix::Ones(2, 2));
    CHECK_ERROR_CODE(ad::matmul(x, y), ErrorCode::ShapeMismatch);
    CHECK_ERROR_CODE(ad::add(x, y), ErrorCode::ShapeMismatch);
  }
  SUBCASE("a second backward resets gradients") {
    Tape tape;
    const Var out = readout(tape, tape.parameter(A));
    tape.backward(out);
    const Matrix g1 = tape.grad_of(A);
    tape.backward(out);
    CHECK(tape.grad_of(A) == g1);
  }
}
