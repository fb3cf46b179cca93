#include "kpm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kpm/assignment.hpp"
#include "kpm/error.hpp"

namespace kpm::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error(ErrorCode::ShapeMismatch, "operands live on different tapes");
}

}  // namespace

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const Matrix& tensor) {
  if (const auto it = bound_.find(&tensor); it != bound_.end()) {
    return Var{this, it->second};
  }
  nodes_.push_back(Node{tensor, {}, {}, {}, record_});
  bound_.emplace(&tensor, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::vector<std::size_t> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const auto id : inputs) needs = needs || nodes_[id].requires_grad;
  }
  Node node{std::move(value), {}, {}, {}, needs};
  if (needs) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Matrix& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  if (!nodes_[id].requires_grad) return;
  grad_slot(id) += g;
}

void Tape::backward(Var output) {
  require(output.tape == this, "output is not on this tape");
  require(value(output).size() == 1, "backward needs a scalar output");
  if (!record_) throw Error(ErrorCode::Usage, "backward on a non-recording tape");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_slot(output.id).setOnes();
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad_of(const Matrix& tensor) const {
  const auto it = bound_.find(&tensor);
  if (it == bound_.end()) return Matrix::Zero(tensor.rows(), tensor.cols());
  return grad(Var{const_cast<Tape*>(this), it->second});
}

Var matmul(Var a, Var b) {
  same_tape(a, b);
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  return a.tape->push(a.value() * b.value(), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.upstream(self);
    t.accumulate(in[0], g * t.value(Var{&t, in[1]}).transpose());
    t.accumulate(in[1], t.value(Var{&t, in[0]}).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  same_tape(a, b);
  require(a.cols() == b.cols(), "matmul_nt: widths differ");
  return a.tape->push(a.value() * b.value().transpose(), {a.id, b.id},
                      [](Tape& t, std::size_t self) {
                        const auto& in = t.inputs(self);
                        const Matrix& g = t.upstream(self);
                        t.accumulate(in[0], g * t.value(Var{&t, in[1]}));
                        t.accumulate(in[1], g.transpose() * t.value(Var{&t, in[0]}));
                      });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  return a.tape->push(a.value() + b.value(), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    t.accumulate(in[0], t.upstream(self));
    t.accumulate(in[1], t.upstream(self));
  });
}

Var add_row(Var x, Var row) {
  same_tape(x, row);
  require(row.rows() == 1 && row.cols() == x.cols(), "add_row: row shape mismatch");
  Matrix out = x.value().rowwise() + row.value().row(0);
  return x.tape->push(std::move(out), {x.id, row.id}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.upstream(self);
    t.accumulate(in[0], g);
    t.accumulate(in[1], g.colwise().sum());
  });
}

Var scale(Var x, double c) {
  return x.tape->push(x.value() * c, {x.id}, [c](Tape& t, std::size_t self) {
    t.accumulate(t.inputs(self)[0], t.upstream(self) * c);
  });
}

Var mul_const(Var x, const Matrix& c) {
  require(x.rows() == c.rows() && x.cols() == c.cols(), "mul_const: shapes differ");
  return x.tape->push(x.value().cwiseProduct(c), {x.id}, [c](Tape& t, std::size_t self) {
    t.accumulate(t.inputs(self)[0], t.upstream(self).cwiseProduct(c));
  });
}

Var add_scaled_const(Var x, const Matrix& c, Var k) {
  same_tape(x, k);
  require(x.rows() == c.rows() && x.cols() == c.cols(), "add_scaled_const: shapes differ");
  require(k.value().size() == 1, "add_scaled_const: k must be 1x1");
  const double kv = k.value()(0, 0);
  return x.tape->push(x.value() + kv * c, {x.id, k.id}, [c](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.upstream(self);
    t.accumulate(in[0], g);
    t.accumulate(in[1], Matrix::Constant(1, 1, g.cwiseProduct(c).sum()));
  });
}

Var exp(Var x) {
  Matrix out = x.value().array().exp().matrix();
  return x.tape->push(std::move(out), {x.id}, [](Tape& t, std::size_t self) {
    t.accumulate(t.inputs(self)[0], t.upstream(self).cwiseProduct(t.value(Var{&t, self})));
  });
}

Var relu(Var x) {
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape->push(std::move(out), {x.id}, [](Tape& t, std::size_t self) {
    const Matrix& in_value = t.value(Var{&t, t.inputs(self)[0]});
    t.accumulate(t.inputs(self)[0],
                 (in_value.array() > 0.0).select(t.upstream(self), 0.0).matrix());
  });
}

Var concat_cols(Var a, Var b) {
  same_tape(a, b);
  require(a.rows() == b.rows(), "concat_cols: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  const Eigen::Index cb = b.cols();
  return a.tape->push(std::move(out), {a.id, b.id}, [ca, cb](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.upstream(self);
    t.accumulate(in[0], g.leftCols(ca));
    t.accumulate(in[1], g.rightCols(cb));
  });
}

Var softmax_rows(Var x) {
  const Matrix& xv = x.value();
  Eigen::VectorXd mx = xv.rowwise().maxCoeff();
  Matrix e = (xv.colwise() - mx).array().exp().matrix();
  Eigen::VectorXd sum = e.rowwise().sum();
  Matrix out = e.array().colwise() / sum.array();
  return x.tape->push(std::move(out), {x.id}, [](Tape& t, std::size_t self) {
    const Matrix& y = t.value(Var{&t, self});
    const Matrix& g = t.upstream(self);
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(t.inputs(self)[0], y.cwiseProduct((g.colwise() - dot)));
  });
}

Var augment_dustbin(Var scores, Var alpha) {
  same_tape(scores, alpha);
  require(alpha.value().size() == 1, "augment_dustbin: alpha must be 1x1");
  const Eigen::Index m = scores.rows();
  const Eigen::Index n = scores.cols();
  Matrix out = Matrix::Constant(m + 1, n + 1, alpha.value()(0, 0));
  out.topLeftCorner(m, n) = scores.value();
  return scores.tape->push(std::move(out), {scores.id, alpha.id},
                           [m, n](Tape& t, std::size_t self) {
                             const auto& in = t.inputs(self);
                             const Matrix& g = t.upstream(self);
                             t.accumulate(in[0], g.topLeftCorner(m, n));
                             const double bins = g.row(m).sum() + g.col(n).sum() - g(m, n);
                             t.accumulate(in[1], Matrix::Constant(1, 1, bins));
                           });
}

Var log_sinkhorn(Var scores, const Vector& log_a, const Vector& log_b, int iterations,
                 double temperature) {
  require(log_a.size() == scores.rows() && log_b.size() == scores.cols(),
          "log_sinkhorn: marginal sizes differ");
  if (iterations < 1) throw Error(ErrorCode::InvalidConfig, "sinkhorn needs >= 1 iteration");
  // The max shift leaves log P unchanged, so it carries no gradient.
  Matrix log_kernel = sinkhorn_log_kernel(scores.value(), temperature);
  auto history = std::make_shared<SinkhornHistory>();
  Matrix out = log_sinkhorn_kernel(log_kernel, log_a, log_b, iterations,
                                   scores.tape->recording() ? history.get() : nullptr);
  auto kernel = std::make_shared<Matrix>(std::move(log_kernel));
  return scores.tape->push(
      std::move(out), {scores.id},
      [history, kernel, log_a, log_b, temperature](Tape& t, std::size_t self) {
        const Matrix& Z = *kernel;
        const Matrix& g = t.upstream(self);
        Matrix gz = g;
        Vector gu = g.rowwise().sum();
        Vector gv = g.colwise().sum().transpose();
        const auto steps = history->u.size() - 1;
        for (std::size_t s = steps; s >= 1; --s) {
          const Vector& u = history->u[s];
          const Vector& v = history->v[s];
          const Vector& v_prev = history->v[s - 1];
          // v_s = log b - LSE_i(Z + u_s)
          Matrix q = ((Z.colwise() + u).rowwise() + (v - log_b).transpose()).array().exp().matrix();
          gz -= q * gv.asDiagonal();
          gu -= q * gv;
          // u_s = log a - LSE_j(Z + v_{s-1})
          q = ((Z.colwise() + (u - log_a)).rowwise() + v_prev.transpose()).array().exp().matrix();
          gz -= gu.asDiagonal() * q;
          gv = -(q.transpose() * gu);
          gu.setZero();
        }
        t.accumulate(t.inputs(self)[0], gz / temperature);
      });
}

Var weighted_neg_log_sum(Var log_p, std::span<const LogTerm> terms, double log_floor) {
  const Matrix& lp = log_p.value();
  double total = 0.0;
  for (const auto& term : terms) {
    require(term.row >= 0 && term.row < lp.rows() && term.col >= 0 && term.col < lp.cols(),
            "weighted_neg_log_sum: index out of range");
    total -= term.weight * std::max(lp(term.row, term.col), log_floor);
  }
  std::vector<LogTerm> owned(terms.begin(), terms.end());
  return log_p.tape->push(Matrix::Constant(1, 1, total), {log_p.id},
                          [owned = std::move(owned), log_floor](Tape& t, std::size_t self) {
                            const std::size_t in = t.inputs(self)[0];
                            const Matrix& lp = t.value(Var{&t, in});
                            const double g = t.upstream(self)(0, 0);
                            Matrix& slot = t.grad_slot(in);
                            for (const auto& term : owned) {
                              if (lp(term.row, term.col) > log_floor) {
                                slot(term.row, term.col) -= g * term.weight;
                              }
                            }
                          });
}

}  // namespace kpm::ad
