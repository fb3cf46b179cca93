#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace kpm::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Linear record of matrix operations. Nodes are appended in evaluation order,
// so reverse insertion order is a valid reverse topological order.
//
// A tape built with record = false evaluates the same kernels but keeps no
// backward closures; it is the tape-free forward path.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  // Leaf bound to an external tensor; repeated calls with the same tensor
  // return the same node.
  Var parameter(const Matrix& tensor);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Seeds d(output)/d(output) = 1 for a 1x1 output and runs every recorded
  // closure once in reverse order.
  void backward(Var output);

  // Gradient accumulated for a node (zeros when the node got none).
  Matrix grad(Var v) const;
  // Gradient for a tensor previously bound with parameter(); zeros when the
  // tensor was never used.
  Matrix grad_of(const Matrix& tensor) const;

  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var push(Matrix value, std::vector<std::size_t> inputs, Backward backward);
  const Matrix& upstream(std::size_t id) const { return nodes_[id].grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  void accumulate(std::size_t id, const Matrix& g);
  Matrix& grad_slot(std::size_t id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, std::size_t> bound_;
};

// Matrix ops. Shapes are checked; violations throw ShapeMismatch.
Var matmul(Var a, Var b);                 // A B
Var matmul_nt(Var a, Var b);              // A Bᵀ
Var add(Var a, Var b);
Var add_row(Var x, Var row);              // x + 1 rowᵀ, row is 1 x cols
Var scale(Var x, double c);
Var mul_const(Var x, const Matrix& c);    // elementwise
Var add_scaled_const(Var x, const Matrix& c, Var k);  // x + k c, k is 1x1
Var exp(Var x);
Var relu(Var x);
Var concat_cols(Var a, Var b);
Var softmax_rows(Var x);
// Appends a dustbin row and column filled with the 1x1 scalar `alpha`.
Var augment_dustbin(Var scores, Var alpha);

// Log-domain Sinkhorn on exp(s / temperature) towards marginals (a, b),
// differentiated through every unrolled iteration.
Var log_sinkhorn(Var scores, const Vector& log_a, const Vector& log_b, int iterations,
                 double temperature);

struct LogTerm {
  Eigen::Index row;
  Eigen::Index col;
  double weight;
};

// -sum_k w_k * max(x[r_k, c_k], log_floor) as a 1x1 node.
Var weighted_neg_log_sum(Var log_p, std::span<const LogTerm> terms, double log_floor);

}  // namespace kpm::ad
