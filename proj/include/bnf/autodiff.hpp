#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bnf::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

// Records one forward pass and replays it in reverse to accumulate adjoints.
// Nodes are appended in evaluation order, so reverse insertion order is a
// reverse topological order. A Tape is single-threaded and single-use: call
// clear() before recording the next pass.
class Tape {
 public:
  Var constant(Matrix value);
  // Leaf whose adjoint is added into `grad_sink` (same shape) by backward().
  Var leaf(Matrix value, std::span<double> grad_sink);
  // Leaf whose adjoint can be read back with grad() after backward().
  Var variable(Matrix value);

  const Matrix& value(Var v) const;
  // Adjoint of `v` after backward(); zero matrix if `v` does not reach the loss.
  Matrix grad(Var v) const;

  // `loss` must be a 1x1 node of this tape. Fills leaf grad sinks.
  void backward(Var loss);

  void clear();
  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by the op implementations.
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;
  Var record(Matrix value, Backward backward);
  void accumulate(int id, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    Backward backward;
    std::span<double> sink;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Dense and elementwise operators.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_row(Var a, Var row);  // a (n x c) + row (1 x c) broadcast
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var square(Var a);
Var exp(Var a);
Var log(Var a);
Var elu(Var a, double alpha = 1.0);
Var relu(Var a);
Var softplus(Var a);
Var normal_log_pdf(Var a);  // elementwise log phi(a)
Var sum(Var a);             // 1x1

// Structural operators.
Var cols(Var a, int start, int count);
Var concat_cols(Var a, Var b);
Var cumsum_cols(Var a);  // running sum along each row
// (rows x steps*k) -> (rows*steps x k); row r*steps + t holds block t of row r.
Var unstack_steps(Var a, int steps);

// Row-wise reductions and normalizations.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var log_sum_exp_rows(Var a);  // n x 1

// Maps raw flow outputs (n x (M+4)) to (n x (M+3)) = [a1, b1, theta_0..theta_M]
// using the same constraints as bnf::constrain_params.
Var constrain_flow(Var raw, int order);

// Applies the flow to `y` (n x 1, not differentiated) row by row given
// constrained parameters (n x (M+3)). Output (n x 2) = [z, log|df/dy|].
Var bernstein_flow(Var params, const Matrix& y);

// Sum over rows and levels of the pinball loss of quantiles q (n x K) against y
// (n x 1) at the given levels. 1x1.
Var pinball_sum(Var q, const Matrix& y, std::span<const double> levels);

}  // namespace bnf::ad
