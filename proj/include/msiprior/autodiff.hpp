#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <vector>

namespace msiprior::ad {

/// All tensors in the engine are dense row-major-semantics matrices of
/// doubles. A bag of n tiles with D features is n x D; a scalar is 1 x 1.
using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of primitive operations. Nodes are appended in evaluation
/// order, which is a topological order, and the reverse pass walks them
/// backwards. A tape is single-threaded and used for one forward/backward.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf (a parameter).
  Var variable(Matrix value);
  /// Non-differentiable leaf (an input or label).
  Var constant(Matrix value);

  /// Records the result of a primitive. `backward` receives the adjoint of
  /// this node and must accumulate into its inputs via accumulate().
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

  /// Reverse accumulation from a 1 x 1 loss. Gradients of every node reached
  /// are available afterwards through grad(); unreached variables hold zeros.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  void accumulate(Var v, const Matrix& g);
  /// Adds g into the block of v's gradient starting at (row, col).
  void accumulate_block(Var v, Eigen::Index row, Eigen::Index col, const Matrix& g);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }

// Primitives. Shape mismatches throw Error(kInvalidInput).
//
// add/sub/mul accept either equal shapes or a 1 x c row vector on the right,
// broadcast over every row of the left operand.

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var concat_rows(Var top, Var bottom);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, const std::vector<Eigen::Index>& rows);
Var transpose(Var a);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var log(Var a);
Var softmax_rows(Var a);
/// Per-row standardization to zero mean and unit variance (no affine).
Var layernorm_rows(Var a, double eps = 1e-5);
/// Column means over rows: n x c -> 1 x c.
Var mean_rows(Var a);
/// Sum of all entries: -> 1 x 1.
Var sum(Var a);

/// Scaled dot-product attention over `n_heads` equal column blocks:
/// out_h = softmax(Q_h K_h^T / sqrt(d_h)) V_h, heads concatenated. Q may have
/// fewer rows than K and V. `mean_probs` is the head-averaged attention
/// matrix (rows of Q by rows of K); it is not differentiable.
struct AttentionResult {
  Var output;
  Matrix mean_probs;
};
AttentionResult multihead_attention(Var q, Var k, Var v, int n_heads);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

/// Builds a loss on a fresh tape from a list of parameter leaves.
using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Loss value and reverse-mode gradients for the given parameters.
struct ValueAndGrad {
  double value = 0.0;
  std::vector<Matrix> grads;
};
ValueAndGrad value_and_grad(const LossFn& fn, const std::vector<Matrix>& params);

/// Compares reverse-mode gradients with central finite differences on every
/// coordinate. Returns max |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
/// Throws Error(kNumeric) if any loss evaluation is non-finite.
double grad_check(const LossFn& fn, const std::vector<Matrix>& params, double eps);

}  // namespace msiprior::ad
