#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace heteroqa::ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  /// Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
};

/// Handle onto a node of the dynamically built expression graph. Copies share
/// the node. Values are 64-bit dense matrices; rows index positions/nodes.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  /// Direct mutation is meant for parameters (optimizer, checkpoint load, tests).
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }

  void zero_grad();

 private:
  NodePtr node_;
};

/// Trainable leaf.
Var parameter(Matrix value);
/// Non-trainable leaf.
Var constant(Matrix value);
Var scalar_constant(double v);

/// Reverse-mode sweep from a 1x1 root; gradients accumulate into leaves.
void backward(const Var& root);

/// While alive on this thread, ops record no parents (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Elementwise / linear algebra
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a scaled by the 1x1 variable s.
Var scale_by(const Var& a, const Var& s);
/// Adds the 1 x cols row vector b to every row of a.
Var add_row(const Var& a, const Var& row);
/// Multiplies row i of a by column entry w(i, 0).
Var scale_rows(const Var& a, const Var& w);
Var transpose(const Var& a);

// Activations
Var gelu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);

/// Row-wise softmax. additive_mask entries of -inf exclude positions; a fully
/// masked row yields zeros.
Var softmax_rows(const Var& a, const Matrix* additive_mask = nullptr);
Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);

// Shape
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Rows of a at the given indices (repeats allowed): embedding lookup.
Var gather_rows(const Var& a, std::span<const Eigen::Index> rows);

// Reductions
Var sum(const Var& a);
/// Mean over the rows whose mask entry is true; 1 x cols.
Var masked_mean_rows(const Var& a, const std::vector<bool>& mask);

// Losses
/// Mean over targets != ignore_id of -log softmax(logits row)[target].
Var cross_entropy(const Var& logits, std::span<const int> targets, int ignore_id);
/// Mean over selected rows of (pred(r,0) - target)^2; pred is n x 1.
Var mse_rows(const Var& pred, std::span<const Eigen::Index> rows, std::span<const double> targets);

double gelu_value(double x);

}  // namespace heteroqa::ad
