#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every value is 2-D; vectors are 1 x n rows.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

namespace knowfuse::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Matrix& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Matrix value);
  static Tensor parameter(Matrix value);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  Matrix& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;

  void zero_grad();
  // Seeds d(self)/d(self) = 1; self must be 1 x 1.
  void backward() const;
  Tensor detach() const { return constant(value()); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Arithmetic
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_transposed(const Tensor& a, const Tensor& b);  // a * b^T
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_bias(const Tensor& a, const Tensor& bias);  // bias is 1 x cols, broadcast over rows
Tensor repeat_rows(const Tensor& row, Eigen::Index count);
Tensor transpose(const Tensor& a);

// Pointwise nonlinearities
Tensor gelu(const Tensor& a);  // exact erf form
Tensor tanh(const Tensor& a);

// Row-wise normalisations
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);
Tensor l2_normalize_rows(const Tensor& a);

// Structural
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor gather_cols(const Tensor& a, std::span<const int> ids);
// Copy of base with rows [start, start + rows.rows()) replaced.
Tensor replace_rows(const Tensor& base, Eigen::Index start, const Tensor& rows);

// Reductions
Tensor sum(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // column sums, 1 x cols
Tensor squared_norm(const Tensor& a);

// Losses
// Sum over rows of -log softmax(logits)[row, target]; rows with target < 0 are skipped.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets);
// Binary cross entropy on a 1 x 1 logit.
Tensor bce_with_logits(const Tensor& logit, double label);

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);

// Topological order of every node reachable from root that requires grad.
std::vector<Node*> topo_order(const Node& root);

}  // namespace knowfuse::ag
