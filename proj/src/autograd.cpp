#include "knowfuse/autograd.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace knowfuse::ag {

Matrix& Node::ensure_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  return grad;
}

namespace {

Tensor make_result(Matrix value, std::vector<std::shared_ptr<Node>> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in->requires_grad;
  if (any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

// Accumulate into an input's gradient only if it participates in backprop.
template <typename Expr>
void accumulate(Node& n, const Expr& g) {
  if (n.requires_grad) n.ensure_grad() += g;
}

}  // namespace

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw std::logic_error("item(): tensor is not 1x1");
  return node_->value(0, 0);
}

void Tensor::zero_grad() {
  if (node_->grad.size() != 0) node_->grad.setZero();
}

std::vector<Node*> topo_order(const Node& root) {
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  // (node, next-input index) explicit stack for post-order traversal
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(const_cast<Node*>(&root), 0);
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node* child = node->inputs[idx++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void Tensor::backward() const {
  if (rows() != 1 || cols() != 1) throw std::logic_error("backward(): root must be 1x1");
  if (!node_->requires_grad) return;
  auto order = topo_order(*node_);
  node_->ensure_grad()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
  // Intermediate gradients are dropped so a graph can be re-used for another backward.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.resize(0, 0);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) x.ensure_grad().noalias() += self.grad * y.value.transpose();
    if (y.requires_grad) y.ensure_grad().noalias() += x.value.transpose() * self.grad;
  });
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_transposed: dimension mismatch");
  Matrix out = a.value() * b.value().transpose();
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) x.ensure_grad().noalias() += self.grad * y.value;
    if (y.requires_grad) y.ensure_grad().noalias() += self.grad.transpose() * x.value;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate(*self.inputs[1], self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate(*self.inputs[1], -self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    accumulate(x, self.grad.cwiseProduct(y.value));
    accumulate(y, self.grad.cwiseProduct(x.value));
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_result(a.value() * s, {a.node()}, [s](Node& self) {
    accumulate(*self.inputs[0], self.grad * s);
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw std::invalid_argument("add_bias: bias must be 1 x cols");
  }
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return make_result(std::move(out), {a.node(), bias.node()}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate(*self.inputs[1], self.grad.colwise().sum());
  });
}

Tensor repeat_rows(const Tensor& row, Eigen::Index count) {
  if (row.rows() != 1) throw std::invalid_argument("repeat_rows: input must be a single row");
  Matrix out = row.value().replicate(count, 1);
  return make_result(std::move(out), {row.node()}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad.colwise().sum());
  });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad.transpose());
  });
}

Tensor gelu(const Tensor& a) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = a.value().unaryExpr(
      [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make_result(std::move(out), {a.node()}, [inv_sqrt2](Node& self) {
    Node& x = *self.inputs[0];
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = x.value.unaryExpr([&](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    accumulate(x, self.grad.cwiseProduct(d));
  });
}

Tensor tanh(const Tensor& a) {
  Matrix out = a.value().array().tanh().matrix();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Matrix d = (1.0 - self.value.array().square()).matrix();
    accumulate(*self.inputs[0], self.grad.cwiseProduct(d));
  });
}

Tensor softmax_rows(const Tensor& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    Matrix& g = x.ensure_grad();
    for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
      const double dot = self.grad.row(r).dot(self.value.row(r));
      g.row(r).array() += self.value.row(r).array() * (self.grad.row(r).array() - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Eigen::Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw std::invalid_argument("layer_norm: gain/bias must be 1 x cols");
  }
  Matrix normed(x.rows(), n);
  RowVector inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normed.row(r) = (x.value().row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (normed.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return make_result(
      std::move(out), {x.node(), gain.node(), bias.node()},
      [normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
        Node& xin = *self.inputs[0];
        Node& g = *self.inputs[1];
        Node& b = *self.inputs[2];
        accumulate(g, self.grad.cwiseProduct(normed).colwise().sum());
        accumulate(b, self.grad.colwise().sum());
        if (!xin.requires_grad) return;
        Matrix& dx = xin.ensure_grad();
        for (Eigen::Index r = 0; r < normed.rows(); ++r) {
          RowVector dn = self.grad.row(r).cwiseProduct(g.value.row(0));
          const double m1 = dn.mean();
          const double m2 = dn.cwiseProduct(normed.row(r)).mean();
          dx.row(r).array() +=
              inv_std(r) * (dn.array() - m1 - normed.row(r).array() * m2);
        }
      });
}

Tensor l2_normalize_rows(const Tensor& a) {
  Matrix out(a.rows(), a.cols());
  RowVector norms(a.rows());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    norms(r) = a.value().row(r).norm();
    if (norms(r) == 0.0) throw std::domain_error("l2_normalize_rows: zero-norm row");
    out.row(r) = a.value().row(r) / norms(r);
  }
  return make_result(std::move(out), {a.node()}, [norms = std::move(norms)](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    Matrix& g = x.ensure_grad();
    for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
      const double dot = self.grad.row(r).dot(self.value.row(r));
      g.row(r) += (self.grad.row(r) - self.value.row(r) * dot) / norms(r);
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index split = a.cols();
  return make_result(std::move(out), {a.node(), b.node()}, [split](Node& self) {
    accumulate(*self.inputs[0], self.grad.leftCols(split));
    accumulate(*self.inputs[1], self.grad.rightCols(self.grad.cols() - split));
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix out(total, cols);
  std::vector<std::shared_ptr<Node>> inputs;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    inputs.push_back(p.node());
    off += p.rows();
  }
  return make_result(std::move(out), std::move(inputs),
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                         Node& in = *self.inputs[i];
                         accumulate(in, self.grad.middleRows(offsets[i], in.value.rows()));
                       }
                     });
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("slice_rows: range out of bounds");
  }
  Matrix out = a.value().middleRows(start, count);
  return make_result(std::move(out), {a.node()}, [start, count](Node& self) {
    Node& x = *self.inputs[0];
    if (x.requires_grad) x.ensure_grad().middleRows(start, count) += self.grad;
  });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range out of bounds");
  }
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), {a.node()}, [start, count](Node& self) {
    Node& x = *self.inputs[0];
    if (x.requires_grad) x.ensure_grad().middleCols(start, count) += self.grad;
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw std::out_of_range("gather_rows: bad id");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {table.node()}, [idx = std::move(idx)](Node& self) {
    Node& t = *self.inputs[0];
    if (!t.requires_grad) return;
    Matrix& g = t.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Tensor gather_cols(const Tensor& a, std::span<const int> ids) {
  Matrix out(a.rows(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= a.cols()) throw std::out_of_range("gather_cols: bad id");
    out.col(static_cast<Eigen::Index>(i)) = a.value().col(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {a.node()}, [idx = std::move(idx)](Node& self) {
    Node& t = *self.inputs[0];
    if (!t.requires_grad) return;
    Matrix& g = t.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g.col(idx[i]) += self.grad.col(static_cast<Eigen::Index>(i));
    }
  });
}

Tensor replace_rows(const Tensor& base, Eigen::Index start, const Tensor& rows) {
  if (rows.cols() != base.cols() || start < 0 || start + rows.rows() > base.rows()) {
    throw std::out_of_range("replace_rows: block does not fit");
  }
  Matrix out = base.value();
  out.middleRows(start, rows.rows()) = rows.value();
  const Eigen::Index count = rows.rows();
  return make_result(std::move(out), {base.node(), rows.node()}, [start, count](Node& self) {
    Node& b = *self.inputs[0];
    Node& r = *self.inputs[1];
    if (b.requires_grad) {
      Matrix g = self.grad;
      g.middleRows(start, count).setZero();
      b.ensure_grad() += g;
    }
    accumulate(r, self.grad.middleRows(start, count));
  });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    if (x.requires_grad) x.ensure_grad().array() += self.grad(0, 0);
  });
}

Tensor sum_rows(const Tensor& a) {
  Matrix out = a.value().colwise().sum();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    if (x.requires_grad) x.ensure_grad().rowwise() += self.grad.row(0);
  });
}

Tensor squared_norm(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    accumulate(x, x.value * (2.0 * self.grad(0, 0)));
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw std::invalid_argument("cross_entropy_rows: one target per row required");
  }
  Matrix probs(logits.rows(), logits.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.value().row(r).maxCoeff();
    probs.row(r) = (logits.value().row(r).array() - mx).exp().matrix();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    if (t >= logits.cols()) throw std::out_of_range("cross_entropy_rows: target out of range");
    loss += -(logits.value()(r, t) - mx - std::log(z));
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result(std::move(out), {logits.node()},
                     [probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                       Node& x = *self.inputs[0];
                       if (!x.requires_grad) return;
                       Matrix& g = x.ensure_grad();
                       const double up = self.grad(0, 0);
                       for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                         const int t = tgt[static_cast<std::size_t>(r)];
                         if (t < 0) continue;
                         g.row(r) += probs.row(r) * up;
                         g(r, t) -= up;
                       }
                     });
}

Tensor bce_with_logits(const Tensor& logit, double label) {
  const double x = logit.item();
  // softplus(x) - label * x, computed stably
  const double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  Matrix out(1, 1);
  out(0, 0) = softplus - label * x;
  return make_result(std::move(out), {logit.node()}, [x, label](Node& self) {
    const double sig = 1.0 / (1.0 + std::exp(-x));
    Matrix g(1, 1);
    g(0, 0) = (sig - label) * self.grad(0, 0);
    accumulate(*self.inputs[0], g);
  });
}

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  Matrix out = a.value().cwiseProduct(mask);
  return make_result(std::move(out), {a.node()}, [mask = std::move(mask)](Node& self) {
    accumulate(*self.inputs[0], self.grad.cwiseProduct(mask));
  });
}

}  // namespace knowfuse::ag
