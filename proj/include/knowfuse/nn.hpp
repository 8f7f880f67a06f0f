#pragma once

#include "knowfuse/autograd.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace knowfuse {

using ag::Matrix;
using ag::RowVector;
using ag::Tensor;

// Ordered, named collection of trainable tensors.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Matrix init);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t count() const;  // total scalar count
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
};

// Truncation-free N(0, stddev^2) init.
Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  Tensor maybe_dropout(const Tensor& x) const;
};

// x W + b
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Single-head self-attentive pooling: softmax_i(tanh(h_i W) w) weights the span rows.
class SpanPooler {
 public:
  SpanPooler() = default;
  SpanPooler(ParameterSet& params, const std::string& prefix, int dim, std::mt19937_64& rng);

  struct Result {
    Tensor pooled;   // 1 x dim
    Tensor weights;  // 1 x span length
  };
  // Throws InputError for an empty span.
  Result pool(const Tensor& span_rows) const;

  Tensor projection() const { return proj_; }
  Tensor scorer() const { return scorer_; }

 private:
  Tensor proj_;    // dim x dim
  Tensor scorer_;  // dim x 1
};

}  // namespace knowfuse
