#include "knowfuse/nn.hpp"

#include "knowfuse/errors.hpp"

namespace knowfuse {

Tensor ParameterSet::add(const std::string& name, Matrix init) {
  if (index_.contains(name)) throw InvariantError("duplicate parameter name " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, Tensor::parameter(std::move(init)));
  return items_.back().second;
}

Tensor ParameterSet::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw InputError("unknown parameter " + name);
  return items_[it->second].second;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += static_cast<std::size_t>(t.value().size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  return Matrix::NullaryExpr(rows, cols, [&]() { return dist(rng); });
}

Tensor ForwardContext::maybe_dropout(const Tensor& x) const {
  if (!training || dropout <= 0.0 || rng == nullptr) return x;
  return ag::dropout(x, dropout, *rng);
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ag::add_bias(ag::matmul(x, w), b);
}

SpanPooler::SpanPooler(ParameterSet& params, const std::string& prefix, int dim, std::mt19937_64& rng) {
  proj_ = params.add(prefix + ".proj", normal_init(dim, dim, 0.02, rng));
  scorer_ = params.add(prefix + ".scorer", normal_init(dim, 1, 0.02, rng));
}

SpanPooler::Result SpanPooler::pool(const Tensor& span_rows) const {
  if (span_rows.rows() == 0) throw InputError("span pooling: empty span");
  const Tensor scores = ag::matmul(ag::tanh(ag::matmul(span_rows, proj_)), scorer_);  // L x 1
  const Tensor weights = ag::softmax_rows(ag::transpose(scores));                     // 1 x L
  return {ag::matmul(weights, span_rows), weights};
}

}  // namespace knowfuse
