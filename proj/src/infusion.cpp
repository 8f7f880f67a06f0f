#include "knowfuse/infusion.hpp"

#include "knowfuse/errors.hpp"

#include <algorithm>
#include <cmath>

namespace knowfuse {

KgTensors KgTensors::from(const KgEmbeddings& emb, bool trainable, ParameterSet* params) {
  emb.check();
  KgTensors t;
  auto make = [&](const std::string& name, const Matrix& m) {
    return trainable ? params->add(name, m) : Tensor::constant(m);
  };
  if (trainable && params == nullptr) throw InvariantError("trainable KG tensors need a parameter set");
  t.entity = make("kg.entity", emb.entity);
  t.relation = make("kg.relation", emb.relation);
  for (std::size_t r = 0; r < emb.projection.size(); ++r) {
    t.projection.push_back(make("kg.projection" + std::to_string(r), emb.projection[r]));
  }
  t.refresh_fused();
  return t;
}

void KgTensors::refresh_fused() {
  fused.clear();
  for (std::size_t r = 0; r < projection.size(); ++r) {
    const Tensor hr = ag::slice_rows(relation, static_cast<Eigen::Index>(r), 1);
    const std::vector<Tensor> parts{projection[r], hr};
    const Tensor stacked = ag::concat_rows(parts);  // (d2+1) x d2
    fused.push_back(ag::matmul_transposed(stacked, stacked));
  }
}

NeighborInputs gather_neighbors(const KgTensors& kg_tensors, const KnowledgeGraph& kg,
                                std::span<const Adjacent> neighbors) {
  if (neighbors.empty()) throw InputError("neighbor set is empty");
  std::vector<int> ids;
  NeighborInputs out;
  for (const auto& a : neighbors) {
    ids.push_back(a.neighbor);
    out.types.push_back(kg.entity(a.neighbor).type);
  }
  out.embeddings = ag::gather_rows(kg_tensors.entity, ids);
  return out;
}

KnowledgeInfusion::KnowledgeInfusion(const ModelConfig& cfg, ParameterSet& params, std::mt19937_64& rng)
    : d2_(cfg.d2) {
  const double sd = 0.02;
  const int d1 = cfg.d1;
  const int d2 = cfg.d2;
  const std::string p = "infusion.";
  pooler_ = SpanPooler(params, p + "span_pool", d1, rng);
  w_be_ = params.add(p + "W_be", normal_init(d1, d2, sd, rng));
  ln_m_g_ = params.add(p + "mention_ln.gain", Matrix::Ones(1, d2));
  ln_m_b_ = params.add(p + "mention_ln.bias", Matrix::Zero(1, d2));
  w_t_ = params.add(p + "W_t", normal_init(d2, d2, sd, rng));
  w_tp_ = params.add(p + "W_t_prime", normal_init(d2, d2, sd, rng));
  w_a_ = params.add(p + "W_a", normal_init(d2, 1, sd, rng));
  w_q_ = params.add(p + "W_q", normal_init(d2, d2, sd, rng));
  w_k_ = params.add(p + "W_k", normal_init(d2, d2, sd, rng));
  w_v_ = params.add(p + "W_v", normal_init(d2, d2, sd, rng));
  b_v_ = params.add(p + "b_v", Matrix::Zero(1, d2));
  w_l1_ = params.add(p + "W_l1", normal_init(d2, 4 * d2, sd, rng));
  b_l1_ = params.add(p + "b_l1", Matrix::Zero(1, 4 * d2));
  w_l2_ = params.add(p + "W_l2", normal_init(4 * d2, d2, sd, rng));
  ln_n_g_ = params.add(p + "neighbor_ln.gain", Matrix::Ones(1, d2));
  ln_n_b_ = params.add(p + "neighbor_ln.bias", Matrix::Zero(1, d2));
  w_mf_ = params.add(p + "W_mf", normal_init(2 * d2, 2 * d2, sd, rng));
  b_mf_ = params.add(p + "b_mf", Matrix::Zero(1, 2 * d2));
  w_bp_ = params.add(p + "W_bp", normal_init(2 * d2, d1, sd, rng));
  b_bp_ = params.add(p + "b_bp", Matrix::Zero(1, d1));
  ln_p_g_ = params.add(p + "knowledge_ln.gain", Matrix::Ones(1, d1));
  ln_p_b_ = params.add(p + "knowledge_ln.bias", Matrix::Zero(1, d1));
  w_ug_ = params.add(p + "W_ug", normal_init(2 * d1, d1, sd, rng));
  b_ug_ = params.add(p + "b_ug", Matrix::Zero(1, d1));
  w_ex_ = params.add(p + "W_ex", normal_init(2 * d1, d1, sd, rng));
  b_ex_ = params.add(p + "b_ex", Matrix::Zero(1, d1));
}

Tensor KnowledgeInfusion::mention_transform(const Tensor& span_rows) const {
  const Tensor pooled = pooler_.pool(span_rows).pooled;
  return ag::layer_norm(ag::gelu(ag::matmul(pooled, w_be_)), ln_m_g_, ln_m_b_);
}

TypeAttention KnowledgeInfusion::type_attention(const Tensor& mention, const NeighborInputs& neighbors) const {
  if (neighbors.types.empty()) throw InputError("type_attention: empty neighbor set");
  TypeAttention out;
  out.types = neighbors.types;
  std::sort(out.types.begin(), out.types.end());
  out.types.erase(std::unique(out.types.begin(), out.types.end()), out.types.end());

  // h_tau = sum of neighbor embeddings of type tau (unnormalized)
  Matrix select = Matrix::Zero(static_cast<Eigen::Index>(out.types.size()),
                               static_cast<Eigen::Index>(neighbors.types.size()));
  for (std::size_t i = 0; i < neighbors.types.size(); ++i) {
    const auto slot = std::lower_bound(out.types.begin(), out.types.end(), neighbors.types[i]) - out.types.begin();
    select(slot, static_cast<Eigen::Index>(i)) = 1.0;
  }
  const Tensor h_tau = ag::matmul(Tensor::constant(std::move(select)), neighbors.embeddings);
  const auto t = static_cast<Eigen::Index>(out.types.size());
  const Tensor pre = ag::add(ag::repeat_rows(ag::matmul(mention, w_t_), t), ag::matmul(h_tau, w_tp_));
  const Tensor scores = ag::matmul(ag::tanh(pre), w_a_);  // T x 1
  out.weights = ag::softmax_rows(ag::transpose(scores));
  return out;
}

NodeAttention KnowledgeInfusion::node_attention_aggregate(const Tensor& mention, const NeighborInputs& neighbors,
                                                          const TypeAttention& types) const {
  std::vector<int> slots;
  for (TypeId ty : neighbors.types) {
    const auto it = std::lower_bound(types.types.begin(), types.types.end(), ty);
    if (it == types.types.end() || *it != ty) {
      throw InputError("node_attention: neighbor type " + std::to_string(ty) + " has no type weight");
    }
    slots.push_back(static_cast<int>(it - types.types.begin()));
  }
  const Tensor q = ag::matmul(mention, w_q_);                  // 1 x d2
  const Tensor k = ag::matmul(neighbors.embeddings, w_k_);     // K x d2
  const Tensor raw = ag::scale(ag::matmul_transposed(q, k), 1.0 / std::sqrt(static_cast<double>(d2_)));
  const Tensor typed = ag::mul(raw, ag::gather_cols(types.weights, slots));
  NodeAttention out;
  out.weights = ag::softmax_rows(typed);
  const Tensor values = ag::add_bias(ag::matmul(neighbors.embeddings, w_v_), b_v_);
  const Tensor hat = ag::matmul(out.weights, values);
  const Tensor ffn = ag::matmul(ag::gelu(affine(hat, w_l1_, b_l1_)), w_l2_);
  out.aggregate = ag::layer_norm(ag::add(hat, ffn), ln_n_g_, ln_n_b_);
  return out;
}

Tensor KnowledgeInfusion::gated_position_infusion(const Tensor& span_rows, const Tensor& aggregate,
                                                  const Tensor& mention) const {
  const Tensor fused = ag::gelu(affine(ag::concat_cols(aggregate, mention), w_mf_, b_mf_));  // 1 x 2d2
  const Tensor knowledge = ag::layer_norm(affine(fused, w_bp_, b_bp_), ln_p_g_, ln_p_b_);  // 1 x d1
  const Tensor k_rows = ag::repeat_rows(knowledge, span_rows.rows());
  const Tensor gate = ag::tanh(affine(ag::concat_cols(span_rows, k_rows), w_ug_, b_ug_));
  const Tensor mixed = ag::gelu(affine(ag::concat_cols(span_rows, ag::mul(gate, k_rows)), w_ex_, b_ex_));
  return ag::add(mixed, span_rows);
}

KnowledgeInfusion::Trace KnowledgeInfusion::infuse_mention(const Tensor& hidden, const MentionSpan& m,
                                                           const KgTensors& kg_tensors,
                                                           const KnowledgeGraph& kg) const {
  if (m.start < 0 || m.end < m.start || m.end >= hidden.rows()) throw InputError("mention span out of range");
  Trace tr;
  const Tensor span = ag::slice_rows(hidden, m.start, m.end - m.start + 1);
  const NeighborInputs nb = gather_neighbors(kg_tensors, kg, m.neighbors);
  tr.mention = mention_transform(span);
  tr.types = type_attention(tr.mention, nb);
  tr.nodes = node_attention_aggregate(tr.mention, nb, tr.types);
  tr.span_out = gated_position_infusion(span, tr.nodes.aggregate, tr.mention);
  return tr;
}

Tensor KnowledgeInfusion::infuse(const Tensor& hidden, std::span<const MentionSpan> mentions,
                                 const KgTensors& kg_tensors, const KnowledgeGraph& kg) const {
  Tensor out = hidden;
  for (const auto& m : mentions) {
    if (m.neighbors.empty()) continue;
    const Trace tr = infuse_mention(hidden, m, kg_tensors, kg);
    out = ag::replace_rows(out, m.start, tr.span_out);
  }
  return out;
}

}  // namespace knowfuse
