#include "knowfuse/objectives.hpp"

#include "knowfuse/errors.hpp"

#include <cmath>

namespace knowfuse {

NegativeSampler::NegativeSampler(const KnowledgeGraph& kg, const FrequencyTable& freq, double smoothing) {
  if (smoothing < 0.0) throw InputError("NegativeSampler: smoothing must be >= 0");
  if (freq.counts.size() != kg.num_entities()) {
    throw InputError("NegativeSampler: frequency table does not match graph");
  }
  entity_type_.resize(kg.num_entities());
  q_.assign(kg.num_entities(), 0.0);
  for (const auto& [type, members] : kg.type_index()) {
    Table t;
    t.members = members;
    double mass = 0.0;
    for (EntityId e : members) {
      const double w = static_cast<double>(freq.count(e)) + smoothing;
      t.probs.push_back(w);
      mass += w;
      entity_type_[static_cast<std::size_t>(e)] = type;
    }
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (t.probs[i] <= 0.0) {
        throw InputError("NegativeSampler: entity '" + kg.entity(members[i]).surface +
                         "' has zero probability; use a positive smoothing constant");
      }
      t.probs[i] /= mass;
      q_[static_cast<std::size_t>(members[i])] = t.probs[i];
    }
    t.dist = std::discrete_distribution<std::size_t>(t.probs.begin(), t.probs.end());
    tables_.emplace(type, std::move(t));
  }
}

double NegativeSampler::probability(EntityId e) const {
  if (e < 0 || static_cast<std::size_t>(e) >= q_.size()) throw InputError("sampler: unknown entity id");
  return q_[static_cast<std::size_t>(e)];
}

TypeId NegativeSampler::type_of(EntityId e) const {
  if (e < 0 || static_cast<std::size_t>(e) >= entity_type_.size()) throw InputError("sampler: unknown entity id");
  return entity_type_[static_cast<std::size_t>(e)];
}

const std::vector<EntityId>& NegativeSampler::members(TypeId t) const {
  const auto it = tables_.find(t);
  if (it == tables_.end()) throw InputError("sampler: unknown type " + std::to_string(t));
  return it->second.members;
}

std::vector<EntityId> NegativeSampler::sample(TypeId t, int k, std::mt19937_64& rng) const {
  const auto it = tables_.find(t);
  if (it == tables_.end()) throw InputError("sampler: unknown type " + std::to_string(t));
  std::vector<EntityId> out;
  out.reserve(static_cast<std::size_t>(std::max(k, 0)));
  for (int i = 0; i < k; ++i) out.push_back(it->second.members[it->second.dist(rng)]);
  return out;
}

std::vector<EntityId> sample_negatives(const NegativeSampler& sampler, TypeId type, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sampler.sample(type, k, rng);
}

namespace {

void check_relation(const KgEmbeddings& emb, RelationId r) {
  if (r < 0 || static_cast<std::size_t>(r) >= emb.num_relations()) throw InputError("unknown relation id");
}

}  // namespace

Matrix fused_projection(const KgEmbeddings& emb, RelationId r) {
  check_relation(emb, r);
  const auto d = emb.dim();
  Matrix stacked(d + 1, d);
  stacked.topRows(d) = emb.projection[static_cast<std::size_t>(r)];
  stacked.row(d) = emb.relation.row(r);
  return stacked * stacked.transpose();
}

double bilinear_direct(const RowVector& h, const RowVector& h_e, RelationId r, const KgEmbeddings& emb,
                       double sign) {
  check_relation(emb, r);
  const auto& m = emb.projection[static_cast<std::size_t>(r)];
  const RowVector lhs = h * m + sign * emb.relation.row(r);
  const RowVector rhs = h_e * m;
  return lhs.dot(rhs);
}

double bilinear_factored(const RowVector& h, const RowVector& h_e, RelationId r, const KgEmbeddings& emb,
                         double sign) {
  const Matrix mp = fused_projection(emb, r);
  const auto d = emb.dim();
  RowVector left(d + 1), right(d + 1);
  left << h, sign;
  right << h_e, 0.0;
  return left * mp * right.transpose();
}

double energy_cosine(const RowVector& h, const RowVector& h_e, RelationId r, const KgEmbeddings& emb,
                     double mu, double sign) {
  check_relation(emb, r);
  const auto& m = emb.projection[static_cast<std::size_t>(r)];
  const RowVector lhs = h * m + sign * emb.relation.row(r);
  const RowVector rhs = h_e * m;
  const double denom = lhs.norm() * rhs.norm();
  if (denom == 0.0) throw InputError("energy_cosine: zero-norm operand");
  return mu * lhs.dot(rhs) / denom;
}

double compatibility(const RowVector& h_mf, RelationId r, EntityId e, const KgEmbeddings& emb,
                     const NegativeSampler& sampler, double mu, Direction dir) {
  if (mu <= 0.0) throw InputError("compatibility: mu must be > 0");
  if (e < 0 || static_cast<std::size_t>(e) >= emb.num_entities()) throw InputError("unknown entity id");
  const RowVector h_e = emb.entity.row(e);
  const double ne = h_e.norm();
  if (ne == 0.0) throw InputError("compatibility: zero-norm entity embedding");
  const auto d = emb.dim();
  RowVector left(d + 1);
  left << h_mf, (dir == Direction::kOutgoing ? 1.0 : -1.0);
  const RowVector z = left * fused_projection(emb, r);
  const double nz = z.norm();
  if (nz == 0.0) throw InputError("compatibility: zero-norm mention projection");
  return mu * z.head(d).dot(h_e) / (nz * ne) - mu * sampler.log_probability(e);
}

MentionReadout::MentionReadout(const ModelConfig& cfg, ParameterSet& params, std::mt19937_64& rng) {
  pooler_ = SpanPooler(params, "readout.span_pool", cfg.d1, rng);
  w_sa_ = params.add("readout.W_sa", normal_init(cfg.d1, cfg.d2, 0.02, rng));
  ln_g_ = params.add("readout.ln.gain", Matrix::Ones(1, cfg.d2));
  ln_b_ = params.add("readout.ln.bias", Matrix::Zero(1, cfg.d2));
}

Tensor MentionReadout::pool(const Tensor& span_rows) const {
  return ag::layer_norm(ag::gelu(ag::matmul(pooler_.pool(span_rows).pooled, w_sa_)), ln_g_, ln_b_);
}

Tensor MentionReadout::target(const Matrix& embedding_rows) const {
  const Tensor rows = Tensor::constant(embedding_rows);
  const Tensor scores = ag::matmul(ag::tanh(ag::matmul(rows, pooler_.projection().detach())),
                                   pooler_.scorer().detach());
  const Tensor pooled = ag::matmul(ag::softmax_rows(ag::transpose(scores)), rows);
  return ag::layer_norm(ag::gelu(ag::matmul(pooled, w_sa_.detach())), ln_g_.detach(), ln_b_.detach());
}

Tensor mnem_scores(const Tensor& h_mf, const MnemTerm& term, const KgTensors& kg_tensors,
                   const NegativeSampler& sampler, double mu) {
  const auto r = static_cast<std::size_t>(term.relation);
  if (r >= kg_tensors.fused.size()) throw InputError("mnem: unknown relation id");
  const double sign = term.direction == Direction::kOutgoing ? 1.0 : -1.0;
  const Tensor left = ag::concat_cols(h_mf, Tensor::scalar(sign));
  const Tensor z = ag::l2_normalize_rows(ag::matmul(left, kg_tensors.fused[r]));  // 1 x (d2+1)

  std::vector<int> ids{term.positive};
  ids.insert(ids.end(), term.negatives.begin(), term.negatives.end());
  Matrix correction(1, static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    correction(0, static_cast<Eigen::Index>(i)) = -mu * sampler.log_probability(ids[i]);
  }
  const Tensor cand = ag::gather_rows(kg_tensors.entity, ids);
  for (Eigen::Index i = 0; i < cand.rows(); ++i) {
    if (cand.value().row(i).norm() == 0.0) throw InputError("mnem: zero-norm entity embedding");
  }
  const Tensor cand_aug = ag::concat_cols(ag::l2_normalize_rows(cand),
                                          Tensor::constant(Matrix::Zero(cand.rows(), 1)));
  const Tensor cosine = ag::matmul_transposed(z, cand_aug);
  return ag::add(ag::scale(cosine, mu), Tensor::constant(std::move(correction)));
}

Tensor mnem_loss(std::span<const MnemContext> contexts, const KgTensors& kg_tensors,
                 const NegativeSampler& sampler, double mu) {
  std::vector<Tensor> terms;
  for (const auto& ctx : contexts) {
    for (const auto& term : ctx.terms) {
      if (!sampler.has_type(sampler.type_of(term.positive))) {
        throw InputError("mnem: sampler has no table for the positive's type");
      }
      const Tensor scores = mnem_scores(ctx.h_mf, term, kg_tensors, sampler, mu);
      const int target = 0;
      terms.push_back(ag::cross_entropy_rows(scores, std::span<const int>(&target, 1)));
    }
  }
  if (terms.empty()) return Tensor::scalar(0.0);
  return ag::scale(ag::sum(ag::concat_rows(terms)), 1.0 / static_cast<double>(terms.size()));
}

Tensor mmem_loss(std::span<const MmemPair> pairs, std::size_t batch_size) {
  if (batch_size == 0) throw InputError("mmem: batch size must be positive");
  if (pairs.empty()) return Tensor::scalar(0.0);
  std::vector<Tensor> errs;
  for (const auto& p : pairs) {
    if (!p.target.defined()) throw InputError("mmem: masked mention without target");
    errs.push_back(ag::squared_norm(ag::sub(p.prediction, p.target)));
  }
  return ag::scale(ag::sum(ag::concat_rows(errs)), 1.0 / static_cast<double>(batch_size));
}

LexLoss lex_loss(const Tensor& mlm_logits, std::span<const int> mlm_targets, std::span<const Tensor> sop_logits,
                 std::span<const int> sop_labels) {
  if (sop_logits.size() != sop_labels.size()) throw InputError("lex_loss: one SOP label per logit required");
  LexLoss out;
  std::size_t masked = 0;
  for (int t : mlm_targets) masked += t >= 0 ? 1 : 0;
  if (masked == 0 || !mlm_logits.defined()) {
    out.mlm = Tensor::scalar(0.0);
  } else {
    out.mlm = ag::scale(ag::cross_entropy_rows(mlm_logits, mlm_targets), 1.0 / static_cast<double>(masked));
  }
  if (sop_logits.empty()) {
    out.sop = Tensor::scalar(0.0);
  } else {
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < sop_logits.size(); ++i) {
      parts.push_back(ag::bce_with_logits(sop_logits[i], static_cast<double>(sop_labels[i])));
    }
    out.sop = ag::scale(ag::sum(ag::concat_rows(parts)), 1.0 / static_cast<double>(parts.size()));
  }
  out.total = ag::add(out.mlm, out.sop);
  return out;
}

Tensor total_loss(const Tensor& lex, const Tensor& mnem, const Tensor& mmem, double lambda1, double lambda2) {
  Tensor total = lex;
  if (lambda1 != 0.0) total = ag::add(total, ag::scale(mnem, lambda1));
  if (lambda2 != 0.0) total = ag::add(total, ag::scale(mmem, lambda2));
  return total;
}

}  // namespace knowfuse
