#pragma once

#include "knowfuse/config.hpp"
#include "knowfuse/infusion.hpp"
#include "knowfuse/kg.hpp"
#include "knowfuse/nn.hpp"
#include "knowfuse/transr.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <vector>

namespace knowfuse {

// Q(e) = (t_e + s) / sum over e's type of (t + s), sampled per type.
class NegativeSampler {
 public:
  NegativeSampler(const KnowledgeGraph& kg, const FrequencyTable& freq, double smoothing = 1.0);

  double probability(EntityId e) const;
  double log_probability(EntityId e) const { return std::log(probability(e)); }
  bool has_type(TypeId t) const { return tables_.contains(t); }
  TypeId type_of(EntityId e) const;
  const std::vector<EntityId>& members(TypeId t) const;

  // i.i.d. draws from Q restricted to type t.
  std::vector<EntityId> sample(TypeId t, int k, std::mt19937_64& rng) const;

 private:
  struct Table {
    std::vector<EntityId> members;
    std::vector<double> probs;
    mutable std::discrete_distribution<std::size_t> dist;
  };
  std::map<TypeId, Table> tables_;
  std::vector<TypeId> entity_type_;
  std::vector<double> q_;
};

std::vector<EntityId> sample_negatives(const NegativeSampler& sampler, TypeId type, int k,
                                       std::uint64_t seed);

// ---- compatibility, plain arithmetic ----

// (h M_r + s h_r) . (h_e M_r) expanded directly; s = +1 for outgoing edges, -1 for incoming.
double bilinear_direct(const RowVector& h, const RowVector& h_e, RelationId r, const KgEmbeddings& emb,
                       double sign = 1.0);
// [h s] M_P [h_e 0]^T with M_P = [M_r; h_r][M_r; h_r]^T.
double bilinear_factored(const RowVector& h, const RowVector& h_e, RelationId r, const KgEmbeddings& emb,
                         double sign = 1.0);
Matrix fused_projection(const KgEmbeddings& emb, RelationId r);

// mu * cos(h M_r + h_r, h_e M_r): the uncorrected energy score.
double energy_cosine(const RowVector& h, const RowVector& h_e, RelationId r, const KgEmbeddings& emb,
                     double mu, double sign = 1.0);

// The sampled-softmax score: mu * <unit([h s] M_P), unit([h_e 0])> - mu log Q(e).
double compatibility(const RowVector& h_mf, RelationId r, EntityId e, const KgEmbeddings& emb,
                     const NegativeSampler& sampler, double mu, Direction dir = Direction::kOutgoing);

// ---- differentiable objectives ----

// h_mf = LN(GELU(f_sp(span) W_sa)), d2-dimensional.
class MentionReadout {
 public:
  MentionReadout() = default;
  MentionReadout(const ModelConfig& cfg, ParameterSet& params, std::mt19937_64& rng);

  Tensor pool(const Tensor& span_rows) const;
  // Same map over frozen embedding rows with every gradient path cut.
  Tensor target(const Matrix& embedding_rows) const;

  const SpanPooler& pooler() const { return pooler_; }
  Tensor w_sa() const { return w_sa_; }

 private:
  SpanPooler pooler_;
  Tensor w_sa_, ln_g_, ln_b_;
};

struct MnemTerm {
  RelationId relation = 0;
  Direction direction = Direction::kOutgoing;
  EntityId positive = 0;
  std::vector<EntityId> negatives;

  friend bool operator==(const MnemTerm&, const MnemTerm&) = default;
};

struct MnemContext {
  Tensor h_mf;  // 1 x d2
  std::vector<MnemTerm> terms;
};

// 1 x (1 + negatives) corrected scores, positive first.
Tensor mnem_scores(const Tensor& h_mf, const MnemTerm& term, const KgTensors& kg_tensors,
                   const NegativeSampler& sampler, double mu);

// Mean over neighbor terms of -log softmax(scores)[positive]; 0 when there are no terms.
Tensor mnem_loss(std::span<const MnemContext> contexts, const KgTensors& kg_tensors,
                 const NegativeSampler& sampler, double mu);

struct MmemPair {
  Tensor prediction;  // h_mf
  Tensor target;      // Y_m, constant
};

// Sum of squared L2 errors divided by the number of samples in the batch.
Tensor mmem_loss(std::span<const MmemPair> pairs, std::size_t batch_size);

struct LexLoss {
  Tensor mlm;  // mean token cross entropy over masked positions
  Tensor sop;  // mean binary cross entropy
  Tensor total;
};

LexLoss lex_loss(const Tensor& mlm_logits, std::span<const int> mlm_targets,
                 std::span<const Tensor> sop_logits, std::span<const int> sop_labels);

Tensor total_loss(const Tensor& lex, const Tensor& mnem, const Tensor& mmem, double lambda1, double lambda2);

}  // namespace knowfuse
