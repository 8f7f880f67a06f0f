#pragma once

#include "knowfuse/config.hpp"
#include "knowfuse/kg.hpp"
#include "knowfuse/nn.hpp"
#include "knowfuse/tokenizer.hpp"
#include "knowfuse/transr.hpp"

#include <span>
#include <vector>

namespace knowfuse {

// KG tables as autograd tensors. They are constants unless registered as trainable.
struct KgTensors {
  Tensor entity;                   // Z x d2
  Tensor relation;                 // |R| x d2
  std::vector<Tensor> projection;  // d2 x d2 per relation
  std::vector<Tensor> fused;       // M_P = [M_r; h_r][M_r; h_r]^T, (d2+1) x (d2+1)

  // Registers the tables under "kg.*" in params when trainable is set.
  static KgTensors from(const KgEmbeddings& emb, bool trainable, ParameterSet* params);
  // Recomputes every M_P from the current projection and relation tensors.
  void refresh_fused();
  int dim() const { return static_cast<int>(entity.cols()); }
};

struct NeighborInputs {
  Tensor embeddings;          // K x d2, rows of the entity table
  std::vector<TypeId> types;  // one per row
};

NeighborInputs gather_neighbors(const KgTensors& kg_tensors, const KnowledgeGraph& kg,
                                std::span<const Adjacent> neighbors);

struct TypeAttention {
  std::vector<TypeId> types;  // distinct types present, ascending
  Tensor weights;             // 1 x types.size(), sums to 1
};

struct NodeAttention {
  Tensor weights;    // 1 x K, sums to 1
  Tensor aggregate;  // 1 x d2
};

// Mention-neighbor hybrid attention followed by gated position infusion.
class KnowledgeInfusion {
 public:
  KnowledgeInfusion() = default;
  KnowledgeInfusion(const ModelConfig& cfg, ParameterSet& params, std::mt19937_64& rng);

  // LN(GELU(f_sp(span) W_be)), 1 x d2
  Tensor mention_transform(const Tensor& span_rows) const;
  TypeAttention type_attention(const Tensor& mention, const NeighborInputs& neighbors) const;
  NodeAttention node_attention_aggregate(const Tensor& mention, const NeighborInputs& neighbors,
                                         const TypeAttention& types) const;
  // New rows for the span tokens only.
  Tensor gated_position_infusion(const Tensor& span_rows, const Tensor& aggregate,
                                 const Tensor& mention) const;

  struct Trace {
    Tensor mention;
    TypeAttention types;
    NodeAttention nodes;
    Tensor span_out;
  };
  Trace infuse_mention(const Tensor& hidden, const MentionSpan& m, const KgTensors& kg_tensors,
                       const KnowledgeGraph& kg) const;

  // Applies every mention with a non-empty neighbor set; other rows are copied as-is.
  Tensor infuse(const Tensor& hidden, std::span<const MentionSpan> mentions, const KgTensors& kg_tensors,
                const KnowledgeGraph& kg) const;

  const SpanPooler& pooler() const { return pooler_; }

 private:
  int d2_ = 0;
  SpanPooler pooler_;
  Tensor w_be_, ln_m_g_, ln_m_b_;
  Tensor w_t_, w_tp_, w_a_;
  Tensor w_q_, w_k_, w_v_, b_v_, w_l1_, b_l1_, w_l2_, ln_n_g_, ln_n_b_;
  Tensor w_mf_, b_mf_, w_bp_, b_bp_, ln_p_g_, ln_p_b_;
  Tensor w_ug_, b_ug_, w_ex_, b_ex_;
};

}  // namespace knowfuse
