#pragma once

#include "knowfuse/batch.hpp"
#include "knowfuse/config.hpp"
#include "knowfuse/encoder.hpp"
#include "knowfuse/infusion.hpp"
#include "knowfuse/objectives.hpp"
#include "knowfuse/transr.hpp"

#include <filesystem>
#include <optional>
#include <span>

namespace knowfuse {

struct LossBreakdown {
  Tensor mlm, sop, lex, mnem, mmem, total;
  std::size_t mlm_positions = 0;
  std::size_t mnem_terms = 0;
  std::size_t mmem_mentions = 0;
};

struct LossSettings {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  bool infuse = true;
  bool mlm_only = false;  // drop SOP, MNeM and MMeM (embedding warmup)
  // When set, masked-mention targets are read from here if present and stored otherwise,
  // which keeps them fixed across repeated evaluations (finite differences).
  std::vector<Matrix>* target_cache = nullptr;
};

// Encoder with the knowledge infusion layer and every pretraining head.
class KnowledgeModel {
 public:
  // emb may be null only when neither infusion nor the KG objectives will be used.
  KnowledgeModel(const ModelConfig& cfg, const KgEmbeddings* emb);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const TransformerEncoder& encoder() const { return encoder_; }
  const KnowledgeInfusion& infusion() const { return infusion_; }
  const MentionReadout& readout() const { return readout_; }
  bool has_kg() const { return kg_tensors_.has_value(); }
  const KgTensors& kg_tensors() const;

  // Frozen token-embedding table that defines masked-mention targets.
  void freeze_target_embeddings();
  void set_target_embeddings(Matrix table);
  const std::optional<Matrix>& target_embeddings() const { return target_table_; }

  // Runs the encoder; infusion (when enabled) rewrites the injection layer output.
  EncoderState encode(std::span<const int> ids, std::span<const int> segments,
                      std::span<const MentionSpan> mentions, const KnowledgeGraph* kg, const ForwardContext& ctx,
                      bool infuse) const;

  LossBreakdown compute_loss(const PretrainBatch& batch, const KnowledgeGraph& kg, const NegativeSampler* sampler,
                             const LossSettings& settings, const ForwardContext& ctx);

  Tensor mlm_logits(const Tensor& hidden_rows) const;
  Tensor sop_logit(const Tensor& cls_row) const;

  void save(const std::filesystem::path& dir) const;
  // Restores parameters saved by save(); emb must match the saved configuration's needs.
  static KnowledgeModel load(const std::filesystem::path& dir, const KgEmbeddings* emb);

 private:
  ModelConfig cfg_;
  ParameterSet params_;
  TransformerEncoder encoder_;
  KnowledgeInfusion infusion_;
  MentionReadout readout_;
  Tensor mlm_w_, mlm_b_, mlm_ln_g_, mlm_ln_b_, mlm_decoder_bias_;
  Tensor sop_pool_w_, sop_pool_b_, sop_w_, sop_b_;
  std::optional<KgTensors> kg_tensors_;
  std::optional<Matrix> target_table_;
};

}  // namespace knowfuse
