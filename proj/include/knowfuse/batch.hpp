#pragma once

#include "knowfuse/kg.hpp"
#include "knowfuse/objectives.hpp"
#include "knowfuse/pepr.hpp"
#include "knowfuse/tokenizer.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace knowfuse {

// A tokenized, mention-linked document. Positions index into pieces (no special tokens).
struct Document {
  std::vector<int> pieces;
  std::vector<MentionSpan> mentions;
};

Document prepare_document(std::string_view text, const Vocab& vocab, const MentionMatcher& matcher);

struct BatchMention {
  MentionSpan span;                  // positions in the example sequence, neighbors filled
  bool masked = false;               // whole span replaced by [MASK] for masked mention modeling
  std::vector<int> original_tokens;  // span tokens before masking
  std::vector<MnemTerm> mnem;        // one term per recalled neighbor

  friend bool operator==(const BatchMention&, const BatchMention&) = default;
};

struct PretrainExample {
  std::vector<int> ids;         // [CLS] A [SEP] B [SEP]
  std::vector<int> segments;
  std::vector<int> mlm_labels;  // original id at masked positions, -1 elsewhere
  int sop_label = 0;            // 1 when the halves were swapped
  std::vector<BatchMention> mentions;

  friend bool operator==(const PretrainExample&, const PretrainExample&) = default;
};

struct PretrainBatch {
  std::vector<PretrainExample> examples;

  friend bool operator==(const PretrainBatch&, const PretrainBatch&) = default;
};

struct BatchOptions {
  int max_len = 64;
  double mlm_prob = 0.15;
  double mention_mask_prob = 0.15;
  double sop_swap_prob = 0.5;
  double hit_ratio = 1.0;
  int k_neg = 10;
};

// Builds masked-LM, sentence-order, masked-mention and neighbor-modeling inputs.
// Documents shorter than 4 pieces are skipped. The sampler may be null when k_neg is 0.
PretrainBatch build_pretrain_batch(std::span<const Document> documents, const KnowledgeGraph& kg,
                                   NeighborRecall& recall, const NegativeSampler* sampler, const Vocab& vocab,
                                   const BatchOptions& opts, std::uint64_t seed);

}  // namespace knowfuse
