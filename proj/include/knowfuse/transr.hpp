#pragma once

#include "knowfuse/autograd.hpp"
#include "knowfuse/config.hpp"
#include "knowfuse/kg.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace knowfuse {

// TransR tables: entity rows, relation rows and one d2 x d2 projection per relation.
struct KgEmbeddings {
  ag::Matrix entity;                    // Z x d2
  ag::Matrix relation;                  // |R| x d2
  std::vector<ag::Matrix> projection;   // |R| matrices, d2 x d2
  std::uint64_t seed = 0;

  int dim() const { return static_cast<int>(entity.cols()); }
  std::size_t num_entities() const { return static_cast<std::size_t>(entity.rows()); }
  std::size_t num_relations() const { return static_cast<std::size_t>(relation.rows()); }

  // Throws InvariantError if the tables disagree on d2 or hold non-finite values.
  void check() const;
};

// ||h M_r + r - t M_r||_2
double transr_score(const KgEmbeddings& emb, EntityId h, RelationId r, EntityId t);

struct TransRTraining {
  KgEmbeddings embeddings;
  std::vector<double> epoch_loss;  // mean margin loss per epoch
};

// Margin-ranking SGD with one filtered corrupted triple per positive.
TransRTraining train_transr(const KnowledgeGraph& kg, int d2, const TransROptions& opts,
                            std::uint64_t seed);
// Same, restricted to a subset of the graph's triples (used for held-out evaluation).
TransRTraining train_transr(const KnowledgeGraph& kg, std::span<const Triple> train_triples, int d2,
                            const TransROptions& opts, std::uint64_t seed);

// Tail prediction: fraction of queries whose true tail ranks within the top k after
// removing every other tail that forms a known triple with (h, r).
double filtered_hits_at_k(const KgEmbeddings& emb, const KnowledgeGraph& kg,
                          std::span<const Triple> queries, int k);

void save_embeddings(const KgEmbeddings& emb, const std::filesystem::path& dir);
KgEmbeddings load_embeddings(const std::filesystem::path& dir);

}  // namespace knowfuse
