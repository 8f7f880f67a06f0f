#pragma once

#include "knowfuse/config.hpp"
#include "knowfuse/kg.hpp"
#include "knowfuse/model.hpp"
#include "knowfuse/pepr.hpp"
#include "knowfuse/tokenizer.hpp"

#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string_view>
#include <vector>

namespace knowfuse {

// Code-point Jaro-Winkler with prefix scale 0.1 and a prefix of at most 4.
double jaro_winkler(std::string_view a, std::string_view b);

// |A n B| / |A u B|, 0 for two empty sets.
double jaccard(const std::set<EntityId>& a, const std::set<EntityId>& b);

struct SimilaritySample {
  EntityId query = 0;
  EntityId positive = 0;
  std::vector<EntityId> negatives;  // ascending ids
  bool exhausted = false;           // fewer eligible negatives than requested

  friend bool operator==(const SimilaritySample&, const SimilaritySample&) = default;
};

struct SimilarityDatasets {
  std::vector<SimilaritySample> d1;  // every equivalence pair, both directions
  std::vector<SimilaritySample> d2;  // pairs with heavily shared neighborhoods
  std::vector<SimilaritySample> d3;  // pairs with at least one low-frequency side
};

// Distinct 1-hop neighbors of e in either direction, without `exclude`.
std::set<EntityId> neighbor_entities(const KnowledgeGraph& kg, EntityId e, EntityId exclude = -1);

// Throws InputError when the configured equivalence relation does not exist.
SimilarityDatasets build_similarity_datasets(const KnowledgeGraph& kg, const FrequencyTable& freq,
                                             const SimilarityOptions& opts, std::uint64_t seed);

using EntityVectors = std::map<EntityId, RowVector>;

// Entities referenced by the samples that the provider lacks, ascending.
std::vector<EntityId> missing_entities(std::span<const SimilaritySample> samples, const EntityVectors& vectors);

// Fraction of samples whose positive strictly beats every negative by cosine to the query.
double acc_at_1(std::span<const SimilaritySample> samples, const EntityVectors& vectors);

// Mean final-layer vector over the surface tokens of each entity, encoded as [CLS] surface [SEP].
// When recall is given and the model has KG tables, the surface is linked to its own entity and infused.
EntityVectors embed_entities_via_model(const KnowledgeModel& model, const KnowledgeGraph& kg, const Vocab& vocab,
                                       std::span<const EntityId> entities, NeighborRecall* recall);

std::vector<EntityId> sample_entities(std::span<const SimilaritySample> samples);

// {query, positive, negatives[]} by surface, one sample per line.
void write_dataset_jsonl(std::ostream& out, std::span<const SimilaritySample> samples, const KnowledgeGraph& kg);
std::vector<SimilaritySample> read_dataset_jsonl(std::istream& in, const KnowledgeGraph& kg);

// surface<TAB>comma-separated floats. Rows naming unknown surfaces are ignored.
EntityVectors read_vector_tsv(std::istream& in, const KnowledgeGraph& kg);
void write_vector_tsv(std::ostream& out, const EntityVectors& vectors, const KnowledgeGraph& kg);

}  // namespace knowfuse
