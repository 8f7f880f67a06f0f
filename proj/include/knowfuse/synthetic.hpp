#pragma once

#include "knowfuse/kg.hpp"
#include "knowfuse/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace knowfuse {

// Knobs for the toy world used by tests, acceptance runs and the `synth` command.
struct SyntheticOptions {
  int num_types = 4;
  int entities_per_type = 24;
  int synonym_pairs_per_type = 4;  // planted equivalence pairs sharing their neighborhood
  int num_relations = 4;           // besides "equivalence"
  int neighbors_per_entity = 4;    // outgoing edges per base entity
  double copy_edge_prob = 1.0;     // chance that a synonym copy inherits each edge of its base
  int num_documents = 1000;
  int mentions_per_document = 4;
  int filler_per_mention = 3;      // context syllables between mentions
  std::uint64_t seed = 7;
};

struct SyntheticWorld {
  KnowledgeGraph kg;
  Vocab vocab;
  std::vector<std::string> corpus;  // one document per entry
  std::vector<std::pair<EntityId, EntityId>> synonyms;
};

// 500-token vocabulary: five specials plus three-letter syllables.
Vocab syllable_vocab();

SyntheticWorld make_synthetic_world(const SyntheticOptions& opts);

// triples.tsv, types.tsv, vocab.txt and corpus.jsonl ({"text": ...} per line).
void write_synthetic_world(const SyntheticWorld& world, const std::filesystem::path& dir);

}  // namespace knowfuse
