#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace knowfuse {

using EntityId = std::int32_t;
using RelationId = std::int32_t;
using TypeId = std::int32_t;

// Type id reserved for entities that appear only in triples.
inline constexpr TypeId kUntypedType = 0;

struct Entity {
  std::string surface;
  TypeId type = kUntypedType;
};

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

enum class Direction : std::uint8_t { kOutgoing = 0, kIncoming = 1 };

// One adjacency entry. kOutgoing means the owning entity is the triple head.
struct Adjacent {
  RelationId relation = 0;
  EntityId neighbor = 0;
  Direction direction = Direction::kOutgoing;

  friend bool operator==(const Adjacent&, const Adjacent&) = default;
};

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  // Validates ids and surface uniqueness, then builds adjacency and the type index.
  static KnowledgeGraph build(std::vector<Entity> entities, std::vector<std::string> type_names,
                              std::vector<std::string> relation_names, std::vector<Triple> triples);

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relation_names_.size(); }
  std::size_t num_types() const { return type_names_.size(); }

  const Entity& entity(EntityId id) const;
  const std::vector<Entity>& entities() const { return entities_; }
  const std::string& relation_name(RelationId id) const;
  const std::vector<std::string>& relation_names() const { return relation_names_; }
  const std::string& type_name(TypeId id) const;
  const std::vector<std::string>& type_names() const { return type_names_; }
  const std::vector<Triple>& triples() const { return triples_; }

  // Both directions of every triple, in triple order.
  const std::vector<Adjacent>& adjacency(EntityId id) const;
  const std::map<TypeId, std::vector<EntityId>>& type_index() const { return type_index_; }

  std::optional<EntityId> find_entity(std::string_view surface) const;
  std::optional<RelationId> find_relation(std::string_view name) const;
  bool contains(const Triple& t) const;
  bool valid_entity(EntityId id) const { return id >= 0 && static_cast<std::size_t>(id) < entities_.size(); }
  bool valid_relation(RelationId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < relation_names_.size();
  }

 private:
  std::vector<Entity> entities_;
  std::vector<std::string> type_names_;
  std::vector<std::string> relation_names_;
  std::vector<Triple> triples_;
  std::vector<std::vector<Adjacent>> adjacency_;
  std::map<TypeId, std::vector<EntityId>> type_index_;
  std::unordered_map<std::string, EntityId> by_surface_;
  std::unordered_map<std::string, RelationId> by_relation_;
  std::vector<Triple> sorted_triples_;
};

// Parses head<TAB>relation<TAB>tail rows and entity<TAB>type rows. Entities listed in the
// types source come first (in file order); entities seen only in triples get type 0.
// Blank lines and lines starting with '#' are skipped.
KnowledgeGraph load_kg(std::istream& triples_source, std::istream& types_source);

// Symmetrized neighbor list ordered by neighbor id, then relation id, then direction.
std::vector<Adjacent> neighbor_set(const KnowledgeGraph& kg, EntityId e);

// JSON manifest plus a little-endian u32 (head, relation, tail) edge list.
void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& dir);
KnowledgeGraph load_kg_snapshot(const std::filesystem::path& dir);

struct FrequencyTable {
  std::vector<std::int64_t> counts;       // t_e per entity
  std::int64_t total = 0;                 // T
  std::int64_t sample_count = 0;          // M, number of documents
  std::map<TypeId, std::int64_t> type_totals;  // C_tau

  std::int64_t count(EntityId e) const { return counts.at(static_cast<std::size_t>(e)); }
};

struct MentionMatch {
  int start = 0;  // first token, inclusive
  int end = 0;    // last token, inclusive
  EntityId entity = 0;

  friend bool operator==(const MentionMatch&, const MentionMatch&) = default;
};

// Token-level exact-match lexicon over entity surfaces. Matching is greedy
// left-to-right and picks the longest surface at each start position.
class MentionMatcher {
 public:
  using SurfaceEncoder = std::function<std::vector<int>(std::string_view)>;

  MentionMatcher(const KnowledgeGraph& kg, const SurfaceEncoder& encode);

  std::vector<MentionMatch> find(std::span<const int> tokens) const;
  // Token sequence registered for an entity (empty if its surface encoded to nothing).
  const std::vector<int>& surface_tokens(EntityId e) const { return surfaces_.at(static_cast<std::size_t>(e)); }

 private:
  struct TrieNode {
    std::map<int, int> children;
    EntityId terminal = -1;
  };
  std::vector<TrieNode> nodes_;
  std::vector<std::vector<int>> surfaces_;
};

FrequencyTable count_mention_frequencies(std::span<const std::vector<int>> documents,
                                         const MentionMatcher& matcher, const KnowledgeGraph& kg);

}  // namespace knowfuse
