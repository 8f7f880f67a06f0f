#include "knowfuse/kg.hpp"

#include "knowfuse/binary_io.hpp"
#include "knowfuse/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace knowfuse {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

KnowledgeGraph KnowledgeGraph::build(std::vector<Entity> entities, std::vector<std::string> type_names,
                                     std::vector<std::string> relation_names,
                                     std::vector<Triple> triples) {
  KnowledgeGraph kg;
  if (type_names.empty()) type_names.push_back("untyped");
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto& e = entities[i];
    if (e.type < 0 || static_cast<std::size_t>(e.type) >= type_names.size()) {
      throw InputError("entity '" + e.surface + "' has unknown type id " + std::to_string(e.type));
    }
    const auto [it, inserted] = kg.by_surface_.emplace(e.surface, static_cast<EntityId>(i));
    if (!inserted) {
      throw InputError("duplicate surface form '" + e.surface + "' for entity ids " +
                       std::to_string(it->second) + " and " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < relation_names.size(); ++i) {
    if (!kg.by_relation_.emplace(relation_names[i], static_cast<RelationId>(i)).second) {
      throw InputError("duplicate relation name '" + relation_names[i] + "'");
    }
  }
  kg.entities_ = std::move(entities);
  kg.type_names_ = std::move(type_names);
  kg.relation_names_ = std::move(relation_names);
  kg.adjacency_.assign(kg.entities_.size(), {});
  for (const auto& t : triples) {
    if (!kg.valid_entity(t.head) || !kg.valid_entity(t.tail) || !kg.valid_relation(t.relation)) {
      throw InputError("triple (" + std::to_string(t.head) + ", " + std::to_string(t.relation) +
                       ", " + std::to_string(t.tail) + ") references unknown ids");
    }
    kg.adjacency_[static_cast<std::size_t>(t.head)].push_back({t.relation, t.tail, Direction::kOutgoing});
    kg.adjacency_[static_cast<std::size_t>(t.tail)].push_back({t.relation, t.head, Direction::kIncoming});
  }
  kg.triples_ = std::move(triples);
  kg.sorted_triples_ = kg.triples_;
  std::sort(kg.sorted_triples_.begin(), kg.sorted_triples_.end());
  for (std::size_t i = 0; i < kg.entities_.size(); ++i) {
    kg.type_index_[kg.entities_[i].type].push_back(static_cast<EntityId>(i));
  }
  return kg;
}

const Entity& KnowledgeGraph::entity(EntityId id) const {
  if (!valid_entity(id)) throw InputError("unknown entity id " + std::to_string(id));
  return entities_[static_cast<std::size_t>(id)];
}

const std::string& KnowledgeGraph::relation_name(RelationId id) const {
  if (!valid_relation(id)) throw InputError("unknown relation id " + std::to_string(id));
  return relation_names_[static_cast<std::size_t>(id)];
}

const std::string& KnowledgeGraph::type_name(TypeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= type_names_.size()) {
    throw InputError("unknown type id " + std::to_string(id));
  }
  return type_names_[static_cast<std::size_t>(id)];
}

const std::vector<Adjacent>& KnowledgeGraph::adjacency(EntityId id) const {
  if (!valid_entity(id)) throw InputError("unknown entity id " + std::to_string(id));
  return adjacency_[static_cast<std::size_t>(id)];
}

std::optional<EntityId> KnowledgeGraph::find_entity(std::string_view surface) const {
  const auto it = by_surface_.find(std::string(surface));
  if (it == by_surface_.end()) return std::nullopt;
  return it->second;
}

std::optional<RelationId> KnowledgeGraph::find_relation(std::string_view name) const {
  const auto it = by_relation_.find(std::string(name));
  if (it == by_relation_.end()) return std::nullopt;
  return it->second;
}

bool KnowledgeGraph::contains(const Triple& t) const {
  return std::binary_search(sorted_triples_.begin(), sorted_triples_.end(), t);
}

KnowledgeGraph load_kg(std::istream& triples_source, std::istream& types_source) {
  std::vector<Entity> entities;
  std::vector<std::string> type_names{"untyped"};
  std::unordered_map<std::string, TypeId> type_ids{{"untyped", kUntypedType}};
  std::unordered_map<std::string, EntityId> entity_ids;
  std::vector<std::string> relation_names;
  std::unordered_map<std::string, RelationId> relation_ids;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(types_source, line)) {
    ++lineno;
    line = strip_cr(std::move(line));
    if (line.empty() || line.front() == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 2 || f[0].empty() || f[1].empty()) {
      throw InputError("types line " + std::to_string(lineno) + ": expected entity<TAB>type");
    }
    auto [tit, new_type] = type_ids.emplace(f[1], static_cast<TypeId>(type_names.size()));
    if (new_type) type_names.push_back(f[1]);
    const auto id = static_cast<EntityId>(entities.size());
    const auto [eit, inserted] = entity_ids.emplace(f[0], id);
    if (!inserted) {
      throw InputError("types line " + std::to_string(lineno) + ": duplicate surface form '" + f[0] +
                       "' for entity ids " + std::to_string(eit->second) + " and " +
                       std::to_string(id));
    }
    entities.push_back({f[0], tit->second});
  }

  auto entity_for = [&](const std::string& surface) {
    const auto [it, inserted] = entity_ids.emplace(surface, static_cast<EntityId>(entities.size()));
    if (inserted) entities.push_back({surface, kUntypedType});
    return it->second;
  };

  std::vector<Triple> triples;
  lineno = 0;
  while (std::getline(triples_source, line)) {
    ++lineno;
    line = strip_cr(std::move(line));
    if (line.empty() || line.front() == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 3 || f[0].empty() || f[1].empty() || f[2].empty()) {
      throw InputError("triples line " + std::to_string(lineno) +
                       ": expected head<TAB>relation<TAB>tail");
    }
    const EntityId h = entity_for(f[0]);
    auto [rit, new_rel] = relation_ids.emplace(f[1], static_cast<RelationId>(relation_names.size()));
    if (new_rel) relation_names.push_back(f[1]);
    const EntityId t = entity_for(f[2]);
    triples.push_back({h, rit->second, t});
  }
  return KnowledgeGraph::build(std::move(entities), std::move(type_names), std::move(relation_names),
                               std::move(triples));
}

std::vector<Adjacent> neighbor_set(const KnowledgeGraph& kg, EntityId e) {
  auto out = kg.adjacency(e);
  std::sort(out.begin(), out.end(), [](const Adjacent& a, const Adjacent& b) {
    if (a.neighbor != b.neighbor) return a.neighbor < b.neighbor;
    if (a.relation != b.relation) return a.relation < b.relation;
    return a.direction < b.direction;
  });
  return out;
}

void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "knowfuse-kg/1";
  manifest["types"] = kg.type_names();
  manifest["relations"] = kg.relation_names();
  auto& ents = manifest["entities"] = nlohmann::json::array();
  for (std::size_t i = 0; i < kg.num_entities(); ++i) {
    ents.push_back({{"id", i}, {"surface", kg.entities()[i].surface}, {"type", kg.entities()[i].type}});
  }
  manifest["num_triples"] = kg.triples().size();
  manifest["edges"] = "edges.u32";
  io::write_text_file(dir / "kg.json", manifest.dump(1));

  std::vector<std::uint32_t> edges;
  edges.reserve(kg.triples().size() * 3);
  for (const auto& t : kg.triples()) {
    edges.push_back(static_cast<std::uint32_t>(t.head));
    edges.push_back(static_cast<std::uint32_t>(t.relation));
    edges.push_back(static_cast<std::uint32_t>(t.tail));
  }
  io::write_u32_blob(dir / "edges.u32", edges);
}

KnowledgeGraph load_kg_snapshot(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text_file(dir / "kg.json"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("kg manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "knowfuse-kg/1") throw InputError("kg manifest: unknown format");
  std::vector<Entity> entities;
  for (const auto& e : manifest.at("entities")) {
    if (e.at("id").get<std::size_t>() != entities.size()) throw InputError("kg manifest: ids not dense");
    entities.push_back({e.at("surface").get<std::string>(), e.at("type").get<TypeId>()});
  }
  const auto edges = io::read_u32_blob(dir / manifest.at("edges").get<std::string>());
  const auto n = manifest.at("num_triples").get<std::size_t>();
  if (edges.size() != 3 * n) throw InputError("kg edge list length does not match manifest");
  std::vector<Triple> triples(n);
  for (std::size_t i = 0; i < n; ++i) {
    triples[i] = {static_cast<EntityId>(edges[3 * i]), static_cast<RelationId>(edges[3 * i + 1]),
                  static_cast<EntityId>(edges[3 * i + 2])};
  }
  return KnowledgeGraph::build(std::move(entities), manifest.at("types").get<std::vector<std::string>>(),
                               manifest.at("relations").get<std::vector<std::string>>(),
                               std::move(triples));
}

MentionMatcher::MentionMatcher(const KnowledgeGraph& kg, const SurfaceEncoder& encode) {
  nodes_.emplace_back();
  surfaces_.resize(kg.num_entities());
  for (std::size_t e = 0; e < kg.num_entities(); ++e) {
    surfaces_[e] = encode(kg.entities()[e].surface);
    if (surfaces_[e].empty()) continue;
    int cur = 0;
    for (int tok : surfaces_[e]) {
      auto it = nodes_[static_cast<std::size_t>(cur)].children.find(tok);
      if (it == nodes_[static_cast<std::size_t>(cur)].children.end()) {
        const int next = static_cast<int>(nodes_.size());
        nodes_[static_cast<std::size_t>(cur)].children.emplace(tok, next);
        nodes_.emplace_back();
        cur = next;
      } else {
        cur = it->second;
      }
    }
    // Two surfaces with identical token sequences: the lower id wins.
    auto& term = nodes_[static_cast<std::size_t>(cur)].terminal;
    if (term < 0) term = static_cast<EntityId>(e);
  }
}

std::vector<MentionMatch> MentionMatcher::find(std::span<const int> tokens) const {
  std::vector<MentionMatch> out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    int cur = 0;
    EntityId best = -1;
    std::size_t best_end = 0;
    for (std::size_t j = i; j < tokens.size(); ++j) {
      const auto& children = nodes_[static_cast<std::size_t>(cur)].children;
      const auto it = children.find(tokens[j]);
      if (it == children.end()) break;
      cur = it->second;
      if (nodes_[static_cast<std::size_t>(cur)].terminal >= 0) {
        best = nodes_[static_cast<std::size_t>(cur)].terminal;
        best_end = j;
      }
    }
    if (best >= 0) {
      out.push_back({static_cast<int>(i), static_cast<int>(best_end), best});
      i = best_end + 1;
    } else {
      ++i;
    }
  }
  return out;
}

FrequencyTable count_mention_frequencies(std::span<const std::vector<int>> documents,
                                         const MentionMatcher& matcher, const KnowledgeGraph& kg) {
  FrequencyTable freq;
  freq.counts.assign(kg.num_entities(), 0);
  for (const auto& doc : documents) {
    for (const auto& m : matcher.find(doc)) ++freq.counts[static_cast<std::size_t>(m.entity)];
  }
  freq.sample_count = static_cast<std::int64_t>(documents.size());
  for (const auto& [type, members] : kg.type_index()) {
    std::int64_t s = 0;
    for (EntityId e : members) s += freq.counts[static_cast<std::size_t>(e)];
    freq.type_totals[type] = s;
    freq.total += s;
  }
  return freq;
}

}  // namespace knowfuse
