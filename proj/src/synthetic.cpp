#include "knowfuse/synthetic.hpp"

#include "knowfuse/binary_io.hpp"
#include "knowfuse/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

namespace knowfuse {

namespace {

constexpr std::string_view kOnsets = "bcdfghjklmnpqrstvwxz";
constexpr std::string_view kVowels = "aeiou";
constexpr std::string_view kCodas = "lmnrs";
constexpr std::size_t kOrdinary = 495;

std::vector<std::string> syllables() {
  std::vector<std::string> out;
  for (char c : kOnsets) {
    for (char v : kVowels) {
      for (char k : kCodas) {
        if (out.size() < kOrdinary) out.push_back(std::string{c, v, k});
      }
    }
  }
  return out;
}

const char* kTypeNames[] = {"disease", "symptom", "drug", "exam", "organ", "gene"};

}  // namespace

Vocab syllable_vocab() {
  std::vector<std::string> tokens{std::string(Vocab::kPad), std::string(Vocab::kCls), std::string(Vocab::kSep),
                                  std::string(Vocab::kMask), std::string(Vocab::kUnk)};
  for (auto& s : syllables()) tokens.push_back(std::move(s));
  return Vocab(std::move(tokens));
}

SyntheticWorld make_synthetic_world(const SyntheticOptions& opts) {
  if (opts.num_types < 1 || opts.entities_per_type < 2 || opts.num_relations < 1) {
    throw InputError("synthetic: need at least one type, two entities per type and one relation");
  }
  if (opts.synonym_pairs_per_type * 2 > opts.entities_per_type) {
    throw InputError("synthetic: too many synonym pairs for the entity count");
  }
  if (opts.num_types > 40) throw InputError("synthetic: at most 40 types");
  std::mt19937_64 rng(opts.seed);
  const auto syl = syllables();

  // Syllables 0..num_types-1 prefix each type's surfaces; the next block builds surface
  // bodies and the tail of the list is reserved for filler text.
  const std::size_t body_begin = static_cast<std::size_t>(opts.num_types);
  const std::size_t filler_begin = 300;
  std::uniform_int_distribution<std::size_t> body(body_begin, filler_begin - 1);
  std::uniform_int_distribution<std::size_t> filler(filler_begin, syl.size() - 1);

  struct Ent {
    std::string surface;
    int type;
  };
  std::vector<Ent> ents;
  std::set<std::string> used;
  for (int t = 0; t < opts.num_types; ++t) {
    for (int i = 0; i < opts.entities_per_type; ++i) {
      std::string s;
      do {
        const int extra = 1 + static_cast<int>(rng() % 2);
        s = syl[static_cast<std::size_t>(t)];
        for (int k = 0; k < extra; ++k) s += syl[body(rng)];
      } while (!used.insert(s).second);
      ents.push_back({s, t});
    }
  }
  auto type_name = [](int t) {
    std::string n = kTypeNames[t % 6];
    return t < 6 ? n : n + "_" + std::to_string(t / 6);
  };

  // Within each type the first 2 * pairs entities form (base, copy) pairs.
  struct Edge {
    int head, rel, tail;
  };
  std::vector<Edge> edges;
  std::vector<std::pair<int, int>> pairs;
  const int per = opts.entities_per_type;
  auto is_copy = [&](int e) {
    const int local = e % per;
    return local < 2 * opts.synonym_pairs_per_type && local % 2 == 1;
  };
  const int n_ent = static_cast<int>(ents.size());
  std::uniform_int_distribution<int> any_entity(0, n_ent - 1);
  std::uniform_int_distribution<int> any_rel(0, opts.num_relations - 1);
  for (int e = 0; e < n_ent; ++e) {
    if (is_copy(e)) continue;
    std::set<int> chosen;
    for (int k = 0; k < opts.neighbors_per_entity; ++k) {
      int tail = any_entity(rng);
      for (int tries = 0; (tail == e || is_copy(tail) || chosen.contains(tail)) && tries < 100; ++tries) {
        tail = any_entity(rng);
      }
      if (tail == e || is_copy(tail) || chosen.contains(tail)) continue;
      chosen.insert(tail);
      edges.push_back({e, any_rel(rng), tail});
    }
  }
  for (int t = 0; t < opts.num_types; ++t) {
    for (int p = 0; p < opts.synonym_pairs_per_type; ++p) {
      pairs.emplace_back(t * per + 2 * p, t * per + 2 * p + 1);
    }
  }
  // Copies inherit every edge of their base, so the pair shares its whole neighborhood.
  const std::size_t base_edges = edges.size();
  std::bernoulli_distribution inherit(std::clamp(opts.copy_edge_prob, 0.0, 1.0));
  for (const auto& [base, copy] : pairs) {
    for (std::size_t i = 0; i < base_edges; ++i) {
      const Edge ed = edges[i];
      if (ed.head == base && inherit(rng)) edges.push_back({copy, ed.rel, ed.tail});
      if (ed.tail == base && inherit(rng)) edges.push_back({ed.head, ed.rel, copy});
    }
  }

  std::ostringstream types_tsv, triples_tsv;
  for (const auto& en : ents) types_tsv << en.surface << '\t' << type_name(en.type) << '\n';
  for (const auto& [a, b] : pairs) triples_tsv << ents[a].surface << "\tequivalence\t" << ents[b].surface << '\n';
  for (const auto& ed : edges) {
    triples_tsv << ents[ed.head].surface << "\trel_" << ed.rel << '\t' << ents[ed.tail].surface << '\n';
  }

  SyntheticWorld world{.kg = {}, .vocab = syllable_vocab(), .corpus = {}, .synonyms = {}};
  std::istringstream tri(triples_tsv.str()), typ(types_tsv.str());
  world.kg = load_kg(tri, typ);
  for (const auto& [a, b] : pairs) {
    world.synonyms.emplace_back(*world.kg.find_entity(ents[a].surface), *world.kg.find_entity(ents[b].surface));
  }

  // Each document is about one entity and mentions some of its neighbors.
  std::uniform_int_distribution<std::size_t> n_filler(1, static_cast<std::size_t>(std::max(1, opts.filler_per_mention)));
  for (int d = 0; d < opts.num_documents; ++d) {
    const EntityId topic = static_cast<EntityId>(any_entity(rng));
    std::vector<EntityId> nbrs;
    for (const auto& adj : world.kg.adjacency(topic)) {
      if (std::find(nbrs.begin(), nbrs.end(), adj.neighbor) == nbrs.end()) nbrs.push_back(adj.neighbor);
    }
    std::shuffle(nbrs.begin(), nbrs.end(), rng);
    if (static_cast<int>(nbrs.size()) > opts.mentions_per_document - 1) {
      nbrs.resize(static_cast<std::size_t>(std::max(0, opts.mentions_per_document - 1)));
    }
    std::vector<EntityId> order{topic};
    order.insert(order.end(), nbrs.begin(), nbrs.end());
    std::string doc;
    for (EntityId m : order) {
      const std::size_t nf = n_filler(rng);
      for (std::size_t k = 0; k < nf; ++k) doc += syl[filler(rng)] + ' ';
      doc += world.kg.entity(m).surface + ' ';
    }
    for (std::size_t k = 0, nf = n_filler(rng); k < nf; ++k) doc += syl[filler(rng)] + ' ';
    doc.pop_back();
    world.corpus.push_back(std::move(doc));
  }
  return world;
}

void write_synthetic_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream types, triples, vocab, corpus;
  for (const auto& e : world.kg.entities()) types << e.surface << '\t' << world.kg.type_name(e.type) << '\n';
  for (const auto& t : world.kg.triples()) {
    triples << world.kg.entity(t.head).surface << '\t' << world.kg.relation_name(t.relation) << '\t'
            << world.kg.entity(t.tail).surface << '\n';
  }
  world.vocab.save(vocab);
  for (const auto& d : world.corpus) corpus << nlohmann::json{{"text", d}}.dump() << '\n';
  io::write_text_file(dir / "types.tsv", types.str());
  io::write_text_file(dir / "triples.tsv", triples.str());
  io::write_text_file(dir / "vocab.txt", vocab.str());
  io::write_text_file(dir / "corpus.jsonl", corpus.str());
}

}  // namespace knowfuse
