#include "knowfuse/eval_sim.hpp"

#include "knowfuse/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <random>
#include <sstream>

namespace knowfuse {

namespace {

std::vector<char32_t> code_points(std::string_view s) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = 1;
    char32_t cp = c;
    if (c >= 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else if (c >= 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if (c >= 0xC0) {
      len = 2;
      cp = c & 0x1F;
    }
    if (i + static_cast<std::size_t>(len) > s.size()) len = 1, cp = c;
    for (int k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

}  // namespace

double jaro_winkler(std::string_view sa, std::string_view sb) {
  const auto a = code_points(sa);
  const auto b = code_points(sb);
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  const std::size_t window = std::max(a.size(), b.size()) / 2 > 0 ? std::max(a.size(), b.size()) / 2 - 1 : 0;

  std::vector<bool> a_hit(a.size(), false), b_hit(b.size(), false);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t lo = i > window ? i - window : 0;
    const std::size_t hi = std::min(i + window + 1, b.size());
    for (std::size_t j = lo; j < hi; ++j) {
      if (!b_hit[j] && a[i] == b[j]) {
        a_hit[i] = b_hit[j] = true;
        ++matches;
        break;
      }
    }
  }
  if (matches == 0) return 0.0;

  std::size_t half_transpositions = 0;
  for (std::size_t i = 0, j = 0; i < a.size(); ++i) {
    if (!a_hit[i]) continue;
    while (!b_hit[j]) ++j;
    if (a[i] != b[j]) ++half_transpositions;
    ++j;
  }
  const double m = static_cast<double>(matches);
  const double t = static_cast<double>(half_transpositions) / 2.0;
  const double jaro = (m / static_cast<double>(a.size()) + m / static_cast<double>(b.size()) + (m - t) / m) / 3.0;

  std::size_t prefix = 0;
  while (prefix < 4 && prefix < a.size() && prefix < b.size() && a[prefix] == b[prefix]) ++prefix;
  return jaro + static_cast<double>(prefix) * 0.1 * (1.0 - jaro);
}

double jaccard(const std::set<EntityId>& a, const std::set<EntityId>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t common = 0;
  for (EntityId x : a) common += b.count(x);
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

std::set<EntityId> neighbor_entities(const KnowledgeGraph& kg, EntityId e, EntityId exclude) {
  std::set<EntityId> out;
  for (const auto& adj : kg.adjacency(e)) {
    if (adj.neighbor != e && adj.neighbor != exclude) out.insert(adj.neighbor);
  }
  return out;
}

SimilarityDatasets build_similarity_datasets(const KnowledgeGraph& kg, const FrequencyTable& freq,
                                             const SimilarityOptions& opts, std::uint64_t seed) {
  opts.validate();
  const auto rel = kg.find_relation(opts.equivalence_relation);
  if (!rel) throw InputError("no relation named '" + opts.equivalence_relation + "' in the graph");
  if (freq.counts.size() != kg.num_entities()) throw InputError("frequency table does not match graph");

  std::set<std::pair<EntityId, EntityId>> pairs;
  for (const auto& t : kg.triples()) {
    if (t.relation != *rel || t.head == t.tail) continue;
    pairs.emplace(std::min(t.head, t.tail), std::max(t.head, t.tail));
  }

  std::mt19937_64 rng(seed);
  auto make_sample = [&](EntityId query, EntityId positive) {
    SimilaritySample s{query, positive, {}, false};
    const auto& pos_surface = kg.entity(positive).surface;
    std::vector<EntityId> eligible;
    for (EntityId c : kg.type_index().at(kg.entity(positive).type)) {
      if (c == positive || c == query) continue;
      if (jaro_winkler(kg.entity(c).surface, pos_surface) > opts.jw_threshold) eligible.push_back(c);
    }
    const auto want = static_cast<std::size_t>(opts.num_negatives);
    if (eligible.size() > want) {
      std::shuffle(eligible.begin(), eligible.end(), rng);
      eligible.resize(want);
      std::sort(eligible.begin(), eligible.end());
    }
    s.exhausted = eligible.size() < want;
    s.negatives = std::move(eligible);
    return s;
  };

  SimilarityDatasets out;
  for (const auto& [a, b] : pairs) {
    const auto na = neighbor_entities(kg, a, b);
    const auto nb = neighbor_entities(kg, b, a);
    std::size_t common = 0;
    for (EntityId x : na) common += nb.count(x);
    const bool in_d2 = jaccard(na, nb) >= opts.jaccard_threshold && common >= static_cast<std::size_t>(opts.min_common);
    const bool in_d3 = freq.count(a) <= opts.low_freq_cap || freq.count(b) <= opts.low_freq_cap;
    for (const auto& [q, p] : {std::pair{a, b}, std::pair{b, a}}) {
      const SimilaritySample s = make_sample(q, p);
      out.d1.push_back(s);
      if (in_d2) out.d2.push_back(s);
      if (in_d3) out.d3.push_back(s);
    }
  }
  return out;
}

std::vector<EntityId> sample_entities(std::span<const SimilaritySample> samples) {
  std::set<EntityId> ids;
  for (const auto& s : samples) {
    ids.insert(s.query);
    ids.insert(s.positive);
    ids.insert(s.negatives.begin(), s.negatives.end());
  }
  return {ids.begin(), ids.end()};
}

std::vector<EntityId> missing_entities(std::span<const SimilaritySample> samples, const EntityVectors& vectors) {
  std::vector<EntityId> out;
  for (EntityId e : sample_entities(samples)) {
    if (!vectors.contains(e)) out.push_back(e);
  }
  return out;
}

double acc_at_1(std::span<const SimilaritySample> samples, const EntityVectors& vectors) {
  if (samples.empty()) return 0.0;
  auto unit = [&](EntityId e) -> RowVector {
    const auto it = vectors.find(e);
    if (it == vectors.end()) throw InputError("provider has no vector for entity " + std::to_string(e));
    const double n = it->second.norm();
    if (n == 0.0) throw InputError("provider returned a zero-norm vector for entity " + std::to_string(e));
    return it->second / n;
  };
  std::size_t hits = 0;
  for (const auto& s : samples) {
    const RowVector q = unit(s.query);
    const double pos = q.dot(unit(s.positive));
    bool best = true;
    for (EntityId n : s.negatives) {
      if (q.dot(unit(n)) >= pos) {
        best = false;
        break;
      }
    }
    hits += best ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

EntityVectors embed_entities_via_model(const KnowledgeModel& model, const KnowledgeGraph& kg, const Vocab& vocab,
                                       std::span<const EntityId> entities, NeighborRecall* recall) {
  const ForwardContext ctx{};
  EntityVectors out;
  for (EntityId e : entities) {
    const auto pieces = encode_pieces(kg.entity(e).surface, vocab);
    if (pieces.empty()) throw InputError("surface of entity " + std::to_string(e) + " tokenizes to nothing");
    if (static_cast<int>(pieces.size()) + 2 > model.config().max_len) {
      throw InputError("surface of entity " + std::to_string(e) + " exceeds max_len");
    }
    std::vector<int> ids{vocab.cls()};
    ids.insert(ids.end(), pieces.begin(), pieces.end());
    ids.push_back(vocab.sep());
    const std::vector<int> segments(ids.size(), 0);
    const int n = static_cast<int>(pieces.size());
    std::vector<MentionSpan> mentions;
    const bool infuse = recall != nullptr && model.has_kg();
    if (infuse) mentions.push_back({1, n, e, recall->recall(e)});
    const EncoderState state = model.encode(ids, segments, mentions, &kg, ctx, infuse);
    out.emplace(e, state.final().value().middleRows(1, n).colwise().mean());
  }
  return out;
}

void write_dataset_jsonl(std::ostream& out, std::span<const SimilaritySample> samples, const KnowledgeGraph& kg) {
  for (const auto& s : samples) {
    nlohmann::json negs = nlohmann::json::array();
    for (EntityId n : s.negatives) negs.push_back(kg.entity(n).surface);
    const nlohmann::json j = {{"query", kg.entity(s.query).surface},
                              {"positive", kg.entity(s.positive).surface},
                              {"negatives", negs}};
    out << j.dump() << '\n';
  }
}

std::vector<SimilaritySample> read_dataset_jsonl(std::istream& in, const KnowledgeGraph& kg) {
  std::vector<SimilaritySample> out;
  std::string line;
  int line_no = 0;
  auto lookup = [&](const std::string& surface) {
    const auto id = kg.find_entity(surface);
    if (!id) throw InputError("dataset line " + std::to_string(line_no) + ": unknown entity '" + surface + "'");
    return *id;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SimilaritySample s;
      s.query = lookup(j.at("query").get<std::string>());
      s.positive = lookup(j.at("positive").get<std::string>());
      for (const auto& n : j.at("negatives")) s.negatives.push_back(lookup(n.get<std::string>()));
      std::sort(s.negatives.begin(), s.negatives.end());
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

EntityVectors read_vector_tsv(std::istream& in, const KnowledgeGraph& kg) {
  EntityVectors out;
  std::string line;
  int line_no = 0;
  Eigen::Index dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InputError("vector file line " + std::to_string(line_no) + ": missing tab");
    const auto id = kg.find_entity(line.substr(0, tab));
    if (!id) continue;
    std::vector<double> values;
    std::stringstream ss(line.substr(tab + 1));
    std::string field;
    while (std::getline(ss, field, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw InputError("vector file line " + std::to_string(line_no) + ": bad number '" + field + "'");
      }
    }
    if (values.empty()) throw InputError("vector file line " + std::to_string(line_no) + ": empty vector");
    if (dim >= 0 && static_cast<Eigen::Index>(values.size()) != dim) {
      throw InputError("vector file line " + std::to_string(line_no) + ": dimension mismatch");
    }
    dim = static_cast<Eigen::Index>(values.size());
    out[*id] = Eigen::Map<const RowVector>(values.data(), dim);
  }
  return out;
}

void write_vector_tsv(std::ostream& out, const EntityVectors& vectors, const KnowledgeGraph& kg) {
  for (const auto& [e, v] : vectors) {
    out << kg.entity(e).surface << '\t';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (i > 0) out << ',';
      std::ostringstream cell;
      cell.precision(17);
      cell << v(i);
      out << cell.str();
    }
    out << '\n';
  }
}

}  // namespace knowfuse
