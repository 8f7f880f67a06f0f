#include "knowfuse/batch.hpp"

#include "knowfuse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace knowfuse {

Document prepare_document(std::string_view text, const Vocab& vocab, const MentionMatcher& matcher) {
  Document doc;
  doc.pieces = encode_pieces(text, vocab);
  for (const auto& m : matcher.find(doc.pieces)) doc.mentions.push_back({m.start, m.end, m.entity, {}});
  return doc;
}

namespace {

// Midpoint split that never cuts through a mention; returns 0 if no such split exists.
std::size_t split_point(const Document& doc, std::size_t len) {
  std::size_t mid = len / 2;
  for (const auto& m : doc.mentions) {
    const auto s = static_cast<std::size_t>(m.start);
    const auto e = static_cast<std::size_t>(m.end);
    if (s < mid && mid <= e) {
      if (e + 1 < len) {
        mid = e + 1;
      } else if (s > 0) {
        mid = s;
      } else {
        return 0;
      }
    }
  }
  return mid;
}

PretrainExample build_example(const Document& doc, const KnowledgeGraph& kg, NeighborRecall& recall,
                              const NegativeSampler* sampler, const Vocab& vocab, const BatchOptions& opts,
                              std::mt19937_64& rng) {
  const std::size_t len = std::min(doc.pieces.size(), static_cast<std::size_t>(opts.max_len - 3));
  Document body;
  body.pieces.assign(doc.pieces.begin(), doc.pieces.begin() + static_cast<std::ptrdiff_t>(len));
  for (const auto& m : doc.mentions) {
    if (static_cast<std::size_t>(m.end) < len) body.mentions.push_back(m);
  }
  const std::size_t mid = split_point(body, len);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool swap = mid > 0 && unit(rng) < opts.sop_swap_prob;

  PretrainExample ex;
  ex.sop_label = swap ? 1 : 0;
  // offset of each piece position inside the example sequence
  std::vector<int> where(len);
  auto append = [&](std::size_t from, std::size_t to, int segment) {
    for (std::size_t i = from; i < to; ++i) {
      where[i] = static_cast<int>(ex.ids.size());
      ex.ids.push_back(body.pieces[i]);
      ex.segments.push_back(segment);
    }
  };
  ex.ids.push_back(vocab.cls());
  ex.segments.push_back(0);
  if (mid == 0) {
    append(0, len, 0);
    ex.ids.push_back(vocab.sep());
    ex.segments.push_back(0);
  } else {
    const auto [first_from, first_to] = swap ? std::pair{mid, len} : std::pair{std::size_t{0}, mid};
    const auto [second_from, second_to] = swap ? std::pair{std::size_t{0}, mid} : std::pair{mid, len};
    append(first_from, first_to, 0);
    ex.ids.push_back(vocab.sep());
    ex.segments.push_back(0);
    append(second_from, second_to, 1);
  }
  ex.ids.push_back(vocab.sep());
  ex.segments.push_back(ex.segments.back());
  ex.mlm_labels.assign(ex.ids.size(), -1);

  std::vector<bool> in_mention(ex.ids.size(), false);
  for (const auto& m : body.mentions) {
    const int s = where[static_cast<std::size_t>(m.start)];
    const int e = where[static_cast<std::size_t>(m.end)];
    for (int p = s; p <= e; ++p) in_mention[static_cast<std::size_t>(p)] = true;

    // Entity hit ratio: mentions that miss are treated as unlinked.
    if (unit(rng) >= opts.hit_ratio) continue;
    BatchMention bm;
    bm.span = {s, e, m.entity, recall.recall(m.entity)};
    bm.masked = unit(rng) < opts.mention_mask_prob;
    if (bm.masked) {
      for (int p = s; p <= e; ++p) {
        bm.original_tokens.push_back(ex.ids[static_cast<std::size_t>(p)]);
        ex.ids[static_cast<std::size_t>(p)] = vocab.mask();
      }
    }
    for (const auto& nb : bm.span.neighbors) {
      MnemTerm term{nb.relation, nb.direction, nb.neighbor, {}};
      if (opts.k_neg > 0) {
        if (sampler == nullptr) throw InputError("build_pretrain_batch: k_neg > 0 needs a negative sampler");
        const TypeId type = kg.entity(nb.neighbor).type;
        if (!sampler->has_type(type)) throw InputError("build_pretrain_batch: sampler lacks neighbor type");
        if (sampler->members(type).size() > 1) {
          for (EntityId cand : sampler->sample(type, opts.k_neg, rng)) {
            // negatives equal to the positive are redrawn
            for (int attempt = 0; cand == nb.neighbor && attempt < 1000; ++attempt) {
              cand = sampler->sample(type, 1, rng).front();
            }
            if (cand != nb.neighbor) term.negatives.push_back(cand);
          }
        }
      }
      bm.mnem.push_back(std::move(term));
    }
    ex.mentions.push_back(std::move(bm));
  }

  // Masked LM over tokens outside every mention span, 80/10/10.
  std::vector<std::size_t> candidates;
  for (std::size_t p = 0; p < ex.ids.size(); ++p) {
    if (!in_mention[p] && !vocab.is_special(ex.ids[p])) candidates.push_back(p);
  }
  std::size_t n_mask = static_cast<std::size_t>(std::lround(opts.mlm_prob * static_cast<double>(candidates.size())));
  if (n_mask == 0 && opts.mlm_prob > 0.0 && !candidates.empty()) n_mask = 1;
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<int> ordinary;
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (!vocab.is_special(static_cast<int>(id))) ordinary.push_back(static_cast<int>(id));
  }
  std::uniform_int_distribution<std::size_t> pick(0, ordinary.size() - 1);
  for (std::size_t i = 0; i < n_mask; ++i) {
    const std::size_t p = candidates[i];
    ex.mlm_labels[p] = ex.ids[p];
    const double u = unit(rng);
    if (u < 0.8) {
      ex.ids[p] = vocab.mask();
    } else if (u < 0.9) {
      ex.ids[p] = ordinary[pick(rng)];
    }
  }
  return ex;
}

}  // namespace

PretrainBatch build_pretrain_batch(std::span<const Document> documents, const KnowledgeGraph& kg,
                                   NeighborRecall& recall, const NegativeSampler* sampler, const Vocab& vocab,
                                   const BatchOptions& opts, std::uint64_t seed) {
  if (opts.max_len < 7) throw InputError("build_pretrain_batch: max_len must be >= 7");
  std::mt19937_64 rng(seed);
  PretrainBatch batch;
  for (const auto& doc : documents) {
    if (doc.pieces.size() < 4) continue;
    batch.examples.push_back(build_example(doc, kg, recall, sampler, vocab, opts, rng));
  }
  return batch;
}

}  // namespace knowfuse
