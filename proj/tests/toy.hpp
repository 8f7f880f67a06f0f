#pragma once

// Small end-to-end fixtures shared by the model tests and the acceptance runner.

#include "knowfuse/batch.hpp"
#include "knowfuse/model.hpp"
#include "knowfuse/synthetic.hpp"
#include "knowfuse/trainer.hpp"
#include "knowfuse/transr.hpp"

#include <optional>
#include <random>
#include <vector>

namespace testing {

struct Toy {
  knowfuse::SyntheticWorld world;
  std::vector<knowfuse::Document> docs;
  knowfuse::FrequencyTable freq;
  knowfuse::KgEmbeddings emb;
  knowfuse::ModelConfig cfg;

  knowfuse::PretrainData data() const { return {&world.kg, &world.vocab, &freq, docs}; }
};

inline Toy make_toy(const knowfuse::SyntheticOptions& so, const knowfuse::ModelConfig& cfg, int transr_epochs,
                    std::uint64_t seed) {
  using namespace knowfuse;
  Toy t{make_synthetic_world(so), {}, {}, {}, cfg};
  const auto matcher = make_mention_matcher(t.world.kg, t.world.vocab);
  std::vector<std::vector<int>> pieces;
  for (const auto& text : t.world.corpus) {
    t.docs.push_back(prepare_document(text, t.world.vocab, matcher));
    pieces.push_back(t.docs.back().pieces);
  }
  t.freq = count_mention_frequencies(pieces, matcher, t.world.kg);
  TransROptions to;
  to.epochs = transr_epochs;
  t.emb = train_transr(t.world.kg, cfg.d2, to, seed).embeddings;
  t.cfg.vocab_size = static_cast<int>(t.world.vocab.size());
  t.cfg.seed = seed;
  return t;
}

// Desk configuration on the default synthetic world.
inline Toy desk_toy(int documents, std::uint64_t seed, int transr_epochs = 50) {
  knowfuse::SyntheticOptions so;
  so.num_documents = documents;
  so.seed = seed;
  return make_toy(so, knowfuse::ModelConfig::desk_defaults(), transr_epochs, seed);
}

// Toy configuration (d1 16, d2 8, two layers) with every weight perturbed so that no gradient is
// structurally small, a trainable KG and a two-document batch that exercises every loss term.
struct GradientFixture {
  Toy toy;
  std::optional<knowfuse::KnowledgeModel> model;
  std::optional<knowfuse::NegativeSampler> sampler;
  knowfuse::PretrainBatch batch;
  std::vector<knowfuse::Matrix> target_cache;

  static Toy build(std::uint64_t seed) {
    knowfuse::ModelConfig cfg = knowfuse::ModelConfig::desk_defaults();
    cfg.d1 = 16;
    cfg.d2 = 8;
    cfg.top_k = 3;
    cfg.k_neg = 3;
    cfg.max_len = 24;
    cfg.train_kg_embeddings = true;
    knowfuse::SyntheticOptions so;
    so.num_documents = 30;
    so.seed = seed;
    return make_toy(so, cfg, 5, seed);
  }

  explicit GradientFixture(std::uint64_t seed = 5) : toy(build(seed)) {
    using namespace knowfuse;
    const ModelConfig& cfg = toy.cfg;
    model.emplace(toy.cfg, &toy.emb);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    for (const auto& [name, p] : model->params().items()) {
      Tensor t = p;
      for (Eigen::Index i = 0; i < t.value().size(); ++i) t.mutable_value().data()[i] += noise(rng);
    }
    Matrix table(toy.cfg.vocab_size, toy.cfg.d1);
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = noise(rng);
    model->set_target_embeddings(table);
    sampler.emplace(toy.world.kg, toy.freq);
    NeighborRecall recall(toy.world.kg, toy.freq, PeprOptions{}, cfg.top_k);
    BatchOptions bo;
    bo.max_len = cfg.max_len;
    bo.k_neg = cfg.k_neg;
    bo.mention_mask_prob = 0.5;
    // First seed whose batch carries MLM targets, a masked mention and MNeM terms.
    for (std::uint64_t s = seed;; ++s) {
      batch = build_pretrain_batch(std::span(toy.docs).subspan(0, 2), toy.world.kg, recall, &*sampler,
                                   toy.world.vocab, bo, s);
      bool masked = false, mnem = false;
      for (const auto& ex : batch.examples) {
        for (const auto& m : ex.mentions) {
          masked |= m.masked;
          mnem |= !m.mnem.empty();
        }
      }
      if (masked && mnem && batch.examples.size() == 2) break;
    }
  }

  knowfuse::LossBreakdown loss() {
    knowfuse::LossSettings ls;
    ls.lambda1 = toy.cfg.lambda1;
    ls.lambda2 = toy.cfg.lambda2;
    ls.target_cache = &target_cache;
    return model->compute_loss(batch, toy.world.kg, &*sampler, ls, knowfuse::ForwardContext{});
  }
};

}  // namespace testing
