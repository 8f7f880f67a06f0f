#include "knowfuse/batch.hpp"
#include "knowfuse/errors.hpp"
#include "knowfuse/objectives.hpp"
#include "knowfuse/synthetic.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace knowfuse;

namespace {

KgEmbeddings random_emb(int z, int nr, int d, std::mt19937_64& rng) {
  KgEmbeddings emb;
  emb.entity = testing::random_matrix(z, d, rng, 0.5);
  emb.relation = testing::random_matrix(nr, d, rng, 0.5);
  for (int r = 0; r < nr; ++r) emb.projection.push_back(testing::random_matrix(d, d, rng, 0.5));
  return emb;
}

}  // namespace

TEST_CASE("sampler: a one-entity type always returns that entity") {
  const auto kg = testing::kg_from_tsv("", "x\tdrug\ny\tdisease\nz\tdisease\n");
  const auto f = testing::frequencies(kg, {3, 1, 1}, 2);
  const NegativeSampler s(kg, f);
  const TypeId drug = kg.entity(0).type;
  CHECK(s.probability(0) == 1.0);
  CHECK(sample_negatives(s, drug, 5, 1) == std::vector<EntityId>(5, 0));
  CHECK_THROWS_AS(sample_negatives(s, 42, 1, 1), InputError);
}

TEST_CASE("sampler: t = 30 and 10 give Q = 0.75 without smoothing") {
  const auto kg = testing::kg_from_tsv("", "x\tt\ny\tt\n");
  const auto f = testing::frequencies(kg, {30, 10}, 5);
  const NegativeSampler plain(kg, f, 0.0);
  CHECK(plain.probability(0) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(plain.probability(1) == doctest::Approx(0.25).epsilon(1e-15));
  // Default add-one smoothing: 31 / 42.
  const NegativeSampler smoothed(kg, f);
  CHECK(smoothed.probability(0) == doctest::Approx(31.0 / 42.0).epsilon(1e-15));
  const auto zero = testing::frequencies(kg, {0, 4}, 1);
  CHECK_THROWS_AS(NegativeSampler(kg, zero, 0.0), InputError);
  CHECK(NegativeSampler(kg, zero).probability(0) > 0.0);
}

TEST_CASE("sampler: 100000 draws land within 1% of Q") {
  const auto kg = testing::kg_from_tsv("", "a\tt\nb\tt\nc\tt\nd\tt\ne\tu\n");
  const auto f = testing::frequencies(kg, {40, 7, 0, 19, 3}, 9);
  const NegativeSampler s(kg, f);
  const auto draws = sample_negatives(s, kg.entity(0).type, 100000, 12);
  std::map<EntityId, int> hist;
  for (EntityId e : draws) ++hist[e];
  double qsum = 0.0;
  for (EntityId e = 0; e < 4; ++e) {
    CHECK(std::abs(hist[e] / 100000.0 - s.probability(e)) < 0.01);
    qsum += s.probability(e);
  }
  CHECK(qsum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hist.count(4) == 0);
}

TEST_CASE("energy score is mu for parallel vectors and TransR distance is then zero") {
  std::mt19937_64 rng(3);
  auto emb = random_emb(2, 1, 5, rng);
  const double mu = ModelConfig::full_defaults().mu;
  CHECK(mu == 10.0);
  const RowVector h = testing::random_matrix(1, 5, rng);
  const Matrix& m = emb.projection[0];
  const RowVector lhs = h * m + emb.relation.row(0);
  // h_e M = c (h M + h_r) for c > 0.
  const RowVector h_e = 2.5 * lhs * m.inverse();
  CHECK(energy_cosine(h, h_e, 0, emb, mu) == doctest::Approx(mu).epsilon(1e-12));
  // Equal norms: c = 1 puts t M = h M + r, so the TransR score vanishes.
  emb.entity.row(0) = h;
  emb.entity.row(1) = lhs * m.inverse();
  CHECK(transr_score(emb, 0, 0, 1) < 1e-12);
}

TEST_CASE("compatibility: identity projection and zero relation reduce to mu with Q = 1") {
  KgEmbeddings emb;
  emb.entity = Matrix{{0.0, 0.0, 0.0}, {2.0, -1.0, 0.5}};
  emb.relation = Matrix::Zero(1, 3);
  emb.projection = {Matrix::Identity(3, 3)};
  const auto kg = testing::kg_from_tsv("", "h\tx\ne\ty\n");
  const NegativeSampler s(kg, testing::frequencies(kg, {0, 0}, 0));
  REQUIRE(s.probability(1) == 1.0);
  const RowVector h_mf = 0.3 * emb.entity.row(1);
  CHECK(compatibility(h_mf, 0, 1, emb, s, 10.0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK_THROWS_AS(compatibility(h_mf, 0, 0, emb, s, 10.0), InputError);
  CHECK_THROWS_AS(compatibility(h_mf, 0, 1, emb, s, 0.0), InputError);
}

TEST_CASE("compatibility: correction term is -mu log Q") {
  std::mt19937_64 rng(4);
  const auto emb = random_emb(3, 2, 4, rng);
  const auto kg = testing::kg_from_tsv("", "a\tt\nb\tt\nc\tt\n");
  const NegativeSampler s(kg, testing::frequencies(kg, {5, 2, 0}, 3));
  const RowVector h = testing::random_matrix(1, 4, rng);
  for (EntityId e = 0; e < 3; ++e) {
    // Scalar reconstruction: unit([h 1] M_P) . unit([h_e 0]).
    const Matrix mp = fused_projection(emb, 1);
    std::vector<double> z(5, 0.0);
    for (int j = 0; j < 5; ++j) {
      for (int i = 0; i < 4; ++i) z[j] += h(i) * mp(i, j);
      z[j] += mp(4, j);
    }
    double nz = 0, ne = 0, dot = 0;
    for (int j = 0; j < 5; ++j) nz += z[j] * z[j];
    for (int j = 0; j < 4; ++j) {
      ne += emb.entity(e, j) * emb.entity(e, j);
      dot += z[j] * emb.entity(e, j);
    }
    const double expect = 7.0 * dot / std::sqrt(nz * ne) - 7.0 * std::log(s.probability(e));
    CHECK(compatibility(h, 1, e, emb, s, 7.0) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("factored and direct bilinear forms agree on 1000 draws") {
  std::mt19937_64 rng(5);
  for (int d : {4, 16}) {
    const auto emb = random_emb(1, 3, d, rng);
    for (int i = 0; i < 500; ++i) {
      const RowVector h = testing::random_matrix(1, d, rng), he = testing::random_matrix(1, d, rng);
      const auto r = static_cast<RelationId>(rng() % 3);
      const double sign = i % 2 ? 1.0 : -1.0;
      CHECK(std::abs(bilinear_factored(h, he, r, emb, sign) - bilinear_direct(h, he, r, emb, sign)) < 1e-5);
    }
  }
}

namespace {

struct MnemWorld {
  KnowledgeGraph kg;
  KgEmbeddings emb;
  KgTensors kt;
  ParameterSet params;
};

MnemWorld mnem_world(bool trainable, std::uint64_t seed) {
  MnemWorld w;
  std::string types;
  for (int i = 0; i < 8; ++i) types += "e" + std::to_string(i) + "\tthing\n";
  w.kg = testing::kg_from_tsv("e0\tr0\te1\ne0\tr1\te2\ne3\tr0\te0\n", types);
  std::mt19937_64 rng(seed);
  w.emb = random_emb(8, 2, 6, rng);
  w.kt = KgTensors::from(w.emb, trainable, &w.params);
  return w;
}

// Full softmax over every entity using scalar arithmetic.
double exhaustive_oracle(const MnemWorld& w, const RowVector& h, const MnemTerm& t, const NegativeSampler& s, double mu) {
  std::vector<double> scores;
  for (EntityId e = 0; e < 8; ++e) {
    scores.push_back(compatibility(h, t.relation, e, w.emb, s, mu, t.direction));
  }
  double mx = scores[0];
  for (double x : scores) mx = std::max(mx, x);
  double z = 0.0;
  for (double x : scores) z += std::exp(x - mx);
  return -(scores[static_cast<std::size_t>(t.positive)] - mx - std::log(z));
}

}  // namespace

TEST_CASE("MNeM with no negatives is exactly zero") {
  auto w = mnem_world(false, 6);
  const NegativeSampler s(w.kg, testing::frequencies(w.kg, std::vector<std::int64_t>(8, 1), 1));
  std::mt19937_64 rng(7);
  MnemContext ctx{Tensor::constant(testing::random_matrix(1, 6, rng)), {{0, Direction::kOutgoing, 1, {}}}};
  CHECK(mnem_loss(std::span(&ctx, 1), w.kt, s, 10.0).item() == 0.0);
  CHECK(mnem_loss({}, w.kt, s, 10.0).item() == 0.0);
}

TEST_CASE("MNeM with every other entity as a negative is the full softmax") {
  auto w = mnem_world(false, 8);
  const NegativeSampler s(w.kg, testing::frequencies(w.kg, {9, 3, 0, 4, 1, 1, 6, 2}, 5));
  std::mt19937_64 rng(9);
  std::vector<MnemContext> ctxs;
  double expect = 0.0;
  int terms = 0;
  for (int c = 0; c < 3; ++c) {
    const RowVector h = testing::random_matrix(1, 6, rng);
    MnemContext ctx{Tensor::constant(h), {}};
    for (auto [rel, dir, pos] : {std::tuple{0, Direction::kOutgoing, 1}, std::tuple{1, Direction::kIncoming, 2}}) {
      MnemTerm t{rel, dir, pos, {}};
      for (EntityId e = 0; e < 8; ++e) {
        if (e != pos) t.negatives.push_back(e);
      }
      expect += exhaustive_oracle(w, h, t, s, 10.0);
      ++terms;
      ctx.terms.push_back(t);
    }
    ctxs.push_back(ctx);
  }
  const double got = mnem_loss(ctxs, w.kt, s, 10.0).item();
  CHECK(std::abs(got - expect / terms) < 1e-6);
  CHECK(got > 0.0);
}

TEST_CASE("MNeM scores use the incoming sign on h_r") {
  auto w = mnem_world(false, 10);
  const NegativeSampler s(w.kg, testing::frequencies(w.kg, std::vector<std::int64_t>(8, 2), 3));
  std::mt19937_64 rng(11);
  const RowVector h = testing::random_matrix(1, 6, rng);
  const MnemTerm out{1, Direction::kOutgoing, 2, {5}}, in{1, Direction::kIncoming, 2, {5}};
  const Tensor so = mnem_scores(Tensor::constant(h), out, w.kt, s, 10.0);
  const Tensor si = mnem_scores(Tensor::constant(h), in, w.kt, s, 10.0);
  CHECK(so.value()(0, 0) == doctest::Approx(compatibility(h, 1, 2, w.emb, s, 10.0, Direction::kOutgoing)).epsilon(1e-12));
  CHECK(si.value()(0, 1) == doctest::Approx(compatibility(h, 1, 5, w.emb, s, 10.0, Direction::kIncoming)).epsilon(1e-12));
  CHECK(so.value()(0, 0) != si.value()(0, 0));
}

TEST_CASE("MNeM gradients reach the mention vector and trainable KG tables") {
  auto w = mnem_world(true, 12);
  const NegativeSampler s(w.kg, testing::frequencies(w.kg, {1, 2, 3, 4, 5, 6, 7, 8}, 4));
  std::mt19937_64 rng(13);
  Tensor h = w.params.add("h_mf", testing::random_matrix(1, 6, rng));
  std::vector<MnemContext> ctx{{h, {{0, Direction::kOutgoing, 1, {3, 4, 6}}, {1, Direction::kIncoming, 2, {0, 7}}}}};
  auto loss = [&] {
    w.kt.refresh_fused();
    return mnem_loss(ctx, w.kt, s, 10.0);
  };
  const auto reports = testing::gradient_check(w.params, loss, [](const std::string&) { return true; });
  CHECK(reports.size() == 5);
  for (const auto& r : reports) {
    INFO(r.name);
    CHECK(r.rel_error < 1e-4);
  }
}

TEST_CASE("MMeM: zero at the target, 4.0 for an all-ones gap in d2 = 4") {
  const Tensor y = Tensor::constant(Matrix{{0.5, -1.0, 2.0, 0.0}});
  const std::vector<MmemPair> same{{y, y}};
  CHECK(mmem_loss(same, 1).item() == 0.0);
  const std::vector<MmemPair> gap{{Tensor::constant(Matrix{{1.5, 0.0, 3.0, 1.0}}), y}};
  CHECK(mmem_loss(gap, 1).item() == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(mmem_loss(gap, 2).item() == doctest::Approx(2.0).epsilon(1e-15));
  const std::vector<MmemPair> missing{{y, Tensor{}}};
  CHECK_THROWS_AS(mmem_loss(missing, 1), InputError);
  CHECK(ModelConfig::full_defaults().lambda2 == 4.0);
}

TEST_CASE("lex loss: uniform logits give ln V, confident correct ones approach zero") {
  const int v = 37;
  const Tensor uniform = Tensor::constant(Matrix::Constant(3, v, 0.25));
  const std::vector<int> targets{4, -1, 20};
  const auto lex = lex_loss(uniform, targets, {}, {});
  CHECK(lex.mlm.item() == doctest::Approx(std::log(37.0)).epsilon(1e-12));
  CHECK(lex.sop.item() == 0.0);

  Matrix sure = Matrix::Constant(3, v, -50.0);
  sure(0, 4) = 50.0;
  sure(2, 20) = 50.0;
  const Tensor sop_right = Tensor::constant(Matrix::Constant(1, 1, 60.0));
  const std::vector<Tensor> sops{sop_right};
  const std::vector<int> sop_labels{1};
  CHECK(lex_loss(Tensor::constant(sure), targets, sops, sop_labels).total.item() < 1e-20);

  const std::vector<int> none{-1, -1, -1};
  CHECK(lex_loss(uniform, none, {}, {}).mlm.item() == 0.0);
}

TEST_CASE("lex loss matches a loop cross-entropy on seeded logits") {
  std::mt19937_64 rng(14);
  const Matrix logits = testing::random_matrix(6, 11, rng, 3.0);
  const std::vector<int> targets{3, -1, 0, 10, -1, 7};
  const std::vector<Tensor> sops{Tensor::constant(Matrix{{0.7}}), Tensor::constant(Matrix{{-1.3}})};
  const std::vector<int> labels{0, 1};
  double ce = 0.0;
  int n = 0;
  for (int r = 0; r < 6; ++r) {
    if (targets[r] < 0) continue;
    double z = 0.0;
    for (int c = 0; c < 11; ++c) z += std::exp(logits(r, c));
    ce += std::log(z) - logits(r, targets[r]);
    ++n;
  }
  const double bce = (std::log(1.0 + std::exp(0.7)) + std::log(1.0 + std::exp(1.3))) / 2.0;
  const auto lex = lex_loss(Tensor::constant(logits), targets, sops, labels);
  CHECK(lex.mlm.item() == doctest::Approx(ce / n).epsilon(1e-12));
  CHECK(lex.sop.item() == doctest::Approx(bce).epsilon(1e-12));
  CHECK(lex.total.item() == doctest::Approx(ce / n + bce).epsilon(1e-12));
}

TEST_CASE("total loss weights") {
  const auto cfg = ModelConfig::full_defaults();
  CHECK(cfg.lambda1 == 2.0);
  CHECK(cfg.lambda2 == 4.0);
  const Tensor lex = Tensor::scalar(1.0), mnem = Tensor::scalar(0.5), mmem = Tensor::scalar(0.25);
  CHECK(total_loss(lex, mnem, mmem, cfg.lambda1, cfg.lambda2).item() == 3.0);
  CHECK(total_loss(lex, mnem, mmem, 0.0, 0.0).item() == 1.0);
}

// ---- batch construction ----

namespace {

struct Corpus {
  SyntheticWorld world;
  FrequencyTable freq;
  std::vector<Document> docs;
};

Corpus corpus(int n_docs) {
  SyntheticOptions o;
  o.num_documents = n_docs;
  Corpus c{make_synthetic_world(o), {}, {}};
  const auto matcher = make_mention_matcher(c.world.kg, c.world.vocab);
  std::vector<std::vector<int>> pieces;
  for (const auto& text : c.world.corpus) {
    c.docs.push_back(prepare_document(text, c.world.vocab, matcher));
    pieces.push_back(c.docs.back().pieces);
  }
  c.freq = count_mention_frequencies(pieces, matcher, c.world.kg);
  return c;
}

}  // namespace

TEST_CASE("batch: documents without mentions are MLM-only; short ones are skipped") {
  const Vocab v({"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]", "a", "b", "c", "d", "e", "f", "x", "y"});
  const auto kg = testing::kg_from_tsv("x\tr\ty\n");
  const auto matcher = make_mention_matcher(kg, v);
  const auto f = count_mention_frequencies({}, matcher, kg);
  NeighborRecall recall(kg, f, PeprOptions{}, 5);
  const NegativeSampler s(kg, f);
  std::vector<Document> docs{prepare_document("abcdef", v, matcher), prepare_document("ab", v, matcher)};
  REQUIRE(docs[0].pieces.size() == 6);
  BatchOptions o;
  const auto b = build_pretrain_batch(docs, kg, recall, &s, v, o, 1);
  REQUIRE(b.examples.size() == 1);
  CHECK(b.examples[0].mentions.empty());
  CHECK(std::count_if(b.examples[0].mlm_labels.begin(), b.examples[0].mlm_labels.end(), [](int l) { return l >= 0; }) == 1);
}

TEST_CASE("batch: swap probability 0 keeps every pair in order") {
  auto c = corpus(40);
  NeighborRecall recall(c.world.kg, c.freq, PeprOptions{}, 5);
  const NegativeSampler s(c.world.kg, c.freq);
  BatchOptions o;
  o.sop_swap_prob = 0.0;
  const auto b = build_pretrain_batch(c.docs, c.world.kg, recall, &s, c.world.vocab, o, 2);
  CHECK(b.examples.size() == 40);
  for (const auto& ex : b.examples) CHECK(ex.sop_label == 0);
}

TEST_CASE("batch: masking rules hold on the synthetic corpus") {
  auto c = corpus(80);
  NeighborRecall recall(c.world.kg, c.freq, PeprOptions{}, 5);
  const NegativeSampler s(c.world.kg, c.freq);
  const Vocab& v = c.world.vocab;
  const auto b = build_pretrain_batch(c.docs, c.world.kg, recall, &s, v, BatchOptions{}, 3);
  int swapped = 0, masked_mentions = 0, mentions = 0;
  for (const auto& ex : b.examples) {
    swapped += ex.sop_label;
    CHECK(ex.ids.front() == v.cls());
    CHECK(ex.ids.back() == v.sep());
    CHECK(ex.ids.size() <= 64);
    for (const auto& m : ex.mentions) {
      ++mentions;
      for (int p = m.span.start; p <= m.span.end; ++p) CHECK(ex.mlm_labels[static_cast<std::size_t>(p)] == -1);
      if (m.masked) {
        ++masked_mentions;
        for (int p = m.span.start; p <= m.span.end; ++p) CHECK(ex.ids[static_cast<std::size_t>(p)] == v.mask());
        CHECK(m.original_tokens.size() == static_cast<std::size_t>(m.span.end - m.span.start + 1));
      }
      CHECK(m.span.neighbors.size() <= 5);
      REQUIRE(m.mnem.size() == m.span.neighbors.size());
      for (const auto& t : m.mnem) {
        CHECK(t.negatives.size() == 10);
        for (EntityId n : t.negatives) {
          CHECK(n != t.positive);
          CHECK(c.world.kg.entity(n).type == c.world.kg.entity(t.positive).type);
        }
      }
    }
  }
  CHECK(swapped > 20);
  CHECK(swapped < 60);
  CHECK(mentions > 150);
  CHECK(masked_mentions > 10);
}

TEST_CASE("batch: same seed, same batch; golden mask positions") {
  auto c = corpus(12);
  NeighborRecall recall(c.world.kg, c.freq, PeprOptions{}, 5);
  const NegativeSampler s(c.world.kg, c.freq);
  const auto a = build_pretrain_batch(c.docs, c.world.kg, recall, &s, c.world.vocab, BatchOptions{}, 99);
  const auto b = build_pretrain_batch(c.docs, c.world.kg, recall, &s, c.world.vocab, BatchOptions{}, 99);
  CHECK(a == b);
  CHECK_FALSE(a == build_pretrain_batch(c.docs, c.world.kg, recall, &s, c.world.vocab, BatchOptions{}, 100));

  std::vector<std::vector<int>> mlm, mention_masks;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& ex = a.examples[i];
    mlm.emplace_back();
    for (std::size_t p = 0; p < ex.mlm_labels.size(); ++p) {
      if (ex.mlm_labels[p] >= 0) mlm.back().push_back(static_cast<int>(p));
    }
    mention_masks.emplace_back();
    for (const auto& m : ex.mentions) {
      if (m.masked) mention_masks.back().push_back(m.span.start);
    }
  }
  const std::vector<std::vector<int>> golden_mlm{{6, 23}, {12}, {5}, {10, 20}};
  const std::vector<std::vector<int>> golden_mentions{{}, {}, {18}, {}};
  CHECK(mlm == golden_mlm);
  CHECK(mention_masks == golden_mentions);
  std::vector<int> sop;
  for (const auto& ex : a.examples) sop.push_back(ex.sop_label);
  CHECK(sop == std::vector<int>{1, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1});
}

TEST_CASE("batch: k_neg > 0 without a sampler is an input error") {
  auto c = corpus(5);
  NeighborRecall recall(c.world.kg, c.freq, PeprOptions{}, 5);
  CHECK_THROWS_AS(build_pretrain_batch(c.docs, c.world.kg, recall, nullptr, c.world.vocab, BatchOptions{}, 1), InputError);
  BatchOptions none;
  none.k_neg = 0;
  CHECK_NOTHROW(build_pretrain_batch(c.docs, c.world.kg, recall, nullptr, c.world.vocab, none, 1));
}
