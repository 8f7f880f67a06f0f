#include "knowfuse/errors.hpp"
#include "knowfuse/pepr.hpp"

#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numeric>
#include <set>

using namespace knowfuse;

namespace {

FrequencyTable zero_freq(const KnowledgeGraph& kg) {
  return testing::frequencies(kg, std::vector<std::int64_t>(kg.num_entities(), 0), 0);
}

}  // namespace

TEST_CASE("an isolated node keeps all mass after one iteration") {
  const auto kg = testing::kg_from_tsv("", "solo\tt\n");
  const auto r = pepr_scores(kg, zero_freq(kg), 0);
  REQUIRE(r.scores.size() == 1);
  CHECK(r.scores[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.iterations_run == 1);
  CHECK(r.converged);
}

TEST_CASE("start vector entry is t / T") {
  // Every entity is seen, so t / T already sums to one and normalization is a no-op.
  const auto kg = testing::kg_from_tsv("a\tr\tb\n");
  const auto f = testing::frequencies(kg, {50, 450}, 10);
  PeprOptions o;
  o.max_iters = 0;
  const auto r = pepr_scores(kg, f, 0, o);
  CHECK(r.scores[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(r.scores[1] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(r.iterations_run == 0);
}

TEST_CASE("unseen entities start at 1 / M before normalization") {
  const auto kg = testing::kg_from_tsv("a\tr\tb\nb\tr\tc\n");
  const auto f = testing::frequencies(kg, {2, 0, 2}, 4);
  PeprOptions o;
  o.max_iters = 0;
  const auto r = pepr_scores(kg, f, 0, o);
  // Raw entries 0.5, 0.25, 0.5.
  CHECK(r.scores[0] == doctest::Approx(0.4));
  CHECK(r.scores[1] == doctest::Approx(0.2));
  CHECK(r.scores[2] == doctest::Approx(0.4));
}

TEST_CASE("path a-b-c with the mention at a matches the dense oracle") {
  const auto kg = testing::kg_from_tsv("a\tr\tb\nb\tr\tc\n");
  const auto f = zero_freq(kg);
  PeprOptions o;
  o.max_iters = 1000;
  o.tol = 1e-14;
  const auto r = pepr_scores(kg, f, 0, o);
  const auto oracle = testing::dense_pepr(kg, f, 0);
  for (int i = 0; i < 3; ++i) CHECK(r.scores[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
  // Frozen oracle values; the fixed point is 1081/3700, 88/185, 859/3700.
  CHECK(oracle[0] == doctest::Approx(0.29216216216).epsilon(1e-10));
  CHECK(oracle[1] == doctest::Approx(0.47567567568).epsilon(1e-10));
  CHECK(oracle[2] == doctest::Approx(0.23216216216).epsilon(1e-10));
  CHECK(r.scores[0] == doctest::Approx(1081.0 / 3700.0).epsilon(1e-12));
  // The jump bias puts a ahead of c; the middle node still collects the most mass.
  CHECK(r.scores[0] > r.scores[2]);
  CHECK(r.scores[1] > r.scores[0]);
}

TEST_CASE("scores stay a probability vector on random graphs") {
  std::mt19937_64 rng(21);
  for (int g = 0; g < 20; ++g) {
    const int n = 3 + static_cast<int>(rng() % 25);
    std::string rows;
    const int edges = static_cast<int>(rng() % (2 * n));
    for (int i = 0; i < edges; ++i) {
      rows += "n" + std::to_string(rng() % n) + "\tr\tn" + std::to_string(rng() % n) + "\n";
    }
    std::string types;
    for (int i = 0; i < n; ++i) types += "n" + std::to_string(i) + "\tt\n";
    const auto kg = testing::kg_from_tsv(rows, types);
    std::vector<std::int64_t> counts(kg.num_entities());
    for (auto& c : counts) c = static_cast<std::int64_t>(rng() % 4);
    const auto f = testing::frequencies(kg, counts, 7);
    for (int it : {1, 5, 100}) {
      PeprOptions o;
      o.max_iters = it;
      o.tol = 0.0;
      const auto r = pepr_scores(kg, f, static_cast<EntityId>(rng() % kg.num_entities()), o);
      CHECK(std::accumulate(r.scores.begin(), r.scores.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
      for (double s : r.scores) CHECK(s >= 0.0);
    }
  }
}

TEST_CASE("uniform start and jump on a symmetric graph give textbook PageRank") {
  // With the mention weight equal to 1/Z the jump vector is uniform.
  const auto kg = testing::kg_from_tsv("a\tr\tb\nb\tr\tc\nc\tr\ta\nc\tr\td\n");
  const auto f = zero_freq(kg);
  PeprOptions o;
  o.max_iters = 1000;
  o.tol = 1e-14;
  const auto r = pepr_scores(kg, f, 0, o);
  const auto oracle = testing::dense_pepr(kg, f, 0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(r.scores[i] - oracle[i]) < 1e-12);
}

TEST_CASE("errors") {
  const auto empty = testing::kg_from_tsv("");
  CHECK_THROWS_AS(pepr_scores(empty, zero_freq(empty), 0), InputError);
  const auto kg = testing::kg_from_tsv("a\tr\tb\n");
  CHECK_THROWS_AS(pepr_scores(kg, zero_freq(kg), 2), InputError);
  const auto r = pepr_scores(kg, zero_freq(kg), 0);
  CHECK_THROWS_AS(top_k_neighbors(kg, zero_freq(kg), r, 5, 3), InputError);
  CHECK_THROWS_AS(top_k_neighbors(kg, zero_freq(kg), r, 0, 0), InputError);
}

TEST_CASE("K larger than the degree returns every neighbor") {
  const auto kg = testing::kg_from_tsv("c\tr\tx\nc\tq\ty\nz\tr\tc\n");
  const auto c = *kg.find_entity("c");
  const auto f = zero_freq(kg);
  const auto top = top_k_neighbors(kg, f, pepr_scores(kg, f, c), c, 10);
  CHECK(top.size() == 3);
  CHECK(top_k_neighbors(kg, f, pepr_scores(kg, f, c), c, 2).size() == 2);
}

TEST_CASE("parallel edges collapse to one entry with the lowest relation") {
  const auto kg = testing::kg_from_tsv("a\tr0\tb\nb\tr1\ta\na\tr2\tb\n");
  const auto f = zero_freq(kg);
  const auto top = top_k_neighbors(kg, f, pepr_scores(kg, f, 0), 0, 10);
  REQUIRE(top.size() == 1);
  CHECK(top[0].neighbor == 1);
  CHECK(top[0].relation == 0);
}

TEST_CASE("tied scores fall back to frequency then id") {
  // Star: the leaves are symmetric, so their scores tie.
  const auto kg = testing::kg_from_tsv("h\tr\tl0\nh\tr\tl1\nh\tr\tl2\nh\tr\tl3\n");
  const auto f = testing::frequencies(kg, {0, 1, 5, 5, 0}, 3);
  const auto top = top_k_neighbors(kg, f, pepr_scores(kg, f, 0), 0, 4);
  std::vector<EntityId> ids;
  for (const auto& a : top) ids.push_back(a.neighbor);
  CHECK(ids == std::vector<EntityId>{2, 3, 1, 4});
}

TEST_CASE("20-node random graph: ranking equals a sort of oracle scores") {
  std::mt19937_64 rng(33);
  for (int g = 0; g < 10; ++g) {
    std::string rows, types;
    for (int i = 0; i < 20; ++i) types += "v" + std::to_string(i) + "\tt\n";
    for (int i = 0; i < 45; ++i) {
      rows += "v" + std::to_string(rng() % 20) + "\tr" + std::to_string(rng() % 3) + "\tv" +
              std::to_string(rng() % 20) + "\n";
    }
    const auto kg = testing::kg_from_tsv(rows, types);
    std::vector<std::int64_t> counts(20);
    for (auto& c : counts) c = static_cast<std::int64_t>(rng() % 6);
    const auto f = testing::frequencies(kg, counts, 11);
    const auto e = static_cast<EntityId>(rng() % 20);
    PeprOptions o;
    o.max_iters = 1000;
    o.tol = 1e-14;
    const auto r = pepr_scores(kg, f, e, o);
    const auto oracle = testing::dense_pepr(kg, f, e);

    // Neighbor list from raw triples, lowest relation per neighbor.
    std::map<EntityId, RelationId> rel;
    for (const auto& t : kg.triples()) {
      for (auto [x, y] : {std::pair{t.head, t.tail}, std::pair{t.tail, t.head}}) {
        if (x != e || y == e) continue;
        auto it = rel.find(y);
        if (it == rel.end() || t.relation < it->second) rel[y] = t.relation;
      }
    }
    std::vector<EntityId> expect;
    for (const auto& [n, unused] : rel) expect.push_back(n);
    std::stable_sort(expect.begin(), expect.end(), [&](EntityId a, EntityId b) {
      const double sa = oracle[static_cast<std::size_t>(a)], sb = oracle[static_cast<std::size_t>(b)];
      if (std::abs(sa - sb) > 1e-9) return sa > sb;
      if (counts[static_cast<std::size_t>(a)] != counts[static_cast<std::size_t>(b)]) {
        return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
      }
      return a < b;
    });
    for (int k : {1, 3, 10}) {
      const auto top = top_k_neighbors(kg, f, r, e, k);
      REQUIRE(top.size() == std::min<std::size_t>(static_cast<std::size_t>(k), expect.size()));
      const auto nset = neighbor_set(kg, e);
      for (std::size_t i = 0; i < top.size(); ++i) {
        CHECK(top[i].neighbor == expect[i]);
        CHECK(top[i].relation == rel.at(top[i].neighbor));
        CHECK(std::find(nset.begin(), nset.end(), top[i]) != nset.end());
      }
      CHECK(top == top_k_neighbors(kg, f, r, e, k));
    }
  }
}

TEST_CASE("recall caches and skips isolated entities") {
  const auto kg = testing::kg_from_tsv("a\tr\tb\nb\tr\tc\n", "lone\tt\n");
  const auto f = zero_freq(kg);
  NeighborRecall recall(kg, f, PeprOptions{}, 10);
  CHECK(recall.recall(*kg.find_entity("lone")).empty());
  const auto& first = recall.recall(*kg.find_entity("b"));
  CHECK(first.size() == 2);
  CHECK(&first == &recall.recall(*kg.find_entity("b")));
  CHECK_THROWS_AS(NeighborRecall(kg, f, PeprOptions{}, 0), InputError);
}
