#include "knowfuse/transr.hpp"

#include "knowfuse/binary_io.hpp"
#include "knowfuse/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace knowfuse {

using ag::Matrix;
using ag::RowVector;

void KgEmbeddings::check() const {
  const auto d = entity.cols();
  if (relation.cols() != d) throw InvariantError("relation table width differs from entity table");
  if (projection.size() != num_relations()) throw InvariantError("one projection per relation required");
  for (const auto& m : projection) {
    if (m.rows() != d || m.cols() != d) throw InvariantError("projection is not d2 x d2");
    if (!m.allFinite()) throw InvariantError("non-finite projection entry");
  }
  if (!entity.allFinite() || !relation.allFinite()) throw InvariantError("non-finite embedding entry");
}

namespace {

void check_ids(const KgEmbeddings& emb, EntityId h, RelationId r, EntityId t) {
  const auto z = static_cast<EntityId>(emb.num_entities());
  if (h < 0 || h >= z || t < 0 || t >= z) throw InputError("transr_score: unknown entity id");
  if (r < 0 || r >= static_cast<RelationId>(emb.num_relations())) {
    throw InputError("transr_score: unknown relation id");
  }
}

RowVector residual(const KgEmbeddings& emb, EntityId h, RelationId r, EntityId t) {
  const auto& m = emb.projection[static_cast<std::size_t>(r)];
  return (emb.entity.row(h) - emb.entity.row(t)) * m + emb.relation.row(r);
}

struct TripleGrad {
  RowVector head, tail, rel;
  Matrix proj;
};

// Gradient of ||(h - t) M + r|| with respect to every argument.
TripleGrad score_grad(const KgEmbeddings& emb, const Triple& tr) {
  const auto& m = emb.projection[static_cast<std::size_t>(tr.relation)];
  const RowVector diff = emb.entity.row(tr.head) - emb.entity.row(tr.tail);
  const RowVector e = diff * m + emb.relation.row(tr.relation);
  const double n = e.norm();
  const RowVector u = n > 0.0 ? RowVector(e / n) : RowVector(RowVector::Zero(e.size()));
  TripleGrad g;
  g.head = u * m.transpose();
  g.tail = -g.head;
  g.rel = u;
  g.proj = diff.transpose() * u;
  return g;
}

void clip_row_to_unit_ball(Matrix& m, Eigen::Index row) {
  const double n = m.row(row).norm();
  if (n > 1.0) m.row(row) /= n;
}

}  // namespace

double transr_score(const KgEmbeddings& emb, EntityId h, RelationId r, EntityId t) {
  check_ids(emb, h, r, t);
  return residual(emb, h, r, t).norm();
}

TransRTraining train_transr(const KnowledgeGraph& kg, int d2, const TransROptions& opts,
                            std::uint64_t seed) {
  return train_transr(kg, kg.triples(), d2, opts, seed);
}

TransRTraining train_transr(const KnowledgeGraph& kg, std::span<const Triple> train_triples, int d2,
                            const TransROptions& opts, std::uint64_t seed) {
  opts.validate();
  if (d2 < 1) throw InputError("train_transr: d2 must be >= 1");
  if (train_triples.empty()) throw InputError("train_transr: graph has no triples");
  const auto z = static_cast<Eigen::Index>(kg.num_entities());
  const auto nr = static_cast<Eigen::Index>(kg.num_relations());

  std::mt19937_64 rng(seed);
  const double bound = 6.0 / std::sqrt(static_cast<double>(d2));
  std::uniform_real_distribution<double> init(-bound, bound);
  std::normal_distribution<double> noise(0.0, opts.init_noise);

  TransRTraining out;
  KgEmbeddings& emb = out.embeddings;
  emb.seed = seed;
  emb.entity = Matrix::NullaryExpr(z, d2, [&]() { return init(rng); });
  emb.relation = Matrix::NullaryExpr(nr, d2, [&]() { return init(rng); });
  for (Eigen::Index i = 0; i < z; ++i) emb.entity.row(i).normalize();
  for (Eigen::Index i = 0; i < nr; ++i) emb.relation.row(i).normalize();
  emb.projection.resize(static_cast<std::size_t>(nr));
  for (auto& m : emb.projection) {
    m = Matrix::Identity(d2, d2) + Matrix::NullaryExpr(d2, d2, [&]() { return noise(rng); });
  }

  std::vector<std::size_t> order(train_triples.size());
  std::iota(order.begin(), order.end(), 0);
  std::uniform_int_distribution<EntityId> pick_entity(0, static_cast<EntityId>(z - 1));
  std::bernoulli_distribution corrupt_head(0.5);
  const double lr = opts.learning_rate;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      const Triple& pos = train_triples[idx];
      // Filtered corruption: never emit a triple that exists in the graph.
      Triple neg = pos;
      bool found = false;
      const bool head_side = corrupt_head(rng);
      for (int attempt = 0; attempt < 64 && !found; ++attempt) {
        neg = pos;
        (head_side ? neg.head : neg.tail) = pick_entity(rng);
        found = neg != pos && !kg.contains(neg);
      }
      if (!found) continue;

      const double f_pos = residual(emb, pos.head, pos.relation, pos.tail).norm();
      const double f_neg = residual(emb, neg.head, neg.relation, neg.tail).norm();
      const double loss = opts.margin + f_pos - f_neg;
      if (loss <= 0.0) continue;
      total += loss;

      const TripleGrad gp = score_grad(emb, pos);
      const TripleGrad gn = score_grad(emb, neg);
      emb.entity.row(pos.head) -= lr * gp.head;
      emb.entity.row(pos.tail) -= lr * gp.tail;
      emb.entity.row(neg.head) += lr * gn.head;
      emb.entity.row(neg.tail) += lr * gn.tail;
      emb.relation.row(pos.relation) -= lr * (gp.rel - gn.rel);
      emb.projection[static_cast<std::size_t>(pos.relation)] -= lr * (gp.proj - gn.proj);
    }
    for (Eigen::Index i = 0; i < z; ++i) clip_row_to_unit_ball(emb.entity, i);
    out.epoch_loss.push_back(total / static_cast<double>(train_triples.size()));
  }
  emb.check();
  return out;
}

double filtered_hits_at_k(const KgEmbeddings& emb, const KnowledgeGraph& kg,
                          std::span<const Triple> queries, int k) {
  if (queries.empty()) return 0.0;
  std::size_t hits = 0;
  const auto z = static_cast<EntityId>(emb.num_entities());
  for (const auto& q : queries) {
    const double target = transr_score(emb, q.head, q.relation, q.tail);
    int better = 0;
    for (EntityId c = 0; c < z; ++c) {
      if (c == q.tail || kg.contains({q.head, q.relation, c})) continue;
      if (transr_score(emb, q.head, q.relation, c) < target) ++better;
    }
    if (better < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

void save_embeddings(const KgEmbeddings& emb, const std::filesystem::path& dir) {
  emb.check();
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{{"format", "knowfuse-transr/1"},
                          {"Z", emb.num_entities()},
                          {"R", emb.num_relations()},
                          {"d2", emb.dim()},
                          {"seed", emb.seed},
                          {"entity", "entity.f32"},
                          {"relation", "relation.f32"},
                          {"projection", "projection.f32"}};
  io::write_text_file(dir / "embeddings.json", manifest.dump(1));
  io::write_f32_blob(dir / "entity.f32", {emb.entity.data(), static_cast<std::size_t>(emb.entity.size())});
  io::write_f32_blob(dir / "relation.f32",
                     {emb.relation.data(), static_cast<std::size_t>(emb.relation.size())});
  std::vector<double> proj;
  for (const auto& m : emb.projection) proj.insert(proj.end(), m.data(), m.data() + m.size());
  io::write_f32_blob(dir / "projection.f32", proj);
}

KgEmbeddings load_embeddings(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text_file(dir / "embeddings.json"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("embedding manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "knowfuse-transr/1") {
    throw InputError("embedding manifest: unknown format");
  }
  const auto z = manifest.at("Z").get<Eigen::Index>();
  const auto nr = manifest.at("R").get<Eigen::Index>();
  const auto d = manifest.at("d2").get<Eigen::Index>();
  if (z < 0 || nr < 0 || d < 1) throw InputError("embedding manifest: invalid dimensions");

  KgEmbeddings emb;
  emb.seed = manifest.at("seed").get<std::uint64_t>();
  auto ent = io::read_f32_blob(dir / manifest.at("entity").get<std::string>(), static_cast<std::size_t>(z * d));
  auto rel = io::read_f32_blob(dir / manifest.at("relation").get<std::string>(), static_cast<std::size_t>(nr * d));
  auto proj = io::read_f32_blob(dir / manifest.at("projection").get<std::string>(),
                                static_cast<std::size_t>(nr * d * d));
  emb.entity = Eigen::Map<Matrix>(ent.data(), z, d);
  emb.relation = Eigen::Map<Matrix>(rel.data(), nr, d);
  emb.projection.resize(static_cast<std::size_t>(nr));
  for (Eigen::Index r = 0; r < nr; ++r) {
    emb.projection[static_cast<std::size_t>(r)] = Eigen::Map<Matrix>(proj.data() + r * d * d, d, d);
  }
  emb.check();
  return emb;
}

}  // namespace knowfuse
