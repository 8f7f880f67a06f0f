// knowfuse command-line entry point.

#include "knowfuse/batch.hpp"
#include "knowfuse/binary_io.hpp"
#include "knowfuse/config.hpp"
#include "knowfuse/errors.hpp"
#include "knowfuse/eval_sim.hpp"
#include "knowfuse/kg.hpp"
#include "knowfuse/model.hpp"
#include "knowfuse/pepr.hpp"
#include "knowfuse/synthetic.hpp"
#include "knowfuse/tokenizer.hpp"
#include "knowfuse/trainer.hpp"
#include "knowfuse/transr.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace knowfuse;
using nlohmann::json;

namespace {

std::uint64_t seed_or_env(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string_view(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw InputError(std::string("SEED is not an unsigned integer: ") + env);
  }
  return fallback;
}

// Inputs shared by most commands.
struct DataArgs {
  std::string triples, types, vocab, corpus;
  std::string config;
  std::string preset = "full";
  std::optional<std::uint64_t> seed;

  void add_graph(CLI::App* app) {
    app->add_option("--triples", triples, "head<TAB>relation<TAB>tail file")->required();
    app->add_option("--types", types, "entity<TAB>type file")->required();
  }
  void add_text(CLI::App* app) {
    app->add_option("--vocab", vocab, "vocabulary, one token per line")->required();
    app->add_option("--corpus", corpus, "corpus, one document per line")->required();
  }
  void add_config(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration");
    app->add_option("--preset", preset, "base configuration before --config: full or desk")
        ->check(CLI::IsMember({"full", "desk"}));
    app->add_option("--seed", seed, "random seed (falls back to $SEED, then the config seed)");
  }
};

struct World {
  KnowledgeGraph kg;
  std::optional<Vocab> vocab;
  std::vector<Document> docs;
  FrequencyTable freq;
  json digests = json::object();
};

// Corpus lines are JSON objects with a "text" field, or plain text.
std::string document_text(const std::string& line, int line_no) {
  if (line.front() != '{') return line;
  try {
    return json::parse(line).at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw InputError("corpus line " + std::to_string(line_no) + ": " + e.what());
  }
}

World load_world(const DataArgs& a, bool with_text) {
  World w;
  const std::string triples = io::read_text_file(a.triples);
  const std::string types = io::read_text_file(a.types);
  w.digests[a.triples] = io::fnv1a64_hex(triples);
  w.digests[a.types] = io::fnv1a64_hex(types);
  std::istringstream ts(triples), ty(types);
  w.kg = load_kg(ts, ty);
  if (!with_text) return w;
  const std::string vocab = io::read_text_file(a.vocab);
  const std::string corpus = io::read_text_file(a.corpus);
  w.digests[a.vocab] = io::fnv1a64_hex(vocab);
  w.digests[a.corpus] = io::fnv1a64_hex(corpus);
  std::istringstream vs(vocab);
  w.vocab = Vocab::load(vs);
  const MentionMatcher matcher = make_mention_matcher(w.kg, *w.vocab);
  std::istringstream cs(corpus);
  std::string line;
  std::vector<std::vector<int>> pieces;
  int line_no = 0;
  while (std::getline(cs, line)) {
    ++line_no;
    if (line.empty()) continue;
    w.docs.push_back(prepare_document(document_text(line, line_no), *w.vocab, matcher));
    pieces.push_back(w.docs.back().pieces);
  }
  w.freq = count_mention_frequencies(pieces, matcher, w.kg);
  return w;
}

RunConfig load_config(const DataArgs& a) {
  RunConfig cfg;
  if (a.preset == "desk") {
    cfg.model = ModelConfig::desk_defaults();
    cfg.train = TrainOptions::desk_defaults();
  }
  if (!a.config.empty()) {
    try {
      json::parse(io::read_text_file(a.config)).get_to(cfg);
    } catch (const json::exception& e) {
      throw InputError("config " + a.config + ": " + e.what());
    }
  }
  cfg.model.seed = seed_or_env(a.seed, cfg.model.seed);
  return cfg;
}

EntityId entity_by_surface(const KnowledgeGraph& kg, const std::string& surface) {
  const auto id = kg.find_entity(surface);
  if (!id) throw InputError("unknown entity '" + surface + "'");
  return *id;
}

void write_json(const fs::path& path, const json& j) { io::write_text_file(path, j.dump(2) + "\n"); }

// ---- kg ----

int cmd_kg(const DataArgs& a, const std::string& snapshot) {
  const World w = load_world(a, false);
  fmt::print("entities\t{}\nrelations\t{}\ntriples\t{}\n", w.kg.num_entities(), w.kg.num_relations(),
             w.kg.triples().size());
  fmt::print("type\tcount\n");
  for (const auto& [type, members] : w.kg.type_index()) {
    fmt::print("{}\t{}\n", w.kg.type_name(type), members.size());
  }
  if (!snapshot.empty()) save_kg(w.kg, snapshot);
  return 0;
}

// ---- kg-embed ----

int cmd_kg_embed(const DataArgs& a, const std::string& out, double holdout) {
  const RunConfig cfg = load_config(a);
  cfg.validate();
  const World w = load_world(a, false);
  std::vector<Triple> train = w.kg.triples();
  std::vector<Triple> test;
  if (holdout > 0.0) {
    std::mt19937_64 rng(cfg.model.seed);
    std::shuffle(train.begin(), train.end(), rng);
    const auto n = static_cast<std::size_t>(holdout * static_cast<double>(train.size()));
    test.assign(train.end() - static_cast<std::ptrdiff_t>(n), train.end());
    train.resize(train.size() - n);
  }
  const auto started = std::chrono::steady_clock::now();
  const TransRTraining result = train_transr(w.kg, train, cfg.model.d2, cfg.transr, cfg.model.seed);
  save_embeddings(result.embeddings, out);
  fmt::print("epoch\tloss\n");
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) fmt::print("{}\t{:.6f}\n", e + 1, result.epoch_loss[e]);
  if (!test.empty()) fmt::print("filtered_hits@10\t{:.4f}\n", filtered_hits_at_k(result.embeddings, w.kg, test, 10));
  write_json(fs::path(out) / "manifest.json",
             {{"command", "kg-embed"}, {"config", cfg}, {"seed", cfg.model.seed}, {"inputs", w.digests},
              {"outputs", {out}},
              {"wall_clock_seconds",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}});
  return 0;
}

// ---- pepr ----

int cmd_pepr(const DataArgs& a, const std::string& entity, int k) {
  const RunConfig cfg = load_config(a);
  cfg.validate();
  const World w = load_world(a, true);
  const EntityId e = entity_by_surface(w.kg, entity);
  const PeprOptions opts{cfg.model.pepr_damping, cfg.model.pepr_max_iters, cfg.model.pepr_tol};
  const PeprResult res = pepr_scores(w.kg, w.freq, e, opts);
  const int top = k > 0 ? k : cfg.model.top_k;
  fmt::print("rank\tneighbor\trelation\tscore\n");
  int rank = 0;
  for (const auto& n : top_k_neighbors(w.kg, w.freq, res, e, top)) {
    fmt::print("{}\t{}\t{}\t{:.10g}\n", ++rank, w.kg.entity(n.neighbor).surface, w.kg.relation_name(n.relation),
               res.scores[static_cast<std::size_t>(n.neighbor)]);
  }
  if (!res.converged) fmt::print(stderr, "warning: PEPR stopped after {} iterations\n", res.iterations_run);
  return 0;
}

// ---- pretrain ----

struct PretrainFlags {
  std::string embeddings, out;
  std::optional<double> lambda1, lambda2, hit_ratio, lr;
  std::optional<int> k, k_neg, injection_layer, steps, warmup, batch;
  bool no_infusion = false;

  void add(CLI::App* app) {
    app->add_option("--embeddings", embeddings, "directory written by kg-embed")->required();
    app->add_option("--lambda1", lambda1, "neighbor modeling weight");
    app->add_option("--lambda2", lambda2, "masked mention weight");
    app->add_option("--k", k, "neighbors recalled per mention");
    app->add_option("--k-neg", k_neg, "negatives per neighbor");
    app->add_option("--injection-layer", injection_layer, "layer whose output receives knowledge");
    app->add_option("--hit-ratio", hit_ratio, "fraction of linked mentions that receive knowledge");
    app->add_option("--steps", steps, "training steps");
    app->add_option("--warmup", warmup, "MLM-only steps before freezing the target table");
    app->add_option("--batch", batch, "documents per step");
    app->add_option("--lr", lr, "learning rate");
    app->add_flag("--no-infusion", no_infusion, "train without knowledge infusion");
  }

  void apply(RunConfig& cfg) const {
    if (lambda1) cfg.model.lambda1 = *lambda1;
    if (lambda2) cfg.model.lambda2 = *lambda2;
    if (k) cfg.model.top_k = *k;
    if (k_neg) cfg.model.k_neg = *k_neg;
    if (injection_layer) cfg.model.injection_layer = *injection_layer;
    if (hit_ratio) cfg.train.hit_ratio = *hit_ratio;
    if (steps) cfg.train.steps = *steps;
    if (warmup) cfg.train.embedding_warmup_steps = *warmup;
    if (batch) cfg.train.batch_size = *batch;
    if (lr) cfg.train.learning_rate = *lr;
    if (no_infusion) cfg.model.infusion_enabled = false;
  }
};

struct TrainedRun {
  std::optional<KnowledgeModel> model;
  PretrainResult result;
};

TrainedRun train_model(const World& w, const RunConfig& cfg, const KgEmbeddings& emb, bool echo) {
  TrainedRun run;
  run.model.emplace(cfg.model, &emb);
  const PretrainData data{&w.kg, &*w.vocab, &w.freq, w.docs};
  run.result = pretrain(*run.model, data, cfg.train, cfg.model.seed, [&](const StepLog& s) {
    if (echo && (s.step % 10 == 0 || s.step == 1)) {
      fmt::print(stderr, "step {:4d}  total {:.4f}  L_EX {:.4f}  L_MNeM {:.4f}  L_MMeM {:.4f}\n", s.step, s.total,
                 s.lex, s.mnem, s.mmem);
    }
  });
  return run;
}

RunConfig pretrain_config(const DataArgs& a, const PretrainFlags& f, const World& w) {
  RunConfig cfg = load_config(a);
  f.apply(cfg);
  // The vocabulary file fixes the embedding table size.
  cfg.model.vocab_size = static_cast<int>(w.vocab->size());
  cfg.validate();
  return cfg;
}

int cmd_pretrain(const DataArgs& a, const PretrainFlags& f, const std::string& out) {
  load_config(a).validate();
  const World w = load_world(a, true);
  const RunConfig cfg = pretrain_config(a, f, w);
  const KgEmbeddings emb = load_embeddings(f.embeddings);
  fmt::print(stderr, "lambda1={} lambda2={} K={} k_neg={} injection_layer={} hit_ratio={}\n", cfg.model.lambda1,
             cfg.model.lambda2, cfg.model.top_k, cfg.model.k_neg, cfg.model.injection_layer, cfg.train.hit_ratio);
  const auto started = std::chrono::steady_clock::now();
  const TrainedRun run = train_model(w, cfg, emb, true);
  fs::create_directories(out);
  run.model->save(fs::path(out) / "model");
  std::ostringstream log;
  write_loss_log(log, run.result.log);
  io::write_text_file(fs::path(out) / "loss.jsonl", log.str());
  std::ostringstream warm;
  write_loss_log(warm, run.result.warmup);
  io::write_text_file(fs::path(out) / "warmup_loss.jsonl", warm.str());
  write_json(fs::path(out) / "manifest.json",
             {{"command", "pretrain"},
              {"config", cfg},
              {"seed", cfg.model.seed},
              {"inputs", w.digests},
              {"embeddings", f.embeddings},
              {"outputs", {(fs::path(out) / "model").string()}},
              {"loss_log", (fs::path(out) / "loss.jsonl").string()},
              {"wall_clock_seconds",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}});
  return 0;
}

// ---- eval-sim ----

struct EvalRow {
  std::string variant;
  std::size_t samples;
  double acc;
};

std::vector<EvalRow> evaluate(const SimilarityDatasets& ds, const EntityVectors& vectors) {
  return {{"D1", ds.d1.size(), acc_at_1(ds.d1, vectors)},
          {"D2", ds.d2.size(), acc_at_1(ds.d2, vectors)},
          {"D3", ds.d3.size(), acc_at_1(ds.d3, vectors)}};
}

void check_provider(const SimilarityDatasets& ds, const EntityVectors& vectors, const KnowledgeGraph& kg) {
  const auto missing = missing_entities(ds.d1, vectors);
  if (missing.empty()) return;
  std::string list;
  for (std::size_t i = 0; i < missing.size() && i < 10; ++i) {
    list += (i ? ", " : "") + kg.entity(missing[i]).surface;
  }
  throw InputError(fmt::format("provider lacks {} entities; first: {}", missing.size(), list));
}

int cmd_eval_sim(const DataArgs& a, const std::string& provider, const std::string& model_dir,
                 const std::string& embeddings, bool no_infuse, const std::string& datasets_out) {
  const RunConfig cfg = load_config(a);
  cfg.validate();
  if (provider.empty() == model_dir.empty()) throw InputError("give exactly one of --provider or --model");
  const World w = load_world(a, true);
  const SimilarityDatasets ds = build_similarity_datasets(w.kg, w.freq, cfg.similarity, cfg.model.seed);
  if (!datasets_out.empty()) {
    fs::create_directories(datasets_out);
    for (const auto& [name, samples] : {std::pair{"d1", &ds.d1}, {"d2", &ds.d2}, {"d3", &ds.d3}}) {
      std::ostringstream os;
      write_dataset_jsonl(os, *samples, w.kg);
      io::write_text_file(fs::path(datasets_out) / (std::string(name) + ".jsonl"), os.str());
    }
  }
  EntityVectors vectors;
  if (!provider.empty()) {
    std::istringstream in(io::read_text_file(provider));
    vectors = read_vector_tsv(in, w.kg);
  } else {
    std::optional<KgEmbeddings> emb;
    if (!embeddings.empty()) emb = load_embeddings(embeddings);
    const KnowledgeModel model = KnowledgeModel::load(model_dir, emb ? &*emb : nullptr);
    const ModelConfig& mc = model.config();
    NeighborRecall recall(w.kg, w.freq, {mc.pepr_damping, mc.pepr_max_iters, mc.pepr_tol}, mc.top_k);
    const bool infuse = !no_infuse && mc.infusion_enabled && model.has_kg();
    vectors = embed_entities_via_model(model, w.kg, *w.vocab, sample_entities(ds.d1), infuse ? &recall : nullptr);
  }
  check_provider(ds, vectors, w.kg);
  fmt::print("variant\tsamples\tacc@1\n");
  for (const auto& r : evaluate(ds, vectors)) fmt::print("{}\t{}\t{:.4f}\n", r.variant, r.samples, r.acc);
  return 0;
}

// ---- sweep-k ----

int cmd_sweep_k(const DataArgs& a, const PretrainFlags& f, const std::vector<int>& ks, const std::string& out) {
  load_config(a).validate();
  const World w = load_world(a, true);
  const KgEmbeddings emb = load_embeddings(f.embeddings);
  if (ks.empty()) throw InputError("--ks must list at least one K");
  std::ostringstream report;
  report << "K\tD1\tD2\tD3\n";
  fmt::print("K\tD1\tD2\tD3\n");
  for (int k : ks) {
    PretrainFlags fk = f;
    fk.k = k;
    const RunConfig cfg = pretrain_config(a, fk, w);
    const TrainedRun run = train_model(w, cfg, emb, false);
    const SimilarityDatasets ds = build_similarity_datasets(w.kg, w.freq, cfg.similarity, cfg.model.seed);
    const ModelConfig& mc = cfg.model;
    NeighborRecall recall(w.kg, w.freq, {mc.pepr_damping, mc.pepr_max_iters, mc.pepr_tol}, mc.top_k);
    const auto vectors = embed_entities_via_model(*run.model, w.kg, *w.vocab, sample_entities(ds.d1),
                                                  mc.infusion_enabled ? &recall : nullptr);
    const auto rows = evaluate(ds, vectors);
    const std::string line = fmt::format("{}\t{:.4f}\t{:.4f}\t{:.4f}\n", k, rows[0].acc, rows[1].acc, rows[2].acc);
    report << line;
    fmt::print("{}", line);
    std::fflush(stdout);
  }
  if (!out.empty()) io::write_text_file(out, report.str());
  return 0;
}

// ---- synth ----

int cmd_synth(SyntheticOptions opts, const std::optional<std::uint64_t>& seed, const std::string& out) {
  opts.seed = seed_or_env(seed, opts.seed);
  const SyntheticWorld world = make_synthetic_world(opts);
  write_synthetic_world(world, out);
  fmt::print("entities\t{}\ntriples\t{}\ndocuments\t{}\nsynonym_pairs\t{}\n", world.kg.num_entities(),
             world.kg.triples().size(), world.corpus.size(), world.synonyms.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowfuse: knowledge-infused encoder pretraining toolkit"};
  app.require_subcommand(1);

  DataArgs kg_args;
  std::string snapshot;
  auto* kg = app.add_subcommand("kg", "load, validate and summarize a knowledge graph");
  kg_args.add_graph(kg);
  kg->add_option("--snapshot", snapshot, "also write a binary snapshot to this directory");

  DataArgs emb_args;
  std::string emb_out;
  double holdout = 0.0;
  auto* emb = app.add_subcommand("kg-embed", "train TransR embeddings");
  emb_args.add_graph(emb);
  emb_args.add_config(emb);
  emb->add_option("--out", emb_out, "output directory")->required();
  emb->add_option("--holdout", holdout, "fraction of triples held out for filtered Hits@10")
      ->check(CLI::Range(0.0, 0.5));

  DataArgs pepr_args;
  std::string pepr_entity;
  int pepr_k = 0;
  auto* pepr_root = app.add_subcommand("pepr", "personalized entity PageRank tools");
  pepr_root->require_subcommand(1);
  auto* pepr = pepr_root->add_subcommand("rank", "rank an entity's neighbors");
  pepr_args.add_graph(pepr);
  pepr_args.add_text(pepr);
  pepr_args.add_config(pepr);
  pepr->add_option("--entity", pepr_entity, "surface form of the mention entity")->required();
  pepr->add_option("--k", pepr_k, "number of neighbors (default: config top_k)");

  DataArgs pre_args;
  PretrainFlags pre_flags;
  std::string pre_out;
  auto* pre = app.add_subcommand("pretrain", "run toy pretraining");
  pre_args.add_graph(pre);
  pre_args.add_text(pre);
  pre_args.add_config(pre);
  pre_flags.add(pre);
  pre->add_option("--out", pre_out, "output directory")->required();

  DataArgs sweep_args;
  PretrainFlags sweep_flags;
  std::vector<int> ks{5, 10, 20, 30};
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep-k", "pretrain and evaluate across neighbor counts");
  sweep_args.add_graph(sweep);
  sweep_args.add_text(sweep);
  sweep_args.add_config(sweep);
  sweep_flags.add(sweep);
  sweep->add_option("--ks", ks, "K values")->delimiter(',');
  sweep->add_option("--out", sweep_out, "also write the TSV report here");

  DataArgs eval_args;
  std::string provider, model_dir, eval_emb, datasets_out;
  bool no_infuse = false;
  auto* eval = app.add_subcommand("eval-sim", "build similarity datasets and score a provider");
  eval_args.add_graph(eval);
  eval_args.add_text(eval);
  eval_args.add_config(eval);
  eval->add_option("--provider", provider, "TSV of surface<TAB>comma-separated floats");
  eval->add_option("--model", model_dir, "model directory written by pretrain");
  eval->add_option("--embeddings", eval_emb, "KG embeddings for an infused model");
  eval->add_flag("--no-infuse", no_infuse, "encode surfaces without knowledge infusion");
  eval->add_option("--datasets-out", datasets_out, "write D1/D2/D3 as JSONL here");

  SyntheticOptions synth_opts;
  std::optional<std::uint64_t> synth_seed;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic KG, vocabulary and corpus");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--types", synth_opts.num_types);
  synth->add_option("--per-type", synth_opts.entities_per_type);
  synth->add_option("--pairs", synth_opts.synonym_pairs_per_type, "synonym pairs per type");
  synth->add_option("--relations", synth_opts.num_relations);
  synth->add_option("--docs", synth_opts.num_documents);
  synth->add_option("--seed", synth_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*kg) return cmd_kg(kg_args, snapshot);
    if (*emb) return cmd_kg_embed(emb_args, emb_out, holdout);
    if (*pepr) return cmd_pepr(pepr_args, pepr_entity, pepr_k);
    if (*pre) return cmd_pretrain(pre_args, pre_flags, pre_out);
    if (*sweep) return cmd_sweep_k(sweep_args, sweep_flags, ks, sweep_out);
    if (*eval) return cmd_eval_sim(eval_args, provider, model_dir, eval_emb, no_infuse, datasets_out);
    if (*synth) return cmd_synth(synth_opts, synth_seed, synth_out);
  } catch (const InputError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const InvariantError& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return 3;
  }
  return 2;
}
