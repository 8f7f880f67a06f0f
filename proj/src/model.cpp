#include "knowfuse/model.hpp"

#include "knowfuse/binary_io.hpp"
#include "knowfuse/errors.hpp"

#include <nlohmann/json.hpp>

namespace knowfuse {

KnowledgeModel::KnowledgeModel(const ModelConfig& cfg, const KgEmbeddings* emb) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  encoder_ = TransformerEncoder(cfg_, params_, rng);
  infusion_ = KnowledgeInfusion(cfg_, params_, rng);
  readout_ = MentionReadout(cfg_, params_, rng);
  const double sd = 0.02;
  mlm_w_ = params_.add("heads.mlm.transform", normal_init(cfg_.d1, cfg_.d1, sd, rng));
  mlm_b_ = params_.add("heads.mlm.transform_bias", Matrix::Zero(1, cfg_.d1));
  mlm_ln_g_ = params_.add("heads.mlm.ln.gain", Matrix::Ones(1, cfg_.d1));
  mlm_ln_b_ = params_.add("heads.mlm.ln.bias", Matrix::Zero(1, cfg_.d1));
  mlm_decoder_bias_ = params_.add("heads.mlm.decoder_bias", Matrix::Zero(1, cfg_.vocab_size));
  sop_pool_w_ = params_.add("heads.sop.pool", normal_init(cfg_.d1, cfg_.d1, sd, rng));
  sop_pool_b_ = params_.add("heads.sop.pool_bias", Matrix::Zero(1, cfg_.d1));
  sop_w_ = params_.add("heads.sop.classifier", normal_init(cfg_.d1, 1, sd, rng));
  sop_b_ = params_.add("heads.sop.classifier_bias", Matrix::Zero(1, 1));
  if (emb != nullptr) {
    if (emb->dim() != cfg_.d2) {
      throw InputError("KG embedding dimension " + std::to_string(emb->dim()) + " does not match d2 = " +
                       std::to_string(cfg_.d2));
    }
    kg_tensors_ = KgTensors::from(*emb, cfg_.train_kg_embeddings, &params_);
  }
}

const KgTensors& KnowledgeModel::kg_tensors() const {
  if (!kg_tensors_) throw InputError("model was built without KG embeddings");
  return *kg_tensors_;
}

void KnowledgeModel::freeze_target_embeddings() { target_table_ = encoder_.token_embeddings().value(); }

void KnowledgeModel::set_target_embeddings(Matrix table) {
  if (table.rows() != cfg_.vocab_size || table.cols() != cfg_.d1) {
    throw InputError("target embedding table must be vocab_size x d1");
  }
  target_table_ = std::move(table);
}

EncoderState KnowledgeModel::encode(std::span<const int> ids, std::span<const int> segments,
                                    std::span<const MentionSpan> mentions, const KnowledgeGraph* kg,
                                    const ForwardContext& ctx, bool infuse) const {
  const bool active = infuse && cfg_.infusion_enabled && kg != nullptr && kg_tensors_.has_value() &&
                      std::any_of(mentions.begin(), mentions.end(),
                                  [](const MentionSpan& m) { return !m.neighbors.empty(); });
  if (!active) return encoder_.encode(ids, segments, /*pad_id=*/-1, ctx);
  return encoder_.encode(ids, segments, -1, ctx, cfg_.injection_layer, [&](const Tensor& hidden) {
    return infusion_.infuse(hidden, mentions, *kg_tensors_, *kg);
  });
}

Tensor KnowledgeModel::mlm_logits(const Tensor& hidden_rows) const {
  const Tensor t = ag::layer_norm(ag::gelu(affine(hidden_rows, mlm_w_, mlm_b_)), mlm_ln_g_, mlm_ln_b_);
  return ag::add_bias(ag::matmul_transposed(t, encoder_.token_embeddings()), mlm_decoder_bias_);
}

Tensor KnowledgeModel::sop_logit(const Tensor& cls_row) const {
  return affine(ag::tanh(affine(cls_row, sop_pool_w_, sop_pool_b_)), sop_w_, sop_b_);
}

LossBreakdown KnowledgeModel::compute_loss(const PretrainBatch& batch, const KnowledgeGraph& kg,
                                           const NegativeSampler* sampler, const LossSettings& settings,
                                           const ForwardContext& ctx) {
  if (batch.examples.empty()) throw InputError("compute_loss: empty batch");
  const bool need_kg = !settings.mlm_only && (settings.lambda1 > 0.0 || (settings.infuse && cfg_.infusion_enabled));
  if (need_kg && !kg_tensors_) throw InputError("compute_loss: KG embeddings required");
  if (kg_tensors_ && cfg_.train_kg_embeddings) kg_tensors_->refresh_fused();

  std::vector<Tensor> masked_rows;
  std::vector<int> mlm_targets;
  std::vector<Tensor> sop_logits;
  std::vector<int> sop_labels;
  std::vector<MnemContext> mnem_contexts;
  std::vector<MmemPair> mmem_pairs;

  for (const auto& ex : batch.examples) {
    std::vector<MentionSpan> spans;
    for (const auto& m : ex.mentions) spans.push_back(m.span);
    const EncoderState state =
        encode(ex.ids, ex.segments, spans, &kg, ctx, settings.infuse && !settings.mlm_only);
    const Tensor& final_hidden = state.final();

    std::vector<int> positions;
    for (std::size_t p = 0; p < ex.mlm_labels.size(); ++p) {
      if (ex.mlm_labels[p] >= 0) {
        positions.push_back(static_cast<int>(p));
        mlm_targets.push_back(ex.mlm_labels[p]);
      }
    }
    if (!positions.empty()) masked_rows.push_back(ag::gather_rows(final_hidden, positions));
    if (settings.mlm_only) continue;

    sop_logits.push_back(sop_logit(ag::slice_rows(final_hidden, 0, 1)));
    sop_labels.push_back(ex.sop_label);

    for (const auto& m : ex.mentions) {
      const bool wants_mnem = settings.lambda1 > 0.0 && !m.mnem.empty();
      const bool wants_mmem = settings.lambda2 > 0.0 && m.masked;
      if (!wants_mnem && !wants_mmem) continue;
      const Tensor span = ag::slice_rows(final_hidden, m.span.start, m.span.end - m.span.start + 1);
      const Tensor h_mf = readout_.pool(span);
      if (wants_mnem) mnem_contexts.push_back({h_mf, m.mnem});
      if (wants_mmem) {
        if (!target_table_) throw InputError("compute_loss: masked mention targets need a frozen embedding table");
        auto* cache = settings.target_cache;
        const std::size_t slot = mmem_pairs.size();
        if (cache != nullptr && slot < cache->size()) {
          mmem_pairs.push_back({h_mf, Tensor::constant((*cache)[slot])});
          continue;
        }
        Matrix rows(static_cast<Eigen::Index>(m.original_tokens.size()), cfg_.d1);
        for (std::size_t i = 0; i < m.original_tokens.size(); ++i) {
          rows.row(static_cast<Eigen::Index>(i)) = target_table_->row(m.original_tokens[i]);
        }
        mmem_pairs.push_back({h_mf, readout_.target(rows)});
        if (cache != nullptr) cache->push_back(mmem_pairs.back().target.value());
      }
    }
  }

  LossBreakdown out;
  Tensor logits;
  if (!masked_rows.empty()) logits = mlm_logits(ag::concat_rows(masked_rows));
  const LexLoss lex = lex_loss(logits, mlm_targets, sop_logits, sop_labels);
  out.mlm = lex.mlm;
  out.sop = lex.sop;
  out.lex = lex.total;
  out.mlm_positions = mlm_targets.size();
  if (!mnem_contexts.empty()) {
    if (sampler == nullptr) throw InputError("compute_loss: neighbor modeling needs a negative sampler");
    out.mnem = mnem_loss(mnem_contexts, *kg_tensors_, *sampler, cfg_.mu);
  } else {
    out.mnem = Tensor::scalar(0.0);
  }
  for (const auto& c : mnem_contexts) out.mnem_terms += c.terms.size();
  out.mmem = mmem_loss(mmem_pairs, batch.examples.size());
  out.mmem_mentions = mmem_pairs.size();
  out.total = settings.mlm_only ? out.mlm : total_loss(out.lex, out.mnem, out.mmem, settings.lambda1, settings.lambda2);
  return out;
}

void KnowledgeModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "knowfuse-model/1";
  manifest["config"] = cfg_;
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  std::vector<double> blob;
  for (const auto& [name, t] : params_.items()) {
    tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", blob.size()}});
    blob.insert(blob.end(), t.value().data(), t.value().data() + t.value().size());
  }
  manifest["blob"] = "params.f32";
  io::write_f32_blob(dir / "params.f32", blob);
  if (target_table_) {
    manifest["target_embeddings"] = {{"file", "target_embeddings.f32"},
                                     {"shape", {target_table_->rows(), target_table_->cols()}}};
    io::write_f32_blob(dir / "target_embeddings.f32",
                       {target_table_->data(), static_cast<std::size_t>(target_table_->size())});
  }
  io::write_text_file(dir / "model.json", manifest.dump(1));
}

KnowledgeModel KnowledgeModel::load(const std::filesystem::path& dir, const KgEmbeddings* emb) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text_file(dir / "model.json"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("model manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "knowfuse-model/1") throw InputError("model manifest: unknown format");
  ModelConfig cfg = ModelConfig::full_defaults();
  manifest.at("config").get_to(cfg);
  KnowledgeModel model(cfg, emb);
  std::size_t total = 0;
  for (const auto& t : manifest.at("tensors")) {
    total += t.at("shape")[0].get<std::size_t>() * t.at("shape")[1].get<std::size_t>();
  }
  const auto blob = io::read_f32_blob(dir / manifest.at("blob").get<std::string>(), total);
  for (const auto& t : manifest.at("tensors")) {
    Tensor p = model.params_.get(t.at("name").get<std::string>());
    const auto rows = t.at("shape")[0].get<Eigen::Index>();
    const auto cols = t.at("shape")[1].get<Eigen::Index>();
    if (rows != p.rows() || cols != p.cols()) {
      throw InputError("model checkpoint: shape mismatch for " + t.at("name").get<std::string>());
    }
    const auto off = t.at("offset").get<std::size_t>();
    p.mutable_value() = Eigen::Map<const Matrix>(blob.data() + off, rows, cols);
  }
  if (manifest.contains("target_embeddings")) {
    const auto& te = manifest["target_embeddings"];
    const auto rows = te.at("shape")[0].get<Eigen::Index>();
    const auto cols = te.at("shape")[1].get<Eigen::Index>();
    auto data = io::read_f32_blob(dir / te.at("file").get<std::string>(), static_cast<std::size_t>(rows * cols));
    model.set_target_embeddings(Eigen::Map<Matrix>(data.data(), rows, cols));
  }
  if (model.kg_tensors_) model.kg_tensors_->refresh_fused();
  return model;
}

}  // namespace knowfuse
