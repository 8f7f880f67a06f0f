#include "knowfuse/config.hpp"

#include "knowfuse/errors.hpp"

#include <set>

namespace knowfuse {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InputError("invalid config: " + what);
}

// Reads j[key] into field when present; fields absent from j keep their value.
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& field, std::set<std::string>& seen) {
  seen.insert(key);
  if (const auto it = j.find(key); it != j.end()) {
    try {
      it->get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw InputError(std::string("invalid config: wrong type for '") + key + "'");
    }
  }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& seen, const char* section) {
  for (const auto& [k, _] : j.items()) {
    if (!seen.contains(k)) {
      throw InputError(std::string("invalid config: unknown key '") + k + "' in " + section);
    }
  }
}

}  // namespace

ModelConfig ModelConfig::full_defaults() { return ModelConfig{}; }

ModelConfig ModelConfig::desk_defaults() {
  ModelConfig c;
  c.d1 = 64;
  c.d2 = 16;
  c.layers = 2;
  c.heads = 2;
  c.vocab_size = 500;
  c.max_len = 64;
  c.top_k = 5;
  c.k_neg = 5;
  c.injection_layer = 1;
  c.dropout = 0.0;
  return c;
}

void ModelConfig::validate() const {
  require(d1 >= 1 && d2 >= 1, "d1 and d2 must be positive");
  require(heads >= 1 && d1 % heads == 0, "d1 must be divisible by heads");
  require(layers >= 1, "layers must be >= 1");
  require(injection_layer >= 1 && injection_layer <= layers, "injection_layer must lie in [1, layers]");
  require(ffn_multiplier >= 1, "ffn_multiplier must be >= 1");
  require(vocab_size >= 6, "vocab_size must cover the special tokens");
  require(max_len >= 4, "max_len must be >= 4");
  require(top_k >= 1, "K must be >= 1");
  require(mu > 0.0, "mu must be > 0");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda weights must be >= 0");
  require(k_neg >= 0, "k_neg must be >= 0");
  require(pepr_damping > 0.0 && pepr_damping < 1.0, "damping must lie in (0, 1)");
  require(pepr_tol > 0.0 && pepr_max_iters >= 1, "PEPR tolerance and iteration cap must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

TrainOptions TrainOptions::desk_defaults() {
  TrainOptions t;
  t.learning_rate = 1e-3;
  return t;
}

void TrainOptions::validate() const {
  require(steps >= 0 && batch_size >= 1, "steps >= 0 and batch_size >= 1");
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(embedding_warmup_steps >= 0, "embedding_warmup_steps must be >= 0");
  require(mlm_prob >= 0.0 && mlm_prob <= 1.0, "mlm_prob must lie in [0, 1]");
  require(mention_mask_prob >= 0.0 && mention_mask_prob <= 1.0, "mention_mask_prob must lie in [0, 1]");
  require(sop_swap_prob >= 0.0 && sop_swap_prob <= 1.0, "sop_swap_prob must lie in [0, 1]");
  require(hit_ratio >= 0.0 && hit_ratio <= 1.0, "hit_ratio must lie in [0, 1]");
}

void TransROptions::validate() const {
  require(epochs >= 1, "transr epochs must be >= 1");
  require(margin > 0.0 && learning_rate > 0.0, "transr margin and learning rate must be > 0");
  require(init_noise >= 0.0, "transr init_noise must be >= 0");
}

void SimilarityOptions::validate() const {
  require(!equivalence_relation.empty(), "equivalence_relation must be named");
  require(jaccard_threshold >= 0.0 && jaccard_threshold <= 1.0, "jaccard_threshold must lie in [0, 1]");
  require(min_common >= 0 && num_negatives >= 0 && low_freq_cap >= 0, "counts must be >= 0");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  transr.validate();
  similarity.validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d1", c.d1},
       {"d2", c.d2},
       {"layers", c.layers},
       {"heads", c.heads},
       {"ffn_multiplier", c.ffn_multiplier},
       {"vocab_size", c.vocab_size},
       {"max_len", c.max_len},
       {"top_k", c.top_k},
       {"mu", c.mu},
       {"lambda1", c.lambda1},
       {"lambda2", c.lambda2},
       {"k_neg", c.k_neg},
       {"injection_layer", c.injection_layer},
       {"pepr_damping", c.pepr_damping},
       {"pepr_tol", c.pepr_tol},
       {"pepr_max_iters", c.pepr_max_iters},
       {"dropout", c.dropout},
       {"infusion_enabled", c.infusion_enabled},
       {"train_kg_embeddings", c.train_kg_embeddings},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  std::set<std::string> seen;
  read_opt(j, "d1", c.d1, seen);
  read_opt(j, "d2", c.d2, seen);
  read_opt(j, "layers", c.layers, seen);
  read_opt(j, "heads", c.heads, seen);
  read_opt(j, "ffn_multiplier", c.ffn_multiplier, seen);
  read_opt(j, "vocab_size", c.vocab_size, seen);
  read_opt(j, "max_len", c.max_len, seen);
  read_opt(j, "top_k", c.top_k, seen);
  read_opt(j, "mu", c.mu, seen);
  read_opt(j, "lambda1", c.lambda1, seen);
  read_opt(j, "lambda2", c.lambda2, seen);
  read_opt(j, "k_neg", c.k_neg, seen);
  read_opt(j, "injection_layer", c.injection_layer, seen);
  read_opt(j, "pepr_damping", c.pepr_damping, seen);
  read_opt(j, "pepr_tol", c.pepr_tol, seen);
  read_opt(j, "pepr_max_iters", c.pepr_max_iters, seen);
  read_opt(j, "dropout", c.dropout, seen);
  read_opt(j, "infusion_enabled", c.infusion_enabled, seen);
  read_opt(j, "train_kg_embeddings", c.train_kg_embeddings, seen);
  read_opt(j, "seed", c.seed, seen);
  reject_unknown(j, seen, "model");
}

void to_json(nlohmann::json& j, const TrainOptions& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"weight_decay", c.weight_decay},
       {"grad_clip", c.grad_clip},
       {"embedding_warmup_steps", c.embedding_warmup_steps},
       {"mlm_prob", c.mlm_prob},
       {"mention_mask_prob", c.mention_mask_prob},
       {"sop_swap_prob", c.sop_swap_prob},
       {"hit_ratio", c.hit_ratio}};
}

void from_json(const nlohmann::json& j, TrainOptions& c) {
  std::set<std::string> seen;
  read_opt(j, "steps", c.steps, seen);
  read_opt(j, "batch_size", c.batch_size, seen);
  read_opt(j, "learning_rate", c.learning_rate, seen);
  read_opt(j, "adam_beta1", c.adam_beta1, seen);
  read_opt(j, "adam_beta2", c.adam_beta2, seen);
  read_opt(j, "adam_eps", c.adam_eps, seen);
  read_opt(j, "weight_decay", c.weight_decay, seen);
  read_opt(j, "grad_clip", c.grad_clip, seen);
  read_opt(j, "embedding_warmup_steps", c.embedding_warmup_steps, seen);
  read_opt(j, "mlm_prob", c.mlm_prob, seen);
  read_opt(j, "mention_mask_prob", c.mention_mask_prob, seen);
  read_opt(j, "sop_swap_prob", c.sop_swap_prob, seen);
  read_opt(j, "hit_ratio", c.hit_ratio, seen);
  reject_unknown(j, seen, "train");
}

void to_json(nlohmann::json& j, const TransROptions& c) {
  j = {{"epochs", c.epochs},
       {"margin", c.margin},
       {"learning_rate", c.learning_rate},
       {"init_noise", c.init_noise}};
}

void from_json(const nlohmann::json& j, TransROptions& c) {
  std::set<std::string> seen;
  read_opt(j, "epochs", c.epochs, seen);
  read_opt(j, "margin", c.margin, seen);
  read_opt(j, "learning_rate", c.learning_rate, seen);
  read_opt(j, "init_noise", c.init_noise, seen);
  reject_unknown(j, seen, "transr");
}

void to_json(nlohmann::json& j, const SimilarityOptions& c) {
  j = {{"equivalence_relation", c.equivalence_relation},
       {"jw_threshold", c.jw_threshold},
       {"jaccard_threshold", c.jaccard_threshold},
       {"min_common", c.min_common},
       {"low_freq_cap", c.low_freq_cap},
       {"num_negatives", c.num_negatives}};
}

void from_json(const nlohmann::json& j, SimilarityOptions& c) {
  std::set<std::string> seen;
  read_opt(j, "equivalence_relation", c.equivalence_relation, seen);
  read_opt(j, "jw_threshold", c.jw_threshold, seen);
  read_opt(j, "jaccard_threshold", c.jaccard_threshold, seen);
  read_opt(j, "min_common", c.min_common, seen);
  read_opt(j, "low_freq_cap", c.low_freq_cap, seen);
  read_opt(j, "num_negatives", c.num_negatives, seen);
  reject_unknown(j, seen, "similarity");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"model", c.model}, {"train", c.train}, {"transr", c.transr}, {"similarity", c.similarity}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  std::set<std::string> seen;
  read_opt(j, "model", c.model, seen);
  read_opt(j, "train", c.train, seen);
  read_opt(j, "transr", c.transr, seen);
  read_opt(j, "similarity", c.similarity, seen);
  reject_unknown(j, seen, "config");
}

}  // namespace knowfuse
