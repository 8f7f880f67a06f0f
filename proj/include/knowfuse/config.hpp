#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace knowfuse {

// Model dimensions and objective hyperparameters.
struct ModelConfig {
  int d1 = 768;              // encoder hidden size
  int d2 = 200;              // KG embedding size
  int layers = 12;
  int heads = 12;
  int ffn_multiplier = 4;
  int vocab_size = 21128;
  int max_len = 512;         // N
  int top_k = 10;            // K, neighbors recalled per mention
  double mu = 10.0;          // compatibility scale
  double lambda1 = 2.0;      // MNeM weight
  double lambda2 = 4.0;      // MMeM weight
  int k_neg = 10;            // negatives per neighbor triple
  int injection_layer = 10;  // infusion runs on this layer's output
  double pepr_damping = 0.85;
  double pepr_tol = 1e-8;
  int pepr_max_iters = 100;
  double dropout = 0.1;
  bool infusion_enabled = true;
  bool train_kg_embeddings = false;
  std::uint64_t seed = 42;

  // Full-size model; the shipped defaults.
  static ModelConfig full_defaults();
  // Laptop-scale configuration used by tests and toy runs.
  static ModelConfig desk_defaults();

  // Throws InputError on the first violated constraint.
  void validate() const;
};

struct TrainOptions {
  int steps = 300;
  int batch_size = 16;
  double learning_rate = 5e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;           // global L2 norm, <= 0 disables
  int embedding_warmup_steps = 200; // MLM-only steps before the MMeM target table is frozen
  double mlm_prob = 0.15;
  double mention_mask_prob = 0.15;
  double sop_swap_prob = 0.5;
  double hit_ratio = 1.0;           // fraction of linked mentions that receive knowledge

  // Toy-scale schedule: larger step size for a few hundred steps on a small model.
  static TrainOptions desk_defaults();
  void validate() const;
};

struct TransROptions {
  int epochs = 100;
  double margin = 1.0;
  double learning_rate = 0.01;
  double init_noise = 0.01;  // M_r = I + N(0, init_noise^2)

  void validate() const;
};

struct SimilarityOptions {
  std::string equivalence_relation = "equivalence";
  double jw_threshold = 0.6;
  double jaccard_threshold = 0.75;
  int min_common = 3;
  std::int64_t low_freq_cap = 200;
  int num_negatives = 19;

  void validate() const;
};

struct RunConfig {
  ModelConfig model = ModelConfig::full_defaults();
  TrainOptions train;
  TransROptions transr;
  SimilarityOptions similarity;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainOptions& c);
void from_json(const nlohmann::json& j, TrainOptions& c);
void to_json(nlohmann::json& j, const TransROptions& c);
void from_json(const nlohmann::json& j, TransROptions& c);
void to_json(nlohmann::json& j, const SimilarityOptions& c);
void from_json(const nlohmann::json& j, SimilarityOptions& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

}  // namespace knowfuse
